use std::fs;

use kgalign::checkpoint::{EncoderCheckpoint, MlpCheckpoint};
use kgalign::config::RunConfig;
use kgalign::textemb::{index_path, read_any, read_binary, read_text, write_binary, write_text, LabelledEmbeddings};
use kgalign::Error;
use kgalign_core::align::FusionMode;
use kgalign_core::encoder::{Ablation, EncoderDims, EncoderParams};
use kgalign_core::error::Side;
use kgalign_core::graph::GraphBuilder;
use kgalign_core::semantic::{MlpParams, Provenance};
use kgalign_core::train::Metric;
use proptest::prelude::*;

fn provenance() -> impl Strategy<Value = Provenance> {
    prop_oneof![
        Just(Provenance::Unspecified),
        Just(Provenance::HashFixture),
        Just(Provenance::RealEncoder),
    ]
}

fn table() -> impl Strategy<Value = LabelledEmbeddings> {
    (1usize..6, 0usize..8, provenance()).prop_flat_map(|(width, rows, provenance)| {
        prop::collection::vec(prop::collection::vec(-1e3f64..1e3, width), rows).prop_map(move |vs| {
            LabelledEmbeddings {
                width,
                provenance,
                rows: vs.into_iter().enumerate().map(|(i, v)| (format!("e{i}"), v)).collect(),
            }
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn text_embeddings_round_trip_exactly(t in table()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        write_text(&path, &t).unwrap();
        prop_assert_eq!(read_text(&path).unwrap(), t.clone());
        prop_assert_eq!(read_any(&path).unwrap(), t);
    }

    #[test]
    fn binary_embeddings_round_trip_at_f32(t in table()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        write_binary(&path, &t).unwrap();
        prop_assert!(index_path(&path).exists());
        let back = read_binary(&path).unwrap();
        let rounded = LabelledEmbeddings {
            rows: t.rows.iter().map(|(l, v)| (l.clone(), v.iter().map(|&x| x as f32 as f64).collect())).collect(),
            ..t.clone()
        };
        prop_assert_eq!(read_any(&path).unwrap(), back.clone());
        prop_assert_eq!(back, rounded);
    }
}

fn write(dir: &std::path::Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn malformed_text_embeddings_are_rejected_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("no header", "e0\t1\t2\n", 1),
        ("bad dim", "#dim=x\ne0\t1\n", 1),
        ("bad provenance", "#dim=1\tprovenance=magic\ne0\t1\n", 1),
        ("short row", "#dim=2\ne0\t1\t2\ne1\t1\n", 3),
        ("not a number", "#dim=2\ne0\t1\tz\n", 2),
        ("duplicate", "#dim=1\ne0\t1\ne0\t2\n", 3),
    ];
    for (name, body, line) in cases {
        let path = write(dir.path(), "bad.tsv", body);
        match read_text(&path) {
            Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{name}"),
            other => panic!("{name}: {other:?}"),
        }
    }
}

#[test]
fn tables_must_cover_every_entity() {
    let mut b = GraphBuilder::new();
    b.add_relation("x", "r", "y");
    b.add_relation("y", "r", "z");
    let (g, _) = b.finish().unwrap();
    let emb = LabelledEmbeddings {
        width: 2,
        provenance: Provenance::HashFixture,
        rows: vec![("x".into(), vec![1.0, 0.0]), ("z".into(), vec![0.0, 1.0]), ("extra".into(), vec![1.0, 1.0])],
    };
    match emb.to_table(&g, Side::Left) {
        Err(Error::Core(kgalign_core::Error::MissingEmbeddings { side, count, labels })) => {
            assert_eq!((side, count), (Side::Left, 1));
            assert_eq!(labels, ["y"]);
        }
        other => panic!("{other:?}"),
    }
    let full = LabelledEmbeddings {
        rows: vec![("y".into(), vec![0.5, 0.5]), ("x".into(), vec![1.0, 0.0]), ("z".into(), vec![0.0, 1.0])],
        ..emb
    };
    let table = full.to_table(&g, Side::Left).unwrap();
    let y = g.entity("y").unwrap();
    assert_eq!(table.vectors.row(y.index()), [0.5, 0.5]);
    assert_eq!(table.provenance, Provenance::HashFixture);
}

fn encoder_checkpoint(ablation: Ablation) -> EncoderCheckpoint {
    let dims = EncoderDims {
        entities: [7, 5],
        d: 4,
        h: 3,
        k_rel: 6,
        k_attr: 2,
    };
    EncoderCheckpoint {
        params: EncoderParams::init(dims, 9),
        metric: Metric::L2,
        ablation,
        train_initial_features: false,
        rng_seed: 9,
    }
    .quantized()
}

#[test]
fn checkpoints_round_trip_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    for ablation in Ablation::ALL {
        let ckpt = encoder_checkpoint(ablation);
        let path = dir.path().join("enc.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = EncoderCheckpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        assert_eq!(loaded.to_bytes(), fs::read(&path).unwrap());
    }
    let mlp = MlpCheckpoint {
        params: MlpParams::init(5, 7, 3, 2),
        rng_seed: 2,
    }
    .quantized();
    let path = dir.path().join("mlp.ckpt");
    mlp.save(&path).unwrap();
    let loaded = MlpCheckpoint::load(&path).unwrap();
    assert_eq!(loaded, mlp);
    assert_eq!(loaded.to_bytes(), fs::read(&path).unwrap());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = encoder_checkpoint(Ablation::Full).to_bytes();
    assert!(EncoderCheckpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(EncoderCheckpoint::from_bytes(&bytes[..10]).is_err());
    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(EncoderCheckpoint::from_bytes(&wrong_magic).is_err());
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(EncoderCheckpoint::from_bytes(&trailing).is_err());
    assert!(MlpCheckpoint::from_bytes(&bytes).is_err());
}

#[test]
fn missing_checkpoint_names_the_command_to_run() {
    let dir = tempfile::tempdir().unwrap();
    let err = EncoderCheckpoint::load(&dir.path().join("encoder.ckpt")).unwrap_err();
    assert!(matches!(err, Error::MissingCheckpoint { command: "train-struct", .. }));
    assert!(err.to_string().contains("run `train-struct` first"), "{err}");
    let err = MlpCheckpoint::load(&dir.path().join("semantic.ckpt")).unwrap_err();
    assert!(matches!(err, Error::MissingCheckpoint { command: "train-sem", .. }));
}

#[test]
fn config_round_trips_through_toml() {
    let config = RunConfig {
        rng_seed: 17,
        ablation: Ablation::NoHighway,
        metric: Metric::Cosine,
        tau_sweep: vec![0.0, 0.25, 1.0],
        sem_dim: Some(40),
        fusion: FusionMode::Concat,
        ..RunConfig::default()
    };
    assert_eq!(RunConfig::from_toml(&config.to_toml()).unwrap(), config);
    assert!(matches!(RunConfig::from_toml("no_such_field = 1"), Err(Error::Toml { .. })));
    let sum = RunConfig { fusion: FusionMode::Sum, ..config };
    assert!(matches!(RunConfig::from_toml(&sum.to_toml()), Err(Error::Config(m)) if m.contains("concat")));
}
