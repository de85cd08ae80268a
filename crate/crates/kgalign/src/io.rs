//! Tab-separated graph, label and seed files.
//!
//! Every file is UTF-8 with `\n` line endings. Blank lines are skipped; any
//! other row must have the expected number of non-empty fields.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use kgalign_core::error::Side;
use kgalign_core::graph::{resolve_seeds, GraphBuilder, KnowledgeGraph, LoadReport, SeedPair};

use crate::error::{Error, Result};

/// File names inside a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetLayout {
    pub dir: PathBuf,
}

impl DatasetLayout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn side_file(&self, stem: &str, side: Side, ext: &str) -> PathBuf {
        self.dir.join(format!("{stem}_{}.{ext}", side.index() + 1))
    }

    pub fn relation_triples(&self, side: Side) -> PathBuf {
        self.side_file("rel_triples", side, "tsv")
    }

    pub fn attribute_triples(&self, side: Side) -> PathBuf {
        self.side_file("attr_triples", side, "tsv")
    }

    pub fn entity_labels(&self, side: Side) -> PathBuf {
        self.side_file("ent_labels", side, "tsv")
    }

    pub fn descriptions(&self, side: Side) -> PathBuf {
        self.side_file("descriptions", side, "tsv")
    }

    pub fn text_embeddings(&self, side: Side) -> PathBuf {
        self.side_file("text_emb", side, "tsv")
    }

    pub fn text_embeddings_binary(&self, side: Side) -> PathBuf {
        self.side_file("text_emb", side, "bin")
    }

    pub fn seeds(&self) -> PathBuf {
        self.dir.join("seeds.tsv")
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-blank rows as `(1-based line number, fields)`, checking the arity.
fn rows<'a>(
    path: &'a Path,
    text: &'a str,
    arity: std::ops::RangeInclusive<usize>,
) -> impl Iterator<Item = Result<(usize, Vec<&'a str>)>> + 'a {
    text.lines().enumerate().filter_map(move |(i, line)| {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            return None;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let lineno = i + 1;
        if !arity.contains(&fields.len()) {
            let expected = if arity.start() == arity.end() {
                arity.start().to_string()
            } else {
                format!("{} to {}", arity.start(), arity.end())
            };
            return Some(Err(Error::parse(
                path,
                lineno,
                format!("expected {expected} tab-separated fields, found {}", fields.len()),
            )));
        }
        if let Some(k) = fields.iter().position(|f| f.is_empty()) {
            return Some(Err(Error::parse(path, lineno, format!("field {} is empty", k + 1))));
        }
        Some(Ok((lineno, fields)))
    })
}

/// Loads one graph. Entities are interned in the order they first appear in
/// the relation triples, then the attribute triples, then the label file.
/// The attribute and label files are optional.
pub fn load_graph(
    triples: &Path,
    attributes: Option<&Path>,
    labels: Option<&Path>,
) -> Result<(KnowledgeGraph, LoadReport)> {
    let mut builder = GraphBuilder::new();
    let text = read_to_string(triples)?;
    for row in rows(triples, &text, 3..=3) {
        let (_, f) = row?;
        builder.add_relation(f[0], f[1], f[2]);
    }
    if let Some(path) = attributes {
        let text = read_to_string(path)?;
        for row in rows(path, &text, 3..=3) {
            let (_, f) = row?;
            builder.add_attribute(f[0], f[1], f[2]);
        }
    }
    if let Some(path) = labels {
        let text = read_to_string(path)?;
        for row in rows(path, &text, 1..=2) {
            let (_, f) = row?;
            match f.get(1) {
                Some(name) => builder.add_entity_name(f[0], name),
                None => builder.add_entity(f[0]),
            };
        }
    }
    builder.finish().map_err(|e| match e {
        kgalign_core::Error::EmptyGraph => Error::format(triples, e.to_string()),
        e => e.into(),
    })
}

/// Loads a two-column seed file and resolves it against both graphs.
pub fn load_seeds(path: &Path, g1: &KnowledgeGraph, g2: &KnowledgeGraph) -> Result<Vec<SeedPair>> {
    let text = read_to_string(path)?;
    let parsed: Vec<(usize, &str, &str)> = rows(path, &text, 2..=2)
        .map(|r| r.map(|(line, f)| (line, f[0], f[1])))
        .collect::<Result<_>>()?;
    resolve_seeds(parsed, g1, g2).map_err(|e| match e {
        kgalign_core::Error::UnknownLabel { line, .. }
        | kgalign_core::Error::NonInjectiveSeeds { line, .. } => {
            let message = e.to_string();
            let message = message
                .strip_prefix(&format!("line {line}: "))
                .unwrap_or(&message)
                .to_string();
            Error::parse(path, line, message)
        }
        e => e.into(),
    })
}

/// Reads `label \t text` rows, e.g. entity descriptions.
pub fn load_descriptions(path: &Path) -> Result<Vec<(String, String)>> {
    let text = read_to_string(path)?;
    rows(path, &text, 2..=2)
        .map(|r| r.map(|(_, f)| (f[0].to_string(), f[1].to_string())))
        .collect()
}

/// Writes rows of fields joined by tabs.
pub fn write_tsv<I, R, S>(path: &Path, rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        let mut first = true;
        for field in row {
            if !first {
                out.write_all(b"\t").map_err(|e| Error::io(path, e))?;
            }
            first = false;
            out.write_all(field.as_ref().as_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
