//! Text-embedding tables.
//!
//! Text form: a header line `#dim=<d>`, optionally followed by a tab and
//! `provenance=<tag>`, then one row per entity: `label \t v1 \t ... \t vd`.
//!
//! Binary form: `<name>.bin` holds the rows as little-endian `f32`, row-major;
//! the sibling `<name>.idx` has the same header followed by one label per
//! line, in row order.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use kgalign_core::error::Side;
use kgalign_core::graph::KnowledgeGraph;
use kgalign_core::semantic::{Provenance, TextEmbeddingTable};

use crate::error::{Error, Result};
use crate::io::read_to_string;

/// Vectors keyed by entity label, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledEmbeddings {
    pub width: usize,
    pub provenance: Provenance,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl LabelledEmbeddings {
    pub fn to_table(&self, graph: &KnowledgeGraph, side: Side) -> Result<TextEmbeddingTable> {
        let entries = self.rows.iter().map(|(l, v)| (l.as_str(), v.as_slice()));
        Ok(TextEmbeddingTable::from_labelled(
            graph,
            side,
            self.width,
            entries,
            self.provenance,
        )?)
    }
}

fn parse_header(path: &Path, line: Option<&str>) -> Result<(usize, Provenance)> {
    let line = line.ok_or_else(|| Error::format(path, "empty file, expected `#dim=<d>` header"))?;
    let mut parts = line.split('\t');
    let dim = parts
        .next()
        .and_then(|p| p.strip_prefix("#dim="))
        .ok_or_else(|| Error::parse(path, 1, "expected `#dim=<d>` header"))?;
    let width: usize = dim
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("bad dimension `{dim}`")))?;
    if width == 0 {
        return Err(Error::parse(path, 1, "dimension must be at least 1"));
    }
    let mut provenance = Provenance::Unspecified;
    for part in parts {
        let tag = part
            .strip_prefix("provenance=")
            .ok_or_else(|| Error::parse(path, 1, format!("unknown header field `{part}`")))?;
        provenance = Provenance::from_tag(tag)
            .ok_or_else(|| Error::parse(path, 1, format!("unknown provenance `{tag}`")))?;
    }
    Ok((width, provenance))
}

fn header(width: usize, provenance: Provenance) -> String {
    match provenance {
        Provenance::Unspecified => format!("#dim={width}"),
        p => format!("#dim={width}\tprovenance={}", p.tag()),
    }
}

fn check_unique(path: &Path, seen: &mut BTreeSet<String>, label: &str, line: usize) -> Result<()> {
    if !seen.insert(label.to_string()) {
        return Err(Error::parse(path, line, format!("duplicate label `{label}`")));
    }
    Ok(())
}

pub fn read_text(path: &Path) -> Result<LabelledEmbeddings> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l));
    let (width, provenance) = parse_header(path, lines.next())?;
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let label = fields.next().unwrap_or_default();
        if label.is_empty() {
            return Err(Error::parse(path, lineno, "empty label"));
        }
        let values: Vec<f64> = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(path, lineno, format!("bad value `{f}`")))
            })
            .collect::<Result<_>>()?;
        if values.len() != width {
            return Err(Error::parse(
                path,
                lineno,
                format!("row has {} values, header says {width}", values.len()),
            ));
        }
        check_unique(path, &mut seen, label, lineno)?;
        rows.push((label.to_string(), values));
    }
    Ok(LabelledEmbeddings {
        width,
        provenance,
        rows,
    })
}

pub fn write_text(path: &Path, table: &LabelledEmbeddings) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "{}", header(table.width, table.provenance)).map_err(io)?;
    for (label, values) in &table.rows {
        assert_eq!(values.len(), table.width, "row width disagrees with table width");
        out.write_all(label.as_bytes()).map_err(io)?;
        for v in values {
            write!(out, "\t{v}").map_err(io)?;
        }
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// The index file that accompanies a binary table.
pub fn index_path(bin: &Path) -> PathBuf {
    bin.with_extension("idx")
}

pub fn read_binary(bin: &Path) -> Result<LabelledEmbeddings> {
    let idx = index_path(bin);
    let text = read_to_string(&idx)?;
    let mut lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l));
    let (width, provenance) = parse_header(&idx, lines.next())?;
    let mut labels = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        check_unique(&idx, &mut seen, line, i + 2)?;
        labels.push(line.to_string());
    }
    let bytes = fs::read(bin).map_err(|e| Error::io(bin, e))?;
    let expected = labels.len() * width * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            bin,
            format!(
                "{} bytes, expected {expected} for {} rows of width {width}",
                bytes.len(),
                labels.len()
            ),
        ));
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
    let mut rows = Vec::with_capacity(labels.len());
    for label in labels {
        let row: Vec<f64> = values.by_ref().take(width).collect();
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(bin, format!("non-finite value in row `{label}`")));
        }
        rows.push((label, row));
    }
    Ok(LabelledEmbeddings {
        width,
        provenance,
        rows,
    })
}

/// Writes `<bin>` and its `.idx` sibling. Values are narrowed to `f32`.
pub fn write_binary(bin: &Path, table: &LabelledEmbeddings) -> Result<()> {
    let idx = index_path(bin);
    let mut index = header(table.width, table.provenance);
    index.push('\n');
    let mut data = Vec::with_capacity(table.rows.len() * table.width * 4);
    for (label, values) in &table.rows {
        assert_eq!(values.len(), table.width, "row width disagrees with table width");
        index.push_str(label);
        index.push('\n');
        for &v in values {
            data.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(&idx, index).map_err(|e| Error::io(&idx, e))?;
    fs::write(bin, data).map_err(|e| Error::io(bin, e))
}

/// Reads either form, choosing by the `.bin` extension.
pub fn read_any(path: &Path) -> Result<LabelledEmbeddings> {
    if path.extension().is_some_and(|e| e == "bin") {
        read_binary(path)
    } else {
        read_text(path)
    }
}

/// Loads a table and aligns it to the entity ids of `graph`.
pub fn load_text_embeddings(path: &Path, graph: &KnowledgeGraph, side: Side) -> Result<TextEmbeddingTable> {
    read_any(path)?.to_table(graph, side).map_err(|e| match e {
        Error::Core(e) => Error::format(path, e.to_string()),
        e => e,
    })
}
