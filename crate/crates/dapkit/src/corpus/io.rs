use super::ParallelPair;
use crate::error::{DapError, Result};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const CORPUS_HEADER: &str = "#dapcorpus v1";

/// TSV layout: lang_id, space-separated source ids, space-separated pivot
/// ids, comma-separated "i-j" alignment links (source pos - pivot pos).
pub fn write_corpus(path: &Path, pairs: &[ParallelPair]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{CORPUS_HEADER}")?;
    for p in pairs {
        let src = join(&p.src);
        let pivot = join(&p.pivot);
        let links: Vec<String> = p
            .alignment
            .iter()
            .enumerate()
            .map(|(i, j)| format!("{i}-{j}"))
            .collect();
        writeln!(w, "{}\t{}\t{}\t{}", p.lang_id, src, pivot, links.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn join(ids: &[u32]) -> String {
    ids.iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn read_corpus(path: &Path) -> Result<Vec<ParallelPair>> {
    let mut lines = BufReader::new(std::fs::File::open(path)?).lines();
    let header = lines
        .next()
        .ok_or_else(|| DapError::Data("empty corpus file".into()))??;
    if header.trim() != CORPUS_HEADER {
        return Err(DapError::Data(format!(
            "bad corpus header: expected {CORPUS_HEADER:?}, got {header:?}"
        )));
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(DapError::Data(format!(
                "line {}: expected 4 tab-separated fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let lang_id: usize = fields[0]
            .parse()
            .map_err(|_| DapError::Data(format!("line {}: bad lang id", lineno + 2)))?;
        let src = parse_ids(fields[1], lineno)?;
        let pivot = parse_ids(fields[2], lineno)?;
        let mut alignment = vec![usize::MAX; src.len()];
        for link in fields[3].split(',') {
            let (i, j) = link
                .split_once('-')
                .ok_or_else(|| DapError::Data(format!("line {}: bad link {link:?}", lineno + 2)))?;
            let i: usize = i
                .parse()
                .map_err(|_| DapError::Data(format!("line {}: bad link {link:?}", lineno + 2)))?;
            let j: usize = j
                .parse()
                .map_err(|_| DapError::Data(format!("line {}: bad link {link:?}", lineno + 2)))?;
            if i >= src.len() || j >= pivot.len() {
                return Err(DapError::Data(format!(
                    "line {}: link {i}-{j} out of range",
                    lineno + 2
                )));
            }
            alignment[i] = j;
        }
        if alignment.iter().any(|&j| j == usize::MAX) {
            return Err(DapError::Data(format!(
                "line {}: alignment does not cover every source position",
                lineno + 2
            )));
        }
        out.push(ParallelPair {
            lang_id,
            src,
            pivot,
            alignment,
        });
    }
    Ok(out)
}

fn parse_ids(field: &str, lineno: usize) -> Result<Vec<u32>> {
    field
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| DapError::Data(format!("line {}: bad token id {t:?}", lineno + 2)))
        })
        .collect()
}
