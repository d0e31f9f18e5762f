use crate::error::{DapError, Result};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const EMB_HEADER_PREFIX: &str = "#dapemb v1 d=";

/// TSV embedding store: header "#dapemb v1 d=<d>", then one row per
/// vector: "id<TAB>v0 v1 ...". Values round-trip exactly (shortest
/// representation that parses back to the same f64).
pub fn write_embeddings(path: &Path, ids: &[String], embs: &[Vec<f64>]) -> Result<()> {
    if ids.len() != embs.len() {
        return Err(DapError::Contract(format!(
            "write_embeddings: {} ids for {} vectors",
            ids.len(),
            embs.len()
        )));
    }
    let d = embs.first().map(|e| e.len()).unwrap_or(0);
    if embs.iter().any(|e| e.len() != d) {
        return Err(DapError::Shape("write_embeddings: ragged vectors".into()));
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{EMB_HEADER_PREFIX}{d}")?;
    for (id, e) in ids.iter().zip(embs) {
        let vals: Vec<String> = e.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{id}\t{}", vals.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = BufReader::new(std::fs::File::open(path)?).lines();
    let header = lines
        .next()
        .ok_or_else(|| DapError::Data("empty embedding file".into()))??;
    let d: usize = header
        .strip_prefix(EMB_HEADER_PREFIX)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| DapError::Data(format!("bad embedding header {header:?}")))?;
    let mut ids = Vec::new();
    let mut embs = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| DapError::Data(format!("line {}: missing tab", n + 2)))?;
        let vals: Vec<f64> = rest
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| DapError::Data(format!("line {}: bad value {t:?}", n + 2)))
            })
            .collect::<Result<_>>()?;
        if vals.len() != d {
            return Err(DapError::Data(format!(
                "line {}: {} values, header says {d}",
                n + 2,
                vals.len()
            )));
        }
        ids.push(id.to_string());
        embs.push(vals);
    }
    Ok((ids, embs))
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
];

/// Standalone SVG scatter of 2-D points colored by integer label, with a
/// legend and PC1/PC2 axes.
pub fn write_scatter_svg(
    path: &Path,
    points: &[Vec<f64>],
    labels: &[usize],
    label_names: &[String],
) -> Result<()> {
    if points.len() != labels.len() {
        return Err(DapError::Contract(format!(
            "write_scatter_svg: {} points, {} labels",
            points.len(),
            labels.len()
        )));
    }
    if points.iter().any(|p| p.len() != 2) {
        return Err(DapError::Shape("write_scatter_svg: points must be 2-D".into()));
    }
    let (w, h, pad) = (640.0, 480.0, 50.0);
    let (mut lo_x, mut hi_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lo_y, mut hi_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo_x = lo_x.min(p[0]);
        hi_x = hi_x.max(p[0]);
        lo_y = lo_y.min(p[1]);
        hi_y = hi_y.max(p[1]);
    }
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let (sx, sy) = (span(lo_x, hi_x), span(lo_y, hi_y));

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"14\">PC1</text>\n\
         <text x=\"12\" y=\"{pad}\" font-size=\"14\">PC2</text>\n",
        h - pad,
        w - pad,
        h - pad,
        h - pad,
        w - pad + 6.0,
        h - pad + 4.0,
    ));
    for (p, &lab) in points.iter().zip(labels) {
        let cx = pad + (p[0] - lo_x) / sx * (w - 2.0 * pad);
        let cy = h - pad - (p[1] - lo_y) / sy * (h - 2.0 * pad);
        let color = PALETTE[lab % PALETTE.len()];
        svg.push_str(&format!(
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"4\" fill=\"{color}\" fill-opacity=\"0.8\"/>\n"
        ));
    }
    for (i, name) in label_names.iter().enumerate() {
        let y = pad + i as f64 * 20.0;
        let color = PALETTE[i % PALETTE.len()];
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{y}\" r=\"5\" fill=\"{color}\"/>\n\
             <text x=\"{}\" y=\"{}\" font-size=\"13\">{name}</text>\n",
            w - pad - 90.0,
            w - pad - 80.0,
            y + 4.0,
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// CSV companion to the scatter: label plus the projected coordinates.
pub fn write_points_csv(
    path: &Path,
    points: &[Vec<f64>],
    labels: &[usize],
    label_names: &[String],
) -> Result<()> {
    if points.len() != labels.len() {
        return Err(DapError::Contract(format!(
            "write_points_csv: {} points, {} labels",
            points.len(),
            labels.len()
        )));
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "label,pc1,pc2")?;
    for (p, &lab) in points.iter().zip(labels) {
        let name = label_names
            .get(lab)
            .cloned()
            .unwrap_or_else(|| lab.to_string());
        writeln!(w, "{name},{},{}", p[0], p[1])?;
    }
    w.flush()?;
    Ok(())
}
