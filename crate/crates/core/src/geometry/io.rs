//! Plain-text point-set format.
//!
//! ```text
//! pointset 1 <dim> <n>
//! x y [z]        # n lines
//! ```
//! Lines starting with `#` are comments. Values are written with Rust's
//! shortest round-trip float formatting, so a write/read cycle is lossless.

use std::fmt::Write as _;
use std::path::Path;

use super::PointSet;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub fn to_text(ps: &PointSet) -> String {
    let mut out = String::with_capacity(ps.len() * ps.dim() * 12 + 32);
    writeln!(out, "pointset {FORMAT_VERSION} {} {}", ps.dim(), ps.len()).unwrap();
    for p in ps.points() {
        for (k, v) in p.iter().enumerate() {
            if k > 0 {
                out.push(' ');
            }
            write!(out, "{v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn from_text(text: &str) -> Result<PointSet> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| Error::Format("missing header".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "pointset" {
        return Err(Error::Format(format!("bad header `{header}`")));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad header field `{s}`")));
    let version = parse(fields[1])?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Format(format!("unsupported point-set version {version}")));
    }
    let dim = parse(fields[2])?;
    let n = parse(fields[3])?;
    if dim != 2 && dim != 3 {
        return Err(Error::UnsupportedDim(dim));
    }
    let mut coords = Vec::with_capacity(n * dim);
    let mut rows = 0;
    for line in lines {
        let before = coords.len();
        for tok in line.split_whitespace() {
            if tok.starts_with('#') {
                break;
            }
            coords.push(tok.parse::<f64>().map_err(|_| Error::Format(format!("bad number `{tok}`")))?);
        }
        if coords.len() - before != dim {
            return Err(Error::Format(format!("row {rows} has {} values, expected {dim}", coords.len() - before)));
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Format(format!("header declares {n} points, found {rows}")));
    }
    PointSet::new(dim, coords)
}

pub fn read(path: &Path) -> Result<PointSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    from_text(&text)
}
