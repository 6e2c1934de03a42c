use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// One `x y z` line per point. Values use the shortest exact decimal form,
/// so a write/read cycle is lossless.
pub fn render_xyz(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        writeln!(s, "{} {} {}", p[0], p[1], p[2]).unwrap();
    }
    s
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    super::write_atomic(path, render_xyz(cloud).as_bytes())
}

/// Parses ASCII XYZ. Blank lines are skipped; any other line must hold
/// exactly three numbers.
pub fn parse_xyz(text: &str, origin: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        }
        let mut p = [0.0; 3];
        for (c, f) in p.iter_mut().zip(&fields) {
            *c = f.parse::<f64>().map_err(|e| err(format!("bad number {f:?}: {e}")))?;
            if !c.is_finite() {
                return Err(err(format!("non-finite coordinate {f:?}")));
            }
        }
        points.push(p);
    }
    PointCloud::new(points)
}

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let text = super::read_text(path)?;
    let mut cloud = parse_xyz(&text, path)?;
    if let Some(stem) = path.file_stem() {
        cloud.set_id(stem.to_string_lossy());
    }
    Ok(cloud)
}
