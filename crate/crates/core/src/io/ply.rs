//! ASCII PLY 1.0 with optional per-vertex `saliency` and `red green blue`.
//!
//! Colors encode the *rank* of the saliency score: scores are sorted
//! ascending (ties by index), rank `i` of `n` maps to `t = i / (n - 1)`, and
//! `t` is linearly interpolated through [`COLORMAP`] and rounded to the
//! nearest byte. The lowest score is blue, the highest red.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Colormap stops `(t, [r, g, b])`, a diverging blue-grey-red ramp.
pub const COLORMAP: [(f64, [u8; 3]); 5] = [
    (0.00, [59, 76, 192]),
    (0.25, [124, 159, 249]),
    (0.50, [221, 221, 221]),
    (0.75, [244, 154, 123]),
    (1.00, [180, 4, 38]),
];

fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    for w in COLORMAP.windows(2) {
        let (t0, c0) = w[0];
        let (t1, c1) = w[1];
        if t <= t1 {
            let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
            let mut out = [0u8; 3];
            for k in 0..3 {
                out[k] = (c0[k] as f64 + f * (c1[k] as f64 - c0[k] as f64)).round() as u8;
            }
            return out;
        }
    }
    COLORMAP[COLORMAP.len() - 1].1
}

/// Rank-based colors for `scores`.
pub fn rank_colors(scores: &[f64]) -> Vec<[u8; 3]> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut colors = vec![[0u8; 3]; n];
    for (rank, &i) in order.iter().enumerate() {
        let t = if n > 1 { rank as f64 / (n - 1) as f64 } else { 1.0 };
        colors[i] = colormap(t);
    }
    colors
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlyData {
    /// The scalar channel holds `saliency` when present.
    pub cloud: PointCloud,
    pub colors: Option<Vec<[u8; 3]>>,
}

pub fn render_ply(cloud: &PointCloud, colors: Option<&[[u8; 3]]>) -> Result<String> {
    if let Some(c) = colors {
        if c.len() != cloud.len() {
            return Err(Error::invalid("color count does not match point count"));
        }
    }
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    writeln!(s, "element vertex {}", cloud.len()).unwrap();
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.scalar().is_some() {
        s.push_str("property double saliency\n");
    }
    if colors.is_some() {
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        write!(s, "{} {} {}", p[0], p[1], p[2]).unwrap();
        if let Some(sc) = cloud.scalar() {
            write!(s, " {}", sc[i]).unwrap();
        }
        if let Some(c) = colors {
            write!(s, " {} {} {}", c[i][0], c[i][1], c[i][2]).unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_ply(path: &Path, cloud: &PointCloud, colors: Option<&[[u8; 3]]>) -> Result<()> {
    super::write_atomic(path, render_ply(cloud, colors)?.as_bytes())
}

struct Element {
    name: String,
    count: usize,
    props: Vec<String>,
}

pub fn parse_ply(text: &str, origin: &Path) -> Result<PlyData> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(err(1, "missing 'ply' magic".into())),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    loop {
        let (ln, line) = lines.next().ok_or_else(|| err(0, "unterminated header".into()))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", "1.0"] => saw_format = true,
            ["format", other, ..] => return Err(err(ln, format!("unsupported format {other:?}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| err(ln, format!("bad element count {count:?}")))?,
                props: Vec::new(),
            }),
            ["property", "list", _, _, name] => elements
                .last_mut()
                .ok_or_else(|| err(ln, "property before element".into()))?
                .props
                .push(format!("list:{name}")),
            ["property", _ty, name] => elements
                .last_mut()
                .ok_or_else(|| err(ln, "property before element".into()))?
                .props
                .push(name.to_string()),
            ["end_header"] => break,
            _ => return Err(err(ln, format!("unrecognized header line {line:?}"))),
        }
    }
    if !saw_format {
        return Err(err(2, "missing 'format ascii 1.0'".into()));
    }
    let mut cloud = None;
    let mut colors = None;
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                lines.next().ok_or_else(|| err(0, format!("truncated {} element", el.name)))?;
            }
            continue;
        }
        let pos = |name: &str| el.props.iter().position(|p| p == name);
        let (xi, yi, zi) = match (pos("x"), pos("y"), pos("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err(err(0, "vertex element lacks x/y/z".into())),
        };
        let si = pos("saliency");
        let rgb = match (pos("red"), pos("green"), pos("blue")) {
            (Some(r), Some(g), Some(b)) => Some([r, g, b]),
            _ => None,
        };
        let mut points = Vec::with_capacity(el.count);
        let mut scalar = Vec::new();
        let mut cols = Vec::new();
        for _ in 0..el.count {
            let (ln, line) = lines.next().ok_or_else(|| err(0, "truncated vertex data".into()))?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != el.props.len() {
                return Err(err(ln, format!("expected {} values, found {}", el.props.len(), vals.len())));
            }
            let num = |i: usize| -> Result<f64> {
                vals[i].parse::<f64>().map_err(|e| err(ln, format!("bad number {:?}: {e}", vals[i])))
            };
            points.push([num(xi)?, num(yi)?, num(zi)?]);
            if let Some(s) = si {
                scalar.push(num(s)?);
            }
            if let Some(idx) = rgb {
                let mut c = [0u8; 3];
                for k in 0..3 {
                    c[k] = vals[idx[k]]
                        .parse::<u8>()
                        .map_err(|e| err(ln, format!("bad color {:?}: {e}", vals[idx[k]])))?;
                }
                cols.push(c);
            }
        }
        let mut c = PointCloud::new(points)?;
        if si.is_some() {
            c = c.with_scalar(scalar)?;
        }
        cloud = Some(c);
        if rgb.is_some() {
            colors = Some(cols);
        }
    }
    Ok(PlyData {
        cloud: cloud.ok_or_else(|| err(0, "no vertex element".into()))?,
        colors,
    })
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    let text = super::read_text(path)?;
    parse_ply(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_colors_follow_the_table() {
        let c = rank_colors(&[0.3, -1.0, 5.0, 0.3, 2.0]);
        // ranks: -1.0 -> 0, 0.3 (idx 0) -> 1, 0.3 (idx 3) -> 2, 2.0 -> 3, 5.0 -> 4
        assert_eq!(c[1], COLORMAP[0].1);
        assert_eq!(c[0], COLORMAP[1].1);
        assert_eq!(c[3], COLORMAP[2].1);
        assert_eq!(c[4], COLORMAP[3].1);
        assert_eq!(c[2], COLORMAP[4].1);
        assert_eq!(colormap(0.125), [92, 118, 221]);
    }

    #[test]
    fn header_errors() {
        assert!(parse_ply("nope\n", Path::new("x.ply")).is_err());
        let bad = "ply\nformat binary_little_endian 1.0\nend_header\n";
        assert!(parse_ply(bad, Path::new("x.ply")).is_err());
        let short = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2\n";
        match parse_ply(short, Path::new("x.ply")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reads_faces_and_float_properties() {
        let text = "ply\nformat ascii 1.0\ncomment tri\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n\
                    element face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        let d = parse_ply(text, Path::new("t.ply")).unwrap();
        assert_eq!(d.cloud.len(), 3);
        assert!(d.cloud.scalar().is_none());
        assert!(d.colors.is_none());
    }
}
