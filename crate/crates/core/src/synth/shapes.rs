use std::collections::HashMap;
use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist2, Point3, PointCloud};
use crate::metrics::Surface;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere,
    Torus,
    Cube,
    Cylinder,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Sphere, ShapeKind::Torus, ShapeKind::Cube, ShapeKind::Cylinder];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Torus => "torus",
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
        }
    }

    fn param_count(self) -> usize {
        match self {
            ShapeKind::Sphere | ShapeKind::Cube => 1,
            ShapeKind::Torus | ShapeKind::Cylinder => 2,
        }
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown shape kind {s:?}")))
    }
}

/// Rigid transform `world = rotation * local + translation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: Point3,
}

impl Default for Pose {
    fn default() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }
}

impl Pose {
    /// Rotation from a uniformly random unit quaternion.
    pub fn random(rng: &mut impl Rng, max_translation: f64) -> Self {
        let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
        let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
        let (w, x, y, z) = (
            a * (2.0 * PI * u2).sin(),
            a * (2.0 * PI * u2).cos(),
            b * (2.0 * PI * u3).sin(),
            b * (2.0 * PI * u3).cos(),
        );
        let rotation = [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
            [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
            [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
        ];
        let t = max_translation;
        Self {
            rotation,
            translation: [rng.gen_range(-t..=t), rng.gen_range(-t..=t), rng.gen_range(-t..=t)],
        }
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn to_world(&self, p: &Point3) -> Point3 {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    pub fn to_local(&self, p: &Point3) -> Point3 {
        let r = &self.rotation;
        let d = [p[0] - self.translation[0], p[1] - self.translation[1], p[2] - self.translation[2]];
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }
}

/// An analytic closed surface.
///
/// `params`: sphere `[radius]`, torus `[major, minor]` with `minor < major`,
/// cube `[edge]`, cylinder `[radius, height]` (closed with both caps).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub params: Vec<f64>,
    pub pose: Pose,
    pub id: String,
}

impl ShapeSpec {
    pub fn new(kind: ShapeKind, params: Vec<f64>, pose: Pose, id: impl Into<String>) -> Result<Self> {
        let spec = Self {
            kind,
            params,
            pose,
            id: id.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.len() != self.kind.param_count() {
            return Err(Error::invalid(format!(
                "{} takes {} parameters, got {}",
                self.kind.name(),
                self.kind.param_count(),
                self.params.len()
            )));
        }
        if self.params.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::invalid(format!("{}: size parameters must be positive", self.id)));
        }
        if self.kind == ShapeKind::Torus && self.params[1] >= self.params[0] {
            return Err(Error::invalid(format!("{}: torus minor radius must be below major", self.id)));
        }
        if !self.pose.is_orthonormal(1e-9) {
            return Err(Error::invalid(format!("{}: rotation is not orthonormal", self.id)));
        }
        Ok(())
    }

    /// Random shape of `kind` with size parameters in a unit-ish range.
    pub fn random(kind: ShapeKind, rng: &mut impl Rng, id: impl Into<String>) -> Self {
        let params = match kind {
            ShapeKind::Sphere => vec![rng.gen_range(0.6..1.2)],
            ShapeKind::Torus => {
                let major = rng.gen_range(0.7..1.1);
                vec![major, major * rng.gen_range(0.25..0.45)]
            }
            ShapeKind::Cube => vec![rng.gen_range(0.8..1.6)],
            ShapeKind::Cylinder => vec![rng.gen_range(0.4..0.8), rng.gen_range(0.8..1.8)],
        };
        Self {
            kind,
            params,
            pose: Pose::random(rng, 0.5),
            id: id.into(),
        }
    }

    fn area_uniform_local(&self, rng: &mut impl Rng) -> Point3 {
        let p = &self.params;
        match self.kind {
            ShapeKind::Sphere => loop {
                let v: Point3 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
                if n2 > 1e-6 && n2 <= 1.0 {
                    let s = p[0] / n2.sqrt();
                    break [v[0] * s, v[1] * s, v[2] * s];
                }
            },
            ShapeKind::Torus => {
                let (big, small) = (p[0], p[1]);
                loop {
                    let u = rng.gen_range(0.0..2.0 * PI);
                    let v = rng.gen_range(0.0..2.0 * PI);
                    // Area element is proportional to (R + r cos v).
                    if rng.gen_range(0.0..big + small) <= big + small * v.cos() {
                        let rho = big + small * v.cos();
                        break [rho * u.cos(), rho * u.sin(), small * v.sin()];
                    }
                }
            }
            ShapeKind::Cube => {
                let h = p[0] / 2.0;
                let face = rng.gen_range(0..6);
                let a = rng.gen_range(-h..=h);
                let b = rng.gen_range(-h..=h);
                let s = if face % 2 == 0 { h } else { -h };
                match face / 2 {
                    0 => [s, a, b],
                    1 => [a, s, b],
                    _ => [a, b, s],
                }
            }
            ShapeKind::Cylinder => {
                let (r, height) = (p[0], p[1]);
                let side = 2.0 * PI * r * height;
                let cap = PI * r * r;
                let pick = rng.gen_range(0.0..side + 2.0 * cap);
                let th = rng.gen_range(0.0..2.0 * PI);
                if pick < side {
                    [r * th.cos(), r * th.sin(), rng.gen_range(-height / 2.0..=height / 2.0)]
                } else {
                    let rr = r * rng.gen::<f64>().sqrt();
                    let z = if pick < side + cap { height / 2.0 } else { -height / 2.0 };
                    [rr * th.cos(), rr * th.sin(), z]
                }
            }
        }
    }

    /// Exact unsigned distance from a local-frame point to the surface.
    fn local_distance(&self, q: &Point3) -> f64 {
        let p = &self.params;
        match self.kind {
            ShapeKind::Sphere => ((q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt() - p[0]).abs(),
            ShapeKind::Torus => {
                let rho = (q[0] * q[0] + q[1] * q[1]).sqrt();
                (((rho - p[0]).powi(2) + q[2] * q[2]).sqrt() - p[1]).abs()
            }
            ShapeKind::Cube => {
                let h = p[0] / 2.0;
                box_surface_distance(&[q[0].abs() - h, q[1].abs() - h, q[2].abs() - h])
            }
            ShapeKind::Cylinder => {
                let rho = (q[0] * q[0] + q[1] * q[1]).sqrt();
                box_surface_distance(&[rho - p[0], q[2].abs() - p[1] / 2.0])
            }
        }
    }
}

/// Distance to the boundary of an axis-aligned box given the per-axis
/// excess `|q| - half_extent`.
fn box_surface_distance(excess: &[f64]) -> f64 {
    let outside: f64 = excess.iter().map(|e| e.max(0.0).powi(2)).sum::<f64>().sqrt();
    if outside > 0.0 {
        outside
    } else {
        -excess.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Surface for ShapeSpec {
    fn distance(&self, p: &Point3) -> f64 {
        self.local_distance(&self.pose.to_local(p))
    }
}

/// Greedy dart thinning at radius `r`: candidates in order, kept when no
/// kept point lies within `r`. Stops once `limit` points are kept.
fn thin(candidates: &[Point3], r: f64, limit: usize) -> Vec<usize> {
    let cell = |p: &Point3| -> (i64, i64, i64) {
        ((p[0] / r).floor() as i64, (p[1] / r).floor() as i64, (p[2] / r).floor() as i64)
    };
    let r2 = r * r;
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    let mut kept = Vec::new();
    for (i, p) in candidates.iter().enumerate() {
        let (cx, cy, cz) = cell(p);
        let mut clear = true;
        'scan: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                        if list.iter().any(|&j| dist2(p, &candidates[j]) <= r2) {
                            clear = false;
                            break 'scan;
                        }
                    }
                }
            }
        }
        if clear {
            grid.entry((cx, cy, cz)).or_default().push(i);
            kept.push(i);
            if kept.len() >= limit {
                break;
            }
        }
    }
    kept
}

/// `n` area-uniform surface points, blue-noise thinned: draw `4n` candidates,
/// binary-search the largest exclusion radius that still keeps at least `n`
/// of them, and return the first `n` survivors.
pub fn sample_surface(spec: &ShapeSpec, n: usize, seed: u64) -> Result<PointCloud> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample_surface needs n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates: Vec<Point3> = (0..4 * n).map(|_| spec.area_uniform_local(&mut rng)).collect();
    let extent = spec.params.iter().copied().fold(0.0, f64::max) * 4.0;
    let (mut lo, mut hi) = (0.0_f64, extent);
    let mut best: Vec<usize> = (0..n).collect();
    for _ in 0..32 {
        let mid = 0.5 * (lo + hi);
        if mid <= 0.0 {
            break;
        }
        let kept = thin(&candidates, mid, n);
        if kept.len() >= n {
            lo = mid;
            best = kept;
        } else {
            hi = mid;
        }
    }
    best.truncate(n);
    let points = best.iter().map(|&i| spec.pose.to_world(&candidates[i])).collect();
    PointCloud::with_id(points, spec.id.clone())
}
