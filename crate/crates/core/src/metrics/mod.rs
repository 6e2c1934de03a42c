//! Chamfer loss and the evaluation metric suite.

mod mesh;
mod uniformity;

pub use mesh::{closest_point_on_triangle, TriangleMesh};
pub use uniformity::{clutter_term, uniformity, DEFAULT_UNIFORMITY_SEEDS, UNIFORMITY_PERCENTAGES};

use std::fmt::Write as _;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::geometry::kdtree::nearest_all;
use crate::geometry::{Point3, PointCloud};

/// Anything with an unsigned point-to-surface distance.
pub trait Surface {
    fn distance(&self, p: &Point3) -> f64;
}

/// Chamfer value and its gradient with respect to the first cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct ChamferResult {
    pub value: f64,
    /// `|P| x 3`.
    pub grad: Matrix,
}

fn check_pair(p: &[Point3], q: &[Point3], what: &str) -> Result<()> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::invalid(format!("{what}: both clouds must be non-empty")));
    }
    Ok(())
}

/// Squared-distance Chamfer distance
/// `(1/M) sum_i min_j |p_i - q_j|^2 + (1/N) sum_j min_i |q_j - p_i|^2`
/// with its gradient in `P`. Matches are held fixed (ties to lowest index).
pub fn chamfer_points(p: &[Point3], q: &[Point3]) -> Result<ChamferResult> {
    check_pair(p, q, "chamfer")?;
    let (m, n) = (p.len() as f64, q.len() as f64);
    let p_to_q = nearest_all(p, q);
    let q_to_p = nearest_all(q, p);
    let mut grad = Matrix::zeros(p.len(), 3);
    let mut forward = 0.0;
    for (i, &(j, d)) in p_to_q.iter().enumerate() {
        forward += d;
        let g = grad.row_mut(i);
        for c in 0..3 {
            g[c] += 2.0 / m * (p[i][c] - q[j][c]);
        }
    }
    let mut backward = 0.0;
    for (j, &(i, d)) in q_to_p.iter().enumerate() {
        backward += d;
        let g = grad.row_mut(i);
        for c in 0..3 {
            g[c] += 2.0 / n * (p[i][c] - q[j][c]);
        }
    }
    Ok(ChamferResult {
        value: forward / m + backward / n,
        grad,
    })
}

pub fn chamfer(p: &PointCloud, q: &PointCloud) -> Result<ChamferResult> {
    chamfer_points(p.points(), q.points())
}

/// Symmetric Hausdorff distance with Euclidean (non-squared) distances.
pub fn hausdorff(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    check_pair(p.points(), q.points(), "hausdorff")?;
    let a = nearest_all(p.points(), q.points()).iter().map(|x| x.1).fold(0.0, f64::max);
    let b = nearest_all(q.points(), p.points()).iter().map(|x| x.1).fold(0.0, f64::max);
    Ok(a.max(b).sqrt())
}

/// Mean unsigned distance from the points to `surface`.
pub fn p2f(p: &PointCloud, surface: &dyn Surface) -> Result<f64> {
    p.require_non_empty("p2f")?;
    Ok(p.points().iter().map(|x| surface.distance(x)).sum::<f64>() / p.len() as f64)
}

/// Per-shape evaluation record. Values are stored raw; CSV output reports
/// them in units of 1e-3.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub shape_id: String,
    pub cd: f64,
    pub hd: f64,
    /// `None` when no reference surface is known.
    pub p2f: Option<f64>,
    /// One value per entry of [`UNIFORMITY_PERCENTAGES`].
    pub uniformity: Vec<f64>,
}

fn push_value(s: &mut String, v: f64) {
    if v.is_finite() {
        write!(s, ",{:.6}", v * 1e3).unwrap();
    } else {
        s.push_str(",NA");
    }
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "shape_id,cd,hd,p2f,u@0.4,u@0.6,u@0.8,u@1.0,u@1.2";

    /// Header for an arbitrary list of uniformity area fractions.
    pub fn csv_header(percentages: &[f64]) -> String {
        let mut s = String::from("shape_id,cd,hd,p2f");
        for p in percentages {
            write!(s, ",u@{:.1}", p * 100.0).unwrap();
        }
        s
    }

    /// A row for a shape that could not be evaluated; every metric prints
    /// as `NA` and the row is left out of [`MetricsRow::mean`].
    pub fn failed(shape_id: impl Into<String>, uniformity_columns: usize) -> Self {
        Self {
            shape_id: shape_id.into(),
            cd: f64::NAN,
            hd: f64::NAN,
            p2f: None,
            uniformity: vec![f64::NAN; uniformity_columns],
        }
    }

    pub fn is_failed(&self) -> bool {
        !self.cd.is_finite()
    }

    pub fn csv_line(&self) -> String {
        let mut s = self.shape_id.clone();
        push_value(&mut s, self.cd);
        push_value(&mut s, self.hd);
        push_value(&mut s, self.p2f.unwrap_or(f64::NAN));
        for &u in &self.uniformity {
            push_value(&mut s, u);
        }
        s
    }

    /// Column-wise mean over rows that were evaluated, labelled `mean`. P2F
    /// is averaged over rows that have it.
    pub fn mean(rows: &[MetricsRow]) -> Option<MetricsRow> {
        let rows: Vec<&MetricsRow> = rows.iter().filter(|r| !r.is_failed()).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let p2f: Vec<f64> = rows.iter().filter_map(|r| r.p2f).collect();
        let width = rows[0].uniformity.len();
        Some(MetricsRow {
            shape_id: "mean".into(),
            cd: rows.iter().map(|r| r.cd).sum::<f64>() / n,
            hd: rows.iter().map(|r| r.hd).sum::<f64>() / n,
            p2f: (!p2f.is_empty()).then(|| p2f.iter().sum::<f64>() / p2f.len() as f64),
            uniformity: (0..width)
                .map(|k| rows.iter().map(|r| r.uniformity.get(k).copied().unwrap_or(0.0)).sum::<f64>() / n)
                .collect(),
        })
    }
}

/// Header, one line per row, then the mean row.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    metrics_csv_with(rows, &UNIFORMITY_PERCENTAGES)
}

pub fn metrics_csv_with(rows: &[MetricsRow], percentages: &[f64]) -> String {
    let mut out = MetricsRow::csv_header(percentages);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    if let Some(m) = MetricsRow::mean(rows) {
        out.push_str(&m.csv_line());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{max_rel_err, numeric_grad};
    use crate::geometry::{dist2, dot, sub};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect()
    }

    fn cloud(p: Vec<Point3>) -> PointCloud {
        PointCloud::new(p).unwrap()
    }

    fn chamfer_oracle(p: &[Point3], q: &[Point3]) -> f64 {
        let a: f64 = p.iter().map(|x| q.iter().map(|y| dist2(x, y)).fold(f64::INFINITY, f64::min)).sum();
        let b: f64 = q.iter().map(|y| p.iter().map(|x| dist2(x, y)).fold(f64::INFINITY, f64::min)).sum();
        a / p.len() as f64 + b / q.len() as f64
    }

    fn hausdorff_oracle(p: &[Point3], q: &[Point3]) -> f64 {
        let dir = |a: &[Point3], b: &[Point3]| {
            a.iter()
                .map(|x| b.iter().map(|y| dist2(x, y).sqrt()).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        dir(p, q).max(dir(q, p))
    }

    #[test]
    fn chamfer_hand_examples() {
        let r = chamfer(&cloud(vec![[0.0; 3]]), &cloud(vec![[1.0, 0.0, 0.0]])).unwrap();
        assert_eq!(r.value, 2.0);
        let p = vec![[0.0; 3], [2.0, 0.0, 0.0]];
        let r = chamfer(&cloud(p.clone()), &cloud(vec![[1.0, 0.0, 0.0]])).unwrap();
        assert_eq!(r.value, 2.0);
        // q is equidistant from both points, so the q->p match goes to point 0.
        assert_eq!(r.grad.data(), &[-3.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let eval = |m: &Matrix| {
            chamfer_points(&PointCloud::from_flat(m.data()).unwrap().into_points(), &[[1.0, 0.0, 0.0]])
                .unwrap()
                .value
        };
        let x0 = Matrix::from_vec(2, 3, p.iter().flatten().copied().collect());
        let num = numeric_grad(&x0, 1e-6, eval);
        for i in [1, 2, 4, 5] {
            assert!((r.grad.data()[i] - num.data()[i]).abs() < 1e-6);
        }
        // Along x the function has a kink at the tie; one-sided differences in
        // the direction that keeps the chosen matches agree with the gradient.
        let h = 1e-7;
        for (i, dir) in [(0usize, 1.0), (3, 1.0)] {
            let mut x = x0.clone();
            x.data_mut()[i] += dir * h;
            let slope = (eval(&x) - 2.0) / (dir * h);
            assert!((slope - r.grad.data()[i]).abs() / r.grad.data()[i].abs() < 1e-6, "{slope}");
        }
    }

    #[test]
    fn chamfer_identity_is_zero() {
        let p = pts(50, 1);
        let r = chamfer_points(&p, &p).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn chamfer_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let p = pts(12, seed);
            let q = pts(17, 1000 + seed);
            let r = chamfer_points(&p, &q).unwrap();
            let x0 = Matrix::from_vec(12, 3, p.iter().flatten().copied().collect());
            let num = numeric_grad(&x0, 1e-6, |m| {
                chamfer_points(&PointCloud::from_flat(m.data()).unwrap().into_points(), &q).unwrap().value
            });
            assert!(max_rel_err(&r.grad, &num) < 1e-6, "seed {seed}");
        }
    }

    #[test]
    fn metrics_match_brute_force() {
        for seed in 0..10 {
            let p = pts(128, seed);
            let q = pts(97, seed + 50);
            let c = chamfer_points(&p, &q).unwrap().value;
            assert!((c - chamfer_oracle(&p, &q)).abs() < 1e-9);
            let h = hausdorff(&cloud(p.clone()), &cloud(q.clone())).unwrap();
            assert!((h - hausdorff_oracle(&p, &q)).abs() < 1e-9);
        }
        let p = pts(64, 3);
        let q = pts(64, 4);
        assert!((hausdorff(&cloud(p.clone()), &cloud(q.clone())).unwrap() - hausdorff_oracle(&p, &q)).abs() < 1e-12);
    }

    #[test]
    fn hausdorff_examples_and_errors() {
        assert_eq!(hausdorff(&cloud(vec![[0.0; 3]]), &cloud(vec![[1.0, 0.0, 0.0]])).unwrap(), 1.0);
        let p = cloud(pts(10, 2));
        assert_eq!(hausdorff(&p, &p).unwrap(), 0.0);
        assert!(hausdorff(&p, &cloud(vec![])).is_err());
        assert!(chamfer(&cloud(vec![]), &p).is_err());
    }

    struct UnitSphere;
    impl Surface for UnitSphere {
        fn distance(&self, p: &Point3) -> f64 {
            (dot(p, p).sqrt() - 1.0).abs()
        }
    }

    #[test]
    fn p2f_analytic_examples() {
        assert!((p2f(&cloud(vec![[0.0, 0.0, 1.1]]), &UnitSphere).unwrap() - 0.1).abs() < 1e-12);
        assert!(p2f(&cloud(vec![]), &UnitSphere).is_err());
        assert!(TriangleMesh::new(vec![[0.0; 3]], vec![]).is_err());
    }

    // Point-to-triangle distance by projecting onto the plane and falling back
    // to the three edge segments; independent of the Voronoi-region routine.
    fn triangle_dist_oracle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> f64 {
        let ab = sub(b, a);
        let ac = sub(c, a);
        let n = [
            ab[1] * ac[2] - ab[2] * ac[1],
            ab[2] * ac[0] - ab[0] * ac[2],
            ab[0] * ac[1] - ab[1] * ac[0],
        ];
        let nn = dot(&n, &n);
        let ap = sub(p, a);
        let t = dot(&ap, &n) / nn;
        let proj = [p[0] - t * n[0], p[1] - t * n[1], p[2] - t * n[2]];
        let inside = [(a, b), (b, c), (c, a)].iter().all(|(u, v)| {
            let e = sub(v, u);
            let w = sub(&proj, u);
            let cr = [e[1] * w[2] - e[2] * w[1], e[2] * w[0] - e[0] * w[2], e[0] * w[1] - e[1] * w[0]];
            dot(&cr, &n) >= 0.0
        });
        if inside {
            return dist2(p, &proj).sqrt();
        }
        [(a, b), (b, c), (c, a)]
            .iter()
            .map(|(u, v)| {
                let e = sub(v, u);
                let s = (dot(&sub(p, u), &e) / dot(&e, &e)).clamp(0.0, 1.0);
                let q = [u[0] + s * e[0], u[1] + s * e[1], u[2] + s * e[2]];
                dist2(p, &q).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn mesh_distance_matches_triangle_oracle() {
        let mesh = TriangleMesh::icosahedron(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let query: Vec<Point3> = (0..128)
            .map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
            .collect();
        for q in &query {
            let want = mesh
                .faces
                .iter()
                .map(|&[a, b, c]| triangle_dist_oracle(q, &mesh.vertices[a], &mesh.vertices[b], &mesh.vertices[c]))
                .fold(f64::INFINITY, f64::min);
            assert!((mesh.distance(q) - want).abs() < 1e-9);
        }
        let c = cloud(query);
        let want: f64 = c
            .points()
            .iter()
            .map(|q| {
                mesh.faces
                    .iter()
                    .map(|&[a, b, cc]| triangle_dist_oracle(q, &mesh.vertices[a], &mesh.vertices[b], &mesh.vertices[cc]))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / 128.0;
        assert!((p2f(&c, &mesh).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn fine_mesh_agrees_with_analytic_sphere() {
        let mesh = TriangleMesh::icosphere(1.0, 5);
        assert_eq!(mesh.faces.len(), 20480);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = cloud(
            (0..200)
                .map(|_| {
                    let d = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                    let n = dot(&d, &d).sqrt();
                    let r = rng.gen_range(0.7..1.3);
                    [d[0] / n * r, d[1] / n * r, d[2] / n * r]
                })
                .collect(),
        );
        let analytic = p2f(&c, &UnitSphere).unwrap();
        let meshed = p2f(&c, &mesh).unwrap();
        assert!((analytic - meshed).abs() < 1e-2, "{analytic} vs {meshed}");
    }

    #[test]
    fn csv_layout() {
        let row = MetricsRow {
            shape_id: "s0".into(),
            cd: 1e-3,
            hd: 0.5,
            p2f: None,
            uniformity: vec![0.0; 5],
        };
        assert_eq!(row.csv_line(), "s0,1.000000,500.000000,NA,0.000000,0.000000,0.000000,0.000000,0.000000");
        let csv = metrics_csv(&[row]);
        assert!(csv.starts_with("shape_id,cd,hd,p2f,u@0.4,u@0.6,u@0.8,u@1.0,u@1.2\n"));
        assert!(csv.lines().last().unwrap().starts_with("mean,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn chamfer_is_symmetric_and_bounded_by_hausdorff(seed in 0u64..10_000, m in 1usize..40, n in 1usize..40) {
            let p = pts(m, seed);
            let q = pts(n, seed ^ 0xdead);
            let a = chamfer_points(&p, &q).unwrap().value;
            let b = chamfer_points(&q, &p).unwrap().value;
            prop_assert!((a - b).abs() < 1e-12);
            let h = hausdorff(&cloud(p.clone()), &cloud(q.clone())).unwrap();
            let mean_dir = |x: &[Point3], y: &[Point3]| {
                x.iter().map(|u| y.iter().map(|v| dist2(u, v).sqrt()).fold(f64::INFINITY, f64::min)).sum::<f64>() / x.len() as f64
            };
            prop_assert!(h + 1e-12 >= mean_dir(&p, &q));
            prop_assert!(h + 1e-12 >= mean_dir(&q, &p));
        }

        #[test]
        fn chamfer_zero_iff_same_set(seed in 0u64..10_000, n in 1usize..30) {
            let p = pts(n, seed);
            let mut shuffled = p.clone();
            shuffled.reverse();
            shuffled.push(p[0]);
            prop_assert_eq!(chamfer_points(&p, &shuffled).unwrap().value, 0.0);
            let mut moved = p.clone();
            moved[0][0] += 1e-3;
            prop_assert!(chamfer_points(&p, &moved).unwrap().value > 0.0);
        }
    }
}
