//! Point-set algorithms: neighborhoods, sampling, normalization and the two
//! input-construction schemes (patches and average segments).

mod cloud;
pub mod kdtree;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use cloud::{dist2, dot, norm, sub, Point3, PointCloud};

use crate::error::{Error, Result};

/// Indices of the `k` nearest neighbours of every point, excluding the point
/// itself, sorted by (distance, index).
pub fn knn(cloud: &PointCloud, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = cloud.len();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("knn needs 1 <= k < n, got k={k}, n={n}")));
    }
    let pts = cloud.points();
    let mut rows = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for (i, p) in pts.iter().enumerate() {
        cand.clear();
        cand.extend(
            pts.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, q)| (dist2(p, q), j)),
        );
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, cmp);
        }
        let head = &mut cand[..k];
        head.sort_unstable_by(cmp);
        rows.push(head.iter().map(|&(_, j)| j).collect());
    }
    Ok(rows)
}

/// Greedy farthest point sampling starting from `start`. Each pick maximizes
/// the distance to the closest point already picked; ties go to the lowest
/// index.
pub fn farthest_point_sample(cloud: &PointCloud, m: usize, start: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::invalid(format!("fps needs 1 <= m <= n, got m={m}, n={n}")));
    }
    if start >= n {
        return Err(Error::invalid(format!("fps start index {start} out of range for n={n}")));
    }
    let pts = cloud.points();
    let mut min_d = vec![f64::INFINITY; n];
    let mut picked = vec![false; n];
    let mut out = Vec::with_capacity(m);
    let mut current = start;
    for _ in 0..m {
        out.push(current);
        picked[current] = true;
        let c = pts[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for j in 0..n {
            if picked[j] {
                continue;
            }
            let d = dist2(&c, &pts[j]);
            if d < min_d[j] {
                min_d[j] = d;
            }
            if min_d[j] > best_d {
                best_d = min_d[j];
                best = j;
            }
        }
        current = best;
    }
    Ok(out)
}

/// `count` local patches: FPS seeds (start 0), each grown to its
/// `patch_size - 1` nearest neighbours. Patches may overlap. The seed is
/// always the first point of its patch.
pub fn extract_patches(cloud: &PointCloud, count: usize, patch_size: usize) -> Result<Vec<PointCloud>> {
    let n = cloud.len();
    if patch_size == 0 || patch_size > n {
        return Err(Error::invalid(format!(
            "patch size {patch_size} must be in 1..={n}"
        )));
    }
    let seeds = farthest_point_sample(cloud, count, 0)?;
    let pts = cloud.points();
    let mut patches = Vec::with_capacity(count);
    for (k, &seed) in seeds.iter().enumerate() {
        let s = pts[seed];
        let mut cand: Vec<(f64, usize)> = pts
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != seed)
            .map(|(j, q)| (dist2(&s, q), j))
            .collect();
        cand.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut idx = Vec::with_capacity(patch_size);
        idx.push(seed);
        idx.extend(cand.iter().take(patch_size - 1).map(|&(_, j)| j));
        let mut patch = cloud.select(&idx);
        patch.set_id(format!("{}/patch{k}", cloud.id()));
        patches.push(patch);
    }
    Ok(patches)
}

/// Point ordering applied before slicing a cloud into average segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentOrder {
    /// Seeded uniform random permutation.
    Random,
    /// FPS order dealt round-robin, so segment `k` holds FPS ranks
    /// `k, k + K, k + 2K, ...`.
    StridedFps,
    /// Raw input order.
    Identity,
}

/// Splits `cloud` into `count` average segments with a seeded random order.
pub fn average_segments(cloud: &PointCloud, count: usize, seed: u64) -> Result<Vec<PointCloud>> {
    average_segments_ordered(cloud, count, SegmentOrder::Random, seed)
}

/// Orders the points, then takes segment `k` (1-based) as positions
/// `(k-1)*M/K + 1 ..= k*M/K`.
pub fn average_segments_ordered(
    cloud: &PointCloud,
    count: usize,
    order: SegmentOrder,
    seed: u64,
) -> Result<Vec<PointCloud>> {
    let m = cloud.len();
    if count == 0 || m == 0 || m % count != 0 {
        return Err(Error::invalid(format!(
            "average segments need K to divide M exactly, got M={m}, K={count}"
        )));
    }
    let per = m / count;
    let perm: Vec<usize> = match order {
        SegmentOrder::Identity => (0..m).collect(),
        SegmentOrder::Random => {
            let mut p: Vec<usize> = (0..m).collect();
            p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            p
        }
        SegmentOrder::StridedFps => {
            let start = (seed % m as u64) as usize;
            let fps = farthest_point_sample(cloud, m, start)?;
            (0..count)
                .flat_map(|k| (0..per).map(move |j| (k, j)))
                .map(|(k, j)| fps[j * count + k])
                .collect()
        }
    };
    Ok(perm
        .chunks_exact(per)
        .enumerate()
        .map(|(k, block)| {
            let mut seg = cloud.select(block);
            seg.set_id(format!("{}/seg{k}", cloud.id()));
            seg
        })
        .collect())
}

/// Similarity transform mapping a cloud into the unit sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationFrame {
    pub centroid: Point3,
    pub scale: f64,
}

impl NormalizationFrame {
    pub const IDENTITY: NormalizationFrame = NormalizationFrame {
        centroid: [0.0; 3],
        scale: 1.0,
    };

    pub fn apply(&self, p: &Point3) -> Point3 {
        let c = &self.centroid;
        [
            (p[0] - c[0]) / self.scale,
            (p[1] - c[1]) / self.scale,
            (p[2] - c[2]) / self.scale,
        ]
    }

    pub fn invert(&self, p: &Point3) -> Point3 {
        let c = &self.centroid;
        [
            p[0] * self.scale + c[0],
            p[1] * self.scale + c[1],
            p[2] * self.scale + c[2],
        ]
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        self.map_cloud(cloud, |p| self.apply(p))
    }

    pub fn invert_cloud(&self, cloud: &PointCloud) -> PointCloud {
        self.map_cloud(cloud, |p| self.invert(p))
    }

    fn map_cloud(&self, cloud: &PointCloud, f: impl Fn(&Point3) -> Point3) -> PointCloud {
        let mut out = PointCloud::with_id(cloud.points().iter().map(f).collect(), cloud.id())
            .expect("finite transform of finite points");
        if let Some(s) = cloud.scalar() {
            out = out.with_scalar(s.to_vec()).expect("same length");
        }
        out
    }
}

/// Centers the cloud on its centroid and scales the farthest point to radius 1.
/// When all points coincide the scale is 1.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<(PointCloud, NormalizationFrame)> {
    cloud.require_non_empty("normalize_unit_sphere")?;
    let centroid = cloud.centroid();
    let max_r = cloud
        .points()
        .iter()
        .map(|p| dist2(p, &centroid))
        .fold(0.0_f64, f64::max)
        .sqrt();
    let scale = if max_r > 0.0 { max_r } else { 1.0 };
    let frame = NormalizationFrame { centroid, scale };
    Ok((frame.apply_cloud(cloud), frame))
}

/// Per-point spherical coordinates about the cloud centroid.
#[derive(Clone, Debug, PartialEq)]
pub struct SphericalView {
    pub centroid: Point3,
    pub r: Vec<f64>,
    /// Polar angle in `[0, pi]`.
    pub psi: Vec<f64>,
    /// Azimuth in `[-pi, pi]`.
    pub phi: Vec<f64>,
}

impl SphericalView {
    pub fn to_cartesian(&self) -> Vec<Point3> {
        let c = &self.centroid;
        self.r
            .iter()
            .zip(&self.psi)
            .zip(&self.phi)
            .map(|((&r, &psi), &phi)| {
                [
                    c[0] + r * psi.sin() * phi.cos(),
                    c[1] + r * psi.sin() * phi.sin(),
                    c[2] + r * psi.cos(),
                ]
            })
            .collect()
    }
}

/// A point exactly at the centroid gets `r = 0` and both angles 0.
pub fn to_spherical(cloud: &PointCloud) -> Result<SphericalView> {
    cloud.require_non_empty("to_spherical")?;
    let centroid = cloud.centroid();
    let n = cloud.len();
    let mut view = SphericalView {
        centroid,
        r: Vec::with_capacity(n),
        psi: Vec::with_capacity(n),
        phi: Vec::with_capacity(n),
    };
    for p in cloud.points() {
        let d = sub(p, &centroid);
        let r = norm(&d);
        view.r.push(r);
        if r == 0.0 {
            view.psi.push(0.0);
            view.phi.push(0.0);
        } else {
            view.psi.push((d[2] / r).clamp(-1.0, 1.0).acos());
            view.phi.push(d[1].atan2(d[0]));
        }
    }
    Ok(view)
}

/// Perturbs every coordinate by `beta * z`, `z ~ N(0, 1)`, from a seeded stream.
pub fn add_gaussian_noise(cloud: &PointCloud, beta: f64, seed: u64) -> Result<PointCloud> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!("noise scale must be finite and >= 0, got {beta}")));
    }
    if beta == 0.0 {
        return Ok(cloud.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            let mut q = *p;
            for c in &mut q {
                let z: f64 = StandardNormal.sample(&mut rng);
                *c += beta * z;
            }
            q
        })
        .collect();
    let mut out = PointCloud::with_id(points, cloud.id())?;
    if let Some(s) = cloud.scalar() {
        out = out.with_scalar(s.to_vec())?;
    }
    Ok(out)
}
