//! Disk-based uniformity measure in the style of PU-GAN: disk-count
//! imbalance times intra-disk nearest-neighbour clutter, averaged over disks.

use crate::error::{Error, Result};
use crate::geometry::{dist2, farthest_point_sample, Point3, PointCloud};

/// Area fractions reported in the metric tables (0.4% .. 1.2%).
pub const UNIFORMITY_PERCENTAGES: [f64; 5] = [0.004, 0.006, 0.008, 0.010, 0.012];

pub const DEFAULT_UNIFORMITY_SEEDS: usize = 30;

/// `sum_j (d_j - d_hat)^2 / d_hat` over the disk points, where `d_j` is the
/// nearest-neighbour distance inside the disk and
/// `d_hat = sqrt(2 pi p / (sqrt(3) n))` is the hexagonal-packing spacing for
/// `n` points in a disk of area `pi p`. Zero for disks with at most one point.
pub fn clutter_term(disk: &[Point3], p: f64) -> f64 {
    let n = disk.len();
    if n <= 1 {
        return 0.0;
    }
    let d_hat = (2.0 * std::f64::consts::PI * p / (3.0_f64.sqrt() * n as f64)).sqrt();
    disk.iter()
        .enumerate()
        .map(|(i, a)| {
            let d = disk
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| dist2(a, b))
                .fold(f64::INFINITY, f64::min)
                .sqrt();
            (d - d_hat).powi(2) / d_hat
        })
        .sum()
}

/// Uniformity of a unit-sphere-normalized cloud at area fraction `p`, using
/// `seeds` FPS-chosen disk centers and disks of radius `sqrt(p)`.
///
/// A disk with `n_i <= 1` points contributes its imbalance term alone since
/// the clutter term is undefined there.
pub fn uniformity(cloud: &PointCloud, p: f64, seeds: usize) -> Result<f64> {
    cloud.require_non_empty("uniformity")?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("area fraction must be in (0, 1), got {p}")));
    }
    if seeds == 0 {
        return Err(Error::invalid("uniformity needs at least one disk"));
    }
    let pts = cloud.points();
    let centers = farthest_point_sample(cloud, seeds.min(pts.len()), 0)?;
    let r2 = p;
    let n_hat = p * pts.len() as f64;
    let mut total = 0.0;
    for &c in &centers {
        let center = pts[c];
        let disk: Vec<Point3> = pts.iter().filter(|q| dist2(q, &center) <= r2).copied().collect();
        let n_i = disk.len() as f64;
        let imbalance = (n_i - n_hat).powi(2) / n_hat;
        total += if disk.len() <= 1 {
            imbalance
        } else {
            imbalance * clutter_term(&disk, p)
        };
    }
    Ok(total / centers.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn fibonacci_sphere(n: usize) -> Vec<Point3> {
        let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
        (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let th = golden * i as f64;
                [r * th.cos(), r * th.sin(), z]
            })
            .collect()
    }

    // Same points with polar angle compressed into a cap around +z.
    fn collapse_into_cap(points: &[Point3], factor: f64) -> Vec<Point3> {
        points
            .iter()
            .map(|p| {
                let psi = p[2].clamp(-1.0, 1.0).acos() * factor;
                let phi = p[1].atan2(p[0]);
                [psi.sin() * phi.cos(), psi.sin() * phi.sin(), psi.cos()]
            })
            .collect()
    }

    #[test]
    fn lattice_beats_clustered_cap() {
        // Dense enough that every disk holds several lattice points.
        let lattice = fibonacci_sphere(8192);
        let cap = collapse_into_cap(&lattice, 0.25);
        let a = PointCloud::new(lattice).unwrap();
        let b = PointCloud::new(cap).unwrap();
        for &p in &UNIFORMITY_PERCENTAGES {
            let ua = uniformity(&a, p, DEFAULT_UNIFORMITY_SEEDS).unwrap();
            let ub = uniformity(&b, p, DEFAULT_UNIFORMITY_SEEDS).unwrap();
            assert!(ua < ub, "p={p}: lattice {ua} vs cap {ub}");
        }
    }

    #[test]
    fn hex_disk_has_near_zero_clutter() {
        let p: f64 = 0.01;
        let radius = p.sqrt();
        let a = radius / 12.0;
        let mut hex = Vec::new();
        for j in -20i32..=20 {
            for i in -20i32..=20 {
                let x = a * (i as f64 + 0.5 * (j.rem_euclid(2)) as f64);
                let y = a * 3.0_f64.sqrt() / 2.0 * j as f64;
                if x * x + y * y <= radius * radius {
                    hex.push([x, y, 0.0]);
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let random: Vec<Point3> = (0..hex.len())
            .map(|_| loop {
                let x = rng.gen_range(-radius..radius);
                let y = rng.gen_range(-radius..radius);
                if x * x + y * y <= radius * radius {
                    break [x, y, 0.0];
                }
            })
            .collect();
        let hex_c = clutter_term(&hex, p);
        let rand_c = clutter_term(&random, p);
        assert!(hex_c < 0.02 * rand_c, "hex {hex_c} vs random {rand_c}");
    }

    #[test]
    fn exact_expected_count_has_zero_imbalance() {
        // Disk around point 0 holds 2 of 8 points and n_hat = 0.25 * 8 = 2.
        let p = 0.25;
        let mut pts = vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]];
        pts.extend((0..6).map(|i| [5.0 + i as f64, 0.0, 0.0]));
        let c = PointCloud::new(pts).unwrap();
        assert_eq!(uniformity(&c, p, 1).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_fraction() {
        let c = PointCloud::new(fibonacci_sphere(10)).unwrap();
        assert!(uniformity(&c, 0.0, 5).is_err());
        assert!(uniformity(&c, 1.0, 5).is_err());
        assert!(uniformity(&c, 0.5, 0).is_err());
    }
}
