//! Gradient saliency of input points: the radial loss derivative scaled by
//! `r^(1+alpha)`, the exact drop-one-point loss change it approximates, and
//! a line fit of score against radius.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::geometry::{dot, norm, sub, Point3, PointCloud};
use crate::model::{chamfer_on_tape, forward, Upsampler};
use crate::metrics::chamfer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencyMode {
    /// `s = -(dL/dr) r^(1+alpha)` with the signed radial derivative.
    Radial,
    /// `s = -|dL/dx| r^(1+alpha)`.
    Magnitude,
}

impl SaliencyMode {
    pub fn name(self) -> &'static str {
        match self {
            SaliencyMode::Radial => "radial",
            SaliencyMode::Magnitude => "magnitude",
        }
    }
}

/// Loss and its gradient with respect to every input point.
#[derive(Clone, Debug, PartialEq)]
pub struct InputGradients {
    pub loss: f64,
    pub local: Vec<Point3>,
    pub global: Vec<Point3>,
}

/// `L = CD(model(local, global), gt)` differentiated with respect to both
/// inputs. Model parameters are constants on the tape.
pub fn input_gradient(
    model: &dyn Upsampler,
    local: &PointCloud,
    global: &PointCloud,
    gt: &PointCloud,
) -> Result<InputGradients> {
    local.require_non_empty("input_gradient local")?;
    global.require_non_empty("input_gradient global")?;
    let mut tape = Tape::new();
    let l = tape.variable(crate::model::cloud_matrix(local));
    let g = tape.variable(crate::model::cloud_matrix(global));
    let pred = model.predict(&mut tape, l, g)?;
    let loss = chamfer_on_tape(&mut tape, pred, gt).map_err(|e| Error::Numerical(e.to_string()))?;
    tape.backward(loss)?;
    let rows = |v| -> Result<Vec<Point3>> {
        let m = tape.grad(v);
        if !m.is_finite() {
            return Err(Error::Numerical("non-finite input gradient".into()));
        }
        Ok(m.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    };
    Ok(InputGradients {
        loss: tape.value(loss).get(0, 0),
        local: rows(l)?,
        global: rows(g)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyReport {
    pub mode: SaliencyMode,
    pub alpha: f64,
    pub centroid: Point3,
    pub gradients: Vec<Point3>,
    /// `dL/dr_i`; zero for a point at the centroid.
    pub radial: Vec<f64>,
    pub radii: Vec<f64>,
    pub scores: Vec<f64>,
    /// Min-max normalized scores; all zero when the scores are constant.
    pub normalized: Vec<f64>,
}

impl SaliencyReport {
    /// The cloud with normalized scores as its scalar channel.
    pub fn annotate(&self, cloud: &PointCloud) -> Result<PointCloud> {
        cloud.clone().with_scalar(self.normalized.clone())
    }
}

pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// `value * r^(1 + alpha)`, built as `value * r^fract(alpha)` followed by
/// repeated multiplication by `r`, so raising `alpha` by one multiplies the
/// result by exactly `r`.
fn radial_weighted(value: f64, r: f64, alpha: f64) -> f64 {
    let whole = alpha.floor();
    let frac = alpha - whole;
    let mut s = if frac > 0.0 { value * r.powf(frac) } else { value };
    for _ in 0..(whole as u64 + 1) {
        s *= r;
    }
    s
}

/// Radial saliency about the cloud centroid.
pub fn spherical_saliency(
    gradients: &[Point3],
    cloud: &PointCloud,
    alpha: f64,
    mode: SaliencyMode,
) -> Result<SaliencyReport> {
    if cloud.len() < 2 {
        return Err(Error::invalid("saliency needs at least two points"));
    }
    if gradients.len() != cloud.len() {
        return Err(Error::invalid(format!(
            "{} gradients for {} points",
            gradients.len(),
            cloud.len()
        )));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    let c = cloud.centroid();
    let n = cloud.len();
    let mut radial = Vec::with_capacity(n);
    let mut radii = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for (x, g) in cloud.points().iter().zip(gradients) {
        let d = sub(x, &c);
        let r = norm(&d);
        let dr = if r > 0.0 { dot(g, &d) / r } else { 0.0 };
        let s = if r > 0.0 {
            let lead = match mode {
                SaliencyMode::Radial => dr,
                SaliencyMode::Magnitude => norm(g),
            };
            radial_weighted(-lead, r, alpha)
        } else {
            0.0
        };
        radial.push(dr);
        radii.push(r);
        scores.push(s);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite saliency score".into()));
    }
    Ok(SaliencyReport {
        mode,
        alpha,
        centroid: c,
        gradients: gradients.to_vec(),
        radial,
        radii,
        normalized: min_max_normalize(&scores),
        scores,
    })
}

fn drop_index(cloud: &PointCloud, i: usize) -> PointCloud {
    let keep: Vec<usize> = (0..cloud.len()).filter(|&j| j != i).collect();
    cloud.select(&keep)
}

/// `L(full) - L(local without point i)`, both by exact forward passes.
pub fn drop_point_oracle(
    model: &dyn Upsampler,
    local: &PointCloud,
    global: &PointCloud,
    gt: &PointCloud,
    i: usize,
) -> Result<f64> {
    if local.len() < 2 {
        return Err(Error::invalid("drop-point oracle needs at least two local points"));
    }
    if i >= local.len() {
        return Err(Error::invalid(format!("point {i} out of range for {} points", local.len())));
    }
    let full = chamfer(&forward(model, local, global)?, gt)?.value;
    let dropped = chamfer(&forward(model, &drop_index(local, i), global)?, gt)?.value;
    Ok(full - dropped)
}

/// The oracle for every local point, in index order.
pub fn drop_point_all(model: &dyn Upsampler, local: &PointCloud, global: &PointCloud, gt: &PointCloud) -> Result<Vec<f64>> {
    if local.len() < 2 {
        return Err(Error::invalid("drop-point oracle needs at least two local points"));
    }
    let full = chamfer(&forward(model, local, global)?, gt)?.value;
    (0..local.len())
        .into_par_iter()
        .map(|i| Ok(full - chamfer(&forward(model, &drop_index(local, i), global)?, gt)?.value))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regression {
    /// Least-squares slope of `s = b r`.
    pub slope: f64,
    /// Uncentered `1 - sum (s - b r)^2 / sum s^2`; 1 for an exact fit.
    pub r_squared: f64,
    pub ols_slope: f64,
    pub ols_intercept: f64,
    pub ols_r_squared: f64,
}

fn fit_quality(ss_res: f64, ss_tot: f64) -> f64 {
    if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Fits score against radius, through the origin and with an intercept.
pub fn saliency_regression(report: &SaliencyReport) -> Result<Regression> {
    regress(&report.radii, &report.scores)
}

pub fn regress(r: &[f64], s: &[f64]) -> Result<Regression> {
    if r.len() != s.len() || r.len() < 2 {
        return Err(Error::invalid("regression needs two equal-length series of at least two values"));
    }
    let n = r.len() as f64;
    let r_mean = r.iter().sum::<f64>() / n;
    let s_mean = s.iter().sum::<f64>() / n;
    let sxx: f64 = r.iter().map(|x| (x - r_mean).powi(2)).sum();
    let spread = r.iter().copied().fold(f64::NEG_INFINITY, f64::max) - r.iter().copied().fold(f64::INFINITY, f64::min);
    if !(spread > 0.0) || !(sxx > 0.0) {
        return Err(Error::DegenerateFit("all radii are equal".into()));
    }
    let srr: f64 = r.iter().map(|x| x * x).sum();
    let slope = r.iter().zip(s).map(|(x, y)| x * y).sum::<f64>() / srr;
    let res0: f64 = r.iter().zip(s).map(|(x, y)| (y - slope * x).powi(2)).sum();
    let tot0: f64 = s.iter().map(|y| y * y).sum();
    let sxy: f64 = r.iter().zip(s).map(|(x, y)| (x - r_mean) * (y - s_mean)).sum();
    let ols_slope = sxy / sxx;
    let ols_intercept = s_mean - ols_slope * r_mean;
    let res1: f64 = r.iter().zip(s).map(|(x, y)| (y - ols_intercept - ols_slope * x).powi(2)).sum();
    let tot1: f64 = s.iter().map(|y| (y - s_mean).powi(2)).sum();
    Ok(Regression {
        slope,
        r_squared: fit_quality(res0, tot0),
        ols_slope,
        ols_intercept,
        ols_r_squared: fit_quality(res1, tot1),
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("spearman needs two equal-length series of at least two values"));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(Error::DegenerateFit("constant series has no rank correlation".into()));
    }
    Ok(cov / (va * vb).sqrt())
}
