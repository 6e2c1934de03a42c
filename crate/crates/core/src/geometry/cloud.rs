use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: &Point3) -> f64 {
    dot(a, a).sqrt()
}

/// An ordered set of 3D points with an optional per-point scalar channel.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    scalar: Option<Vec<f64>>,
    id: String,
}

impl PointCloud {
    /// Builds a cloud, rejecting non-finite coordinates. Empty clouds are
    /// allowed here; operations that need points check for themselves.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        Self::with_id(points, "")
    }

    pub fn with_id(points: Vec<Point3>, id: impl Into<String>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            scalar: None,
            id: id.into(),
        })
    }

    /// Attaches a scalar channel, one value per point.
    pub fn with_scalar(mut self, scalar: Vec<f64>) -> Result<Self> {
        if scalar.len() != self.points.len() {
            return Err(Error::invalid(format!(
                "scalar channel has {} values for {} points",
                scalar.len(),
                self.points.len()
            )));
        }
        if scalar.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("scalar channel has a non-finite value"));
        }
        self.scalar = Some(scalar);
        Ok(self)
    }

    pub fn set_id(&mut self, id: impl Into<String>) {
        self.id = id.into();
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn scalar(&self) -> Option<&[f64]> {
        self.scalar.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub(crate) fn require_non_empty(&self, what: &str) -> Result<()> {
        if self.points.is_empty() {
            Err(Error::invalid(format!("{what}: point cloud is empty")))
        } else {
            Ok(())
        }
    }

    /// The sub-cloud at `indices`, in that order. Keeps the scalar channel.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            scalar: self
                .scalar
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
            id: self.id.clone(),
        }
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.points.len().max(1) as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            c[0] += p[0];
            c[1] += p[1];
            c[2] += p[2];
        }
        [c[0] / n, c[1] / n, c[2] / n]
    }

    /// Flattened row-major `n x 3` coordinates.
    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::invalid("flat coordinate buffer length is not a multiple of 3"));
        }
        Self::new(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}
