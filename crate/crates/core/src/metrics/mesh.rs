use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{dist2, dot, sub, Point3};

use super::Surface;

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if faces.is_empty() {
            return Err(Error::invalid("mesh has no triangles"));
        }
        if faces.iter().flatten().any(|&i| i >= vertices.len()) {
            return Err(Error::invalid("mesh face references a missing vertex"));
        }
        Ok(Self { vertices, faces })
    }

    /// Regular icosahedron inscribed in the sphere of `radius`.
    pub fn icosahedron(radius: f64) -> Self {
        let t = (1.0 + 5.0_f64.sqrt()) / 2.0;
        let raw = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ];
        let vertices = raw.iter().map(|v| scale_to(v, radius)).collect();
        let faces = vec![
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ];
        Self { vertices, faces }
    }

    /// Icosahedron subdivided `levels` times, vertices projected onto the
    /// sphere (`20 * 4^levels` triangles).
    pub fn icosphere(radius: f64, levels: usize) -> Self {
        let mut mesh = Self::icosahedron(radius);
        for _ in 0..levels {
            let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
            let mut faces = Vec::with_capacity(mesh.faces.len() * 4);
            let mut vertices = mesh.vertices.clone();
            let mut mid = |a: usize, b: usize, verts: &mut Vec<Point3>| {
                let key = (a.min(b), a.max(b));
                *midpoint.entry(key).or_insert_with(|| {
                    let (va, vb) = (verts[a], verts[b]);
                    let m = [(va[0] + vb[0]) / 2.0, (va[1] + vb[1]) / 2.0, (va[2] + vb[2]) / 2.0];
                    verts.push(scale_to(&m, radius));
                    verts.len() - 1
                })
            };
            for &[a, b, c] in &mesh.faces {
                let ab = mid(a, b, &mut vertices);
                let bc = mid(b, c, &mut vertices);
                let ca = mid(c, a, &mut vertices);
                faces.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            mesh = Self { vertices, faces };
        }
        mesh
    }
}

fn scale_to(v: &Point3, radius: f64) -> Point3 {
    let n = dot(v, v).sqrt();
    [v[0] / n * radius, v[1] / n * radius, v[2] / n * radius]
}

/// Closest point on triangle `abc` to `p` by Voronoi-region classification.
pub fn closest_point_on_triangle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> Point3 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(&ab, &ap);
    let d2 = dot(&ac, &ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = sub(p, b);
    let d3 = dot(&ab, &bp);
    let d4 = dot(&ac, &bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [a[0] + v * ab[0], a[1] + v * ab[1], a[2] + v * ab[2]];
    }
    let cp = sub(p, c);
    let d5 = dot(&ab, &cp);
    let d6 = dot(&ac, &cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [a[0] + w * ac[0], a[1] + w * ac[1], a[2] + w * ac[2]];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        let bc = sub(c, b);
        return [b[0] + w * bc[0], b[1] + w * bc[1], b[2] + w * bc[2]];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    [
        a[0] + ab[0] * v + ac[0] * w,
        a[1] + ab[1] * v + ac[1] * w,
        a[2] + ab[2] * v + ac[2] * w,
    ]
}

impl Surface for TriangleMesh {
    fn distance(&self, p: &Point3) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                let q = closest_point_on_triangle(p, &self.vertices[a], &self.vertices[b], &self.vertices[c]);
                dist2(p, &q)
            })
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }
}
