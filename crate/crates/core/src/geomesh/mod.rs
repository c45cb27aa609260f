//! Surface extraction, BVH construction and shadow-ray visibility.

mod bvh;
mod marching;
mod obj;

pub use bvh::{brute_force_hit, intersect_triangle, Bvh, Hit, LEAF_SIZE};
pub use marching::{case_table, marching_cubes, sample_fn, CORNERS, EDGES};
pub use obj::{decode_obj, encode_obj, read_obj, write_obj};

use std::collections::HashMap;

use crate::math::{Aabb, Mat4, V3};
use crate::nfield::Model;

/// Offset of shadow-ray origins along the ray direction.
pub const SHADOW_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<V3>,
    pub triangles: Vec<[u32; 3]>,
    /// Iteration at which the mesh was extracted.
    pub stamp: u64,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        let mut b = Aabb::empty();
        for &v in &self.vertices {
            b.grow(v);
        }
        b
    }

    pub fn transformed(&self, m: &Mat4) -> TriangleMesh {
        TriangleMesh { vertices: self.vertices.iter().map(|&v| m.transform_point(v)).collect(), ..self.clone() }
    }

    /// Append another mesh.
    pub fn merge(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(other.triangles.iter().map(|t| t.map(|i| i + base)));
    }

    /// Number of triangles bordering each undirected edge.
    pub fn edge_valence(&self) -> HashMap<(u32, u32), usize> {
        let mut m = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *m.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        m
    }

    pub fn face_normal(&self, tri: usize) -> V3 {
        let [a, b, c] = self.triangles[tri].map(|i| self.vertices[i as usize]);
        (b - a).cross(c - a).normalized()
    }

    pub fn check_indices(&self) -> bool {
        let n = self.vertices.len() as u32;
        self.triangles.iter().all(|t| t.iter().all(|&i| i < n))
    }
}

/// SDF samples at the corners of a regular grid (x fastest).
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    pub bounds: Aabb,
    pub res: [usize; 3],
    pub values: Vec<f64>,
}

impl VoxelGrid {
    pub fn flat(&self, c: [usize; 3]) -> usize {
        c[0] + self.res[0] * (c[1] + self.res[1] * c[2])
    }

    pub fn value(&self, c: [usize; 3]) -> f64 {
        self.values[self.flat(c)]
    }

    pub fn spacing(&self) -> V3 {
        let e = self.bounds.extent();
        V3::new(e.x / (self.res[0] - 1) as f64, e.y / (self.res[1] - 1) as f64, e.z / (self.res[2] - 1) as f64)
    }

    pub fn position(&self, c: [usize; 3]) -> V3 {
        let lo = self.bounds.lo();
        let s = self.spacing();
        V3::new(lo.x + c[0] as f64 * s.x, lo.y + c[1] as f64 * s.y, lo.z + c[2] as f64 * s.z)
    }
}

/// Evaluate the model's SDF at every grid corner.
pub fn sample_grid(model: &Model, bounds: Aabb, res: [usize; 3]) -> VoxelGrid {
    assert!(res.iter().all(|&r| r >= 2), "grid resolution must be at least 2 per axis");
    sample_fn(bounds, res, |p| model.sdf_value(p))
}

/// Something that can block shadow rays.
pub trait Occluder: Sync {
    /// True when the ray `o + t d`, `t > 0`, hits anything.
    fn occluded(&self, o: V3, d: V3) -> bool;
}

/// Empty scene.
pub struct NoOccluder;

impl Occluder for NoOccluder {
    fn occluded(&self, _o: V3, _d: V3) -> bool {
        false
    }
}

impl Occluder for Bvh {
    fn occluded(&self, o: V3, d: V3) -> bool {
        self.any_hit(o, d, 0.0, f64::INFINITY)
    }
}

/// Union of several occluders.
pub struct Union<'a>(pub Vec<&'a dyn Occluder>);

impl Occluder for Union<'_> {
    fn occluded(&self, o: V3, d: V3) -> bool {
        self.0.iter().any(|occ| occ.occluded(o, d))
    }
}

/// 1 when the shadow ray from `x` towards `omega` escapes, 0 when blocked.
pub fn visibility(x: V3, omega: V3, occ: &dyn Occluder) -> f64 {
    if occ.occluded(x + omega * SHADOW_EPS, omega) {
        0.0
    } else {
        1.0
    }
}

/// Immutable mesh and BVH shared by shading workers.
#[derive(Debug, Clone, Default)]
pub struct MeshSnapshot {
    pub mesh: TriangleMesh,
    pub bvh: Bvh,
}

impl MeshSnapshot {
    pub fn new(mesh: TriangleMesh) -> MeshSnapshot {
        let bvh = Bvh::build(&mesh);
        MeshSnapshot { mesh, bvh }
    }

    pub fn stamp(&self) -> u64 {
        self.mesh.stamp
    }
}

/// Mesh refresh schedule: only in the main phase, every `period` iterations
/// and whenever no mesh exists yet.
pub fn should_refresh(iteration: u64, main_phase: bool, have_mesh: bool, period: u64) -> bool {
    main_phase && (!have_mesh || iteration % period.max(1) == 0)
}

/// Extract a fresh snapshot from the model.
pub fn refresh_mesh(model: &Model, res: [usize; 3], iteration: u64) -> MeshSnapshot {
    let grid = sample_grid(model, *model.bounds(), res);
    let mut mesh = marching_cubes(&grid);
    mesh.stamp = iteration;
    MeshSnapshot::new(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refresh_schedule() {
        assert!(should_refresh(20, true, true, 20));
        assert!(should_refresh(40, true, true, 20));
        assert!(!should_refresh(21, true, true, 20));
        assert!(should_refresh(21, true, false, 20));
        assert!(!should_refresh(20, false, false, 20));
    }

    #[test]
    fn visibility_examples() {
        assert_eq!(visibility(V3::ZERO, V3::Z, &NoOccluder), 1.0);
        let mesh = TriangleMesh {
            vertices: vec![V3::new(-1.0, -1.0, 1.0), V3::new(1.0, -1.0, 1.0), V3::new(0.0, 1.0, 1.0)],
            triangles: vec![[0, 1, 2]],
            stamp: 0,
        };
        let bvh = Bvh::build(&mesh);
        assert_eq!(visibility(V3::ZERO, V3::Z, &bvh), 0.0);
        assert_eq!(visibility(V3::ZERO, -V3::Z, &bvh), 1.0);
    }
}
