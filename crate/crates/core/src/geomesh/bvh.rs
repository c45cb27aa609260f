use crate::math::{Aabb, V3};

use super::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub tri: u32,
}

/// Watertight ray/triangle test; returns `t` in `(t_min, t_max)`.
pub fn intersect_triangle(o: V3, d: V3, v0: V3, v1: V3, v2: V3, t_min: f64, t_max: f64) -> Option<f64> {
    let da = d.to_array();
    let kz = (0..3).max_by(|&a, &b| da[a].abs().total_cmp(&da[b].abs())).unwrap();
    let mut kx = (kz + 1) % 3;
    let mut ky = (kx + 1) % 3;
    if da[kz] < 0.0 {
        std::mem::swap(&mut kx, &mut ky);
    }
    let sx = da[kx] / da[kz];
    let sy = da[ky] / da[kz];
    let sz = 1.0 / da[kz];
    let a = (v0 - o).to_array();
    let b = (v1 - o).to_array();
    let c = (v2 - o).to_array();
    let ax = a[kx] - sx * a[kz];
    let ay = a[ky] - sy * a[kz];
    let bx = b[kx] - sx * b[kz];
    let by = b[ky] - sy * b[kz];
    let cx = c[kx] - sx * c[kz];
    let cy = c[ky] - sy * c[kz];
    let u = cx * by - cy * bx;
    let v = ax * cy - ay * cx;
    let w = bx * ay - by * ax;
    if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
        return None;
    }
    let det = u + v + w;
    if det == 0.0 {
        return None;
    }
    let t_scaled = u * sz * a[kz] + v * sz * b[kz] + w * sz * c[kz];
    let t = t_scaled / det;
    (t > t_min && t < t_max).then_some(t)
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: u32, count: u32 },
    Inner { left: u32, right: u32 },
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

/// Binary BVH with median splits on the longest centroid axis.
#[derive(Debug, Clone, Default)]
pub struct Bvh {
    nodes: Vec<Node>,
    tris: Vec<u32>,
    verts: Vec<[V3; 3]>,
}

pub const LEAF_SIZE: usize = 4;

fn tri_box(t: &[V3; 3]) -> Aabb {
    let mut b = Aabb::empty();
    for &p in t {
        b.grow(p);
    }
    b
}

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Bvh {
        let verts: Vec<[V3; 3]> = mesh.triangles.iter().map(|t| t.map(|i| mesh.vertices[i as usize])).collect();
        let mut bvh = Bvh { nodes: Vec::new(), tris: (0..verts.len() as u32).collect(), verts };
        if !bvh.tris.is_empty() {
            let n = bvh.tris.len();
            bvh.build_node(0, n);
        }
        bvh
    }

    fn build_node(&mut self, start: usize, end: usize) -> u32 {
        let mut bounds = Aabb::empty();
        let mut cb = Aabb::empty();
        for &t in &self.tris[start..end] {
            let tb = tri_box(&self.verts[t as usize]);
            bounds = bounds.union(&tb);
            cb.grow(tb.center());
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node { bounds, kind: NodeKind::Leaf { start: start as u32, count: (end - start) as u32 } });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let e = cb.extent().to_array();
        let axis = (0..3).max_by(|&a, &b| e[a].total_cmp(&e[b])).unwrap();
        let verts = &self.verts;
        let key = |t: &u32| tri_box(&verts[*t as usize]).center().to_array()[axis];
        self.tris[start..end].sort_by(|a, b| key(a).total_cmp(&key(b)).then(a.cmp(b)));
        let mid = (start + end) / 2;
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id as usize].kind = NodeKind::Inner { left, right };
        id
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_triangles(&self) -> usize {
        self.tris.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Leaf { .. })).count()
    }

    /// Structural invariants: children inside parents, every triangle in one leaf.
    pub fn check_invariants(&self) -> bool {
        let mut seen = vec![0u32; self.tris.len()];
        for n in &self.nodes {
            match n.kind {
                NodeKind::Leaf { start, count } => {
                    for &t in &self.tris[start as usize..(start + count) as usize] {
                        seen[t as usize] += 1;
                        if !n.bounds.contains_box(&tri_box(&self.verts[t as usize])) {
                            return false;
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    if !n.bounds.contains_box(&self.nodes[left as usize].bounds) || !n.bounds.contains_box(&self.nodes[right as usize].bounds) {
                        return false;
                    }
                }
            }
        }
        seen.iter().all(|&c| c == 1)
    }

    fn slab(b: &Aabb, o: V3, inv: V3, t_max: f64) -> bool {
        let lo = b.lo();
        let hi = b.hi();
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for a in 0..3 {
            let (ta, tb) = ((lo[a] - o[a]) * inv[a], (hi[a] - o[a]) * inv[a]);
            // NaN from 0 * inf is ignored by f64::min/max
            let (near, far) = (ta.min(tb), ta.max(tb));
            t0 = t0.max(near);
            t1 = t1.min(far * (1.0 + 4.0 * f64::EPSILON));
        }
        t0 <= t1
    }

    fn traverse(&self, o: V3, d: V3, t_min: f64, mut t_max: f64, any: bool) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = V3::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z);
        let mut best: Option<Hit> = None;
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id as usize];
            if !Self::slab(&n.bounds, o, inv, t_max) {
                continue;
            }
            match n.kind {
                NodeKind::Leaf { start, count } => {
                    for &t in &self.tris[start as usize..(start + count) as usize] {
                        let [v0, v1, v2] = self.verts[t as usize];
                        if let Some(th) = intersect_triangle(o, d, v0, v1, v2, t_min, t_max) {
                            let better = match best {
                                None => true,
                                Some(b) => th < b.t || (th == b.t && t < b.tri),
                            };
                            if better {
                                best = Some(Hit { t: th, tri: t });
                            }
                            if any {
                                return best;
                            }
                        }
                    }
                    if let Some(b) = best {
                        // keep equal-t hits reachable for deterministic tie breaking
                        t_max = t_max.min(b.t * (1.0 + 4.0 * f64::EPSILON) + f64::MIN_POSITIVE);
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        best
    }

    pub fn closest_hit(&self, o: V3, d: V3, t_min: f64, t_max: f64) -> Option<Hit> {
        self.traverse(o, d, t_min, t_max, false)
    }

    pub fn any_hit(&self, o: V3, d: V3, t_min: f64, t_max: f64) -> bool {
        self.traverse(o, d, t_min, t_max, true).is_some()
    }
}

/// Reference nearest hit by testing every triangle.
pub fn brute_force_hit(mesh: &TriangleMesh, o: V3, d: V3, t_min: f64, t_max: f64) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (i, t) in mesh.triangles.iter().enumerate() {
        let [v0, v1, v2] = t.map(|k| mesh.vertices[k as usize]);
        if let Some(th) = intersect_triangle(o, d, v0, v1, v2, t_min, t_max) {
            if best.is_none_or(|b| th < b.t) {
                best = Some(Hit { t: th, tri: i as u32 });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_tri() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![V3::new(-1.0, -1.0, 1.0), V3::new(1.0, -1.0, 1.0), V3::new(0.0, 1.0, 1.0)],
            triangles: vec![[0, 1, 2]],
            stamp: 0,
        }
    }

    #[test]
    fn empty_bvh_misses() {
        let b = Bvh::build(&TriangleMesh::default());
        assert!(b.is_empty());
        assert!(b.closest_hit(V3::ZERO, V3::Z, 0.0, f64::INFINITY).is_none());
    }

    #[test]
    fn single_triangle_single_leaf() {
        let b = Bvh::build(&one_tri());
        assert_eq!(b.n_leaves(), 1);
        let h = b.closest_hit(V3::ZERO, V3::Z, 0.0, f64::INFINITY).unwrap();
        assert_eq!(h.t, 1.0);
        assert!(b.closest_hit(V3::ZERO, -V3::Z, 0.0, f64::INFINITY).is_none());
        assert!(b.check_invariants());
    }

    #[test]
    fn shared_edge_is_watertight() {
        // two triangles sharing the diagonal x = y of the unit square
        let v = |x, y| V3::new(x, y, 0.0);
        let (a, b, c, d) = (v(0.0, 0.0), v(1.0, 0.0), v(1.0, 1.0), v(0.0, 1.0));
        for k in 0..200 {
            let s = k as f64 / 199.0;
            let o = V3::new(s, s, 1.0);
            let h1 = intersect_triangle(o, -V3::Z, a, b, c, 0.0, 10.0);
            let h2 = intersect_triangle(o, -V3::Z, a, c, d, 0.0, 10.0);
            assert!(h1.is_some() || h2.is_some(), "crack at {s}");
        }
    }
}
