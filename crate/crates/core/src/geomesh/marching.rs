//! Marching cubes with a case table derived from face-consistent contours.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::math::{Aabb, V3};

use super::{TriangleMesh, VoxelGrid};

/// Corner offsets in the classic numbering.
pub const CORNERS: [[usize; 3]; 8] = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]];

/// Corner pairs of the 12 cube edges.
pub const EDGES: [[usize; 2]; 12] = [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4], [0, 4], [1, 5], [2, 6], [3, 7]];

const FACES: [[usize; 4]; 6] = [[0, 1, 2, 3], [4, 5, 6, 7], [0, 1, 5, 4], [3, 2, 6, 7], [0, 3, 7, 4], [1, 2, 6, 5]];

fn edge_of(a: usize, b: usize) -> usize {
    EDGES.iter().position(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a)).expect("cube edge")
}

fn corner_pos(c: usize) -> V3 {
    V3::new(CORNERS[c][0] as f64, CORNERS[c][1] as f64, CORNERS[c][2] as f64)
}

/// Triangles (as edge-index triples) for a corner sign mask; bit `i` set
/// means corner `i` is inside (negative).
fn triangulate_case(mask: u8) -> Vec<[u8; 3]> {
    let inside = |c: usize| mask >> c & 1 == 1;
    let mut segs: Vec<(usize, usize)> = Vec::new();
    for f in FACES {
        let crossings: Vec<(usize, usize)> = (0..4)
            .filter(|&k| inside(f[k]) != inside(f[(k + 1) % 4]))
            .map(|k| (k, edge_of(f[k], f[(k + 1) % 4])))
            .collect();
        match crossings.len() {
            0 => {}
            2 => segs.push((crossings[0].1, crossings[1].1)),
            4 => {
                // ambiguous face: cut off each inside corner
                for k in 0..4 {
                    if inside(f[k]) {
                        let prev = edge_of(f[(k + 3) % 4], f[k]);
                        let next = edge_of(f[k], f[(k + 1) % 4]);
                        segs.push((prev, next));
                    }
                }
            }
            _ => unreachable!("odd number of sign changes on a face"),
        }
    }
    let mid = |e: usize| (corner_pos(EDGES[e][0]) + corner_pos(EDGES[e][1])) * 0.5;
    let mut tris = Vec::new();
    while let Some((start, mut cur)) = segs.pop() {
        let mut poly = vec![start];
        while cur != start {
            poly.push(cur);
            let i = segs.iter().position(|&(a, b)| a == cur || b == cur).expect("closed contour");
            let (a, b) = segs.swap_remove(i);
            cur = if a == cur { b } else { a };
        }
        // Newell normal of the polygon through edge midpoints
        let mut n = V3::ZERO;
        for k in 0..poly.len() {
            let p = mid(poly[k]);
            let q = mid(poly[(k + 1) % poly.len()]);
            n = n + V3::new((p.y - q.y) * (p.z + q.z), (p.z - q.z) * (p.x + q.x), (p.x - q.x) * (p.y + q.y));
        }
        // facing towards decreasing SDF: from outside corners to inside ones
        let mut r = V3::ZERO;
        for &e in &poly {
            let [a, b] = EDGES[e];
            let (i, o) = if inside(a) { (a, b) } else { (b, a) };
            r = r + (corner_pos(i) - corner_pos(o));
        }
        if n.dot(r) < 0.0 {
            poly.reverse();
        }
        for k in 1..poly.len() - 1 {
            tris.push([poly[0] as u8, poly[k] as u8, poly[k + 1] as u8]);
        }
    }
    tris
}

/// The 256-case table: edge triples per sign mask.
pub fn case_table() -> &'static [Vec<[u8; 3]>] {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..=255u8).map(triangulate_case).collect())
}

/// Extract the zero level set. Vertices are shared between cells, coincident
/// vertices are welded and zero-area triangles dropped. Triangle normals
/// (counter-clockwise winding) point towards decreasing SDF.
pub fn marching_cubes(grid: &VoxelGrid) -> TriangleMesh {
    let [nx, ny, nz] = grid.res;
    let table = case_table();
    let mut verts: Vec<V3> = Vec::new();
    let mut edge_vert: HashMap<(usize, u8), u32> = HashMap::new();
    let mut pos_vert: HashMap<[u64; 3], u32> = HashMap::new();
    let mut tris: Vec<[u32; 3]> = Vec::new();

    let mut vertex_on = |i: usize, j: usize, k: usize, e: usize, verts: &mut Vec<V3>| -> u32 {
        let [a, b] = EDGES[e];
        let ca = [i + CORNERS[a][0], j + CORNERS[a][1], k + CORNERS[a][2]];
        let cb = [i + CORNERS[b][0], j + CORNERS[b][1], k + CORNERS[b][2]];
        let (lo, hi) = if grid.flat(ca) < grid.flat(cb) { (ca, cb) } else { (cb, ca) };
        let axis = (0..3).find(|&d| lo[d] != hi[d]).unwrap() as u8;
        let key = (grid.flat(lo), axis);
        if let Some(&v) = edge_vert.get(&key) {
            return v;
        }
        let (sa, sb) = (grid.value(lo), grid.value(hi));
        let t = if sa == sb { 0.5 } else { (sa / (sa - sb)).clamp(0.0, 1.0) };
        let pa = grid.position(lo);
        let pb = grid.position(hi);
        let p = pa + (pb - pa) * t;
        let pk = [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
        let v = *pos_vert.entry(pk).or_insert_with(|| {
            verts.push(p);
            (verts.len() - 1) as u32
        });
        edge_vert.insert(key, v);
        v
    };

    for k in 0..nz.saturating_sub(1) {
        for j in 0..ny.saturating_sub(1) {
            for i in 0..nx.saturating_sub(1) {
                let mut mask = 0u8;
                for (c, off) in CORNERS.iter().enumerate() {
                    if grid.value([i + off[0], j + off[1], k + off[2]]) < 0.0 {
                        mask |= 1 << c;
                    }
                }
                for t in &table[mask as usize] {
                    let tri = [
                        vertex_on(i, j, k, t[0] as usize, &mut verts),
                        vertex_on(i, j, k, t[1] as usize, &mut verts),
                        vertex_on(i, j, k, t[2] as usize, &mut verts),
                    ];
                    if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                        continue;
                    }
                    let (a, b, c) = (verts[tri[0] as usize], verts[tri[1] as usize], verts[tri[2] as usize]);
                    if (b - a).cross(c - a).length() == 0.0 {
                        continue;
                    }
                    tris.push(tri);
                }
            }
        }
    }
    TriangleMesh { vertices: verts, triangles: tris, stamp: 0 }
}

/// Sample an analytic function on a grid.
pub fn sample_fn(bounds: Aabb, res: [usize; 3], f: impl Fn(V3) -> f64) -> VoxelGrid {
    let mut g = VoxelGrid { bounds, res, values: vec![0.0; res[0] * res[1] * res[2]] };
    for k in 0..res[2] {
        for j in 0..res[1] {
            for i in 0..res[0] {
                let p = g.position([i, j, k]);
                let idx = g.flat([i, j, k]);
                g.values[idx] = f(p);
            }
        }
    }
    g
}
