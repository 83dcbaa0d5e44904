use std::collections::HashMap;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::blob::ImplicitField;
use super::tables::{EDGE_TABLE, TRI_TABLE};
use super::{area_weighted_normals, TriMesh, Vec3};

/// Default number of cells per axis.
pub const DEFAULT_GRID: usize = 96;

/// Gradients shorter than this are treated as vanishing.
pub const GRADIENT_EPS: f64 = 1e-12;

const MIN_GRID: usize = 8;

/// Keeps edge vertices off the grid corners so neighbouring edges never
/// produce coincident vertices.
const EDGE_T_MARGIN: f64 = 1e-9;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [3, 2],
    [0, 3],
    [4, 5],
    [5, 6],
    [7, 6],
    [4, 7],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Axis-aligned sampling box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub min: Vec3,
    pub max: Vec3,
}

impl Bounds {
    pub fn cube(half_extent: f64) -> Self {
        Bounds {
            min: Vec3::repeat(-half_extent),
            max: Vec3::repeat(half_extent),
        }
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds::cube(1.0)
    }
}

/// Extracts the `iso` surface of `field` on a lattice of `grid` cells per
/// axis spanning `bounds`. Vertex normals come from the field gradient.
pub fn marching_cubes(field: &impl ImplicitField, grid: [usize; 3], bounds: Bounds) -> Result<TriMesh> {
    if grid.iter().any(|&g| g < MIN_GRID) {
        return Err(Error::invalid(format!("marching cubes needs at least {MIN_GRID} cells per axis, got {grid:?}")));
    }
    let extent = bounds.max - bounds.min;
    if extent.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::invalid("marching cubes bounds must have positive extent"));
    }
    let n = grid.map(|g| g + 1);
    let step = Vec3::new(extent.x / grid[0] as f64, extent.y / grid[1] as f64, extent.z / grid[2] as f64);
    let point = |p: [usize; 3]| bounds.min + Vec3::new(p[0] as f64 * step.x, p[1] as f64 * step.y, p[2] as f64 * step.z);
    let index = |p: [usize; 3]| p[0] + n[0] * (p[1] + n[1] * p[2]);

    let mut values = vec![0.0; n[0] * n[1] * n[2]];
    let slab = n[0] * n[1];
    let fill = |(k, chunk): (usize, &mut [f64])| {
        for j in 0..n[1] {
            for i in 0..n[0] {
                chunk[i + n[0] * j] = field.value(&point([i, j, k]));
            }
        }
    };
    #[cfg(feature = "parallel")]
    values.par_chunks_mut(slab).enumerate().for_each(fill);
    #[cfg(not(feature = "parallel"))]
    values.chunks_mut(slab).enumerate().for_each(fill);

    let iso = field.iso();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut edge_vertex: HashMap<(usize, u8), u32> = HashMap::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for k in 0..grid[2] {
        for j in 0..grid[1] {
            for i in 0..grid[0] {
                let base = [i, j, k];
                let corner = |c: usize| [base[0] + CORNERS[c][0], base[1] + CORNERS[c][1], base[2] + CORNERS[c][2]];
                let mut case = 0usize;
                for c in 0..8 {
                    if values[index(corner(c))] < iso {
                        case |= 1 << c;
                    }
                }
                let crossed = EDGE_TABLE[case];
                if crossed == 0 {
                    continue;
                }
                let mut local = [u32::MAX; 12];
                for (e, [a, b]) in EDGES.iter().enumerate() {
                    if crossed & (1 << e) == 0 {
                        continue;
                    }
                    // a is the lower lattice point of the edge
                    let (pa, pb) = (corner(*a), corner(*b));
                    let axis = (0..3).find(|&d| pa[d] != pb[d]).expect("edge spans one axis") as u8;
                    local[e] = *edge_vertex.entry((index(pa), axis)).or_insert_with(|| {
                        let (va, vb) = (values[index(pa)], values[index(pb)]);
                        let t = ((iso - va) / (vb - va)).clamp(EDGE_T_MARGIN, 1.0 - EDGE_T_MARGIN);
                        let (xa, xb) = (point(pa), point(pb));
                        vertices.push(xa + (xb - xa) * t);
                        vertices.len() as u32 - 1
                    });
                }
                for tri in TRI_TABLE[case].chunks_exact(3).take_while(|t| t[0] >= 0) {
                    let f = [local[tri[0] as usize], local[tri[1] as usize], local[tri[2] as usize]];
                    let [a, b, c] = f.map(|v| vertices[v as usize]);
                    if (b - a).cross(&(c - a)).norm_squared() > 0.0 {
                        faces.push(f);
                    }
                }
            }
        }
    }

    let fallback = area_weighted_normals(&vertices, &faces);
    let normals = vertices
        .iter()
        .zip(fallback)
        .map(|(v, fb)| field.normal(v).unwrap_or(fb))
        .collect();
    TriMesh::new(vertices, normals, faces)
}
