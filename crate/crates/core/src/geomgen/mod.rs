//! Procedural geometry: blobby implicit surfaces from sums of Gaussian
//! potentials, marching-cubes extraction with analytic normals, simple
//! primitives and an OBJ reader.

mod blob;
mod mc;
mod obj;
mod tables;

pub use blob::{sample_blob_field, BlobField, BlobPolicy, ImplicitField, MAX_RESAMPLES};
pub use mc::{marching_cubes, Bounds, DEFAULT_GRID, GRADIENT_EPS};
pub use obj::{load_obj, load_obj_file};

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Tolerance on unit length for stored vertex normals.
pub const MESH_NORMAL_TOL: f64 = 1e-6;

/// Indexed triangle mesh with one unit normal per vertex.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, normals: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let m = TriMesh {
            vertices,
            normals,
            faces,
        };
        m.validate()?;
        Ok(m)
    }

    /// Builds a mesh whose normals are the area-weighted average of the
    /// adjacent face normals.
    pub fn with_area_normals(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let normals = area_weighted_normals(&vertices, &faces);
        Self::new(vertices, normals, faces)
    }

    pub fn validate(&self) -> Result<()> {
        if self.normals.len() != self.vertices.len() {
            return Err(Error::invalid(format!(
                "mesh has {} vertices but {} normals",
                self.vertices.len(),
                self.normals.len()
            )));
        }
        let n = self.vertices.len();
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v as usize >= n) {
                return Err(Error::invalid(format!("face {i} indexes past {n} vertices")));
            }
            if self.face_area(i) <= 0.0 {
                return Err(Error::invalid(format!("face {i} is degenerate")));
            }
        }
        for (i, nrm) in self.normals.iter().enumerate() {
            if (nrm.norm() - 1.0).abs() > MESH_NORMAL_TOL {
                return Err(Error::invalid(format!("normal {i} has length {}", nrm.norm())));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        self.faces[f].map(|i| self.vertices[i as usize])
    }

    /// Unnormalised face normal `(b−a)×(c−a)`.
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    /// Axis-aligned bounding box `(min, max)`; `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))))
    }

    /// Translates and uniformly scales the mesh so its bounding box is
    /// centred at the origin with largest half-extent `half_extent`.
    pub fn fit_to_box(&mut self, half_extent: f64) -> Result<()> {
        let (lo, hi) = self.bounds().ok_or_else(|| Error::invalid("cannot fit an empty mesh"))?;
        let centre = (lo + hi) * 0.5;
        let extent = (hi - lo).max() * 0.5;
        if !(extent > 0.0) {
            return Err(Error::invalid("mesh has zero extent"));
        }
        let s = half_extent / extent;
        for v in &mut self.vertices {
            *v = (*v - centre) * s;
        }
        Ok(())
    }

    /// Latitude/longitude sphere with outward normals.
    pub fn uv_sphere(radius: f64, stacks: usize, slices: usize) -> Result<Self> {
        if stacks < 2 || slices < 3 || !(radius > 0.0) {
            return Err(Error::invalid("uv_sphere needs stacks ≥ 2, slices ≥ 3 and a positive radius"));
        }
        let mut normals = vec![Vec3::new(0.0, 0.0, 1.0)];
        for i in 1..stacks {
            let theta = PI * i as f64 / stacks as f64;
            for j in 0..slices {
                let phi = 2.0 * PI * j as f64 / slices as f64;
                normals.push(Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()));
            }
        }
        normals.push(Vec3::new(0.0, 0.0, -1.0));
        let ring = |i: usize, j: usize| (1 + (i - 1) * slices + j % slices) as u32;
        let bottom = normals.len() as u32 - 1;
        let mut faces = Vec::new();
        for j in 0..slices {
            faces.push([0, ring(1, j), ring(1, j + 1)]);
        }
        for i in 1..stacks - 1 {
            for j in 0..slices {
                faces.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
                faces.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
            }
        }
        for j in 0..slices {
            faces.push([ring(stacks - 1, j), bottom, ring(stacks - 1, j + 1)]);
        }
        let vertices = normals.iter().map(|n| n * radius).collect();
        Self::new(vertices, normals, faces)
    }

    /// Axis-aligned square in the plane `z = height`, facing +z.
    pub fn quad(half_size: f64, height: f64) -> Result<Self> {
        let s = half_size;
        let vertices = vec![
            Vec3::new(-s, -s, height),
            Vec3::new(s, -s, height),
            Vec3::new(s, s, height),
            Vec3::new(-s, s, height),
        ];
        Self::new(vertices, vec![Vec3::z(); 4], vec![[0, 1, 2], [0, 2, 3]])
    }

    /// Flat disc of `segments` triangles around `centre` facing along `normal`.
    pub fn disc(centre: Vec3, normal: Vec3, radius: f64, segments: usize) -> Result<Self> {
        if segments < 3 || !(radius > 0.0) || normal.norm() == 0.0 {
            return Err(Error::invalid("disc needs ≥ 3 segments, a positive radius and a nonzero normal"));
        }
        let n = normal.normalize();
        let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let u = n.cross(&helper).normalize();
        let v = n.cross(&u);
        let mut vertices = vec![centre];
        for j in 0..segments {
            let phi = 2.0 * PI * j as f64 / segments as f64;
            vertices.push(centre + (u * phi.cos() + v * phi.sin()) * radius);
        }
        let faces = (0..segments as u32)
            .map(|j| [0, 1 + j, 1 + (j + 1) % segments as u32])
            .collect();
        let normals = vec![n; vertices.len()];
        Self::new(vertices, normals, faces)
    }

    /// Concatenates two meshes.
    pub fn merged(&self, other: &TriMesh) -> TriMesh {
        let off = self.vertices.len() as u32;
        TriMesh {
            vertices: [self.vertices.as_slice(), &other.vertices].concat(),
            normals: [self.normals.as_slice(), &other.normals].concat(),
            faces: self
                .faces
                .iter()
                .copied()
                .chain(other.faces.iter().map(|f| f.map(|i| i + off)))
                .collect(),
        }
    }

    /// Number of faces adjacent to each undirected edge.
    pub fn edge_face_counts(&self) -> std::collections::HashMap<(u32, u32), usize> {
        let mut counts = std::collections::HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }
}

/// Area-weighted vertex normals; isolated or degenerate vertices get +z.
pub fn area_weighted_normals(vertices: &[Vec3], faces: &[[u32; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for f in faces {
        let [a, b, c] = f.map(|i| vertices[i as usize]);
        let cross = (b - a).cross(&(c - a));
        for &i in f {
            acc[i as usize] += cross;
        }
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 0.0 {
                n / len
            } else {
                Vec3::z()
            }
        })
        .collect()
}
