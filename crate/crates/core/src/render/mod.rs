//! Direct-lighting renderer for synthetic photometric-stereo samples:
//! orthographic view along −z over `[-1,1]²`, directional lights with cast
//! shadows, an anisotropic GGX reflectance model and exact ground-truth
//! normals.

mod brdf;
mod bvh;
mod lights;
mod material;
mod synth;

pub use brdf::{brdf_eval, ggx_alphas, ggx_d, schlick, smith_g1, tangent_frame, GRAZING_EPS};
pub use bvh::{brute_force_intersect, intersect_triangle, Bvh, Hit, Ray};
pub use lights::{sample_lights, LightPolicy, DEFAULT_LIGHT_COUNT};
pub use material::{
    fbm, sample_material, sample_material_in, ColorParam, MaterialCategory, MaterialPoint, MaterialPolicy,
    MaterialSpec, Param, ROUGHNESS_MIN,
};
pub use synth::{sample_seed, synthesize, MeshSource, SynthConfig, SynthOutput, DEFAULT_RESOLUTION};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geomgen::{BlobField, ImplicitField, TriMesh, Vec3};
use crate::msnet::{LightSample, NormalMap, PsSample};
use crate::tensor::Tensor;

/// Height of the camera plane above the scene.
pub const CAMERA_Z: f64 = 10.0;

/// Minimum distance along a shadow ray before an occluder counts.
pub const SHADOW_EPS: f64 = 1e-6;

const MIN_RESOLUTION: usize = 8;

/// Everything needed to render one sample.
#[derive(Clone, Debug)]
pub struct RenderJob {
    pub mesh: TriMesh,
    pub material: MaterialSpec,
    pub lights: Vec<LightSample>,
    /// `(height, width)`.
    pub resolution: (usize, usize),
    /// When set, shading and ground-truth normals come from this field's
    /// gradient at the hit point instead of interpolated vertex normals.
    pub normal_field: Option<BlobField>,
}

impl RenderJob {
    pub fn validate(&self) -> Result<()> {
        if self.mesh.is_empty() {
            return Err(Error::invalid("cannot render an empty mesh"));
        }
        self.mesh.validate()?;
        if self.lights.len() < 3 {
            return Err(Error::invalid(format!("a render needs at least 3 lights, got {}", self.lights.len())));
        }
        for l in &self.lights {
            l.validate()?;
        }
        let (h, w) = self.resolution;
        if h < MIN_RESOLUTION || w < MIN_RESOLUTION {
            return Err(Error::invalid(format!("resolution must be at least {MIN_RESOLUTION}, got {h}x{w}")));
        }
        Ok(())
    }
}

/// Centre of pixel `(row, col)` on the image plane; row 0 is the top (+y).
pub fn pixel_center(row: usize, col: usize, height: usize, width: usize) -> (f64, f64) {
    let x = -1.0 + (col as f64 + 0.5) * 2.0 / width as f64;
    let y = 1.0 - (row as f64 + 0.5) * 2.0 / height as f64;
    (x, y)
}

struct PixelOut {
    normal: [f64; 3],
    hit: bool,
    radiance: Vec<[f64; 3]>,
}

fn shade_pixel(job: &RenderJob, bvh: &Bvh, row: usize, col: usize) -> PixelOut {
    let (h, w) = job.resolution;
    let (x, y) = pixel_center(row, col, h, w);
    let ray = Ray {
        origin: Vec3::new(x, y, CAMERA_Z),
        direction: -Vec3::z(),
    };
    let k = job.lights.len();
    let Some(hit) = bvh.intersect(&ray, 0.0, f64::INFINITY, None) else {
        return PixelOut {
            normal: [0.0; 3],
            hit: false,
            radiance: vec![[0.0; 3]; k],
        };
    };
    let p = ray.origin + ray.direction * hit.t;
    let face = job.mesh.faces[hit.triangle as usize];
    let interpolated = face
        .iter()
        .zip(hit.bary)
        .fold(Vec3::zeros(), |acc, (&v, b)| acc + job.mesh.normals[v as usize] * b);
    let fallback = if interpolated.norm() > 0.0 {
        interpolated.normalize()
    } else {
        job.mesh.face_cross(hit.triangle as usize).normalize()
    };
    let n = job
        .normal_field
        .as_ref()
        .and_then(|f| f.normal(&p))
        .unwrap_or(fallback);
    let view = Vec3::z();
    let mat = job.material.at(&p);
    let radiance = job
        .lights
        .iter()
        .map(|light| {
            let l = Vec3::from(light.direction);
            let nl = n.dot(&l);
            if nl <= 0.0 {
                return [0.0; 3];
            }
            let shadow = Ray {
                origin: p,
                direction: l,
            };
            if bvh.occluded(&shadow, SHADOW_EPS, f64::INFINITY, Some(hit.triangle)) {
                return [0.0; 3];
            }
            let f = brdf_eval(&mat, &n, &l, &view);
            [0, 1, 2].map(|c| light.intensity[c] * f[c] * nl)
        })
        .collect();
    PixelOut {
        normal: n.into(),
        hit: true,
        radiance,
    }
}

/// Renders one RGB image per light plus the mask and ground-truth normals.
pub fn render(job: &RenderJob) -> Result<PsSample> {
    job.validate()?;
    let bvh = Bvh::build(&job.mesh);
    let (h, w) = job.resolution;
    let pixels: Vec<(usize, usize)> = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).collect();
    #[cfg(feature = "parallel")]
    let out: Vec<PixelOut> = pixels.par_iter().map(|&(r, c)| shade_pixel(job, &bvh, r, c)).collect();
    #[cfg(not(feature = "parallel"))]
    let out: Vec<PixelOut> = pixels.iter().map(|&(r, c)| shade_pixel(job, &bvh, r, c)).collect();

    let hw = h * w;
    let mut images = vec![vec![0.0; 3 * hw]; job.lights.len()];
    for (i, px) in out.iter().enumerate() {
        for (img, rad) in images.iter_mut().zip(&px.radiance) {
            for c in 0..3 {
                img[c * hw + i] = rad[c];
            }
        }
    }
    let images = images
        .into_iter()
        .map(|d| Tensor::new(&[3, h, w], d))
        .collect::<Result<Vec<_>>>()?;
    if !images.iter().all(Tensor::all_finite) {
        return Err(Error::NonFinite { op: "render" });
    }
    let mask: Vec<bool> = out.iter().map(|p| p.hit).collect();
    let normals = NormalMap::new(h, w, out.iter().map(|p| p.normal).collect(), mask.clone())?;
    PsSample::new(images, job.lights.clone(), mask, Some(normals))
}
