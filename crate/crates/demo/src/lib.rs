//! Browser demo: relight a random blob, recover its normals with the
//! least-squares baseline, and plot slices of the reflectance lobe.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use multips::classic::l2_normals;
use multips::evalkit::angular_error_map;
use multips::geomgen::{marching_cubes, sample_blob_field, BlobField, BlobPolicy, Bounds, TriMesh, Vec3};
use multips::msnet::{LightSample, NormalMap, PsSample};
use multips::render::{
    brdf_eval, render, sample_lights, sample_material_in, LightPolicy, MaterialCategory, MaterialPoint,
    MaterialPolicy, MaterialSpec, RenderJob,
};

/// Marching-cubes grid used for demo meshes.
const DEMO_GRID: usize = 48;

/// Smallest light elevation cosine the pointer can reach.
const MIN_LIGHT_Z: f64 = 0.05;

/// Error that saturates the error-map colour scale, in degrees.
const ERROR_SCALE_DEG: f64 = 30.0;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn category(index: u32) -> Result<MaterialCategory, JsValue> {
    MaterialCategory::ALL
        .get(index as usize)
        .copied()
        .ok_or_else(|| JsValue::from_str("material category must be 0..=3"))
}

/// Maps a pointer position in the unit disc to a light direction.
fn light_from_disc(x: f64, y: f64) -> [f64; 3] {
    let r2 = x * x + y * y;
    let z_min2 = MIN_LIGHT_Z * MIN_LIGHT_Z;
    let (x, y) = if r2 > 1.0 - z_min2 {
        let s = ((1.0 - z_min2) / r2).sqrt();
        (x * s, y * s)
    } else {
        (x, y)
    };
    [x, y, (1.0 - x * x - y * y).max(z_min2).sqrt()]
}

fn tone(v: f64) -> u8 {
    (v.clamp(0.0, 1.0).powf(1.0 / 2.2) * 255.0).round() as u8
}

fn normals_rgba(n: &NormalMap) -> Vec<u8> {
    n.values()
        .iter()
        .zip(n.mask())
        .flat_map(|(v, &m)| {
            if m {
                let c = |x: f64| ((x * 0.5 + 0.5) * 255.0).round() as u8;
                [c(v[0]), c(v[1]), c(v[2]), 255]
            } else {
                [0, 0, 0, 255]
            }
        })
        .collect()
}

fn error_rgba(map: &[Option<f64>]) -> Vec<u8> {
    map.iter()
        .flat_map(|e| match e {
            Some(deg) => {
                let t = (deg / ERROR_SCALE_DEG).clamp(0.0, 1.0);
                [(255.0 * t) as u8, (255.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8, (255.0 * (1.0 - t)) as u8, 255]
            }
            None => [0, 0, 0, 255],
        })
        .collect()
}

/// A blob with a sampled material, ready to be relit.
#[wasm_bindgen]
pub struct Scene {
    mesh: TriMesh,
    field: BlobField,
    material: MaterialSpec,
    size: usize,
    seed: u64,
}

#[wasm_bindgen]
impl Scene {
    /// Samples a blob and a material of the given category
    /// (0 textured, 1 glass-like, 2 metal, 3 random) and renders at
    /// `size`×`size`.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, material_category: u32, size: u32) -> Result<Scene, JsValue> {
        let seed = seed as u64;
        let field = sample_blob_field(seed, &BlobPolicy::default()).map_err(js_err)?;
        let mesh = marching_cubes(&field, [DEMO_GRID; 3], Bounds::default()).map_err(js_err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let material = sample_material_in(category(material_category)?, &mut rng, &MaterialPolicy::default());
        Ok(Scene {
            mesh,
            field,
            material,
            size: size as usize,
            seed,
        })
    }

    pub fn size(&self) -> u32 {
        self.size as u32
    }

    fn render_with(&self, lights: Vec<LightSample>) -> Result<PsSample, JsValue> {
        let job = RenderJob {
            mesh: self.mesh.clone(),
            material: self.material.clone(),
            lights,
            resolution: (self.size, self.size),
            normal_field: Some(self.field.clone()),
        };
        render(&job).map_err(js_err)
    }

    /// RGBA image under a single white light placed at `(x, y)` in the unit
    /// disc seen from above.
    pub fn relight(&self, x: f64, y: f64) -> Result<Vec<u8>, JsValue> {
        let light = LightSample::white(light_from_disc(x, y), 1.0).map_err(js_err)?;
        // the renderer needs three lights per job
        let sample = self.render_with(vec![light; 3])?;
        let hw = self.size * self.size;
        let d = sample.images[0].data();
        Ok((0..hw)
            .flat_map(|p| [tone(d[p]), tone(d[hw + p]), tone(d[2 * hw + p]), 255])
            .collect())
    }

    /// Renders `lights` random lights, fits the least-squares baseline and
    /// compares it with the exact normals.
    pub fn photometric_stereo(&self, lights: u32) -> Result<Recovery, JsValue> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
        let lights = sample_lights(&mut rng, lights as usize, &LightPolicy::default()).map_err(js_err)?;
        let sample = self.render_with(lights)?;
        let fit = l2_normals(&sample).map_err(js_err)?;
        let gt = sample.gt_normals.as_ref().ok_or_else(|| js_err("render produced no ground truth"))?;
        let errors = angular_error_map(&fit.normals, gt).map_err(js_err)?;
        let (sum, n) = errors.iter().flatten().fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
        Ok(Recovery {
            estimated: normals_rgba(&fit.normals),
            truth: normals_rgba(gt),
            error: error_rgba(&errors),
            mae_deg: sum / n as f64,
        })
    }
}

/// Output of [`Scene::photometric_stereo`]; images are RGBA.
#[wasm_bindgen]
pub struct Recovery {
    estimated: Vec<u8>,
    truth: Vec<u8>,
    error: Vec<u8>,
    mae_deg: f64,
}

#[wasm_bindgen]
impl Recovery {
    pub fn estimated(&self) -> Vec<u8> {
        self.estimated.clone()
    }

    pub fn truth(&self) -> Vec<u8> {
        self.truth.clone()
    }

    pub fn error(&self) -> Vec<u8> {
        self.error.clone()
    }

    pub fn mae_deg(&self) -> f64 {
        self.mae_deg
    }
}

/// Mean-channel `f·cos θ_v` for `samples` view directions swept across the
/// plane of incidence from −90° to 90°, with the light at `incidence_deg`.
#[wasm_bindgen]
pub fn brdf_slice(
    base: f64,
    metallic: f64,
    roughness: f64,
    specular: f64,
    incidence_deg: f64,
    samples: u32,
) -> Result<Vec<f64>, JsValue> {
    if samples < 2 {
        return Err(JsValue::from_str("a slice needs at least two samples"));
    }
    let m = MaterialPoint {
        base_color: [base; 3],
        metallic,
        roughness,
        specular,
        anisotropy: 0.0,
    }
    .clamped();
    let n = Vec3::z();
    let ti = incidence_deg.to_radians();
    let l = Vec3::new(-ti.sin(), 0.0, ti.cos());
    Ok((0..samples)
        .map(|i| {
            let tv = (-90.0 + 180.0 * i as f64 / (samples - 1) as f64).to_radians();
            let v = Vec3::new(tv.sin(), 0.0, tv.cos());
            let f = brdf_eval(&m, &n, &l, &v);
            (f[0] + f[1] + f[2]) / 3.0 * v.z.max(0.0)
        })
        .collect())
}
