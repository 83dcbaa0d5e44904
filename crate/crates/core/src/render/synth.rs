use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::GeneratorMeta;
use crate::error::Result;
use crate::geomgen::{marching_cubes, sample_blob_field, BlobPolicy, Bounds, TriMesh, DEFAULT_GRID};
use crate::msnet::PsSample;

use super::lights::{sample_lights, LightPolicy, DEFAULT_LIGHT_COUNT};
use super::material::{sample_material, sample_material_in, MaterialCategory, MaterialPolicy};
use super::{render, RenderJob};

pub const DEFAULT_RESOLUTION: usize = 128;

/// Geometry for synthetic samples.
#[derive(Clone, Debug)]
pub enum MeshSource {
    /// A fresh random blob field per sample.
    Blob { policy: BlobPolicy, grid: usize },
    /// A fixed user mesh, already placed inside the view box.
    Mesh { mesh: TriMesh, name: String },
}

impl Default for MeshSource {
    fn default() -> Self {
        MeshSource::Blob {
            policy: BlobPolicy::default(),
            grid: DEFAULT_GRID,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub resolution: usize,
    pub lights: usize,
    pub light_policy: LightPolicy,
    pub material_policy: MaterialPolicy,
    /// Forces every sample into one material category.
    pub category: Option<MaterialCategory>,
    pub mesh: MeshSource,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            resolution: DEFAULT_RESOLUTION,
            lights: DEFAULT_LIGHT_COUNT,
            light_policy: LightPolicy::default(),
            material_policy: MaterialPolicy::default(),
            category: None,
            mesh: MeshSource::default(),
        }
    }
}

/// Seed of sample `index` in a batch generated from `base`.
pub fn sample_seed(base: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng.random()
}

pub struct SynthOutput {
    pub sample: PsSample,
    pub meta: GeneratorMeta,
    pub category: MaterialCategory,
}

/// Generates one sample; the result depends only on `seed` and `cfg`.
pub fn synthesize(seed: u64, cfg: &SynthConfig) -> Result<SynthOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mesh, normal_field, mesh_source) = match &cfg.mesh {
        MeshSource::Blob { policy, grid } => {
            let field = sample_blob_field(rng.random(), policy)?;
            let mesh = marching_cubes(&field, [*grid; 3], Bounds::default())?;
            (mesh, Some(field), "blob".to_string())
        }
        MeshSource::Mesh { mesh, name } => (mesh.clone(), None, name.clone()),
    };
    let (category, material) = match cfg.category {
        Some(c) => (c, sample_material_in(c, &mut rng, &cfg.material_policy)),
        None => sample_material(&mut rng, &cfg.material_policy)?,
    };
    let lights = sample_lights(&mut rng, cfg.lights, &cfg.light_policy)?;
    let job = RenderJob {
        mesh,
        material,
        lights,
        resolution: (cfg.resolution, cfg.resolution),
        normal_field,
    };
    let sample = render(&job)?;
    Ok(SynthOutput {
        sample,
        meta: GeneratorMeta {
            seed,
            material_category: category.name().to_string(),
            mesh_source,
        },
        category,
    })
}
