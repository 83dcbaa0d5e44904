use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msnet::{LightSample, NormalMap, PsSample};

use super::pfm::{read_pfm, write_pfm, FloatImage};
use super::pgm::{read_mask, write_mask};
use super::atomic_write;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

const MASK_FILE: &str = "mask.pgm";
const NORMAL_FILE: &str = "normal_gt.pfm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightRecord {
    pub image: String,
    pub direction: [f64; 3],
    pub intensity: [f64; 3],
}

/// Provenance of a synthetic sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub seed: u64,
    pub material_category: String,
    pub mesh_source: String,
}

/// Contents of `manifest.json`. Field order is the serialised key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub version: u32,
    /// `[height, width]`.
    pub resolution: [usize; 2],
    pub k: usize,
    pub lights: Vec<LightRecord>,
    pub mask: String,
    pub normal_gt: Option<String>,
    pub generator: Option<GeneratorMeta>,
}

impl SampleManifest {
    fn validate(&self, origin: &Path) -> Result<()> {
        let bad = |msg: String| Error::format(origin, msg);
        if self.version != MANIFEST_VERSION {
            return Err(bad(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        if self.k < 3 {
            return Err(bad(format!("a sample needs at least 3 lights, manifest declares {}", self.k)));
        }
        if self.lights.len() != self.k {
            return Err(bad(format!(
                "manifest declares k = {} but lists {} lights",
                self.k,
                self.lights.len()
            )));
        }
        let names = self
            .lights
            .iter()
            .map(|l| l.image.as_str())
            .chain(std::iter::once(self.mask.as_str()))
            .chain(self.normal_gt.as_deref());
        for name in names {
            let p = Path::new(name);
            if p.is_absolute() || p.components().count() != 1 {
                return Err(bad(format!("file name {name:?} must be a plain name inside the sample directory")));
            }
        }
        Ok(())
    }
}

pub fn write_normal_map(path: &Path, n: &NormalMap) -> Result<()> {
    write_pfm(path, &FloatImage::from_normals(n)?)
}

/// Largest deviation from unit length a stored masked-in normal may have
/// before it is renormalised.
pub const STORED_UNIT_TOL: f64 = 1e-6;

/// Reads a 3-channel PFM as normals under `mask`; masked-in values further
/// than [`STORED_UNIT_TOL`] from unit length are renormalised.
pub fn read_normal_map(path: &Path, mask: Vec<bool>) -> Result<NormalMap> {
    let img = read_pfm(path)?;
    if img.channels != 3 {
        return Err(Error::format(path, "normal map must have 3 channels"));
    }
    if mask.len() != img.width * img.height {
        return Err(Error::format(
            path,
            format!(
                "normal map is {}x{} but the mask has {} pixels",
                img.width,
                img.height,
                mask.len()
            ),
        ));
    }
    let values = img
        .data
        .chunks_exact(3)
        .zip(&mask)
        .map(|(c, &m)| {
            let v = [c[0] as f64, c[1] as f64, c[2] as f64];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if m && n > 0.0 && (n - 1.0).abs() > STORED_UNIT_TOL {
                [v[0] / n, v[1] / n, v[2] / n]
            } else {
                v
            }
        })
        .collect();
    NormalMap::new(img.height, img.width, values, mask).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes `sample` to `dir` through a staging directory that is renamed
/// into place once complete. An existing sample directory is replaced.
pub fn write_sample(dir: &Path, sample: &PsSample, generator: Option<GeneratorMeta>) -> Result<()> {
    sample.validate()?;
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".sample-staging-")
        .tempdir_in(&parent)
        .map_err(|e| Error::io(&parent, e))?;
    let root = staging.path();

    let digits = sample.len().to_string().len().max(3);
    let mut lights = Vec::with_capacity(sample.len());
    for (i, (img, light)) in sample.images.iter().zip(&sample.lights).enumerate() {
        let name = format!("img_{i:0digits$}.pfm");
        let pixels = FloatImage::from_tensor(img)?;
        fs::write(root.join(&name), super::encode_pfm(&pixels)?).map_err(|e| Error::io(root.join(&name), e))?;
        lights.push(LightRecord {
            image: name,
            direction: light.direction,
            intensity: light.intensity,
        });
    }
    write_mask(&root.join(MASK_FILE), sample.width(), sample.height(), &sample.mask)?;
    let normal_gt = match &sample.gt_normals {
        Some(n) => {
            write_normal_map(&root.join(NORMAL_FILE), n)?;
            Some(NORMAL_FILE.to_string())
        }
        None => None,
    };
    let manifest = SampleManifest {
        version: MANIFEST_VERSION,
        resolution: [sample.height(), sample.width()],
        k: sample.len(),
        lights,
        mask: MASK_FILE.to_string(),
        normal_gt,
        generator,
    };
    let mut json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
    json.push(b'\n');
    atomic_write(&root.join(MANIFEST_FILE), &json)?;

    if dir.exists() {
        if !dir.join(MANIFEST_FILE).is_file() && fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some() {
            return Err(Error::invalid(format!(
                "{} exists and is not a sample directory; refusing to replace it",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let staged = staging.keep();
    fs::rename(&staged, dir).map_err(|e| {
        let _ = fs::remove_dir_all(&staged);
        Error::io(dir, e)
    })
}

pub fn read_sample(dir: &Path) -> Result<PsSample> {
    read_sample_with_manifest(dir).map(|(s, _)| s)
}

/// Reads a sample directory. The manifest is validated before any image is
/// loaded.
pub fn read_sample_with_manifest(dir: &Path) -> Result<(PsSample, SampleManifest)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: SampleManifest =
        serde_json::from_slice(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    manifest.validate(&manifest_path)?;

    let existing = |name: &str| -> Result<PathBuf> {
        let p = dir.join(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::format(&manifest_path, format!("listed file {name} is missing")))
        }
    };
    let [h, w] = manifest.resolution;
    let mask_path = existing(&manifest.mask)?;
    let (mw, mh, mask) = read_mask(&mask_path)?;
    if (mh, mw) != (h, w) {
        return Err(Error::format(&mask_path, format!("mask is {mw}x{mh}, manifest says {w}x{h}")));
    }
    let mut images = Vec::with_capacity(manifest.k);
    let mut lights = Vec::with_capacity(manifest.k);
    for rec in &manifest.lights {
        let path = existing(&rec.image)?;
        let img = read_pfm(&path)?;
        if (img.height, img.width) != (h, w) {
            return Err(Error::format(
                &path,
                format!("image is {}x{}, manifest says {w}x{h}", img.width, img.height),
            ));
        }
        images.push(img.to_tensor());
        lights.push(
            LightSample::new(rec.direction, rec.intensity).map_err(|e| Error::format(&manifest_path, e.to_string()))?,
        );
    }
    let gt_normals = match &manifest.normal_gt {
        Some(name) => Some(read_normal_map(&existing(name)?, mask.clone())?),
        None => None,
    };
    let sample = PsSample::new(images, lights, mask, gt_normals).map_err(|e| Error::format(dir, e.to_string()))?;
    Ok((sample, manifest))
}
