use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomgen::Vec3;

pub const ROUGHNESS_MIN: f64 = 0.02;

/// A scalar that is either constant or a procedural noise map over surface
/// position, remapped to `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Param {
    Constant(f64),
    Noise { lo: f64, hi: f64, frequency: f64, seed: u64 },
}

impl Param {
    pub fn at(&self, p: &Vec3) -> f64 {
        match *self {
            Param::Constant(v) => v,
            Param::Noise { lo, hi, frequency, seed } => lo + (hi - lo) * fbm(p * frequency, seed),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Param::Constant(_))
    }
}

/// RGB counterpart of [`Param`]: a noise map blends between two colours.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ColorParam {
    Constant([f64; 3]),
    Noise { a: [f64; 3], b: [f64; 3], frequency: f64, seed: u64 },
}

impl ColorParam {
    pub fn at(&self, p: &Vec3) -> [f64; 3] {
        match *self {
            ColorParam::Constant(c) => c,
            ColorParam::Noise { a, b, frequency, seed } => {
                let t = fbm(p * frequency, seed);
                [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
            }
        }
    }
}

/// Parameters of the reflectance model, possibly varying over the surface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub base_color: ColorParam,
    pub metallic: Param,
    pub roughness: Param,
    pub specular: Param,
    pub anisotropy: Param,
}

/// Material parameters evaluated at one surface point, clamped to range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialPoint {
    pub base_color: [f64; 3],
    pub metallic: f64,
    pub roughness: f64,
    pub specular: f64,
    pub anisotropy: f64,
}

impl MaterialPoint {
    pub fn lambertian(albedo: [f64; 3]) -> Self {
        MaterialPoint {
            base_color: albedo,
            metallic: 0.0,
            roughness: 1.0,
            specular: 0.0,
            anisotropy: 0.0,
        }
    }

    pub fn clamped(self) -> Self {
        MaterialPoint {
            base_color: self.base_color.map(|c| c.clamp(0.0, 1.0)),
            metallic: self.metallic.clamp(0.0, 1.0),
            roughness: self.roughness.clamp(ROUGHNESS_MIN, 1.0),
            specular: self.specular.clamp(0.0, 1.0),
            anisotropy: self.anisotropy.clamp(0.0, 1.0),
        }
    }
}

impl MaterialSpec {
    pub fn constant(m: MaterialPoint) -> Self {
        MaterialSpec {
            base_color: ColorParam::Constant(m.base_color),
            metallic: Param::Constant(m.metallic),
            roughness: Param::Constant(m.roughness),
            specular: Param::Constant(m.specular),
            anisotropy: Param::Constant(m.anisotropy),
        }
    }

    pub fn lambertian(albedo: [f64; 3]) -> Self {
        Self::constant(MaterialPoint::lambertian(albedo))
    }

    pub fn at(&self, p: &Vec3) -> MaterialPoint {
        MaterialPoint {
            base_color: self.base_color.at(p),
            metallic: self.metallic.at(p),
            roughness: self.roughness.at(p),
            specular: self.specular.at(p),
            anisotropy: self.anisotropy.at(p),
        }
        .clamped()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialCategory {
    Textured,
    GlassLike,
    Metal,
    Random,
}

impl MaterialCategory {
    pub const ALL: [MaterialCategory; 4] = [
        MaterialCategory::Textured,
        MaterialCategory::GlassLike,
        MaterialCategory::Metal,
        MaterialCategory::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaterialCategory::Textured => "textured",
            MaterialCategory::GlassLike => "glass_like",
            MaterialCategory::Metal => "metal",
            MaterialCategory::Random => "random",
        }
    }
}

impl fmt::Display for MaterialCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Category probabilities (in [`MaterialCategory::ALL`] order) and the
/// chance that a constant parameter becomes a spatial map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialPolicy {
    pub category_probs: [f64; 4],
    pub spatial_variation: f64,
}

impl Default for MaterialPolicy {
    fn default() -> Self {
        MaterialPolicy {
            category_probs: [0.50, 0.17, 0.17, 0.16],
            spatial_variation: 0.50,
        }
    }
}

impl MaterialPolicy {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.category_probs.iter().sum();
        if self.category_probs.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "category probabilities {:?} must be non-negative and sum to 1",
                self.category_probs
            )));
        }
        if !(0.0..=1.0).contains(&self.spatial_variation) {
            return Err(Error::invalid("spatial variation probability must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn color(rng: &mut impl Rng, lo: f64, hi: f64) -> [f64; 3] {
    [uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)]
}

fn noise_param(rng: &mut impl Rng, lo: f64, hi: f64) -> Param {
    Param::Noise {
        lo,
        hi,
        frequency: uniform(rng, 2.0, 8.0),
        seed: rng.random(),
    }
}

/// Draws a category according to `policy`, then a material of that category.
pub fn sample_material(rng: &mut impl Rng, policy: &MaterialPolicy) -> Result<(MaterialCategory, MaterialSpec)> {
    policy.validate()?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut category = MaterialCategory::Random;
    for (c, p) in MaterialCategory::ALL.iter().zip(policy.category_probs) {
        acc += p;
        if u < acc {
            category = *c;
            break;
        }
    }
    Ok((category, sample_material_in(category, rng, policy)))
}

/// Draws a material of a fixed category.
///
/// * textured: dielectric with noise-mapped albedo and roughness
/// * glass-like: metallic 0, specular 1, roughness ≤ 0.1, dark base
/// * metal: metallic 1, roughness in [0.05, 0.5], optional anisotropy
/// * random: every parameter uniform over its range
///
/// With the policy's spatial-variation probability the roughness, or for
/// non-textured materials the base colour, is replaced by a noise map.
pub fn sample_material_in(category: MaterialCategory, rng: &mut impl Rng, policy: &MaterialPolicy) -> MaterialSpec {
    let (mut spec, rough_range) = match category {
        MaterialCategory::Textured => {
            let a = color(rng, 0.05, 1.0);
            let b = color(rng, 0.05, 1.0);
            let spec = MaterialSpec {
                base_color: ColorParam::Noise {
                    a,
                    b,
                    frequency: uniform(rng, 2.0, 8.0),
                    seed: rng.random(),
                },
                metallic: Param::Constant(0.0),
                roughness: noise_param(rng, 0.2, 1.0),
                specular: Param::Constant(uniform(rng, 0.0, 1.0)),
                anisotropy: Param::Constant(0.0),
            };
            (spec, (0.2, 1.0))
        }
        MaterialCategory::GlassLike => {
            let spec = MaterialSpec {
                base_color: ColorParam::Constant(color(rng, 0.0, 0.1)),
                metallic: Param::Constant(0.0),
                roughness: Param::Constant(uniform(rng, ROUGHNESS_MIN, 0.1)),
                specular: Param::Constant(1.0),
                anisotropy: Param::Constant(0.0),
            };
            (spec, (ROUGHNESS_MIN, 0.1))
        }
        MaterialCategory::Metal => {
            let anisotropy = if rng.random_bool(0.5) { uniform(rng, 0.0, 1.0) } else { 0.0 };
            let spec = MaterialSpec {
                base_color: ColorParam::Constant(color(rng, 0.3, 1.0)),
                metallic: Param::Constant(1.0),
                roughness: Param::Constant(uniform(rng, 0.05, 0.5)),
                specular: Param::Constant(uniform(rng, 0.0, 1.0)),
                anisotropy: Param::Constant(anisotropy),
            };
            (spec, (0.05, 0.5))
        }
        MaterialCategory::Random => {
            let spec = MaterialSpec {
                base_color: ColorParam::Constant(color(rng, 0.0, 1.0)),
                metallic: Param::Constant(uniform(rng, 0.0, 1.0)),
                roughness: Param::Constant(uniform(rng, ROUGHNESS_MIN, 1.0)),
                specular: Param::Constant(uniform(rng, 0.0, 1.0)),
                anisotropy: Param::Constant(uniform(rng, 0.0, 1.0)),
            };
            (spec, (ROUGHNESS_MIN, 1.0))
        }
    };
    if rng.random_bool(policy.spatial_variation) {
        if spec.roughness.is_constant() {
            spec.roughness = noise_param(rng, rough_range.0, rough_range.1);
        } else if let ColorParam::Constant(c) = spec.base_color {
            spec.base_color = ColorParam::Noise {
                a: c,
                b: color(rng, 0.0, 1.0),
                frequency: uniform(rng, 2.0, 8.0),
                seed: rng.random(),
            };
        }
    }
    spec
}

fn hash3(x: i64, y: i64, z: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [x, y, z] {
        h ^= (v as u64).wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(p: Vec3, seed: u64) -> f64 {
    let f = p.map(f64::floor);
    let t = (p - f).map(|u| u * u * (3.0 - 2.0 * u));
    let (x, y, z) = (f.x as i64, f.y as i64, f.z as i64);
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let c = |dx: i64, dy: i64, dz: i64| hash3(x + dx, y + dy, z + dz, seed);
    let x00 = lerp(c(0, 0, 0), c(1, 0, 0), t.x);
    let x10 = lerp(c(0, 1, 0), c(1, 1, 0), t.x);
    let x01 = lerp(c(0, 0, 1), c(1, 0, 1), t.x);
    let x11 = lerp(c(0, 1, 1), c(1, 1, 1), t.x);
    lerp(lerp(x00, x10, t.y), lerp(x01, x11, t.y), t.z)
}

/// Three-octave fractal value noise in `[0, 1]`.
pub fn fbm(p: Vec3, seed: u64) -> f64 {
    let mut sum = 0.0;
    let mut amp = 0.5;
    let mut freq = 1.0;
    let mut norm = 0.0;
    for octave in 0..3 {
        sum += amp * value_noise(p * freq, seed.wrapping_add(octave));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}
