use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Vec3;

/// Upper bound on draws before [`sample_blob_field`] gives up.
pub const MAX_RESAMPLES: usize = 100;

/// A scalar field whose surface is `value(p) = iso`, with the inside where
/// the value exceeds `iso`.
pub trait ImplicitField: Sync {
    fn value(&self, p: &Vec3) -> f64;
    fn gradient(&self, p: &Vec3) -> Vec3;
    fn iso(&self) -> f64;

    /// Outward unit normal `−∇f/‖∇f‖`, or `None` where the gradient vanishes.
    fn normal(&self, p: &Vec3) -> Option<Vec3> {
        let g = self.gradient(p);
        let n = g.norm();
        (n >= super::GRADIENT_EPS).then(|| -g / n)
    }
}

/// `f(x) = Σ aᵢ·exp(−‖x−cᵢ‖²/(2σᵢ²))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobField {
    pub centers: Vec<[f64; 3]>,
    pub amplitudes: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub iso: f64,
}

impl BlobField {
    pub fn new(centers: Vec<[f64; 3]>, amplitudes: Vec<f64>, sigmas: Vec<f64>, iso: f64) -> Result<Self> {
        let f = BlobField {
            centers,
            amplitudes,
            sigmas,
            iso,
        };
        f.validate()?;
        Ok(f)
    }

    /// A single blob: the surface is a sphere of radius `σ·√(2·ln(a/iso))`.
    pub fn single(center: [f64; 3], amplitude: f64, sigma: f64, iso: f64) -> Result<Self> {
        Self::new(vec![center], vec![amplitude], vec![sigma], iso)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.centers.len();
        if n == 0 {
            return Err(Error::invalid("a blob field needs at least one blob"));
        }
        if self.amplitudes.len() != n || self.sigmas.len() != n {
            return Err(Error::invalid("blob field arrays differ in length"));
        }
        if self.sigmas.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("blob sigmas must be positive"));
        }
        if self.amplitudes.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::invalid("blob amplitudes must be positive"));
        }
        if !self.iso.is_finite() {
            return Err(Error::invalid("iso level must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    fn terms(&self, p: &Vec3) -> impl Iterator<Item = (Vec3, f64, f64)> + '_ {
        let p = *p;
        self.centers
            .iter()
            .zip(&self.amplitudes)
            .zip(&self.sigmas)
            .map(move |((c, &a), &s)| {
                let d = p - Vec3::from(*c);
                let s2 = s * s;
                (d, a * (-d.norm_squared() / (2.0 * s2)).exp(), s2)
            })
    }
}

impl ImplicitField for BlobField {
    fn value(&self, p: &Vec3) -> f64 {
        self.terms(p).map(|(_, e, _)| e).sum()
    }

    fn gradient(&self, p: &Vec3) -> Vec3 {
        self.terms(p).fold(Vec3::zeros(), |acc, (d, e, s2)| acc - d * (e / s2))
    }

    fn iso(&self) -> f64 {
        self.iso
    }
}

/// Ranges for random blob fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobPolicy {
    /// Inclusive blob count range.
    pub n_blobs: (usize, usize),
    /// Centres are drawn uniformly in `[-c, c]³`.
    pub center_half_extent: f64,
    pub sigma: (f64, f64),
    pub amplitude: (f64, f64),
    pub iso: f64,
}

impl Default for BlobPolicy {
    fn default() -> Self {
        BlobPolicy {
            n_blobs: (3, 12),
            center_half_extent: 0.5,
            sigma: (0.15, 0.45),
            amplitude: (0.5, 1.5),
            iso: 0.8,
        }
    }
}

impl BlobPolicy {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_blobs.0 >= 1
            && self.n_blobs.0 <= self.n_blobs.1
            && self.center_half_extent >= 0.0
            && self.sigma.0 > 0.0
            && self.sigma.0 <= self.sigma.1
            && self.amplitude.0 > 0.0
            && self.amplitude.0 <= self.amplitude.1
            && self.iso > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid blob policy {self:?}")))
        }
    }
}

const PROBE_CELLS: usize = 24;

/// True when the surface crosses the interior of `[-1,1]³` and stays clear of
/// its boundary, judged on a coarse probe lattice.
fn has_enclosed_surface(field: &BlobField) -> bool {
    let n = PROBE_CELLS;
    let coord = |i: usize| -1.0 + 2.0 * i as f64 / n as f64;
    let mut inside = false;
    let mut outside = false;
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                let v = field.value(&Vec3::new(coord(i), coord(j), coord(k)));
                let on_boundary = [i, j, k].iter().any(|&t| t == 0 || t == n);
                if v > field.iso {
                    if on_boundary {
                        return false;
                    }
                    inside = true;
                } else {
                    outside = true;
                }
            }
        }
    }
    inside && outside
}

/// Draws a blob field for `seed`, resampling until the surface is enclosed
/// by the unit box.
pub fn sample_blob_field(seed: u64, policy: &BlobPolicy) -> Result<BlobField> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if lo == hi { lo } else { rng.random_range(lo..hi) };
    for _ in 0..MAX_RESAMPLES {
        let n = rng.random_range(policy.n_blobs.0..=policy.n_blobs.1);
        let c = policy.center_half_extent;
        let mut centers = Vec::with_capacity(n);
        let mut amplitudes = Vec::with_capacity(n);
        let mut sigmas = Vec::with_capacity(n);
        for _ in 0..n {
            centers.push([draw(&mut rng, (-c, c)), draw(&mut rng, (-c, c)), draw(&mut rng, (-c, c))]);
            sigmas.push(draw(&mut rng, policy.sigma));
            amplitudes.push(draw(&mut rng, policy.amplitude));
        }
        let field = BlobField::new(centers, amplitudes, sigmas, policy.iso)?;
        if has_enclosed_surface(&field) {
            return Ok(field);
        }
    }
    Err(Error::invalid(format!(
        "no blob field with an enclosed surface after {MAX_RESAMPLES} draws"
    )))
}
