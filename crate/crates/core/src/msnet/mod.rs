//! Coarse-to-fine normal estimation.
//!
//! A first sub-network estimates normals from images downsampled to roughly
//! `r0×r0`. The estimate is then upsampled by two, renormalised, concatenated
//! with the images at the new resolution and passed through a second
//! sub-network. That second network is reused at every finer scale until the
//! input resolution is reached, so the model always holds exactly two
//! parameter sets.

mod checkpoint;
mod net;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use net::{
    forward, forward_mono, forward_multiscale, forward_stage, infer, ConvLayer, Eager, Exec, LayerKind, Net,
    NetWeights, SubNet,
};
pub use train::{cosine_loss, crop_patch, train, write_loss_trace, TrainParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor};

/// Tolerance on `‖direction‖ = 1` for a light.
pub const LIGHT_UNIT_TOL: f64 = 1e-9;

/// A calibrated directional light. `z` points from the surface towards the camera.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightSample {
    pub direction: [f64; 3],
    pub intensity: [f64; 3],
}

impl LightSample {
    pub fn new(direction: [f64; 3], intensity: [f64; 3]) -> Result<Self> {
        let l = LightSample {
            direction,
            intensity,
        };
        l.validate()?;
        Ok(l)
    }

    pub fn white(direction: [f64; 3], intensity: f64) -> Result<Self> {
        Self::new(direction, [intensity; 3])
    }

    pub fn validate(&self) -> Result<()> {
        let norm = self.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > LIGHT_UNIT_TOL {
            return Err(Error::invalid(format!("light direction norm {norm} is not 1")));
        }
        if self.direction[2] <= 0.0 {
            return Err(Error::invalid("light direction must face the camera (z > 0)"));
        }
        if self.intensity.iter().any(|&i| !(i > 0.0) || !i.is_finite()) {
            return Err(Error::invalid(format!(
                "light intensity {:?} must be positive",
                self.intensity
            )));
        }
        Ok(())
    }

    /// Intensity seen by a `channels`-channel image: per channel for RGB,
    /// the mean for anything else.
    pub fn channel_intensity(&self, channels: usize) -> Vec<f64> {
        if channels == 3 {
            self.intensity.to_vec()
        } else {
            vec![self.intensity.iter().sum::<f64>() / 3.0; channels]
        }
    }
}

/// Per-pixel unit normals over a masked `H×W` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMap {
    height: usize,
    width: usize,
    values: Vec<[f64; 3]>,
    mask: Vec<bool>,
}

/// Tolerance on unit length for masked-in normals.
pub const NORMAL_UNIT_TOL: f64 = 1e-5;

impl NormalMap {
    pub fn new(height: usize, width: usize, values: Vec<[f64; 3]>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != height * width || mask.len() != height * width {
            return Err(Error::Shape {
                op: "normal_map",
                expected: vec![height, width],
                actual: vec![values.len(), mask.len()],
            });
        }
        for (v, &m) in values.iter().zip(&mask) {
            let n = norm3(v);
            if m && (n - 1.0).abs() > NORMAL_UNIT_TOL {
                return Err(Error::invalid(format!("normal {v:?} has norm {n}")));
            }
        }
        Ok(NormalMap {
            height,
            width,
            values,
            mask,
        })
    }

    pub fn constant(height: usize, width: usize, value: [f64; 3]) -> Result<Self> {
        Self::new(height, width, vec![value; height * width], vec![true; height * width])
    }

    /// Reads channels of a `[1,3,H,W]` (or `[3,H,W]`) tensor as normals.
    pub fn from_tensor(t: &Tensor, mask: Vec<bool>) -> Result<Self> {
        let (h, w) = match t.shape() {
            [1, 3, h, w] | [3, h, w] => (*h, *w),
            other => {
                return Err(Error::Shape {
                    op: "normal_map",
                    expected: vec![1, 3, 0, 0],
                    actual: other.to_vec(),
                })
            }
        };
        let hw = h * w;
        let d = t.data();
        let values = (0..hw).map(|i| [d[i], d[hw + i], d[2 * hw + i]]).collect();
        Self::new(h, w, values, mask)
    }

    pub fn to_tensor(&self) -> Tensor {
        let hw = self.height * self.width;
        let mut data = vec![0.0; 3 * hw];
        for (i, v) in self.values.iter().enumerate() {
            for c in 0..3 {
                data[c * hw + i] = v[c];
            }
        }
        Tensor::new(&[1, 3, self.height, self.width], data).expect("consistent shape")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        self.values[row * self.width + col]
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.mask.len() {
            return Err(Error::Shape {
                op: "normal_map",
                expected: vec![self.height, self.width],
                actual: vec![mask.len()],
            });
        }
        self.mask = mask;
        Ok(self)
    }

    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Self> {
        if row + h > self.height || col + w > self.width {
            return Err(Error::invalid("normal map crop out of bounds"));
        }
        let mut values = Vec::with_capacity(h * w);
        let mut mask = Vec::with_capacity(h * w);
        for r in row..row + h {
            let span = r * self.width + col..r * self.width + col + w;
            values.extend_from_slice(&self.values[span.clone()]);
            mask.extend_from_slice(&self.mask[span]);
        }
        Ok(NormalMap {
            height: h,
            width: w,
            values,
            mask,
        })
    }
}

pub(crate) fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// One photometric-stereo observation set.
#[derive(Clone, Debug, PartialEq)]
pub struct PsSample {
    /// `[C,H,W]` linear radiance per light.
    pub images: Vec<Tensor>,
    pub lights: Vec<LightSample>,
    pub mask: Vec<bool>,
    pub gt_normals: Option<NormalMap>,
}

impl PsSample {
    pub fn new(
        images: Vec<Tensor>,
        lights: Vec<LightSample>,
        mask: Vec<bool>,
        gt_normals: Option<NormalMap>,
    ) -> Result<Self> {
        let s = PsSample {
            images,
            lights,
            mask,
            gt_normals,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() < 3 {
            return Err(Error::invalid(format!(
                "a sample needs at least 3 images, got {}",
                self.images.len()
            )));
        }
        if self.images.len() != self.lights.len() {
            return Err(Error::invalid(format!(
                "{} images but {} lights",
                self.images.len(),
                self.lights.len()
            )));
        }
        let shape = self.images[0].shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::Shape {
                op: "sample",
                expected: vec![3, 0, 0],
                actual: shape,
            });
        }
        if let Some(bad) = self.images.iter().find(|i| i.shape() != shape) {
            return Err(Error::Shape {
                op: "sample",
                expected: shape,
                actual: bad.shape().to_vec(),
            });
        }
        let (h, w) = (shape[1], shape[2]);
        if self.mask.len() != h * w {
            return Err(Error::Shape {
                op: "sample",
                expected: vec![h, w],
                actual: vec![self.mask.len()],
            });
        }
        if let Some(gt) = &self.gt_normals {
            if (gt.height(), gt.width()) != (h, w) {
                return Err(Error::Shape {
                    op: "sample",
                    expected: vec![h, w],
                    actual: vec![gt.height(), gt.width()],
                });
            }
        }
        for l in &self.lights {
            l.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images[0].shape()[0]
    }

    pub fn height(&self) -> usize {
        self.images[0].shape()[1]
    }

    pub fn width(&self) -> usize {
        self.images[0].shape()[2]
    }

    /// Same sample with its (image, light) pairs reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        PsSample {
            images: order.iter().map(|&i| self.images[i].clone()).collect(),
            lights: order.iter().map(|&i| self.lights[i]).collect(),
            mask: self.mask.clone(),
            gt_normals: self.gt_normals.clone(),
        }
    }

    /// Rectangular crop of every image, the mask and ground truth.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Self> {
        let (c, full_h, full_w) = (self.channels(), self.height(), self.width());
        if row + h > full_h || col + w > full_w {
            return Err(Error::invalid("sample crop out of bounds"));
        }
        let images = self
            .images
            .iter()
            .map(|img| {
                let mut data = Vec::with_capacity(c * h * w);
                for ch in 0..c {
                    for r in row..row + h {
                        let start = (ch * full_h + r) * full_w + col;
                        data.extend_from_slice(&img.data()[start..start + w]);
                    }
                }
                Tensor::new(&[c, h, w], data)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut mask = Vec::with_capacity(h * w);
        for r in row..row + h {
            mask.extend_from_slice(&self.mask[r * full_w + col..r * full_w + col + w]);
        }
        let gt_normals = self.gt_normals.as_ref().map(|g| g.crop(row, col, h, w)).transpose()?;
        Ok(PsSample {
            images,
            lights: self.lights.clone(),
            mask,
            gt_normals,
        })
    }
}

/// Network input for one (image, light) pair: the image divided by the light
/// intensity, followed by three constant channels holding the light direction
/// and, when given, the three channels of a prior normal map.
pub fn prepare_input(image: &Tensor, light: &LightSample, prior: Option<&NormalMap>) -> Result<Tensor> {
    let (c, h, w) = match image.shape() {
        &[c, h, w] => (c, h, w),
        other => {
            return Err(Error::Shape {
                op: "prepare_input",
                expected: vec![3, 0, 0],
                actual: other.to_vec(),
            })
        }
    };
    if light.intensity.iter().any(|&i| !(i > 0.0)) {
        return Err(Error::invalid(format!(
            "prepare_input: light intensity {:?} must be positive",
            light.intensity
        )));
    }
    let hw = h * w;
    let extra = if prior.is_some() { 6 } else { 3 };
    let mut data = Vec::with_capacity((c + extra) * hw);
    for (ch, scale) in light.channel_intensity(c).into_iter().enumerate() {
        data.extend(image.data()[ch * hw..(ch + 1) * hw].iter().map(|v| v / scale));
    }
    for d in light.direction {
        data.extend(std::iter::repeat_n(d, hw));
    }
    if let Some(p) = prior {
        if (p.height(), p.width()) != (h, w) {
            return Err(Error::Shape {
                op: "prepare_input",
                expected: vec![h, w],
                actual: vec![p.height(), p.width()],
            });
        }
        let pt = p.to_tensor();
        data.extend_from_slice(pt.data());
    }
    Tensor::new(&[1, c + extra, h, w], data)
}

/// Spatial sizes processed from coarsest to finest.
///
/// With `K` the smallest integer such that `r0 * 2^K >= max(H, W)`, level `k`
/// has size `(ceil(H / 2^(K-k)), ceil(W / 2^(K-k)))`; the last level is the
/// input size and the list has `K + 1` entries.
pub fn resolution_schedule(height: usize, width: usize, r0: usize) -> Result<Vec<(usize, usize)>> {
    if r0 == 0 || height < r0 || width < r0 {
        return Err(Error::invalid(format!(
            "resolution {height}x{width} is below the base resolution {r0}"
        )));
    }
    let largest = height.max(width);
    let mut doublings = 0u32;
    while r0 << doublings < largest {
        doublings += 1;
    }
    Ok((0..=doublings)
        .map(|k| {
            let f = 1usize << (doublings - k);
            (height.div_ceil(f), width.div_ceil(f))
        })
        .collect())
}

/// Bilinear upsampling followed by per-pixel renormalisation. Pixels whose
/// interpolated vector vanishes become `(0, 0, 1)`. Every output pixel is
/// masked in.
pub fn upsample_normals(n: &NormalMap, height: usize, width: usize) -> Result<NormalMap> {
    let up = kernels::bilinear_upsample(&n.to_tensor(), height, width)?;
    let unit = kernels::normalize_channels(&up)?;
    NormalMap::from_tensor(&unit, vec![true; height * width])
}

/// Architecture variant: the coarse-to-fine model, or the first sub-network
/// applied directly at full resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    MultiScale,
    MonoScale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Coarsest processing resolution.
    pub r0: usize,
    pub scale_multiplier: usize,
    /// Feature width of every hidden convolution.
    pub channels: usize,
    pub kernel: usize,
    pub slope: f64,
    /// Colour channels of the input images.
    pub image_channels: usize,
    pub architecture: Architecture,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            r0: 8,
            scale_multiplier: 2,
            channels: 64,
            kernel: 3,
            slope: 0.1,
            image_channels: 3,
            architecture: Architecture::MultiScale,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r0 < 4 {
            return Err(Error::invalid(format!("r0 = {} must be at least 4", self.r0)));
        }
        if self.scale_multiplier != 2 {
            return Err(Error::invalid("scale multiplier must be 2"));
        }
        if self.kernel.is_multiple_of(2) || self.channels == 0 || self.image_channels == 0 {
            return Err(Error::invalid("kernel must be odd, channel counts positive"));
        }
        kernels::check_slope(self.slope)
    }
}
