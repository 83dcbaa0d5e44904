use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{kernels, Graph, Tensor, Var};

use super::{prepare_input, resolution_schedule, Architecture, NetConfig, NormalMap, PsSample};

/// How a convolution changes the spatial size of its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// Stride 1.
    Same,
    /// Stride 2; the input size is remembered for the matching `Up`.
    Down,
    /// Bilinear upsample back to the size saved by the latest `Down`, then stride 1.
    Up,
}

const EXTRACTOR_LAYOUT: [LayerKind; 6] = [
    LayerKind::Same,
    LayerKind::Down,
    LayerKind::Same,
    LayerKind::Down,
    LayerKind::Up,
    LayerKind::Up,
];
const REGRESSOR_DEPTH: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<P> {
    pub weight: P,
    pub bias: P,
    pub kind: LayerKind,
}

/// Per-image feature extractor followed by the regressor that runs on the
/// max-pooled features.
#[derive(Clone, Debug, PartialEq)]
pub struct SubNet<P> {
    pub extractor: Vec<ConvLayer<P>>,
    pub regressor: Vec<ConvLayer<P>>,
}

/// The two parameter sets of the model: `stage1` for the coarsest scale and
/// `refine`, shared by every finer scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Net<P> {
    pub stage1: SubNet<P>,
    pub refine: SubNet<P>,
}

pub type NetWeights = Net<Tensor>;

impl<P> SubNet<P> {
    fn layers(&self) -> impl Iterator<Item = (&'static str, usize, &ConvLayer<P>)> {
        let e = self.extractor.iter().enumerate().map(|(i, l)| ("extractor", i, l));
        let r = self.regressor.iter().enumerate().map(|(i, l)| ("regressor", i, l));
        e.chain(r)
    }

    fn params(&self) -> impl Iterator<Item = &P> {
        self.extractor
            .iter()
            .chain(&self.regressor)
            .flat_map(|l| [&l.weight, &l.bias])
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut P> {
        self.extractor
            .iter_mut()
            .chain(self.regressor.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    fn map<Q>(&self, mut f: impl FnMut(&P) -> Q) -> SubNet<Q> {
        let conv = |l: &ConvLayer<P>, f: &mut dyn FnMut(&P) -> Q| ConvLayer {
            weight: f(&l.weight),
            bias: f(&l.bias),
            kind: l.kind,
        };
        SubNet {
            extractor: self.extractor.iter().map(|l| conv(l, &mut f)).collect(),
            regressor: self.regressor.iter().map(|l| conv(l, &mut f)).collect(),
        }
    }
}

impl<P> Net<P> {
    /// Parameter names, in the same order as [`Net::params`].
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (stage, sub) in [("stage1", &self.stage1), ("refine", &self.refine)] {
            for (part, idx, _) in sub.layers() {
                out.push(format!("{stage}.{part}.{idx}.weight"));
                out.push(format!("{stage}.{part}.{idx}.bias"));
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&P> {
        self.stage1.params().chain(self.refine.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut P> {
        self.stage1.params_mut().chain(self.refine.params_mut()).collect()
    }

    pub fn map<Q>(&self, mut f: impl FnMut(&P) -> Q) -> Net<Q> {
        let stage1 = self.stage1.map(&mut f);
        let refine = self.refine.map(&mut f);
        Net { stage1, refine }
    }
}

fn layer_init(rng: &mut ChaCha8Rng, cin: usize, cout: usize, k: usize, slope: f64, kind: LayerKind) -> ConvLayer<Tensor> {
    let fan_in = (cin * k * k) as f64;
    let bound = (6.0 / ((1.0 + slope * slope) * fan_in)).sqrt();
    ConvLayer {
        weight: Tensor::uniform(&[cout, cin, k, k], -bound, bound, rng),
        bias: Tensor::zeros(&[cout]),
        kind,
    }
}

fn subnet_init(rng: &mut ChaCha8Rng, cin: usize, cfg: &NetConfig) -> SubNet<Tensor> {
    let c = cfg.channels;
    let extractor = EXTRACTOR_LAYOUT
        .iter()
        .enumerate()
        .map(|(i, &kind)| layer_init(rng, if i == 0 { cin } else { c }, c, cfg.kernel, cfg.slope, kind))
        .collect();
    let regressor = (0..REGRESSOR_DEPTH)
        .map(|i| {
            let cout = if i + 1 == REGRESSOR_DEPTH { 3 } else { c };
            layer_init(rng, c, cout, cfg.kernel, cfg.slope, LayerKind::Same)
        })
        .collect();
    SubNet { extractor, regressor }
}

impl NetWeights {
    /// He-uniform initialisation, deterministic in `seed`.
    pub fn init(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg.image_channels;
        Ok(Net {
            stage1: subnet_init(&mut rng, c + 3, cfg),
            refine: subnet_init(&mut rng, c + 6, cfg),
        })
    }

    /// Rebuilds weights from named tensors (as stored in a checkpoint).
    pub fn from_named(named: Vec<(String, Tensor)>) -> Result<Self> {
        let lookup = |name: &str| -> Result<Tensor> {
            named
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::invalid(format!("missing tensor {name}")))
        };
        let sub = |stage: &str| -> Result<SubNet<Tensor>> {
            let layer = |part: &str, idx: usize, kind: LayerKind| -> Result<ConvLayer<Tensor>> {
                Ok(ConvLayer {
                    weight: lookup(&format!("{stage}.{part}.{idx}.weight"))?,
                    bias: lookup(&format!("{stage}.{part}.{idx}.bias"))?,
                    kind,
                })
            };
            Ok(SubNet {
                extractor: EXTRACTOR_LAYOUT
                    .iter()
                    .enumerate()
                    .map(|(i, &k)| layer("extractor", i, k))
                    .collect::<Result<_>>()?,
                regressor: (0..REGRESSOR_DEPTH)
                    .map(|i| layer("regressor", i, LayerKind::Same))
                    .collect::<Result<_>>()?,
            })
        };
        let net = Net {
            stage1: sub("stage1")?,
            refine: sub("refine")?,
        };
        if named.len() != net.names().len() {
            return Err(Error::invalid(format!(
                "expected {} tensors, found {}",
                net.names().len(),
                named.len()
            )));
        }
        net.config_hint()?;
        Ok(net)
    }

    /// `(image_channels, channels, kernel)` read back from tensor shapes.
    pub fn config_hint(&self) -> Result<(usize, usize, usize)> {
        let w = self.stage1.extractor[0].weight.shape();
        if w.len() != 4 || w[1] < 4 {
            return Err(Error::invalid(format!("unexpected first-layer shape {w:?}")));
        }
        Ok((w[1] - 3, w[0], w[2]))
    }

    /// Config matching these weights with the given architecture, `r0` and slope.
    pub fn config(&self, architecture: Architecture, r0: usize, slope: f64) -> Result<NetConfig> {
        let (image_channels, channels, kernel) = self.config_hint()?;
        let cfg = NetConfig {
            r0,
            scale_multiplier: 2,
            channels,
            kernel,
            slope,
            image_channels,
            architecture,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        self.names().into_iter().zip(self.params()).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Registers every tensor as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Net<Var> {
        self.map(|t| g.param(t.clone()))
    }
}

/// Forward-pass backend: a recording [`Graph`] or the gradient-free [`Eager`].
pub trait Exec {
    type V;
    fn input(&mut self, t: Tensor) -> Self::V;
    fn conv2d(&mut self, x: &Self::V, w: &Self::V, b: &Self::V, stride: usize, padding: usize) -> Result<Self::V>;
    fn leaky_relu(&mut self, x: &Self::V, slope: f64) -> Result<Self::V>;
    fn upsample(&mut self, x: &Self::V, h: usize, w: usize) -> Result<Self::V>;
    fn max_over_set(&mut self, xs: &[Self::V]) -> Result<Self::V>;
    fn concat(&mut self, xs: &[&Self::V]) -> Result<Self::V>;
    fn normalize(&mut self, x: &Self::V) -> Result<Self::V>;
    fn spatial(&self, x: &Self::V) -> (usize, usize);
}

impl Exec for Graph {
    type V = Var;

    fn input(&mut self, t: Tensor) -> Var {
        self.constant(t)
    }
    fn conv2d(&mut self, x: &Var, w: &Var, b: &Var, stride: usize, padding: usize) -> Result<Var> {
        Graph::conv2d(self, *x, *w, *b, stride, padding)
    }
    fn leaky_relu(&mut self, x: &Var, slope: f64) -> Result<Var> {
        Graph::leaky_relu(self, *x, slope)
    }
    fn upsample(&mut self, x: &Var, h: usize, w: usize) -> Result<Var> {
        self.bilinear_upsample(*x, h, w)
    }
    fn max_over_set(&mut self, xs: &[Var]) -> Result<Var> {
        Graph::max_over_set(self, xs)
    }
    fn concat(&mut self, xs: &[&Var]) -> Result<Var> {
        let vars: Vec<Var> = xs.iter().map(|v| **v).collect();
        self.concat_channels(&vars)
    }
    fn normalize(&mut self, x: &Var) -> Result<Var> {
        Graph::normalize(self, *x)
    }
    fn spatial(&self, x: &Var) -> (usize, usize) {
        let s = self.value(*x).shape();
        (s[2], s[3])
    }
}

/// Gradient-free execution on plain tensors; intermediates are dropped as
/// soon as they are consumed.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl Exec for Eager {
    type V = Tensor;

    fn input(&mut self, t: Tensor) -> Tensor {
        t
    }
    fn conv2d(&mut self, x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        kernels::conv2d(x, w, b, stride, padding)
    }
    fn leaky_relu(&mut self, x: &Tensor, slope: f64) -> Result<Tensor> {
        kernels::leaky_relu(x, slope)
    }
    fn upsample(&mut self, x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        kernels::bilinear_upsample(x, h, w)
    }
    fn max_over_set(&mut self, xs: &[Tensor]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = xs.iter().collect();
        Ok(kernels::max_over_set(&refs)?.0)
    }
    fn concat(&mut self, xs: &[&Tensor]) -> Result<Tensor> {
        kernels::concat_channels(xs)
    }
    fn normalize(&mut self, x: &Tensor) -> Result<Tensor> {
        kernels::normalize_channels(x)
    }
    fn spatial(&self, x: &Tensor) -> (usize, usize) {
        (x.shape()[2], x.shape()[3])
    }
}

fn conv_layer<E: Exec>(e: &mut E, layer: &ConvLayer<E::V>, x: &E::V, kernel: usize) -> Result<E::V> {
    let stride = if layer.kind == LayerKind::Down { 2 } else { 1 };
    e.conv2d(x, &layer.weight, &layer.bias, stride, kernel / 2)
}

fn extract<E: Exec>(e: &mut E, sub: &SubNet<E::V>, input: &E::V, cfg: &NetConfig) -> Result<E::V> {
    let k = cfg.kernel;
    let mut sizes = Vec::new();
    let mut x: Option<E::V> = None;
    for layer in &sub.extractor {
        let cur = x.as_ref().unwrap_or(input);
        let y = match layer.kind {
            LayerKind::Same => conv_layer(e, layer, cur, k)?,
            LayerKind::Down => {
                sizes.push(e.spatial(cur));
                conv_layer(e, layer, cur, k)?
            }
            LayerKind::Up => {
                let (h, w) = sizes
                    .pop()
                    .ok_or_else(|| Error::invalid("extractor: upsample without matching downsample"))?;
                let up = e.upsample(cur, h, w)?;
                conv_layer(e, layer, &up, k)?
            }
        };
        x = Some(e.leaky_relu(&y, cfg.slope)?);
    }
    x.ok_or_else(|| Error::invalid("extractor has no layers"))
}

fn regress<E: Exec>(e: &mut E, sub: &SubNet<E::V>, fused: E::V, cfg: &NetConfig) -> Result<E::V> {
    let mut x = fused;
    let last = sub.regressor.len().saturating_sub(1);
    for (i, layer) in sub.regressor.iter().enumerate() {
        let y = conv_layer(e, layer, &x, cfg.kernel)?;
        x = if i == last { y } else { e.leaky_relu(&y, cfg.slope)? };
    }
    e.normalize(&x)
}

/// One sub-network pass: shared extractor on every input, element-wise max
/// across inputs, regression to three channels and unit normalisation.
pub fn forward_stage<E: Exec>(e: &mut E, sub: &SubNet<E::V>, inputs: Vec<E::V>, cfg: &NetConfig) -> Result<E::V> {
    if inputs.is_empty() {
        return Err(Error::invalid("forward_stage: no inputs"));
    }
    let shape = e.spatial(&inputs[0]);
    let mut features = Vec::with_capacity(inputs.len());
    for x in inputs {
        if e.spatial(&x) != shape {
            return Err(Error::Shape {
                op: "forward_stage",
                expected: vec![shape.0, shape.1],
                actual: {
                    let s = e.spatial(&x);
                    vec![s.0, s.1]
                },
            });
        }
        features.push(extract(e, sub, &x, cfg)?);
    }
    let fused = e.max_over_set(&features)?;
    drop(features);
    regress(e, sub, fused, cfg)
}

fn scaled_inputs(sample: &PsSample, h: usize, w: usize) -> Result<Vec<Tensor>> {
    sample
        .images
        .iter()
        .zip(&sample.lights)
        .map(|(img, light)| {
            let small = kernels::area_downsample(img, h, w)?;
            prepare_input(&small, light, None)
        })
        .collect()
}

/// Coarse-to-fine pass. Returns the full-resolution `[1,3,H,W]` unit normal
/// map and the number of stages run (one coarse stage plus refinements).
pub fn forward_multiscale<E: Exec>(
    e: &mut E,
    net: &Net<E::V>,
    sample: &PsSample,
    cfg: &NetConfig,
) -> Result<(E::V, usize)> {
    sample.validate()?;
    let schedule = resolution_schedule(sample.height(), sample.width(), cfg.r0)?;
    let (h0, w0) = schedule[0];
    let inputs = scaled_inputs(sample, h0, w0)?
        .into_iter()
        .map(|t| e.input(t))
        .collect();
    let mut estimate = forward_stage(e, &net.stage1, inputs, cfg)?;
    for &(h, w) in &schedule[1..] {
        let up = e.upsample(&estimate, h, w)?;
        let prior = e.normalize(&up)?;
        let mut inputs = Vec::with_capacity(sample.len());
        for t in scaled_inputs(sample, h, w)? {
            let x = e.input(t);
            inputs.push(e.concat(&[&x, &prior])?);
        }
        estimate = forward_stage(e, &net.refine, inputs, cfg)?;
    }
    Ok((estimate, schedule.len()))
}

/// The first sub-network alone, run at full resolution.
pub fn forward_mono<E: Exec>(e: &mut E, net: &Net<E::V>, sample: &PsSample, cfg: &NetConfig) -> Result<E::V> {
    sample.validate()?;
    let inputs = scaled_inputs(sample, sample.height(), sample.width())?
        .into_iter()
        .map(|t| e.input(t))
        .collect();
    forward_stage(e, &net.stage1, inputs, cfg)
}

/// Dispatches on `cfg.architecture`; returns the estimate and stage count.
pub fn forward<E: Exec>(e: &mut E, net: &Net<E::V>, sample: &PsSample, cfg: &NetConfig) -> Result<(E::V, usize)> {
    match cfg.architecture {
        Architecture::MultiScale => forward_multiscale(e, net, sample, cfg),
        Architecture::MonoScale => Ok((forward_mono(e, net, sample, cfg)?, 1)),
    }
}

/// Gradient-free prediction masked by the sample mask, with masked-out
/// pixels set to zero. Also returns the number of stages run.
pub fn infer(weights: &NetWeights, sample: &PsSample, cfg: &NetConfig) -> Result<(NormalMap, usize)> {
    let (mut out, stages) = forward(&mut Eager, weights, sample, cfg)?;
    let hw = sample.height() * sample.width();
    for plane in out.data_mut().chunks_mut(hw) {
        for (v, &m) in plane.iter_mut().zip(&sample.mask) {
            if !m {
                *v = 0.0;
            }
        }
    }
    Ok((NormalMap::from_tensor(&out, sample.mask.clone())?, stages))
}
