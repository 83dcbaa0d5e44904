use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::atomic_write;
use crate::error::{Error, Result};
use crate::tensor::{Adam, Graph, Tensor, Var};

use super::net::{forward, NetWeights};
use super::{NetConfig, NormalMap, PsSample};

/// Minimum masked-in fraction of a training patch before resampling.
pub const MIN_PATCH_COVERAGE: f64 = 0.30;
const PATCH_TRIES: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainParams {
    pub lr: f64,
    /// Patches per optimisation step.
    pub batch: usize,
    /// Patch slots contributed by each sample to one pass over the data.
    pub patches_per_sample: usize,
    /// Square patch side; samples smaller than this are used whole.
    pub patch: usize,
    pub steps: usize,
    pub seed: u64,
    /// Random subset of (image, light) pairs per patch; `None` uses all.
    pub lights_per_patch: Option<usize>,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            lr: 1e-4,
            batch: 3,
            patches_per_sample: 32,
            patch: 128,
            steps: 1000,
            seed: 0,
            lights_per_patch: None,
        }
    }
}

/// `1 - mean <gt, pred>` over pixels in `mask` and in the ground-truth mask.
pub fn cosine_loss(g: &mut Graph, pred: Var, gt: &NormalMap, mask: &[bool]) -> Result<Var> {
    if mask.len() != gt.mask().len() {
        return Err(Error::Shape {
            op: "cosine_loss",
            expected: vec![gt.height(), gt.width()],
            actual: vec![mask.len()],
        });
    }
    let joint: Vec<bool> = mask.iter().zip(gt.mask()).map(|(a, b)| *a && *b).collect();
    g.cosine_loss(pred, &gt.to_tensor(), &joint)
}

/// Random `patch×patch` crop (clamped to the sample size) covering at least
/// [`MIN_PATCH_COVERAGE`] masked-in pixels. After 100 failed draws the best
/// crop seen is used.
pub fn crop_patch<R: Rng + ?Sized>(sample: &PsSample, patch: usize, rng: &mut R) -> Result<PsSample> {
    let (h, w) = (sample.height(), sample.width());
    let (ph, pw) = (patch.min(h), patch.min(w));
    let mut best = (0, 0, -1.0);
    for _ in 0..PATCH_TRIES {
        let row = rng.random_range(0..=h - ph);
        let col = rng.random_range(0..=w - pw);
        let covered = (row..row + ph)
            .map(|r| sample.mask[r * w + col..r * w + col + pw].iter().filter(|&&m| m).count())
            .sum::<usize>();
        let coverage = covered as f64 / (ph * pw) as f64;
        if coverage > best.2 {
            best = (row, col, coverage);
        }
        if coverage >= MIN_PATCH_COVERAGE {
            break;
        }
    }
    if best.2 <= 0.0 {
        return Err(Error::invalid("training sample has an empty mask"));
    }
    sample.crop(best.0, best.1, ph, pw)
}

fn subset_lights<R: Rng + ?Sized>(sample: PsSample, keep: Option<usize>, rng: &mut R) -> PsSample {
    match keep {
        Some(k) if k < sample.len() => {
            let mut order: Vec<usize> = (0..sample.len()).collect();
            order.partial_shuffle(rng, k);
            order.truncate(k);
            PsSample {
                images: order.iter().map(|&i| sample.images[i].clone()).collect(),
                lights: order.iter().map(|&i| sample.lights[i]).collect(),
                mask: sample.mask,
                gt_normals: sample.gt_normals,
            }
        }
        _ => sample,
    }
}

/// Joint training of both sub-networks with Adam on the cosine loss.
///
/// Every pass over the data visits each sample `patches_per_sample` times in
/// shuffled order; each visit crops a fresh random patch. The loss of a step
/// is the mean over its `batch` patches. Deterministic in `hp.seed`.
pub fn train(
    weights: &mut NetWeights,
    data: &[PsSample],
    cfg: &NetConfig,
    hp: &TrainParams,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("train: empty dataset"));
    }
    if let Some(i) = data.iter().position(|s| s.gt_normals.is_none()) {
        return Err(Error::invalid(format!("train: sample {i} has no ground-truth normals")));
    }
    if hp.batch == 0 || hp.patches_per_sample == 0 || hp.patch == 0 {
        return Err(Error::invalid("train: batch, patches and patch size must be positive"));
    }
    if hp.lights_per_patch.is_some_and(|k| k < 3) {
        return Err(Error::invalid("train: a patch needs at least 3 lights"));
    }
    if !(hp.lr >= 0.0 && hp.lr.is_finite()) {
        return Err(Error::invalid(format!("train: learning rate {} is invalid", hp.lr)));
    }
    for s in data {
        s.validate()?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut queue: Vec<usize> = Vec::new();
    let mut adam = Adam::new(&weights.params(), hp.lr);
    let mut trace = Vec::with_capacity(hp.steps);

    for step in 0..hp.steps {
        let mut g = Graph::new();
        let bound = weights.bind(&mut g);
        let mut losses = Vec::with_capacity(hp.batch);
        for _ in 0..hp.batch {
            if queue.is_empty() {
                queue = (0..data.len())
                    .flat_map(|i| std::iter::repeat_n(i, hp.patches_per_sample))
                    .collect();
                queue.shuffle(&mut rng);
            }
            let idx = queue.pop().expect("refilled above");
            let patch = crop_patch(&data[idx], hp.patch, &mut rng)?;
            let patch = subset_lights(patch, hp.lights_per_patch, &mut rng);
            let (pred, _) = forward(&mut g, &bound, &patch, cfg)?;
            let gt = patch.gt_normals.as_ref().expect("checked above");
            losses.push(cosine_loss(&mut g, pred, gt, &patch.mask)?);
        }
        let loss = g.mean(&losses)?;
        let value = g.value(loss).item()?;
        let mut grads = g.backward(loss)?;
        let grads: Vec<Tensor> = bound
            .params()
            .into_iter()
            .map(|&v| grads.take(v).ok_or(Error::Graph("missing parameter gradient")))
            .collect::<Result<_>>()?;
        let grad_refs: Vec<&Tensor> = grads.iter().collect();
        adam.step(&mut weights.params_mut(), &grad_refs)?;
        trace.push(value);
        on_step(step, value);
    }
    Ok(trace)
}

/// Writes `step,loss` rows (steps counted from 1).
pub fn write_loss_trace(path: &Path, losses: &[f64]) -> Result<()> {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, l).expect("writing to a String");
    }
    atomic_write(path, out.as_bytes())
}
