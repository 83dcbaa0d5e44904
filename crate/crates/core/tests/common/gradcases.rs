use multips::msnet::{forward_multiscale, NetConfig, NetWeights, PsSample};
use multips::tensor::{Graph, Tensor, Var};
use rand::seq::SliceRandom;

use super::{away_from_zero, max_grad_error, rng};

pub struct GradCase {
    pub op: &'static str,
    pub shape: String,
    pub error: f64,
}

fn case<F>(op: &'static str, inputs: Vec<Tensor>, seed: u64, f: F) -> GradCase
where
    F: Fn(&mut Graph, &[Var]) -> multips::Result<Var>,
{
    let shape = inputs
        .iter()
        .map(|t| format!("{:?}", t.shape()))
        .collect::<Vec<_>>()
        .join(" ");
    GradCase {
        op,
        shape,
        error: max_grad_error(&inputs, seed, f),
    }
}

fn uniform(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut rng(seed))
}

/// `k` tensors whose values at every position are pairwise separated by at
/// least `0.5 / k`, so finite differences never flip the argmax.
fn separated_set(shape: &[usize], k: usize, seed: u64) -> Vec<Tensor> {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    let mut out = vec![vec![0.0; n]; k];
    let jitter = Tensor::uniform(&[k, n], 0.0, 0.5, &mut r);
    for j in 0..n {
        let mut ranks: Vec<usize> = (0..k).collect();
        ranks.shuffle(&mut r);
        for (i, &rank) in ranks.iter().enumerate() {
            out[i][j] = (rank as f64 + jitter.data()[i * n + j]) / k as f64;
        }
    }
    out.into_iter().map(|d| Tensor::new(shape, d).unwrap()).collect()
}

fn unit_map(h: usize, w: usize, seed: u64) -> Tensor {
    let t = away_from_zero(&[1, 3, h, w], 0.1, seed);
    multips::tensor::kernels::normalize_channels(&t).unwrap()
}

pub fn conv_cases() -> Vec<GradCase> {
    let specs: [([usize; 4], [usize; 4], usize, usize); 6] = [
        ([1, 1, 5, 5], [1, 1, 3, 3], 1, 1),
        ([2, 3, 6, 7], [4, 3, 3, 3], 1, 1),
        ([1, 2, 8, 8], [3, 2, 3, 3], 2, 1),
        ([1, 3, 7, 5], [2, 3, 3, 3], 2, 1),
        ([2, 2, 5, 6], [2, 2, 1, 1], 1, 0),
        ([1, 2, 6, 6], [2, 2, 3, 3], 1, 0),
    ];
    specs
        .iter()
        .enumerate()
        .map(|(i, (xs, ws, stride, pad))| {
            let s = 100 + i as u64 * 3;
            let inputs = vec![uniform(xs, s), uniform(ws, s + 1), uniform(&[ws[0]], s + 2)];
            let (stride, pad) = (*stride, *pad);
            case("conv2d", inputs, s, move |g, v| g.conv2d(v[0], v[1], v[2], stride, pad))
        })
        .collect()
}

pub fn elementwise_cases() -> Vec<GradCase> {
    let shapes: [&[usize]; 5] = [&[1, 1, 3, 3], &[2, 3, 4, 4], &[1, 5, 2, 7], &[3, 1, 5, 1], &[1, 2, 6, 5]];
    let mut out = Vec::new();
    for (i, shape) in shapes.iter().enumerate() {
        let s = 200 + 10 * i as u64;
        out.push(case("leaky_relu", vec![away_from_zero(shape, 1e-3, s)], s, |g, v| {
            g.leaky_relu(v[0], 0.1)
        }));
        out.push(case("add", vec![uniform(shape, s + 1), uniform(shape, s + 2)], s, |g, v| {
            g.add(v[0], v[1])
        }));
        out.push(case("mul", vec![uniform(shape, s + 3), uniform(shape, s + 4)], s, |g, v| {
            g.mul(v[0], v[1])
        }));
        out.push(case("scale", vec![uniform(shape, s + 5)], s, |g, v| g.scale(v[0], -1.7)));
        out.push(case("sum", vec![uniform(shape, s + 6)], s, |g, v| g.sum(v[0])));
        out.push(case("mean", vec![uniform(shape, s + 7), uniform(shape, s + 8)], s, |g, v| {
            let a = g.sum(v[0])?;
            let b = g.sum(v[1])?;
            let c = g.mul(v[0], v[1])?;
            let c = g.sum(c)?;
            g.mean(&[a, b, c])
        }));
    }
    out
}

pub fn upsample_cases() -> Vec<GradCase> {
    let specs: [([usize; 4], usize, usize); 5] = [
        ([1, 2, 3, 3], 6, 6),
        ([2, 1, 4, 5], 8, 10),
        ([1, 3, 2, 2], 5, 7),
        ([1, 2, 5, 4], 9, 7),
        ([1, 1, 3, 5], 6, 9),
    ];
    specs
        .iter()
        .enumerate()
        .map(|(i, (shape, oh, ow))| {
            let s = 300 + i as u64;
            let (oh, ow) = (*oh, *ow);
            case("bilinear_upsample", vec![uniform(shape, s)], s, move |g, v| {
                g.bilinear_upsample(v[0], oh, ow)
            })
        })
        .collect()
}

pub fn set_cases() -> Vec<GradCase> {
    let specs: [(&[usize], usize); 5] = [
        (&[1, 1, 3, 3], 2),
        (&[1, 4, 4, 4], 3),
        (&[2, 2, 3, 5], 5),
        (&[1, 3, 6, 2], 1),
        (&[1, 2, 4, 4], 8),
    ];
    let mut out = Vec::new();
    for (i, (shape, k)) in specs.iter().enumerate() {
        let s = 400 + i as u64;
        out.push(case("max_over_set", separated_set(shape, *k, s), s, |g, v| g.max_over_set(v)));
        let parts: Vec<Tensor> = (0..*k)
            .map(|j| {
                let mut sh = shape.to_vec();
                sh[1] += j;
                uniform(&sh, s + 50 + j as u64)
            })
            .collect();
        out.push(case("concat_channels", parts, s, |g, v| g.concat_channels(v)));
    }
    out
}

pub fn normal_cases() -> Vec<GradCase> {
    let shapes: [[usize; 4]; 5] = [[1, 3, 2, 2], [2, 3, 3, 4], [1, 3, 5, 1], [1, 2, 3, 3], [1, 4, 2, 3]];
    let mut out = Vec::new();
    for (i, shape) in shapes.iter().enumerate() {
        let s = 500 + i as u64;
        out.push(case("normalize", vec![away_from_zero(shape, 0.1, s)], s, |g, v| g.normalize(v[0])));
    }
    let maps: [(usize, usize); 5] = [(2, 2), (3, 4), (1, 6), (5, 5), (4, 3)];
    for (i, &(h, w)) in maps.iter().enumerate() {
        let s = 550 + i as u64;
        let target = unit_map(h, w, s);
        let mask: Vec<bool> = (0..h * w).map(|p| p % 3 != 1 || h * w == 1).collect();
        out.push(case("cosine_loss", vec![uniform(&[1, 3, h, w], s + 1)], s, move |g, v| {
            g.cosine_loss(v[0], &target, &mask)
        }));
    }
    out
}

/// Whole multi-scale forward pass of a tiny network, checked with respect
/// to every weight tensor at once.
pub fn network_case() -> GradCase {
    let cfg = NetConfig {
        channels: 2,
        r0: 4,
        ..NetConfig::default()
    };
    let weights = conditioned_weights(&cfg, 9);
    let sample = tiny_sample(8, 3, 17);
    let params: Vec<Tensor> = weights.params().into_iter().cloned().collect();
    let error = max_grad_error(&params, 23, |g, vars| {
        let mut it = vars.iter();
        let net = weights.map(|_| *it.next().unwrap());
        let (out, _) = forward_multiscale(g, &net, &sample, &cfg)?;
        Ok(out)
    });
    GradCase {
        op: "forward_multiscale",
        shape: "channels 2, 8x8, K=3".into(),
        error,
    }
}

/// Random weights whose final regressor biases keep every pre-normalisation
/// vector well away from zero length.
pub fn conditioned_weights(cfg: &NetConfig, seed: u64) -> NetWeights {
    let mut weights = NetWeights::init(cfg, seed).unwrap();
    let names = weights.names();
    let last = cfg_regressor_bias_suffix(&weights);
    for (name, p) in names.iter().zip(weights.params_mut()) {
        if name.ends_with(&last) {
            p.data_mut().copy_from_slice(&[0.3, -0.2, 2.0]);
        }
    }
    weights
}

fn cfg_regressor_bias_suffix(weights: &NetWeights) -> String {
    let last = weights
        .names()
        .iter()
        .filter(|n| n.starts_with("stage1.regressor.") && n.ends_with(".bias"))
        .count()
        - 1;
    format!("regressor.{last}.bias")
}

pub fn tiny_sample(size: usize, k: usize, seed: u64) -> PsSample {
    use multips::msnet::LightSample;
    let mut r = rng(seed);
    let images = (0..k)
        .map(|_| Tensor::uniform(&[3, size, size], 0.0, 1.0, &mut r))
        .collect();
    let lights = (0..k)
        .map(|i| {
            let a = i as f64 * 2.1;
            let d = [0.5 * a.cos(), 0.5 * a.sin(), 0.75f64.sqrt()];
            LightSample::white(d, 1.0 + 0.1 * i as f64).unwrap()
        })
        .collect();
    let mask = (0..size * size).map(|p| p % 5 != 0).collect();
    PsSample::new(images, lights, mask, None).unwrap()
}

pub fn all_cases() -> Vec<GradCase> {
    let mut out = conv_cases();
    out.extend(elementwise_cases());
    out.extend(upsample_cases());
    out.extend(set_cases());
    out.extend(normal_cases());
    out.push(network_case());
    out
}
