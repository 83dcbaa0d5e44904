#![allow(dead_code)]

use multips::tensor::{Graph, Tensor, Var};
use multips::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod criteria;
pub mod gradcases;

pub const FD_STEP: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-4;

/// Gradients smaller than this are compared absolutely, scaled by it.
pub const FD_FLOOR: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Builds `sum(op(inputs) * probe)` on a fresh graph.
fn probed_loss<F>(inputs: &[Tensor], probe: Option<&Tensor>, op: &F) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = op(&mut g, &vars)?;
    let loss = match probe {
        Some(p) => {
            let pv = g.constant(p.clone());
            let weighted = g.mul(out, pv)?;
            g.sum(weighted)?
        }
        None => out,
    };
    Ok((g, vars, loss))
}

/// Largest relative error between the analytic gradient and a central finite
/// difference over every element of every input. When the op output is not
/// a scalar it is contracted with a fixed random probe tensor.
pub fn max_grad_error<F>(inputs: &[Tensor], seed: u64, op: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let probe = {
        let (g, _, out) = probed_loss(inputs, None, &op).expect("forward");
        let shape = g.value(out).shape().to_vec();
        (!g.value(out).is_scalar()).then(|| Tensor::uniform(&shape, -1.0, 1.0, &mut rng(seed)))
    };
    let (mut g, vars, loss) = probed_loss(inputs, probe.as_ref(), &op).expect("forward");
    let grads = g.backward(loss).expect("backward");
    let eval = |xs: &[Tensor]| {
        let (g, _, l) = probed_loss(xs, probe.as_ref(), &op).expect("forward");
        g.value(l).item().unwrap()
    };
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("gradient").data().to_vec();
        for j in 0..inputs[i].len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] += FD_STEP;
            let up = eval(&xs);
            xs[i].data_mut()[j] -= 2.0 * FD_STEP;
            let down = eval(&xs);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

/// Uniform values whose magnitudes stay at least `gap` away from zero.
pub fn away_from_zero(shape: &[usize], gap: f64, seed: u64) -> Tensor {
    let mut t = Tensor::uniform(shape, -1.0, 1.0, &mut rng(seed));
    for v in t.data_mut() {
        *v = v.signum() * (gap + v.abs());
    }
    t
}

pub fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot: f64 = (0..3).map(|i| a[i] * b[i]).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Writes a DiLiGenT-style object directory holding a Lambertian sphere of
/// radius 0.8 on an `h×w` image under `k` lights: 16-bit PNGs, light files
/// printed to six decimals, an 8-bit mask and column-major `normal.txt`.
/// Returns the exact normals in row-major order.
pub fn write_diligent_fixture(dir: &std::path::Path, k: usize, h: usize, w: usize) -> Vec<[f64; 3]> {
    use std::fmt::Write as _;
    std::fs::create_dir_all(dir).unwrap();
    let mut normals = vec![[0.0; 3]; h * w];
    let mut mask = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            let (x, y) = multips::render::pixel_center(r, c, h, w);
            let rr = (x * x + y * y) / 0.64;
            if rr < 1.0 {
                normals[r * w + c] = [x / 0.8, y / 0.8, (1.0 - rr).sqrt()];
                mask[r * w + c] = true;
            }
        }
    }
    let mut dirs = String::new();
    let mut ints = String::new();
    let mut names = String::new();
    for i in 0..k {
        let polar = 0.2 + 0.9 * (i as f64 / k as f64);
        let az = i as f64 * 2.399_963;
        let d = [polar.sin() * az.cos(), polar.sin() * az.sin(), polar.cos()];
        let e = [1.0 + 0.01 * (i % 7) as f64, 0.9, 1.1];
        writeln!(dirs, "{:.6} {:.6} {:.6}", d[0], d[1], d[2]).unwrap();
        writeln!(ints, "{:.6} {:.6} {:.6}", e[0], e[1], e[2]).unwrap();
        let name = format!("{:03}.png", i + 1);
        writeln!(names, "{name}").unwrap();
        let mut px = Vec::with_capacity(h * w * 3);
        for (n, &m) in normals.iter().zip(&mask) {
            let shade = if m { 0.7 * (n[0] * d[0] + n[1] * d[1] + n[2] * d[2]).max(0.0) } else { 0.0 };
            for ch in e {
                px.push((shade * ch / 1.2 * 65535.0).round().clamp(0.0, 65535.0) as u16);
            }
        }
        image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(w as u32, h as u32, px)
            .unwrap()
            .save(dir.join(&name))
            .unwrap();
    }
    std::fs::write(dir.join("light_directions.txt"), dirs).unwrap();
    std::fs::write(dir.join("light_intensities.txt"), ints).unwrap();
    std::fs::write(dir.join("filenames.txt"), names).unwrap();
    let m: Vec<u8> = mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
    image::GrayImage::from_raw(w as u32, h as u32, m).unwrap().save(dir.join("mask.png")).unwrap();
    let mut text = String::new();
    for c in 0..w {
        for r in 0..h {
            let n = normals[r * w + c];
            writeln!(text, "{:.8} {:.8} {:.8}", n[0], n[1], n[2]).unwrap();
        }
    }
    std::fs::write(dir.join("normal.txt"), text).unwrap();
    normals
}
