mod common;

use common::criteria::{fully_lit, lambertian_blob_sample};
use multips::classic::{grey_observations, l2_normals};
use multips::evalkit::mean_angular_error;
use multips::msnet::{LightSample, PsSample};
use multips::tensor::Tensor;
use rand::Rng;

/// Unshadowed Lambertian observations `albedo · max(n·l, 0)` of random
/// upward normals on a `size×size` grid.
fn lambertian(lights: &[[f64; 3]], size: usize, seed: u64) -> (PsSample, Vec<[f64; 3]>) {
    let mut r = common::rng(seed);
    let normals: Vec<[f64; 3]> = (0..size * size)
        .map(|_| {
            let v = [r.random_range(-0.4..0.4), r.random_range(-0.4..0.4), 1.0f64];
            let n = (v[0] * v[0] + v[1] * v[1] + 1.0).sqrt();
            [v[0] / n, v[1] / n, v[2] / n]
        })
        .collect();
    let albedo: Vec<f64> = (0..size * size).map(|_| r.random_range(0.2..1.0)).collect();
    let hw = size * size;
    let mut images = Vec::new();
    let mut samples = Vec::new();
    for (i, d) in lights.iter().enumerate() {
        let intensity = 0.5 + 0.3 * i as f64;
        let mut data = vec![0.0; 3 * hw];
        for p in 0..hw {
            let n = normals[p];
            let shade = albedo[p] * (n[0] * d[0] + n[1] * d[1] + n[2] * d[2]).max(0.0) * intensity;
            for c in 0..3 {
                data[c * hw + p] = shade;
            }
        }
        images.push(Tensor::new(&[3, size, size], data).unwrap());
        samples.push(LightSample::white(*d, intensity).unwrap());
    }
    (PsSample::new(images, samples, vec![true; hw], None).unwrap(), normals)
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

#[test]
fn fourth_consistent_light_leaves_normals_unchanged() {
    let three = [unit([0.5, 0.0, 1.0]), unit([-0.3, 0.5, 1.0]), unit([-0.2, -0.5, 1.0])];
    let four = [three[0], three[1], three[2], unit([0.1, 0.1, 1.0])];
    let (a, truth) = lambertian(&three, 6, 1);
    let (b, _) = lambertian(&four, 6, 1);
    let ra = l2_normals(&a).unwrap();
    let rb = l2_normals(&b).unwrap();
    for ((x, y), t) in ra.normals.values().iter().zip(rb.normals.values()).zip(&truth) {
        for i in 0..3 {
            assert!((x[i] - y[i]).abs() <= 1e-10);
            assert!((x[i] - t[i]).abs() <= 1e-10);
        }
    }
    for (x, y) in ra.albedo.iter().zip(&rb.albedo) {
        assert!((x - y).abs() <= 1e-10);
    }
}

#[test]
fn rendered_blob_is_recovered_exactly_where_every_light_reaches() {
    let sample = lambertian_blob_sample();
    let lit = fully_lit(&sample);
    let count = lit.iter().filter(|&&m| m).count();
    assert!(count > 1000, "only {count} fully lit pixels");
    let r = l2_normals(&sample).unwrap();
    let pred = r.normals.with_mask(lit).unwrap();
    let mae = mean_angular_error(&pred, sample.gt_normals.as_ref().unwrap()).unwrap();
    assert!(mae < 1e-3, "lit-domain MAE {mae}");
    for (p, &m) in pred.mask().iter().enumerate() {
        if m {
            assert!((r.albedo[p] - 0.8 / std::f64::consts::PI).abs() < 1e-6);
        }
    }
}

#[test]
fn grey_observations_average_intensity_normalised_channels() {
    let img = Tensor::new(&[3, 1, 2], vec![1.0, 2.0, 3.0, 4.0, 6.0, 8.0]).unwrap();
    let light = LightSample::new([0.0, 0.0, 1.0], [1.0, 2.0, 4.0]).unwrap();
    let other = LightSample::white(unit([0.5, 0.0, 1.0]), 1.0).unwrap();
    let third = LightSample::white(unit([0.0, 0.5, 1.0]), 1.0).unwrap();
    let s = PsSample::new(vec![img.clone(), img.clone(), img], vec![light, other, third], vec![true; 2], None).unwrap();
    let g = grey_observations(&s);
    assert_eq!(g[0], vec![(1.0 + 1.5 + 1.5) / 3.0, (2.0 + 2.0 + 2.0) / 3.0]);
    assert_eq!(g[1], vec![(1.0 + 3.0 + 6.0) / 3.0, (2.0 + 4.0 + 8.0) / 3.0]);
}

#[test]
fn masked_out_pixels_are_left_empty() {
    let lights = [unit([0.5, 0.0, 1.0]), unit([-0.3, 0.5, 1.0]), unit([-0.2, -0.5, 1.0])];
    let (mut s, _) = lambertian(&lights, 3, 4);
    s.mask[4] = false;
    let r = l2_normals(&s).unwrap();
    assert!(!r.normals.mask()[4]);
    assert_eq!(r.albedo[4], 0.0);
    assert!(!r.flagged[4]);
}
