mod common;

use std::path::Path;

use multips::classic::l2_normals;
use multips::dataio::{decode_pfm, decode_pgm_mask, encode_pfm, encode_pgm_mask, FloatImage};
use multips::evalkit::angular_error_map;
use multips::geomgen::{load_obj, TriMesh, Vec3};
use multips::msnet::{
    forward_multiscale, resolution_schedule, Eager, LightSample, NetConfig, NetWeights, NormalMap, PsSample,
};
use multips::render::{brdf_eval, sample_lights, LightPolicy, MaterialPoint};
use multips::tensor::kernels::{bilinear_upsample, bilinear_upsample_backward, leaky_relu, normalize_channels};
use multips::tensor::Tensor;
use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn direction() -> impl Strategy<Value = [f64; 3]> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 0.05)
        .prop_map(|(x, y, z)| unit([x, y, z]))
}

fn upper_direction() -> impl Strategy<Value = [f64; 3]> {
    (-0.7..0.7f64, -0.7..0.7f64, 0.3..1.0f64).prop_map(|(x, y, z)| unit([x, y, z]))
}

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0..2.0f64, n).prop_map(move |d| Tensor::new(&shape, d).unwrap())
}

fn normal_map(h: usize, w: usize) -> impl Strategy<Value = NormalMap> {
    (
        prop::collection::vec(direction(), h * w),
        prop::collection::vec(any::<bool>(), h * w),
    )
        .prop_map(move |(v, mut m)| {
            m[0] = true;
            NormalMap::new(h, w, v, m).unwrap()
        })
}

fn ps_sample(size: usize, k: usize) -> impl Strategy<Value = PsSample> {
    (
        prop::collection::vec(tensor(vec![3, size, size]), k),
        prop::collection::vec((upper_direction(), 0.3..2.0f64), k),
        prop::collection::vec(prop::bool::weighted(0.8), size * size),
    )
        .prop_map(|(imgs, lights, mask)| {
            let images = imgs
                .into_iter()
                .map(|t| Tensor::new(t.shape(), t.data().iter().map(|v| v.abs()).collect()).unwrap())
                .collect();
            let lights = lights
                .into_iter()
                .map(|(d, i)| LightSample::white(d, i).unwrap())
                .collect();
            PsSample::new(images, lights, mask, None).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pfm_round_trip_is_bit_exact(
        (w, h, c, data) in (1usize..9, 1usize..9, prop::sample::select(vec![1usize, 3]))
            .prop_flat_map(|(w, h, c)| (Just(w), Just(h), Just(c),
                prop::collection::vec(prop::num::f32::NORMAL | prop::num::f32::ZERO | prop::num::f32::SUBNORMAL, w * h * c)))
    ) {
        let img = FloatImage::new(w, h, c, data).unwrap();
        let back = decode_pfm(&encode_pfm(&img).unwrap(), Path::new("p")).unwrap();
        prop_assert_eq!(back.width, w);
        prop_assert_eq!(back.height, h);
        let same = img.data.iter().zip(&back.data).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn pgm_mask_round_trip(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
        let mask: Vec<bool> = (0..w * h).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
        let bytes = encode_pgm_mask(w, h, &mask).unwrap();
        prop_assert_eq!(decode_pgm_mask(&bytes, Path::new("m")).unwrap(), (w, h, mask));
    }

    #[test]
    fn upsample_backward_is_the_adjoint(
        (x, y) in (1usize..5, 1usize..5, 1usize..9, 1usize..9).prop_flat_map(|(h, w, oh, ow)|
            (tensor(vec![1, 2, h, w]), tensor(vec![1, 2, oh.max(h), ow.max(w)])))
    ) {
        let (oh, ow) = (y.shape()[2], y.shape()[3]);
        let ux = bilinear_upsample(&x, oh, ow).unwrap();
        let uty = bilinear_upsample_backward(x.shape(), &y).unwrap();
        prop_assert!((ux.dot(&y) - x.dot(&uty)).abs() < 1e-9);
    }

    #[test]
    fn upsample_preserves_constants(c in -3.0..3.0f64, h in 1usize..5, w in 1usize..5, oh in 5usize..11, ow in 5usize..11) {
        let up = bilinear_upsample(&Tensor::full(&[1, 1, h, w], c), oh, ow).unwrap();
        prop_assert!(up.data().iter().all(|v| (v - c).abs() < 1e-12));
    }

    #[test]
    fn normalize_gives_unit_vectors(x in tensor(vec![2, 3, 3, 4])) {
        let y = normalize_channels(&x).unwrap();
        for b in 0..2 {
            for p in 0..12 {
                let n: f64 = (0..3).map(|c| y.data()[b * 36 + c * 12 + p].powi(2)).sum();
                prop_assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn leaky_relu_is_positively_homogeneous(x in tensor(vec![1, 2, 3, 3]), s in 0.01..10.0f64) {
        let scaled = Tensor::new(x.shape(), x.data().iter().map(|v| v * s).collect()).unwrap();
        let a = leaky_relu(&scaled, 0.1).unwrap();
        let b = leaky_relu(&x, 0.1).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            prop_assert!((u - v * s).abs() <= 1e-12 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn schedule_follows_ceil_halving(h in 8usize..600, w in 8usize..600, r0 in 4usize..17) {
        prop_assume!(h >= r0 && w >= r0);
        let s = resolution_schedule(h, w, r0).unwrap();
        prop_assert_eq!(*s.last().unwrap(), (h, w));
        for pair in s.windows(2) {
            prop_assert_eq!(pair[0], (pair[1].0.div_ceil(2), pair[1].1.div_ceil(2)));
        }
        prop_assert!(s[0].0.max(s[0].1) <= r0);
        if s.len() > 1 {
            prop_assert!(s[1].0.max(s[1].1) > r0);
        }
    }

    #[test]
    fn angular_error_is_symmetric(a in normal_map(3, 4), b in normal_map(3, 4)) {
        let ab = angular_error_map(&a, &b);
        let ba = angular_error_map(&b, &a);
        match (ab, ba) {
            (Ok(x), Ok(y)) => {
                for (u, v) in x.iter().zip(&y) {
                    match (u, v) {
                        (Some(u), Some(v)) => prop_assert!((u - v).abs() < 1e-12),
                        (None, None) => {}
                        _ => prop_assert!(false, "validity differs"),
                    }
                }
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "one direction failed"),
        }
    }

    #[test]
    fn angular_error_is_rotation_invariant(a in normal_map(2, 3), b in normal_map(2, 3), axis in direction(), angle in -3.1..3.1f64) {
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::from(axis)), angle);
        let turn = |m: &NormalMap| {
            let v = m.values().iter().map(|n| (rot * Vec3::from(*n)).into()).collect();
            NormalMap::new(m.height(), m.width(), v, m.mask().to_vec()).unwrap()
        };
        if let (Ok(x), Ok(y)) = (angular_error_map(&a, &b), angular_error_map(&turn(&a), &turn(&b))) {
            for (u, v) in x.iter().zip(&y) {
                if let (Some(u), Some(v)) = (u, v) {
                    prop_assert!((u - v).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn brdf_is_reciprocal_and_non_negative(
        l in upper_direction(), v in upper_direction(),
        base in 0.0..1.0f64, metallic in 0.0..1.0f64, roughness in 0.05..1.0f64,
        specular in 0.0..1.0f64, anisotropy in 0.0..1.0f64,
    ) {
        let m = MaterialPoint { base_color: [base, 0.5, 1.0 - base], metallic, roughness, specular, anisotropy };
        let n = Vec3::z();
        let f = brdf_eval(&m, &n, &Vec3::from(l), &Vec3::from(v));
        let g = brdf_eval(&m, &n, &Vec3::from(v), &Vec3::from(l));
        for c in 0..3 {
            prop_assert!(f[c] >= 0.0 && f[c].is_finite());
            prop_assert!((f[c] - g[c]).abs() <= 1e-9 * (1.0 + f[c].abs()));
        }
    }

    #[test]
    fn sampled_lights_stay_on_the_cap(seed in any::<u64>(), k in 3usize..40) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let policy = LightPolicy::default();
        let cos_max = policy.max_polar_deg.to_radians().cos();
        for l in sample_lights(&mut rng, k, &policy).unwrap() {
            let d = l.direction;
            prop_assert!(((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() - 1.0).abs() < 1e-12);
            prop_assert!(d[2] >= cos_max - 1e-12);
            prop_assert!(l.intensity.iter().all(|&i| (policy.intensity.0..=policy.intensity.1).contains(&i)));
        }
    }

    #[test]
    fn obj_text_round_trip(stacks in 3usize..8, slices in 3usize..9, r in 0.1..2.0f64) {
        let mesh = TriMesh::uv_sphere(r, stacks, slices).unwrap();
        let mut text = String::new();
        for (v, n) in mesh.vertices.iter().zip(&mesh.normals) {
            text += &format!("v {:e} {:e} {:e}\nvn {:e} {:e} {:e}\n", v.x, v.y, v.z, n.x, n.y, n.z);
        }
        for f in &mesh.faces {
            text += &format!("f {0}//{0} {1}//{1} {2}//{2}\n", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        let back = load_obj(text.as_bytes()).unwrap();
        prop_assert_eq!(back.faces.len(), mesh.faces.len());
        for f in 0..mesh.faces.len() {
            let (a, b) = (mesh.triangle(f), back.triangle(f));
            for i in 0..3 {
                prop_assert!((a[i] - b[i]).norm() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn l2_is_invariant_to_power_of_two_light_scaling(
        sample in ps_sample(4, 5), which in 0usize..5, exp in -6i32..7,
    ) {
        let c = 2f64.powi(exp);
        let mut scaled = sample.clone();
        scaled.images[which] = Tensor::new(
            sample.images[which].shape(),
            sample.images[which].data().iter().map(|v| v * c).collect(),
        ).unwrap();
        let l = &sample.lights[which];
        scaled.lights[which] = LightSample::new(l.direction, l.intensity.map(|i| i * c)).unwrap();
        let (a, b) = (l2_normals(&sample), l2_normals(&scaled));
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "scaling changed solvability"),
        }
    }

    #[test]
    fn l2_normals_are_unit_where_not_flagged(sample in ps_sample(4, 4)) {
        if let Ok(r) = l2_normals(&sample) {
            for p in 0..16 {
                if sample.mask[p] && !r.flagged[p] {
                    let n = r.normals.values()[p];
                    prop_assert!(((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn forward_is_invariant_to_input_order(
        sample in ps_sample(16, 4), order in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle(), seed in 0u64..100,
    ) {
        let cfg = NetConfig { channels: 4, ..NetConfig::default() };
        let w = NetWeights::init(&cfg, seed).unwrap();
        let (a, _) = forward_multiscale(&mut Eager, &w, &sample, &cfg).unwrap();
        let (b, _) = forward_multiscale(&mut Eager, &w, &sample.permuted(&order), &cfg).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }
}
