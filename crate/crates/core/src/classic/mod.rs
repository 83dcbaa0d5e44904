//! Least-squares Lambertian photometric stereo.
//!
//! For each masked pixel the intensity-normalised grey observations `i`
//! under light directions `L` (K×3) are fitted by `L·b ≈ i`; the albedo is
//! `‖b‖` and the normal `b/‖b‖`.

use nalgebra::{DMatrix, Matrix3, Vector3};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::msnet::{NormalMap, PsSample};

/// Determinant threshold for the 3×3 normal-equation matrix.
pub const DET_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct L2Result {
    pub normals: NormalMap,
    /// Per-pixel `‖b‖`; zero outside the mask and on flagged pixels.
    pub albedo: Vec<f64>,
    /// Masked-in pixels whose fit vanished; their normal is `(0,0,1)`.
    pub flagged: Vec<bool>,
}

/// Grey observation of every pixel under every light, `[K][H·W]`: each
/// channel divided by the light's intensity for that channel, then averaged.
pub fn grey_observations(sample: &PsSample) -> Vec<Vec<f64>> {
    let c = sample.channels();
    let hw = sample.height() * sample.width();
    sample
        .images
        .iter()
        .zip(&sample.lights)
        .map(|(img, light)| {
            let scale = light.channel_intensity(c);
            let d = img.data();
            (0..hw)
                .map(|p| (0..c).map(|ch| d[ch * hw + p] / scale[ch]).sum::<f64>() / c as f64)
                .collect()
        })
        .collect()
}

pub fn l2_normals(sample: &PsSample) -> Result<L2Result> {
    sample.validate()?;
    let k = sample.len();
    let l = DMatrix::from_fn(k, 3, |r, c| sample.lights[r].direction[c]);
    let ltl: Matrix3<f64> = (l.transpose() * &l).fixed_view::<3, 3>(0, 0).into_owned();
    let det = ltl.determinant();
    if det.abs() <= DET_EPS {
        return Err(Error::invalid(format!(
            "light directions do not span three dimensions (det LᵀL = {det:e})"
        )));
    }
    let inv = ltl.try_inverse().ok_or_else(|| Error::invalid("light matrix is singular"))?;
    // pseudo-inverse rows: (LᵀL)⁻¹ Lᵀ, one 3-vector per light
    let pinv: Vec<Vector3<f64>> = (0..k)
        .map(|r| inv * Vector3::new(l[(r, 0)], l[(r, 1)], l[(r, 2)]))
        .collect();

    let obs = grey_observations(sample);
    let solve = |p: usize| -> ([f64; 3], f64, bool) {
        if !sample.mask[p] {
            return ([0.0; 3], 0.0, false);
        }
        let b = pinv
            .iter()
            .zip(&obs)
            .fold(Vector3::zeros(), |acc, (row, o)| acc + row * o[p]);
        let albedo = b.norm();
        if albedo > 0.0 && albedo.is_finite() {
            ((b / albedo).into(), albedo, false)
        } else {
            ([0.0, 0.0, 1.0], 0.0, true)
        }
    };
    let hw = sample.height() * sample.width();
    #[cfg(feature = "parallel")]
    let fits: Vec<_> = (0..hw).into_par_iter().map(solve).collect();
    #[cfg(not(feature = "parallel"))]
    let fits: Vec<_> = (0..hw).map(solve).collect();

    let normals = NormalMap::new(
        sample.height(),
        sample.width(),
        fits.iter().map(|f| f.0).collect(),
        sample.mask.clone(),
    )?;
    Ok(L2Result {
        normals,
        albedo: fits.iter().map(|f| f.1).collect(),
        flagged: fits.iter().map(|f| f.2).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msnet::LightSample;
    use crate::tensor::Tensor;

    fn single_pixel(lights: &[[f64; 3]], values: &[f64]) -> PsSample {
        let images = values
            .iter()
            .map(|&v| Tensor::new(&[3, 1, 1], vec![v; 3]).unwrap())
            .collect();
        let lights = lights.iter().map(|&d| LightSample::white(d, 1.0).unwrap()).collect();
        PsSample::new(images, lights, vec![true], None).unwrap()
    }

    #[test]
    fn identity_lights() {
        // the e₁ and e₂ lights are tilted slightly towards the camera
        let s = 1e-3f64;
        let c = (1.0 - s * s).sqrt();
        let lights = [[c, 0.0, s], [0.0, c, s], [0.0, 0.0, 1.0]];
        let r = l2_normals(&single_pixel(&lights, &[s, s, 1.0])).unwrap();
        let n = r.normals.get(0, 0);
        assert!((n[2] - 1.0).abs() < 1e-12 && n[0].abs() < 1e-12 && n[1].abs() < 1e-12);
        assert!((r.albedo[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dark_pixel_is_flagged() {
        let lights = [[0.6, 0.0, 0.8], [0.0, 0.6, 0.8], [0.0, 0.0, 1.0]];
        let r = l2_normals(&single_pixel(&lights, &[0.0, 0.0, 0.0])).unwrap();
        assert!(r.flagged[0]);
        assert_eq!(r.normals.get(0, 0), [0.0, 0.0, 1.0]);
        assert_eq!(r.albedo[0], 0.0);
    }

    #[test]
    fn coplanar_lights_are_rejected() {
        let s = 0.5f64.sqrt();
        let lights = [[s, 0.0, s], [-s, 0.0, s], [0.0, 0.0, 1.0]];
        assert!(l2_normals(&single_pixel(&lights, &[1.0, 1.0, 1.0])).is_err());
    }
}
