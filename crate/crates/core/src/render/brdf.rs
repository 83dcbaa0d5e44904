use std::f64::consts::PI;

use crate::geomgen::Vec3;

use super::material::MaterialPoint;

/// Below this `n·v` the BRDF is reported as zero.
pub const GRAZING_EPS: f64 = 1e-6;

const ALPHA_MIN: f64 = 1e-3;

/// Tangent and bitangent completing `n` to an orthonormal frame. The tangent
/// follows the surface projection of the x axis (y near the poles).
pub fn tangent_frame(n: &Vec3) -> (Vec3, Vec3) {
    let axis = if n.x.abs() < 0.999 { Vec3::x() } else { Vec3::y() };
    let t = (axis - n * n.dot(&axis)).normalize();
    (t, n.cross(&t))
}

/// GGX roughnesses along the tangent and bitangent.
pub fn ggx_alphas(roughness: f64, anisotropy: f64) -> (f64, f64) {
    let alpha = roughness * roughness;
    let aspect = (1.0 - 0.9 * anisotropy).sqrt();
    ((alpha / aspect).max(ALPHA_MIN), (alpha * aspect).max(ALPHA_MIN))
}

/// Anisotropic GGX normal distribution for a half vector in local
/// coordinates `(t, b, n)`.
pub fn ggx_d(h: [f64; 3], ax: f64, ay: f64) -> f64 {
    let q = (h[0] / ax).powi(2) + (h[1] / ay).powi(2) + h[2] * h[2];
    1.0 / (PI * ax * ay * q * q)
}

/// Smith masking term for one direction in local coordinates.
pub fn smith_g1(w: [f64; 3], ax: f64, ay: f64) -> f64 {
    if w[2] <= 0.0 {
        return 0.0;
    }
    let tan2 = ((ax * w[0]).powi(2) + (ay * w[1]).powi(2)) / (w[2] * w[2]);
    2.0 / (1.0 + (1.0 + tan2).sqrt())
}

/// Schlick Fresnel with grazing reflectance `min(1, 50·F0)`, so a zero
/// `F0` reflects nothing at any angle.
pub fn schlick(f0: f64, cos: f64) -> f64 {
    let f90 = (50.0 * f0).min(1.0);
    f0 + (f90 - f0) * (1.0 - cos.clamp(0.0, 1.0)).powi(5)
}

/// Reflectance `f(l, v)` per colour channel: a Lambertian lobe weighted by
/// `1 − metallic` plus an anisotropic GGX lobe with separable Smith masking
/// and Schlick Fresnel from `F0 = mix(0.08·specular, base, metallic)`.
/// Zero when `n·l ≤ 0` or `n·v ≤ GRAZING_EPS`.
pub fn brdf_eval(m: &MaterialPoint, n: &Vec3, l: &Vec3, v: &Vec3) -> [f64; 3] {
    let nl = n.dot(l);
    let nv = n.dot(v);
    if nl <= 0.0 || nv <= GRAZING_EPS {
        return [0.0; 3];
    }
    let (t, b) = tangent_frame(n);
    let local = |w: &Vec3| [w.dot(&t), w.dot(&b), w.dot(n)];
    let h = (l + v).normalize();
    let (ax, ay) = ggx_alphas(m.roughness, m.anisotropy);
    let d = ggx_d(local(&h), ax, ay);
    let g = smith_g1(local(l), ax, ay) * smith_g1(local(v), ax, ay);
    let vh = v.dot(&h);
    let spec_scale = d * g / (4.0 * nl * nv);
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let base = m.base_color[c];
        let f0 = 0.08 * m.specular * (1.0 - m.metallic) + base * m.metallic;
        let diffuse = (1.0 - m.metallic) * base / PI;
        *o = diffuse + schlick(f0, vh) * spec_scale;
    }
    out
}
