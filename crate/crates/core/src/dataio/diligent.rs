use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::msnet::{norm3, LightSample, NormalMap, PsSample};
use crate::tensor::Tensor;

use super::pfm::read_pfm;
use super::pgm::read_mask;
use super::sample::read_normal_map;

/// Largest accepted deviation of a listed light direction from unit length.
pub const DIRECTION_RENORM_TOL: f64 = 1e-3;

const NORMAL_NAMES: [&str; 2] = ["normal_gt.pfm", "Normal_gt.pfm"];
const NORMAL_TEXT: &str = "normal.txt";

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// Decodes a PNG to a planar `[3,H,W]` tensor in `[0,1]`. 16-bit files are
/// taken as linear (the benchmark's raw captures); 8-bit files are decoded
/// from sRGB.
pub fn load_png_linear(path: &Path) -> Result<Tensor> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let hw = w * h;
    let mut data = vec![0.0; 3 * hw];
    let sixteen = matches!(
        img.color(),
        image::ColorType::L16 | image::ColorType::La16 | image::ColorType::Rgb16 | image::ColorType::Rgba16
    );
    if sixteen {
        for (i, p) in img.to_rgb16().pixels().enumerate() {
            for c in 0..3 {
                data[c * hw + i] = p[c] as f64 / 65535.0;
            }
        }
    } else {
        for (i, p) in img.to_rgb8().pixels().enumerate() {
            for c in 0..3 {
                data[c * hw + i] = srgb_to_linear(p[c] as f64 / 255.0);
            }
        }
    }
    Tensor::new(&[3, h, w], data)
}

fn load_image(path: &Path) -> Result<Tensor> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("pfm") => {
            let img = read_pfm(path)?;
            let t = img.to_tensor();
            if img.channels == 3 {
                Ok(t)
            } else {
                let d = t.data();
                Tensor::new(&[3, img.height, img.width], [d, d, d].concat())
            }
        }
        Some("png") => load_png_linear(path),
        _ => Err(Error::format(path, "unsupported image type (expected .png or .pfm)")),
    }
}

fn read_rows(path: &Path) -> Result<Vec<[f64; 3]>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        let row: [f64; 3] = vals
            .try_into()
            .map_err(|v: Vec<f64>| Error::format(path, format!("line {}: expected 3 values, found {}", i + 1, v.len())))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Ground truth as `H·W` text rows in row-major or column-major pixel
/// order, whichever makes the non-zero rows match the mask best. Masked-in
/// normals are renormalised; zero rows drop out of the ground-truth mask.
fn read_normal_text(path: &Path, h: usize, w: usize, mask: &[bool]) -> Result<NormalMap> {
    let rows = read_rows(path)?;
    if rows.len() != h * w {
        return Err(Error::format(
            path,
            format!("{} normals for a {w}x{h} mask", rows.len()),
        ));
    }
    let agreement = |index: &dyn Fn(usize) -> usize| {
        (0..h * w)
            .filter(|&p| mask[p] == (norm3(&rows[index(p)]) > 0.5))
            .count()
    };
    let row_major = |p: usize| p;
    let col_major = |p: usize| (p % w) * h + p / w;
    let index: &dyn Fn(usize) -> usize = if agreement(&col_major) > agreement(&row_major) {
        &col_major
    } else {
        &row_major
    };
    let mut values = Vec::with_capacity(h * w);
    let mut gt_mask = Vec::with_capacity(h * w);
    for (p, &m) in mask.iter().enumerate() {
        let v = rows[index(p)];
        let n = norm3(&v);
        let valid = m && n > 0.0;
        values.push(if valid { [v[0] / n, v[1] / n, v[2] / n] } else { [0.0; 3] });
        gt_mask.push(valid);
    }
    NormalMap::new(h, w, values, gt_mask)
}

fn is_numbered_image(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    let Some(stem) = lower.strip_suffix(".png").or_else(|| lower.strip_suffix(".pfm")) else {
        return false;
    };
    !stem.is_empty() && stem.chars().all(|c| c.is_ascii_digit())
}

fn image_list(dir: &Path) -> Result<Vec<PathBuf>> {
    let listing = dir.join("filenames.txt");
    if listing.is_file() {
        let text = fs::read_to_string(&listing).map_err(|e| Error::io(&listing, e))?;
        return Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| dir.join(l))
            .collect());
    }
    let mut names = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| is_numbered_image(n))
        .collect::<Vec<_>>();
    names.sort_by_key(|n| {
        let stem = &n[..n.len() - 4];
        (stem.parse::<u64>().unwrap_or(u64::MAX), n.clone())
    });
    Ok(names.into_iter().map(|n| dir.join(n)).collect())
}

fn load_mask(dir: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let pgm = dir.join("mask.pgm");
    if pgm.is_file() {
        return read_mask(&pgm);
    }
    let png = dir.join("mask.png");
    if png.is_file() {
        let img = image::ImageReader::open(&png)
            .map_err(|e| Error::io(&png, e))?
            .decode()
            .map_err(|e| Error::format(&png, e.to_string()))?
            .to_luma16();
        let (w, h) = (img.width() as usize, img.height() as usize);
        return Ok((w, h, img.pixels().map(|p| p[0] > 0).collect()));
    }
    Err(Error::format(dir, "no mask.png or mask.pgm found"))
}

/// Imports a benchmark object directory: numbered images (or the order in
/// `filenames.txt`), `light_directions.txt`, `light_intensities.txt`, a
/// mask, and optionally ground truth as `normal_gt.pfm` or `normal.txt`.
pub fn import_diligent(dir: &Path) -> Result<PsSample> {
    let images = image_list(dir)?;
    let dirs_path = dir.join("light_directions.txt");
    let ints_path = dir.join("light_intensities.txt");
    if !dirs_path.is_file() {
        return Err(Error::format(dir, "light_directions.txt is missing"));
    }
    if !ints_path.is_file() {
        return Err(Error::format(dir, "light_intensities.txt is missing"));
    }
    let directions = read_rows(&dirs_path)?;
    let intensities = read_rows(&ints_path)?;
    if images.len() != directions.len() || images.len() != intensities.len() {
        return Err(Error::format(
            dir,
            format!(
                "found {} images but {} light directions and {} light intensities",
                images.len(),
                directions.len(),
                intensities.len()
            ),
        ));
    }
    let mut lights = Vec::with_capacity(directions.len());
    for (i, (d, int)) in directions.iter().zip(&intensities).enumerate() {
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if (n - 1.0).abs() > DIRECTION_RENORM_TOL {
            return Err(Error::format(
                &dirs_path,
                format!("row {}: direction norm {n} is not within {DIRECTION_RENORM_TOL} of 1", i + 1),
            ));
        }
        let light = LightSample::new([d[0] / n, d[1] / n, d[2] / n], *int)
            .map_err(|e| Error::format(&dirs_path, format!("row {}: {e}", i + 1)))?;
        lights.push(light);
    }
    let (mw, mh, mask) = load_mask(dir)?;
    let mut tensors = Vec::with_capacity(images.len());
    for path in &images {
        if !path.is_file() {
            return Err(Error::format(dir, format!("image {} is missing", path.display())));
        }
        let t = load_image(path)?;
        if t.shape()[1..] != [mh, mw] {
            return Err(Error::format(
                path,
                format!("image is {}x{}, mask is {mw}x{mh}", t.shape()[2], t.shape()[1]),
            ));
        }
        tensors.push(t);
    }
    let text_normals = dir.join(NORMAL_TEXT);
    let gt = match NORMAL_NAMES.iter().map(|n| dir.join(n)).find(|p| p.is_file()) {
        Some(p) => Some(read_normal_map(&p, mask.clone())?),
        None if text_normals.is_file() => Some(read_normal_text(&text_normals, mh, mw, &mask)?),
        None => None,
    };
    PsSample::new(tensors, lights, mask, gt).map_err(|e| Error::format(dir, e.to_string()))
}
