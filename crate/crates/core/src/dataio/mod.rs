//! On-disk formats: PFM float images, PGM masks, sample directories with a
//! JSON manifest, and DiLiGenT-style benchmark directories.

mod diligent;
mod pfm;
mod pgm;
mod sample;

pub use diligent::{import_diligent, load_png_linear, DIRECTION_RENORM_TOL};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm, FloatImage};
pub use pgm::{decode_pgm_mask, encode_pgm_mask, read_mask, write_mask};
pub use sample::{
    read_normal_map, read_sample, read_sample_with_manifest, write_normal_map, write_sample, GeneratorMeta,
    LightRecord, SampleManifest, MANIFEST_FILE, MANIFEST_VERSION, STORED_UNIT_TOL,
};

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
