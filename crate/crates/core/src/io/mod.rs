//! File formats: Middlebury `.flo`, 8-bit PNG/PPM images, checkpoints,
//! dataset manifests, and colour-wheel flow visualisation. Every writer
//! goes through a temporary file and a rename, so readers never see a
//! partial file.

mod checkpoint;
mod flo;
mod image;
mod manifest;
mod viz;

pub use self::image::{read_image, read_occlusion, read_rgb8, write_image, write_occlusion, write_rgb8, Rgb8};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_MAGIC};
pub use manifest::{
    format_manifest, load_quad, parse_manifest, read_manifest, save_quads, write_manifest, ManifestRow,
    MANIFEST_COLUMNS,
};
pub use viz::{flow_viz, wheel_position};

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to a sibling temporary file, syncs it and renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{}: not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}-{}",
        name.to_string_lossy(),
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
