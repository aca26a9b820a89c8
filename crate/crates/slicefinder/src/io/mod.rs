//! On-disk formats.
//!
//! Sidecar files sit next to their main file and share its full name plus
//! a suffix: `slice.pgm.hdr`, `slice.pgm.mask.pgm`, `labels.pgm.names.csv`.

mod image;
mod tables;
mod volume;

pub use image::{
    decode_pgm, encode_pgm, load_image, load_labels, read_pgm, save_image, save_labels, write_pgm,
    Pgm, DEFAULT_SPACING_UM,
};
pub use tables::{
    format_cartography_csv, format_report_csv, format_transform, load_best_transforms,
    load_cartography, load_expert_pairs, parse_cartography_csv, parse_transform, read_transform,
    save_best_transforms, save_cartography_csv, save_expert_pairs, save_heatmap, save_match_csv,
    save_report_csv, write_transform, CartographyTable, BEST_TRANSFORMS_HEADER,
};
pub use volume::{
    load_label_volume, load_volume, parse_volume_header, save_label_volume, save_volume,
    VolumeHeader, VoxelType,
};

use std::path::{Path, PathBuf};

use crate::{Error, Result};

pub(crate) fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// `key: value` lines; blank lines and `#` comments ignored.
pub(crate) fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once(':') else {
            return Err(Error::MalformedHeader {
                path: path.to_path_buf(),
                msg: format!("expected 'key: value', got '{line}'"),
            });
        };
        let k = k.trim().to_string();
        if out.iter().any(|(seen, _)| *seen == k) {
            return Err(Error::MalformedHeader {
                path: path.to_path_buf(),
                msg: format!("duplicate key '{k}'"),
            });
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}
