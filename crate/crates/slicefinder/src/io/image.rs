//! Binary PGM (`P5`) images and label maps with text sidecars.

use std::collections::BTreeMap;
use std::path::Path;

use slicefinder_core::{Image2D, LabelMap2D};

use super::{parse_key_values, read_bytes, read_text, sidecar, write_file};
use crate::{Error, Result};

/// Spacing assumed for images saved without a sidecar header.
pub const DEFAULT_SPACING_UM: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

pub fn encode_pgm(pgm: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", pgm.width, pgm.height, pgm.maxval).into_bytes();
    if pgm.maxval < 256 {
        out.extend(pgm.samples.iter().map(|&s| s as u8));
    } else {
        for &s in &pgm.samples {
            out.extend(s.to_be_bytes());
        }
    }
    out
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Pgm> {
    let bad = |msg: &str| Error::MalformedImage {
        path: path.to_path_buf(),
        msg: msg.into(),
    };
    if !bytes.starts_with(b"P5") {
        return Err(bad("not a binary PGM (missing P5 magic)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing whitespace after maxval"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad(
            "dimensions and maxval must be positive, maxval <= 65535",
        ));
    }
    let n = width * height;
    let body = &bytes[pos..];
    let samples: Vec<u16> = if maxval < 256 {
        if body.len() < n {
            return Err(bad("truncated pixel data"));
        }
        body[..n].iter().map(|&b| u16::from(b)).collect()
    } else {
        if body.len() < 2 * n {
            return Err(bad("truncated pixel data"));
        }
        body[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if samples.iter().any(|&s| usize::from(s) > maxval) {
        return Err(bad("sample exceeds maxval"));
    }
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    decode_pgm(&read_bytes(path)?, path)
}

pub fn write_pgm(path: &Path, pgm: &Pgm) -> Result<()> {
    write_file(path, encode_pgm(pgm))
}

/// Saves `img` as a 16-bit PGM. Valid values are min-max scaled to
/// `0..=65535`; the affine map back, the spacing and (when some pixel is
/// invalid) the mask file name go to the `.hdr` sidecar.
pub fn save_image(img: &Image2D, path: &Path) -> Result<()> {
    let (lo, hi) = img.valid_range().unwrap_or((0.0, 0.0));
    let scale = if hi > lo { (hi - lo) / 65535.0 } else { 0.0 };
    let samples = img
        .data()
        .iter()
        .zip(img.mask())
        .map(|(&v, &ok)| {
            if ok && scale > 0.0 {
                ((v - lo) / scale).round() as u16
            } else {
                0
            }
        })
        .collect();
    write_pgm(
        path,
        &Pgm {
            width: img.width(),
            height: img.height(),
            maxval: 65535,
            samples,
        },
    )?;
    let mut header = format!(
        "spacing_um: {:?}\nintensity_offset: {lo:?}\nintensity_scale: {scale:?}\n",
        img.spacing_um()
    );
    if img.valid_count() < img.data().len() {
        let mask_path = sidecar(path, ".mask.pgm");
        let samples = img
            .mask()
            .iter()
            .map(|&m| if m { 255 } else { 0 })
            .collect();
        write_pgm(
            &mask_path,
            &Pgm {
                width: img.width(),
                height: img.height(),
                maxval: 255,
                samples,
            },
        )?;
        let name = mask_path
            .file_name()
            .expect("sidecar has a file name")
            .to_string_lossy();
        header.push_str(&format!("mask_file: {name}\n"));
    }
    write_file(&sidecar(path, ".hdr"), header)
}

/// Loads a PGM image. With a `.hdr` sidecar, samples are mapped back
/// through the recorded intensity scale and the mask file is applied;
/// without one, raw sample values are returned at
/// [`DEFAULT_SPACING_UM`].
pub fn load_image(path: &Path) -> Result<Image2D> {
    let pgm = read_pgm(path)?;
    let header_path = sidecar(path, ".hdr");
    let (mut spacing, mut offset, mut scale, mut mask) = (DEFAULT_SPACING_UM, 0.0, 1.0, None);
    if header_path.exists() {
        let bad = |msg: String| Error::MalformedHeader {
            path: header_path.clone(),
            msg,
        };
        let num = |v: &str| v.parse::<f64>().ok().filter(|x| x.is_finite());
        for (k, v) in parse_key_values(&read_text(&header_path)?, &header_path)? {
            match k.as_str() {
                "spacing_um" => {
                    spacing = num(&v).ok_or_else(|| bad(format!("bad spacing '{v}'")))?
                }
                "intensity_offset" => {
                    offset = num(&v).ok_or_else(|| bad(format!("bad offset '{v}'")))?
                }
                "intensity_scale" => {
                    scale = num(&v).ok_or_else(|| bad(format!("bad scale '{v}'")))?
                }
                "mask_file" => {
                    let mpath = path.parent().unwrap_or(Path::new("")).join(&v);
                    let m = read_pgm(&mpath)?;
                    if (m.width, m.height) != (pgm.width, pgm.height) {
                        return Err(Error::MalformedImage {
                            path: mpath,
                            msg: "mask size differs from image".into(),
                        });
                    }
                    mask = Some(m.samples.iter().map(|&s| s > 0).collect::<Vec<bool>>());
                }
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }
    }
    let mask = mask.unwrap_or_else(|| vec![true; pgm.samples.len()]);
    let data = pgm
        .samples
        .iter()
        .zip(&mask)
        .map(|(&s, &ok)| {
            if ok {
                offset + f64::from(s) * scale
            } else {
                0.0
            }
        })
        .collect();
    Ok(Image2D::with_mask(
        pgm.width, pgm.height, spacing, data, mask,
    )?)
}

pub fn save_labels(labels: &LabelMap2D, path: &Path) -> Result<()> {
    let pgm = Pgm {
        width: labels.width(),
        height: labels.height(),
        maxval: 65535,
        samples: labels.labels().to_vec(),
    };
    write_pgm(path, &pgm)?;
    save_names(labels.region_names(), &sidecar(path, ".names.csv"))
}

pub fn load_labels(path: &Path) -> Result<LabelMap2D> {
    let pgm = read_pgm(path)?;
    let names = load_names(&sidecar(path, ".names.csv"))?.unwrap_or_default();
    Ok(LabelMap2D::new(pgm.width, pgm.height, pgm.samples)?.with_names(names))
}

pub(crate) fn save_names(names: &BTreeMap<u16, String>, path: &Path) -> Result<()> {
    if names.is_empty() {
        return Ok(());
    }
    let mut text = String::from("id,name\n");
    for (id, name) in names {
        text.push_str(&format!("{id},{name}\n"));
    }
    write_file(path, text)
}

pub(crate) fn load_names(path: &Path) -> Result<Option<BTreeMap<u16, String>>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = read_text(path)?;
    let mut names = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(id, name)| Some((id.trim().parse::<u16>().ok()?, name)));
        let Some((id, name)) = parsed else {
            return Err(Error::MalformedCsv {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected 'id,name', got '{line}'"),
            });
        };
        names.insert(id, name.to_string());
    }
    Ok(Some(names))
}
