//! Bit-exact persistence for images, sinograms, and transform models.
//!
//! All numeric payloads are little-endian regardless of platform. Images
//! store a raw 32-bit float payload next to a structured text sidecar
//! (`<path>.hdr`); sinograms store 64-bit measurements and weights the same
//! way; models live in a single self-describing binary file. Byte layouts
//! are documented in `docs/formats.md`. Every `save_*`/`load_*` pair
//! round-trips bit-exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::ctsim::{Geometry, SinogramSet};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::mrst::MrstModel;

const IMAGE_FORMAT: &str = "mrstct-image-v1";
const SINOGRAM_FORMAT: &str = "mrstct-sinogram-v1";
const MODEL_MAGIC: &[u8; 4] = b"MRST";
const MODEL_VERSION: u32 = 1;

/// `<path>.hdr`, the text sidecar accompanying a raw payload.
fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parse a `key = value` sidecar. Requires the `format` line to match,
/// every key in `keys` to appear exactly once, and nothing else.
fn parse_sidecar(path: &Path, expected_format: &str, keys: &[&str]) -> Result<Vec<String>> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| Error::parse(path, "header", "sidecar is not valid UTF-8"))?;
    let mut values: Vec<Option<String>> = vec![None; keys.len()];
    let mut format_seen = false;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, "header", format!("malformed line {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if key == "format" {
            if value != expected_format {
                return Err(Error::parse(
                    path,
                    "format",
                    format!("expected {expected_format:?}, found {value:?}"),
                ));
            }
            format_seen = true;
            continue;
        }
        match keys.iter().position(|k| *k == key) {
            Some(i) => {
                if values[i].is_some() {
                    return Err(Error::parse(path, key, "duplicate field"));
                }
                values[i] = Some(value.to_string());
            }
            None => return Err(Error::parse(path, key, "unknown field")),
        }
    }
    if !format_seen {
        return Err(Error::parse(path, "format", "missing field"));
    }
    let mut out = Vec::with_capacity(keys.len());
    for (i, v) in values.into_iter().enumerate() {
        out.push(v.ok_or_else(|| Error::parse(path, keys[i], "missing field"))?);
    }
    Ok(out)
}

fn parse_usize(path: &Path, field: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::parse(path, field, format!("not a valid count: {value:?}")))
}

fn parse_f64(path: &Path, field: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::parse(path, field, format!("not a valid number: {value:?}")))
}

fn check_payload_len(path: &Path, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::parse(
            path,
            "payload",
            format!("expected {expected} bytes, found {actual}"),
        ));
    }
    Ok(())
}

/// Write `img` as a raw little-endian f32 row-major payload at `path` plus
/// a text sidecar at `<path>.hdr`. Values outside f32 range are not
/// representable; pixel data is expected to be f32-exact (all pipeline
/// artifacts are written once, re-read bit-identically).
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let mut payload = Vec::with_capacity(4 * img.len());
    for &v in img.as_slice() {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_file(path, &payload)?;
    let mut hdr = String::new();
    let _ = writeln!(hdr, "format = {IMAGE_FORMAT}");
    let _ = writeln!(hdr, "width = {}", img.width());
    let _ = writeln!(hdr, "height = {}", img.height());
    let _ = writeln!(hdr, "pixel_size_mm = {}", img.pixel_size_mm());
    let _ = writeln!(hdr, "units = HU");
    write_file(&sidecar_path(path), hdr.as_bytes())
}

/// Load an image written by [`save_image`].
pub fn load_image(path: &Path) -> Result<Image> {
    let hdr = sidecar_path(path);
    let fields = parse_sidecar(
        &hdr,
        IMAGE_FORMAT,
        &["width", "height", "pixel_size_mm", "units"],
    )?;
    let width = parse_usize(&hdr, "width", &fields[0])?;
    let height = parse_usize(&hdr, "height", &fields[1])?;
    let pixel_size_mm = parse_f64(&hdr, "pixel_size_mm", &fields[2])?;
    if fields[3].is_empty() {
        return Err(Error::parse(&hdr, "units", "missing value"));
    }
    let payload = read_file(path)?;
    check_payload_len(path, 4 * width * height, payload.len())?;
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Image::from_vec(width, height, pixel_size_mm, data)
}

/// Write a sinogram as a raw little-endian f64 payload (`y` then `weights`,
/// each in ray order) at `path` plus a text sidecar at `<path>.hdr`.
pub fn save_sinogram(sino: &SinogramSet, path: &Path) -> Result<()> {
    sino.validate()?;
    let n = sino.geometry.n_rays();
    let mut payload = Vec::with_capacity(16 * n);
    for &v in &sino.y {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    for &w in &sino.weights {
        payload.extend_from_slice(&w.to_le_bytes());
    }
    write_file(path, &payload)?;
    let mut hdr = String::new();
    let _ = writeln!(hdr, "format = {SINOGRAM_FORMAT}");
    let _ = writeln!(hdr, "n_angles = {}", sino.geometry.n_angles);
    let _ = writeln!(hdr, "n_detectors = {}", sino.geometry.n_detectors);
    let _ = writeln!(
        hdr,
        "detector_spacing_mm = {}",
        sino.geometry.detector_spacing_mm
    );
    write_file(&sidecar_path(path), hdr.as_bytes())
}

/// Load a sinogram written by [`save_sinogram`].
pub fn load_sinogram(path: &Path) -> Result<SinogramSet> {
    let hdr = sidecar_path(path);
    let fields = parse_sidecar(
        &hdr,
        SINOGRAM_FORMAT,
        &["n_angles", "n_detectors", "detector_spacing_mm"],
    )?;
    let n_angles = parse_usize(&hdr, "n_angles", &fields[0])?;
    let n_detectors = parse_usize(&hdr, "n_detectors", &fields[1])?;
    let spacing = parse_f64(&hdr, "detector_spacing_mm", &fields[2])?;
    let geometry = Geometry::new(n_angles, n_detectors, spacing);
    geometry.validate()?;
    let n = geometry.n_rays();
    let payload = read_file(path)?;
    check_payload_len(path, 16 * n, payload.len())?;
    let vals: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let sino = SinogramSet {
        y: vals[..n].to_vec(),
        weights: vals[n..].to_vec(),
        geometry,
    };
    sino.validate()?;
    Ok(sino)
}

/// Write a model as a single binary file: magic `"MRST"`, format version,
/// layer count L, patch dimension p (all little-endian u32 after the magic),
/// then the L transforms as little-endian f64 row-major, then L thresholds.
pub fn save_model(model: &MrstModel, path: &Path) -> Result<()> {
    let l = model.layers();
    let p = model.patch_len();
    let mut bytes = Vec::with_capacity(16 + 8 * (l * p * p + l));
    bytes.extend_from_slice(MODEL_MAGIC);
    bytes.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(l as u32).to_le_bytes());
    bytes.extend_from_slice(&(p as u32).to_le_bytes());
    for omega in model.transforms() {
        for &v in omega.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    for &eta in model.learn_thresholds() {
        bytes.extend_from_slice(&eta.to_le_bytes());
    }
    write_file(path, &bytes)
}

/// Load a model written by [`save_model`]. The loaded transforms must still
/// satisfy the model invariants (square, unitary, finite thresholds).
pub fn load_model(path: &Path) -> Result<MrstModel> {
    let bytes = read_file(path)?;
    if bytes.len() < 4 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::parse(
            path,
            "magic",
            format!(
                "expected {MODEL_MAGIC:?}, found {:?}",
                &bytes[..bytes.len().min(4)]
            ),
        ));
    }
    if bytes.len() < 16 {
        return Err(Error::parse(
            path,
            "header",
            format!("expected at least 16 bytes, found {}", bytes.len()),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::parse(
            path,
            "version",
            format!("expected {MODEL_VERSION}, found {version}"),
        ));
    }
    let l = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let p = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if l == 0 || p == 0 {
        return Err(Error::parse(
            path,
            "header",
            format!("degenerate dimensions L={l}, p={p}"),
        ));
    }
    let expected = 16 + 8 * (l * p * p + l);
    if bytes.len() != expected {
        return Err(Error::parse(
            path,
            "payload",
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let mut offset = 16;
    let mut read_f64 = || {
        let v = f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
        offset += 8;
        v
    };
    let mut transforms = Vec::with_capacity(l);
    for _ in 0..l {
        let mut m = Array2::zeros((p, p));
        for i in 0..p {
            for j in 0..p {
                m[(i, j)] = read_f64();
            }
        }
        transforms.push(m);
    }
    let thresholds: Vec<f64> = (0..l).map(|_| read_f64()).collect();
    MrstModel::new(transforms, thresholds).map_err(|e| {
        Error::parse(
            path,
            "transforms",
            format!("model invariants violated: {e}"),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrst::init_model;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().expect("create temp dir")
    }

    #[test]
    fn image_round_trip_bit_exact() {
        let dir = tmpdir();
        let path = dir.path().join("img.raw");
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        // values chosen to be exactly representable as f32
        let data: Vec<f64> = (0..64 * 64)
            .map(|_| rng.random_range(-1000.0f32..2000.0f32) as f64)
            .collect();
        let img = Image::from_vec(64, 64, 0.75, data).unwrap();
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.width(), 64);
        assert_eq!(back.height(), 64);
        assert_eq!(back.pixel_size_mm(), 0.75);
        assert_eq!(back.as_slice(), img.as_slice());
    }

    #[test]
    fn image_truncated_payload_reports_byte_counts() {
        let dir = tmpdir();
        let path = dir.path().join("img.raw");
        let img = Image::zeros(8, 8, 1.0);
        save_image(&img, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_image(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 256 bytes, found 251"), "got: {msg}");
    }

    #[test]
    fn image_header_errors_name_the_field() {
        let dir = tmpdir();
        let path = dir.path().join("img.raw");
        save_image(&Image::zeros(4, 4, 1.0), &path).unwrap();
        let hdr = sidecar_path(&path);
        let original = std::fs::read_to_string(&hdr).unwrap();

        std::fs::write(&hdr, original.replace("width = 4", "width = four")).unwrap();
        let msg = load_image(&path).unwrap_err().to_string();
        assert!(msg.contains("width"), "got: {msg}");

        std::fs::write(&hdr, format!("{original}surprise = 1\n")).unwrap();
        let msg = load_image(&path).unwrap_err().to_string();
        assert!(
            msg.contains("surprise") && msg.contains("unknown"),
            "got: {msg}"
        );

        std::fs::write(
            &hdr,
            original.replace("format = mrstct-image-v1", "format = other"),
        )
        .unwrap();
        let msg = load_image(&path).unwrap_err().to_string();
        assert!(msg.contains("format"), "got: {msg}");

        std::fs::remove_file(&hdr).unwrap();
        assert!(matches!(load_image(&path).unwrap_err(), Error::Io { .. }));
    }

    #[test]
    fn sinogram_round_trip_bit_exact() {
        let dir = tmpdir();
        let path = dir.path().join("sino.raw");
        let geometry = Geometry::new(12, 7, 1.25);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let sino = SinogramSet {
            y: (0..84).map(|_| rng.random_range(-1.0..9.0)).collect(),
            weights: (0..84).map(|_| rng.random_range(0.0..1e4)).collect(),
            geometry,
        };
        save_sinogram(&sino, &path).unwrap();
        let back = load_sinogram(&path).unwrap();
        assert_eq!(back.y, sino.y);
        assert_eq!(back.weights, sino.weights);
        assert_eq!(back.geometry, sino.geometry);
    }

    #[test]
    fn sinogram_truncation_detected() {
        let dir = tmpdir();
        let path = dir.path().join("sino.raw");
        let geometry = Geometry::new(3, 5, 1.0);
        let sino = SinogramSet {
            y: vec![0.5; 15],
            weights: vec![1.0; 15],
            geometry,
        };
        save_sinogram(&sino, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, &bytes).unwrap();
        let msg = load_sinogram(&path).unwrap_err().to_string();
        assert!(msg.contains("expected 240 bytes, found 248"), "got: {msg}");
    }

    #[test]
    fn model_round_trip_bit_exact() {
        let dir = tmpdir();
        let path = dir.path().join("model.mrst");
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let transforms: Vec<Array2<f64>> = (0..3)
            .map(|_| crate::mrst::tests::random_orthogonal(9, &mut rng))
            .collect();
        let model = MrstModel::new(transforms, vec![0.5, 0.25, 0.125]).unwrap();
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.layers(), 3);
        assert_eq!(back.patch_len(), 9);
        assert_eq!(back.learn_thresholds(), model.learn_thresholds());
        for l in 1..=3 {
            assert_eq!(back.transform(l), model.transform(l));
        }
    }

    #[test]
    fn model_corruption_detected() {
        let dir = tmpdir();
        let path = dir.path().join("model.mrst");
        let model = init_model(2, 4).unwrap();
        save_model(&model, &path).unwrap();
        let good = std::fs::read(&path).unwrap();
        let expected = 16 + 8 * (2 * 16 + 2);
        assert_eq!(good.len(), expected);

        // truncation cites expected vs actual byte counts
        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        let msg = load_model(&path).unwrap_err().to_string();
        assert!(
            msg.contains(&format!(
                "expected {expected} bytes, found {}",
                expected - 3
            )),
            "got: {msg}"
        );

        // wrong magic
        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        let msg = load_model(&path).unwrap_err().to_string();
        assert!(msg.contains("magic"), "got: {msg}");

        // unsupported version
        let mut bad = good.clone();
        bad[4] = 9;
        std::fs::write(&path, &bad).unwrap();
        let msg = load_model(&path).unwrap_err().to_string();
        assert!(
            msg.contains("version") && msg.contains("found 9"),
            "got: {msg}"
        );

        // breaking a transform entry violates unitarity on load
        let mut bad = good.clone();
        bad[20] ^= 0x5a;
        bad[21] ^= 0xff;
        std::fs::write(&path, &bad).unwrap();
        let msg = load_model(&path).unwrap_err().to_string();
        assert!(msg.contains("transforms"), "got: {msg}");
    }
}
