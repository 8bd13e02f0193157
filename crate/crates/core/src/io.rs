//! PNG images, text artifacts and plot-ready CSV.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::training::FitTrace;

fn unsupported(path: &Path, reason: impl Into<String>) -> Error {
    Error::UnsupportedImage {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads an 8- or 16-bit grayscale or RGB PNG into `[0, 1]`. Palette and
/// sub-byte images are expanded first; alpha channels are rejected.
pub fn load_image(path: &Path) -> Result<ImageGrid> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| unsupported(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| unsupported(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| unsupported(path, e.to_string()))?;
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::Rgb => 3,
        other => return Err(unsupported(path, format!("{other:?} images are not supported; use gray or RGB"))),
    };
    let (h, w) = (info.height as usize, info.width as usize);
    let n = h * w * channels;
    let data: Vec<f64> = match info.bit_depth {
        BitDepth::Eight => (0..h)
            .flat_map(|r| buf[r * info.line_size..r * info.line_size + w * channels].iter())
            .map(|&b| b as f64 / 255.0)
            .collect(),
        BitDepth::Sixteen => (0..h)
            .flat_map(|r| buf[r * info.line_size..r * info.line_size + 2 * w * channels].chunks_exact(2))
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
            .collect(),
        other => return Err(unsupported(path, format!("{other:?}-bit samples after expansion"))),
    };
    debug_assert_eq!(data.len(), n);
    ImageGrid::new(h, w, channels, data)
}

/// Writes an 8-bit PNG, rounding to nearest.
pub fn save_image(img: &ImageGrid, path: &Path) -> Result<()> {
    save_image_depth(img, path, 8)
}

/// Writes a PNG with 8- or 16-bit samples, rounding to nearest.
pub fn save_image_depth(img: &ImageGrid, path: &Path, bits: u8) -> Result<()> {
    let (depth, max) = match bits {
        8 => (BitDepth::Eight, 255.0),
        16 => (BitDepth::Sixteen, 65535.0),
        _ => return Err(Error::invalid("PNG bit depth must be 8 or 16")),
    };
    let color = if img.channels() == 1 { ColorType::Grayscale } else { ColorType::Rgb };
    let mut bytes = Vec::with_capacity(img.data().len() * (bits as usize / 8));
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * max).round();
        if bits == 8 {
            bytes.push(q as u8);
        } else {
            bytes.extend_from_slice(&(q as u16).to_be_bytes());
        }
    }
    create_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let map = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::invalid(other.to_string()),
    };
    let mut writer = enc.write_header().map_err(map)?;
    writer.write_image_data(&bytes).map_err(map)?;
    writer.finish().map_err(map)
}

/// All `.png` files of `dir`, sorted by file name, keyed by file stem.
pub fn load_image_dir(dir: &Path) -> Result<Vec<(String, ImageGrid)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no PNG files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((stem, load_image(p)?))
        })
        .collect()
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub const FITTING_HEADER: &str = "iteration,psnr,method";
pub const NTK_HEADER: &str = "percentile,energy,method";

/// Fitting curves, one block of rows per method.
pub fn fitting_plotdata(curves: &[(String, FitTrace)]) -> Result<String> {
    if curves.is_empty() {
        return Err(Error::invalid("no fitting curves to export"));
    }
    let mut s = format!("{FITTING_HEADER}\n");
    for (method, trace) in curves {
        for r in &trace.rows {
            s.push_str(&format!("{},{},{}\n", r.iteration, r.psnr, method));
        }
    }
    Ok(s)
}

/// NTK energy curves as `(percentile, energy)` points per method.
pub fn ntk_plotdata(curves: &[(String, Vec<(f64, f64)>)]) -> Result<String> {
    if curves.is_empty() {
        return Err(Error::invalid("no energy curves to export"));
    }
    let mut s = format!("{NTK_HEADER}\n");
    for (method, points) in curves {
        for (p, e) in points {
            s.push_str(&format!("{p},{e},{method}\n"));
        }
    }
    Ok(s)
}
