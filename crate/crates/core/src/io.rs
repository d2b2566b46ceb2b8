//! Raster input (binary PGM, grayscale PNG) and atomic file output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{normalize, GrayImage};

/// Raw samples of a single-channel raster, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRaster {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a PGM (P5, 8 or 16 bit) or grayscale PNG by content.
pub fn read_raster(path: &Path) -> Result<RawRaster> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.starts_with(b"P5") {
        parse_pgm(&bytes).map_err(|r| format_err(path, r))
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes).map_err(|r| format_err(path, r))
    } else {
        Err(format_err(path, "expected binary PGM (P5) or PNG"))
    }
}

/// Reads a raster and normalizes it by its own intensity range.
pub fn read_image(path: &Path) -> Result<GrayImage> {
    let raw = read_raster(path)?;
    normalize(raw.width, raw.height, &raw.values)
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> std::result::Result<&'a str, String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err("truncated PGM header".into());
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| "non-ASCII PGM header".to_string())
}

pub fn parse_pgm(bytes: &[u8]) -> std::result::Result<RawRaster, String> {
    let mut pos = 0;
    if header_token(bytes, &mut pos)? != "P5" {
        return Err("not a binary PGM".into());
    }
    let mut number = |name: &str| -> std::result::Result<usize, String> {
        header_token(bytes, &mut pos)?
            .parse::<usize>()
            .map_err(|_| format!("bad PGM {name}"))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 {
        return Err("PGM has zero area".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("PGM maxval {maxval} out of range"));
    }
    // Exactly one whitespace byte separates the header from the samples.
    pos += 1;
    let n = width * height;
    let wide = maxval > 255;
    let need = if wide { 2 * n } else { n };
    let data = bytes.get(pos..pos + need).ok_or("truncated PGM data")?;
    let values = if wide {
        data.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    } else {
        data.iter().map(|&b| b as f64).collect()
    };
    Ok(RawRaster { width, height, values })
}

fn decode_png(bytes: &[u8]) -> std::result::Result<RawRaster, String> {
    use image::DynamicImage;
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| e.to_string())?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let values = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLumaA8(b) => b.into_raw().chunks_exact(2).map(|c| f64::from(c[0])).collect(),
        DynamicImage::ImageLumaA16(b) => b.into_raw().chunks_exact(2).map(|c| f64::from(c[0])).collect(),
        other => return Err(format!("PNG is not grayscale ({:?})", other.color())),
    };
    Ok(RawRaster { width, height, values })
}

pub fn encode_pgm8(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    assert_eq!(data.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

pub fn encode_pgm16(width: usize, height: usize, data: &[u16]) -> Vec<u8> {
    assert_eq!(data.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for v in data {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

/// Writes `bytes` to a sibling temp file, syncs it, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| io_err(path, std::io::Error::new(std::io::ErrorKind::InvalidInput, "no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(io_err(path, e));
    }
    Ok(())
}

/// Binary mask as an 8-bit PGM: 255 inside, 0 outside.
pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    if mask.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "mask of {} pixels for {width}x{height}",
            mask.len()
        )));
    }
    let data: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_atomic(path, &encode_pgm8(width, height, &data))
}

/// Image as a 16-bit PGM.
pub fn write_image(path: &Path, image: &GrayImage) -> Result<()> {
    let data: Vec<u16> = image.data().iter().map(|&v| (v * 65535.0).round() as u16).collect();
    write_atomic(path, &encode_pgm16(image.width(), image.height(), &data))
}
