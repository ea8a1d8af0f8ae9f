//! 8-bit RGB PNG and raw `f32` image dumps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use viewsplat_core::{Real, Tensor};

use crate::error::{io_err, Error, Result};

/// `[0, 1]` to 8 bits, rounding to nearest.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an `H × W × 3` image as 8-bit RGB PNG.
pub fn write_png<T: Real>(path: &Path, image: &Tensor<T>) -> Result<()> {
    let &[h, w, 3] = image.shape() else {
        return Err(Error::Invalid(format!("expected an H×W×3 image, got {:?}", image.shape())));
    };
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = image.data().iter().map(|v| quantize(v.f64())).collect();
    let png_err = |e: png::EncodingError| Error::Image {
        path: path.into(),
        detail: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&bytes).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Reads an 8-bit RGB or RGBA PNG into `H × W × 3` values in `[0, 1]`.
pub fn read_png<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let file = File::open(path).map_err(io_err(path))?;
    let img_err = |detail: String| Error::Image { path: path.into(), detail };
    let mut reader = png::Decoder::new(file).read_info().map_err(|e| img_err(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| img_err(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(img_err(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(img_err(format!("unsupported color type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let data = buf[..info.buffer_size()]
        .chunks(channels)
        .flat_map(|px| px[..3].iter().map(|&b| T::of(b as f64 / 255.0)))
        .collect();
    Ok(Tensor::new([h, w, 3], data)?)
}

/// Raw little-endian `f32` values in `H × W × 3` order, no header.
pub fn write_raw_f32<T: Real>(path: &Path, image: &Tensor<T>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for v in image.data() {
        out.write_all(&(v.f64() as f32).to_le_bytes()).map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_raw_f32(path: &Path, height: usize, width: usize) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let expected = height * width * 3 * 4;
    if bytes.len() != expected {
        return Err(Error::Format {
            path: path.into(),
            offset: bytes.len().min(expected) as u64,
            detail: format!("expected {expected} bytes for {height}×{width}×3 f32, found {}", bytes.len()),
        });
    }
    let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    Ok(Tensor::new([height, width, 3], data)?)
}
