//! PNG (8/16-bit) and ASCII PPM (P3) reading and writing.
//!
//! Images are held as `(1, 3, h, w)` tensors in unit range. Grayscale inputs
//! are replicated to three channels and alpha is dropped.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

fn quantize(v: f64, max: f64) -> u16 {
    (v.clamp(0.0, 1.0) * max).round() as u16
}

pub fn read_png<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let file = File::open(path)?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let img_err = |e: png::DecodingError| Error::Image(format!("{}: {e}", path.display()));
    let mut reader = decoder.read_info().map_err(img_err)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Image(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(img_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let sixteen = info.bit_depth == png::BitDepth::Sixteen;
    let max = if sixteen { 65535.0 } else { 255.0 };
    let sample = |i: usize| -> f64 {
        if sixteen {
            u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as f64 / max
        } else {
            buf[i] as f64 / max
        }
    };
    let shape = Shape::new(1, 3, h, w)?;
    Ok(Tensor::from_fn(shape, |_, c, y, x| {
        let px = (y * w + x) * channels;
        let ch = if channels >= 3 { c } else { 0 };
        T::of(sample(px + ch))
    }))
}

pub fn write_png<T: Real>(path: &Path, img: &Tensor<T>, depth: BitDepth) -> Result<()> {
    let s = check_rgb(img)?;
    let file = File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), s.w as u32, s.h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(match depth {
        BitDepth::Eight => png::BitDepth::Eight,
        BitDepth::Sixteen => png::BitDepth::Sixteen,
    });
    let img_err = |e: png::EncodingError| Error::Image(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(img_err)?;
    let mut data = Vec::with_capacity(s.h * s.w * 3 * 2);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                let q = quantize(img.get(0, c, y, x).as_f64(), depth.max());
                match depth {
                    BitDepth::Eight => data.push(q as u8),
                    BitDepth::Sixteen => data.extend_from_slice(&q.to_be_bytes()),
                }
            }
        }
    }
    writer.write_image_data(&data).map_err(img_err)?;
    writer.finish().map_err(img_err)
}

fn check_rgb<T: Real>(img: &Tensor<T>) -> Result<Shape> {
    let s = img.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::Image(format!("expected a single RGB image (1, 3, h, w), got {s}")));
    }
    Ok(s)
}

pub fn read_ppm<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let text = std::fs::read_to_string(path)?;
    let bad = |what: &str| Error::Image(format!("{}: {what}", path.display()));
    let mut tokens = text.lines().map(|l| l.split('#').next().unwrap_or("")).flat_map(str::split_whitespace);
    if tokens.next() != Some("P3") {
        return Err(bad("not an ASCII PPM (P3)"));
    }
    let mut num = |what: &str| -> Result<usize> { tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad(what)) };
    let (w, h, max) = (num("missing width")?, num("missing height")?, num("missing maxval")?);
    if max == 0 || max > 65535 {
        return Err(bad("maxval out of range"));
    }
    let mut values = Vec::with_capacity(w * h * 3);
    for _ in 0..w * h * 3 {
        let v = num("truncated pixel data")?;
        if v > max {
            return Err(bad("sample exceeds maxval"));
        }
        values.push(v as f64 / max as f64);
    }
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w)?, |_, c, y, x| T::of(values[(y * w + x) * 3 + c])))
}

pub fn write_ppm<T: Real>(path: &Path, img: &Tensor<T>, depth: BitDepth) -> Result<()> {
    let s = check_rgb(img)?;
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "P3\n{} {}\n{}", s.w, s.h, depth.max())?;
    for y in 0..s.h {
        let row: Vec<String> =
            (0..s.w * 3).map(|i| quantize(img.get(0, i % 3, y, i / 3).as_f64(), depth.max()).to_string()).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads by extension: `.ppm` as PPM, anything else as PNG.
pub fn read_image<T: Real>(path: &Path) -> Result<Tensor<T>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("ppm") => read_ppm(path),
        _ => read_png(path),
    }
}

/// Writes by extension; PNG output is 8-bit.
pub fn write_image<T: Real>(path: &Path, img: &Tensor<T>) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("ppm") => write_ppm(path, img, BitDepth::Eight),
        _ => write_png(path, img, BitDepth::Eight),
    }
}
