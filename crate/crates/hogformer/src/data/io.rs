//! Image loading and saving: PNG (via the image crate) and binary PPM (P6).

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::io::Write;
use std::path::Path;

/// Round-half-up quantization of [0,1] to u8.
pub fn quantize_u8(v: f32) -> u8 {
    let c = v.clamp(0.0, 1.0);
    (c * 255.0 + 0.5).floor().min(255.0) as u8
}

/// Load an 8-bit RGB image (PNG or binary PPM; alpha dropped) into a (3,H,W)
/// tensor scaled to [0,1].
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    if bytes.is_empty() {
        return Err(Error::Decode(format!("{}: empty file", path.display())));
    }
    if bytes.starts_with(b"P6") {
        return decode_ppm(&bytes, path);
    }
    let img = image::load_from_memory(&bytes)
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[c * h * w + y * w + x] = px.0[c] as f32 / 255.0;
        }
    }
    Ok(Tensor::new(vec![3, h, w], data, false))
}

fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let err = |msg: &str| Error::Decode(format!("{}: {msg}", path.display()));
    let mut pos = 2usize; // past "P6"
    let mut fields = Vec::with_capacity(3);
    while fields.len() < 3 {
        // Skip whitespace and comments.
        while pos < bytes.len() {
            let b = bytes[pos];
            if b == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(err("malformed header"));
        }
        let v: usize = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| err("malformed header"))?
            .parse()
            .map_err(|_| err("malformed header"))?;
        fields.push(v);
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(err(&format!("unsupported maxval {maxval}, only 255")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err("missing header terminator"));
    }
    pos += 1;
    let need = 3 * w * h;
    if bytes.len() < pos + need {
        return Err(err(&format!(
            "truncated pixel data: need {need} bytes, have {}",
            bytes.len() - pos
        )));
    }
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let o = pos + 3 * (y * w + x);
            for c in 0..3 {
                data[c * h * w + y * w + x] = bytes[o + c] as f32 / 255.0;
            }
        }
    }
    Ok(Tensor::new(vec![3, h, w], data, false))
}

/// Save a (3,H,W) tensor, clamped to [0,1] and quantized round-half-up.
/// Format chosen by extension: `.ppm` writes binary P6, anything else PNG.
pub fn save_image(t: &Tensor<f32>, path: &Path) -> Result<()> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Input(format!("save_image: expected (3,H,W), got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let d = t.data();
    let is_ppm = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("ppm"))
        .unwrap_or(false);
    if is_ppm {
        let mut buf = format!("P6\n{w} {h}\n255\n").into_bytes();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    buf.push(quantize_u8(d[c * h * w + y * w + x]));
                }
            }
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&buf)?;
        return Ok(());
    }
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                quantize_u8(d[y * w + x]),
                quantize_u8(d[h * w + y * w + x]),
                quantize_u8(d[2 * h * w + y * w + x]),
            ];
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path)
        .map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))
}
