//! Image helpers: binary PPM (P6) I/O, aspect-preserving downscaling and pixel crops.

use crate::backbone::{ActivationTensor, Image};
use crate::binio::{read_file, write_file};
use crate::descriptor::BBox;
use crate::error::{Error, Result};
use std::path::Path;

/// Encodes a three-map `[0, 1]` image as 8-bit P6.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            for k in 0..3 {
                let v = img.get(x, y, k.min(img.maps() - 1));
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Image> {
    let bad = |d: &str| Error::format(path, d.to_string());
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PPM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("bad header"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("not a binary PPM (P6)"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 || w == 0 || h == 0 {
        return Err(bad("only non-empty 8-bit PPM supported"));
    }
    pos += 1;
    let body = bytes.get(pos..pos + w * h * 3).ok_or_else(|| bad("truncated pixel data"))?;
    let mut img = ActivationTensor::zeros(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            for k in 0..3 {
                img.set(x, y, k, body[(y * w + x) * 3 + k] as f32 / 255.0);
            }
        }
    }
    Ok(img)
}

pub fn save_ppm(path: &Path, img: &Image) -> Result<()> {
    write_file(path, &encode_ppm(img))
}

pub fn load_ppm(path: &Path) -> Result<Image> {
    decode_ppm(&read_file(path)?, path)
}

/// Downscales (bilinear) so the longer side equals `max_side`; images already
/// within the limit are returned unchanged.
pub fn resize_max_side(img: &Image, max_side: usize) -> Image {
    let (w, h) = (img.width(), img.height());
    let long = w.max(h);
    if long <= max_side || max_side == 0 {
        return img.clone();
    }
    let scale = max_side as f64 / long as f64;
    let nw = ((w as f64 * scale).round() as usize).max(1);
    let nh = ((h as f64 * scale).round() as usize).max(1);
    let mut out = ActivationTensor::zeros(nw, nh, img.maps());
    for k in 0..img.maps() {
        for y in 0..nh {
            let sy = ((y as f64 + 0.5) / scale - 0.5).clamp(0.0, (h - 1) as f64);
            let (y0, fy) = (sy.floor() as usize, sy - sy.floor());
            let y1 = (y0 + 1).min(h - 1);
            for x in 0..nw {
                let sx = ((x as f64 + 0.5) / scale - 0.5).clamp(0.0, (w - 1) as f64);
                let (x0, fx) = (sx.floor() as usize, sx - sx.floor());
                let x1 = (x0 + 1).min(w - 1);
                let v = |xx, yy| img.get(xx, yy, k) as f64;
                let top = v(x0, y0) * (1.0 - fx) + v(x1, y0) * fx;
                let bot = v(x0, y1) * (1.0 - fx) + v(x1, y1) * fx;
                out.set(x, y, k, (top * (1.0 - fy) + bot * fy) as f32);
            }
        }
    }
    out
}

/// Value subtracted from every `[0, 1]` pixel before the network sees it.
pub const PIXEL_MEAN: f32 = 0.5;

/// Network input for an image: downscaled to `max_side`, then centered.
pub fn prepare(img: &Image, max_side: usize) -> Image {
    let mut x = resize_max_side(img, max_side);
    for v in x.data_mut() {
        *v -= PIXEL_MEAN;
    }
    x
}

pub fn crop_pixels(img: &Image, bbox: &BBox) -> Result<Image> {
    bbox.validate(img.width(), img.height())?;
    img.window(bbox.x0, bbox.y0, bbox.x1, bbox.y1)
}
