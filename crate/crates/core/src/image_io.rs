//! Image files: binary PPM (P6) and PGM (P5) with maxval 255, plus PNG
//! decoding. Pixels map to `[0, 1]` as `byte / 255`.

use std::path::Path;

use crate::error::{Result, RstError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Decoded 8-bit image with interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image8 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image8 {
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (c, hw) = (self.channels, self.width * self.height);
        Tensor::from_fn(&[c, self.height, self.width], |k| {
            T::from_f64(self.data[(k % hw) * c + k / hw] as f64 / 255.0)
        })
    }

    /// Clamps to `[0, 1]` and rounds half up to 8 bits.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = t.chw("image")?;
        let hw = h * w;
        let data = (0..c * hw)
            .map(|k| quantize(t.data()[(k % c) * hw + k / c].as_f64()))
            .collect();
        Ok(Self {
            width: w,
            height: h,
            channels: c,
            data,
        })
    }
}

pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn header_fields<'a>(bytes: &'a [u8], path: &Path, count: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let mut fields = Vec::with_capacity(count);
    let mut i = 2;
    while fields.len() < count {
        match bytes.get(i) {
            None => return Err(RstError::format(path, "truncated header")),
            Some(b'#') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => i += 1,
            Some(b) if b.is_ascii_digit() => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let v = std::str::from_utf8(&bytes[start..i])
                    .unwrap()
                    .parse()
                    .map_err(|_| RstError::format(path, "header number out of range"))?;
                fields.push(v);
            }
            Some(_) => return Err(RstError::format(path, "malformed header")),
        }
    }
    match bytes.get(i) {
        Some(b) if b.is_ascii_whitespace() => Ok((fields, &bytes[i + 1..])),
        _ => Err(RstError::format(path, "missing whitespace after header")),
    }
}

/// Parses P5/P6 with maxval 255.
pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Image8> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(RstError::format(path, "not a binary PPM/PGM file")),
    };
    let (f, payload) = header_fields(bytes, path, 3)?;
    let (width, height, maxval) = (f[0], f[1], f[2]);
    if maxval != 255 {
        return Err(RstError::format(path, format!("maxval {maxval} unsupported, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(RstError::format(path, "zero-sized image"));
    }
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| RstError::format(path, "image dimensions overflow"))?;
    if payload.len() < n {
        return Err(RstError::format(path, format!("expected {n} pixel bytes, found {}", payload.len())));
    }
    Ok(Image8 {
        width,
        height,
        channels,
        data: payload[..n].to_vec(),
    })
}

/// Canonical header `P6\n{w} {h}\n255\n` (or P5 for one channel).
pub fn encode_pnm(img: &Image8) -> Result<Vec<u8>> {
    let magic = match img.channels {
        3 => "P6",
        1 => "P5",
        c => return Err(RstError::invalid("encode_pnm", format!("{c} channels"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    Ok(out)
}

pub fn decode_png(bytes: &[u8], path: &Path) -> Result<Image8> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| RstError::format(path, e.to_string()))?
        .to_rgb8();
    Ok(Image8 {
        width: img.width() as usize,
        height: img.height() as usize,
        channels: 3,
        data: img.into_raw(),
    })
}

pub fn encode_png(img: &Image8) -> Result<Vec<u8>> {
    let color = match img.channels {
        3 => image::ExtendedColorType::Rgb8,
        1 => image::ExtendedColorType::L8,
        c => return Err(RstError::invalid("encode_png", format!("{c} channels"))),
    };
    let mut out = Vec::new();
    image::ImageEncoder::write_image(
        image::codecs::png::PngEncoder::new(&mut out),
        &img.data,
        img.width as u32,
        img.height as u32,
        color,
    )
    .map_err(|e| RstError::invalid("encode_png", e.to_string()))?;
    Ok(out)
}

/// Reads a P6/P5/PNG file, chosen by content.
pub fn read_image(path: &Path) -> Result<Image8> {
    let bytes = std::fs::read(path).map_err(|e| RstError::io(path, e))?;
    if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(&bytes, path)
    } else {
        decode_pnm(&bytes, path)
    }
}

/// Writes PNG for a `.png` extension, PPM/PGM otherwise.
pub fn write_image(path: &Path, img: &Image8) -> Result<()> {
    let png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if png { encode_png(img)? } else { encode_pnm(img)? };
    std::fs::write(path, bytes).map_err(|e| RstError::io(path, e))
}

pub fn load_rgb<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = read_image(path)?;
    if img.channels != 3 {
        return Err(RstError::format(path, "expected a colour image"));
    }
    Ok(img.to_tensor())
}

pub fn save_rgb<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    write_image(path, &Image8::from_tensor(t)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn red_pixel_decodes() {
        let img = decode_pnm(b"P6\n1 1\n255\n\xff\x00\x00", Path::new("red.ppm")).unwrap();
        let t = img.to_tensor::<f32>();
        assert_eq!(t.shape(), &[3, 1, 1]);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn comments_and_whitespace() {
        let img = decode_pnm(b"P6 # c\n 2\t1 #x\n255 \x01\x02\x03\x04\x05\x06", Path::new("a")).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.data, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn bad_headers_rejected() {
        for bad in [&b"P3\n1 1\n255\n"[..], b"P6\n1 1\n65535\n\0\0\0\0\0\0", b"P6\n2 2\n255\n\0", b"P6\n1"] {
            assert!(decode_pnm(bad, Path::new("bad")).is_err());
        }
    }

    #[test]
    fn quantization_rounds_half_up_and_clamps() {
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.7), 255);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
        for b in 0..=255u8 {
            assert_eq!(quantize((b as f32 / 255.0) as f64), b);
        }
    }

    #[test]
    fn png_round_trip() {
        let img = Image8 {
            width: 3,
            height: 2,
            channels: 3,
            data: (0..18).map(|v| v * 13).collect(),
        };
        let back = decode_png(&encode_png(&img).unwrap(), Path::new("x.png")).unwrap();
        assert_eq!(back, img);
    }
}
