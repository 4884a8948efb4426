//! PGM/PPM (8-bit), PFM (32-bit float) and PNG (8-bit, export) files.
//!
//! 8-bit writers clamp to `[0, 255]` and round half away from zero. PFM is
//! written little-endian (scale `-1.0`) with rows bottom-to-top, so any image
//! whose samples are representable as `f32` round-trips bit-exactly.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::Image;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// Binary PGM (`P5`, 1 channel) or PPM (`P6`, 3 channels), maxval 255.
    Pnm,
    Pfm,
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("pgm") | Some("ppm") | Some("pnm") => Ok(ImageFormat::Pnm),
            Some("pfm") => Ok(ImageFormat::Pfm),
            Some("png") => Ok(ImageFormat::Png),
            _ => Err(Error::Format(format!("unknown image extension: {}", path.display()))),
        }
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_image(img, ImageFormat::from_path(path)?)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn encode_image(img: &Image, format: ImageFormat) -> Result<Vec<u8>> {
    match format {
        ImageFormat::Pnm => encode_pnm(img),
        ImageFormat::Pfm => encode_pfm(img),
        ImageFormat::Png => encode_png(img),
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Image> {
    match bytes {
        [b'P', b'5', ..] => decode_pnm(bytes, 1),
        [b'P', b'6', ..] => decode_pnm(bytes, 3),
        [b'P', b'f', ..] => decode_pfm(bytes, 1),
        [b'P', b'F', ..] => decode_pfm(bytes, 3),
        [0x89, b'P', b'N', b'G', ..] => decode_png(bytes),
        _ => Err(Error::Format("unknown magic bytes".into())),
    }
}

fn to_u8(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}

/// Splits `count` whitespace-separated header tokens after the magic,
/// skipping `#` comments. Returns the tokens and the offset just past the
/// single whitespace byte that terminates the header.
fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut pos = 2;
    let mut tokens = Vec::with_capacity(count);
    while tokens.len() < count {
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
            return Err(Error::Format("truncated header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if pos >= bytes.len() {
        return Err(Error::Format("truncated header".into()));
    }
    Ok((tokens, pos + 1))
}

fn parse_dim(tok: &str) -> Result<usize> {
    match tok.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::Format(format!("bad dimension {tok:?}"))),
    }
}

fn decode_pnm(bytes: &[u8], channels: usize) -> Result<Image> {
    let (tok, start) = header_tokens(bytes, 3)?;
    let (w, h) = (parse_dim(&tok[0])?, parse_dim(&tok[1])?);
    if tok[2] != "255" {
        return Err(Error::Format(format!("unsupported maxval {}", tok[2])));
    }
    let n = w * h * channels;
    let raster = bytes
        .get(start..start + n)
        .ok_or_else(|| Error::Format(format!("truncated raster: need {n} bytes")))?;
    let mut data = vec![0.0; n];
    for (i, &b) in raster.iter().enumerate() {
        let (pix, c) = (i / channels, i % channels);
        data[c * w * h + pix] = b as f64;
    }
    Image::new(h, w, channels, data)
}

fn encode_pnm(img: &Image) -> Result<Vec<u8>> {
    let (h, w, c) = img.shape();
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::Format(format!("PNM needs 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h * c);
    for pix in 0..w * h {
        for ch in 0..c {
            out.push(to_u8(img.data()[ch * w * h + pix]));
        }
    }
    Ok(out)
}

fn decode_pfm(bytes: &[u8], channels: usize) -> Result<Image> {
    let (tok, start) = header_tokens(bytes, 3)?;
    let (w, h) = (parse_dim(&tok[0])?, parse_dim(&tok[1])?);
    let scale: f64 = tok[2].parse().map_err(|_| Error::Format(format!("bad PFM scale {:?}", tok[2])))?;
    if scale == 0.0 {
        return Err(Error::Format("PFM scale must be nonzero".into()));
    }
    let little = scale < 0.0;
    let n = w * h * channels;
    let raster = bytes
        .get(start..start + 4 * n)
        .ok_or_else(|| Error::Format(format!("truncated raster: need {} bytes", 4 * n)))?;
    let mut data = vec![0.0; n];
    for (i, chunk) in raster.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (pix, c) = (i / channels, i % channels);
        let (row, col) = (h - 1 - pix / w, pix % w);
        data[(c * h + row) * w + col] = v as f64;
    }
    Image::new(h, w, channels, data)
}

fn encode_pfm(img: &Image) -> Result<Vec<u8>> {
    let (h, w, c) = img.shape();
    let magic = match c {
        1 => "Pf",
        3 => "PF",
        _ => return Err(Error::Format(format!("PFM needs 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * w * h * c);
    for row in (0..h).rev() {
        for col in 0..w {
            for ch in 0..c {
                out.extend_from_slice(&(img.get(ch, row, col) as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::Format(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Format(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (stride, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(Error::Format("indexed PNG not expanded".into())),
    };
    let mut data = vec![0.0; w * h * keep];
    for pix in 0..w * h {
        for c in 0..keep {
            data[c * w * h + pix] = buf[pix * stride + c] as f64;
        }
    }
    Image::new(h, w, keep, data)
}

fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let (h, w, c) = img.shape();
    let color = match c {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => return Err(Error::Format(format!("PNG export needs 1 or 3 channels, got {c}"))),
    };
    let mut raw = Vec::with_capacity(w * h * c);
    for pix in 0..w * h {
        for ch in 0..c {
            raw.push(to_u8(img.data()[ch * w * h + pix]));
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        writer.write_image_data(&raw).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pfm_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..3 * 5 * 7).map(|_| rng.random::<f32>() as f64 * 300.0 - 20.0).collect();
        // scale then cast back so every sample is an f32
        let data: Vec<f64> = data.iter().map(|&v| v as f32 as f64).collect();
        let img = Image::new(5, 7, 3, data).unwrap();
        let back = decode(&encode_pfm(&img).unwrap()).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert!(back.data().iter().zip(img.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn pgm_round_trip_of_integers() {
        let img = Image::from_fn(9, 4, |y, x| ((y * 31 + x * 7) % 256) as f64);
        assert_eq!(decode(&encode_pnm(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn eight_bit_clamps_and_rounds() {
        let img = Image::new(1, 4, 1, vec![255.7, -3.0, 2.5, 1.49]).unwrap();
        let back = decode(&encode_pnm(&img).unwrap()).unwrap();
        assert_eq!(back.data(), &[255.0, 0.0, 3.0, 1.0]);
        let back = decode(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back.data(), &[255.0, 0.0, 3.0, 1.0]);
    }

    #[test]
    fn rejects_unknown_magic_and_truncation() {
        assert!(matches!(decode(b"GIF89a"), Err(Error::Format(_))));
        let img = Image::filled(4, 4, 1, 9.0);
        let bytes = encode_pnm(&img).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let bytes = encode_pfm(&img).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        assert!(matches!(decode(b"P5\n4 4"), Err(Error::Format(_))));
    }

    #[test]
    fn pgm_header_comments() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        assert_eq!(decode(&bytes).unwrap().data(), &[7.0, 9.0]);
    }
}
