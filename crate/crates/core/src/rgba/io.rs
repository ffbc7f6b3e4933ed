use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use super::{ImageError, InpaintMask, RgbaImage};
use crate::edge::BinaryMask;

struct Decoded {
    width: usize,
    height: usize,
    channels: usize,
    /// Samples normalized to `[0, 1]`, interleaved.
    samples: Vec<f64>,
}

fn decode<R: std::io::BufRead + std::io::Seek>(reader: R) -> Result<Decoded, ImageError> {
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Unsupported("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf)?;
    let (color, depth) = reader.output_color_type();
    let channels = match color {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(ImageError::Unsupported("unexpanded palette".into())),
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let line = info.line_size;
    let mut samples = Vec::with_capacity(width * height * channels);
    for y in 0..height {
        let row = &buf[y * line..(y + 1) * line];
        match depth {
            BitDepth::Eight => samples.extend(row[..width * channels].iter().map(|&b| b as f64 / 255.0)),
            BitDepth::Sixteen => samples.extend(
                row[..2 * width * channels]
                    .chunks_exact(2)
                    .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0),
            ),
            other => return Err(ImageError::Unsupported(format!("bit depth {other:?}"))),
        }
    }
    Ok(Decoded { width, height, channels, samples })
}

fn to_rgba(d: Decoded) -> Result<RgbaImage, ImageError> {
    let n = d.width * d.height;
    let mut rgb = vec![0.0; 3 * n];
    let mut alpha = vec![1.0; n];
    for i in 0..n {
        let px = &d.samples[i * d.channels..(i + 1) * d.channels];
        let (color, a) = match d.channels {
            1 => ([px[0]; 3], 1.0),
            2 => ([px[0]; 3], px[1]),
            3 => ([px[0], px[1], px[2]], 1.0),
            _ => ([px[0], px[1], px[2]], px[3]),
        };
        for c in 0..3 {
            rgb[c * n + i] = color[c];
        }
        alpha[i] = a;
    }
    RgbaImage::new(d.width, d.height, rgb, alpha)
}

/// Decodes an 8- or 16-bit PNG. Images without alpha load as fully opaque.
pub fn decode_png(bytes: &[u8]) -> Result<RgbaImage, ImageError> {
    to_rgba(decode(Cursor::new(bytes))?)
}

pub fn load_png(path: impl AsRef<Path>) -> Result<RgbaImage, ImageError> {
    to_rgba(decode(BufReader::new(File::open(path)?))?)
}

fn write_png<W: Write>(w: W, width: usize, height: usize, color: ColorType, data: &[u8]) -> Result<(), ImageError> {
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(data)?;
    writer.finish()?;
    Ok(())
}

/// Encodes as 8-bit RGBA.
pub fn encode_png(img: &RgbaImage) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    write_png(&mut out, img.width(), img.height(), ColorType::Rgba, &img.to_rgba8())?;
    Ok(out)
}

pub fn save_png(img: &RgbaImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let bytes = encode_png(img)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

/// Thresholds the first channel of a decoded mask image: values above
/// 127/255 are masked.
pub fn mask_from_plane_bytes(bytes: &[u8]) -> Result<BinaryMask, ImageError> {
    let d = decode(Cursor::new(bytes))?;
    Ok(threshold_mask(&d))
}

fn threshold_mask(d: &Decoded) -> BinaryMask {
    let data = (0..d.width * d.height).map(|i| d.samples[i * d.channels] * 255.0 > 127.0 + 1e-9).collect();
    BinaryMask::from_vec(d.width, d.height, data).expect("dims match")
}

/// Loads a single-channel mask PNG (`> 127` means masked).
pub fn load_mask_png(path: impl AsRef<Path>) -> Result<InpaintMask, ImageError> {
    let d = decode(BufReader::new(File::open(path)?))?;
    InpaintMask::new(threshold_mask(&d))
}

pub fn save_mask_png(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let data: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let mut f = BufWriter::new(File::create(path)?);
    write_png(&mut f, mask.width(), mask.height(), ColorType::Grayscale, &data)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode_raw(width: u32, height: u32, color: ColorType, depth: BitDepth, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(data).unwrap();
        w.finish().unwrap();
        out
    }

    #[test]
    fn rgba8_payload_round_trips() {
        let payload: Vec<u8> = (0..5 * 3 * 4).map(|i| (i * 13 % 256) as u8).collect();
        let png = encode_raw(5, 3, ColorType::Rgba, BitDepth::Eight, &payload);
        let img = decode_png(&png).unwrap();
        assert_eq!(img.to_rgba8(), payload);
        let again = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(again, img);
    }

    #[test]
    fn rgb_without_alpha_is_opaque() {
        let png = encode_raw(2, 2, ColorType::Rgb, BitDepth::Eight, &[10; 12]);
        let img = decode_png(&png).unwrap();
        assert!(img.alpha().iter().all(|&a| a == 1.0));
    }

    #[test]
    fn sixteen_bit_max_is_one() {
        let data = [0xff, 0xff, 0x00, 0x00, 0x80, 0x00, 0xff, 0xff];
        let png = encode_raw(1, 1, ColorType::Rgba, BitDepth::Sixteen, &data);
        let img = decode_png(&png).unwrap();
        assert_eq!(img.pixel(0, 0)[0], 1.0);
        assert_eq!(img.pixel(0, 0)[1], 0.0);
        assert_eq!(img.pixel(0, 0)[3], 1.0);
    }

    #[test]
    fn mask_threshold_and_garbage_input() {
        let png = encode_raw(4, 1, ColorType::Grayscale, BitDepth::Eight, &[0, 127, 128, 255]);
        let m = mask_from_plane_bytes(&png).unwrap();
        assert_eq!(m.data(), &[false, false, true, true]);
        assert!(decode_png(b"not a png").is_err());
    }
}
