//! RGBA image model, PNG I/O, compositing, mask blending and RGB padding.

mod composite;
mod image;
mod io;
mod padding;
mod telea;

pub use composite::{blend_with_original, composite_over};
pub use image::{Background, InpaintMask, RgbImage, RgbaImage};
pub use io::{
    decode_png, encode_png, load_mask_png, load_png, mask_from_plane_bytes, save_mask_png, save_png,
};
pub use padding::{rgb_pad, PaddingStrategy, PaddingVariant};
pub use telea::{telea_inpaint, FillState, TELEA_RADIUS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("{channel} value {value} outside [0, 1]")]
    OutOfRange { channel: &'static str, value: f64 },
    #[error("buffer holds {got} values, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("degenerate inpainting mask: {0}")]
    DegenerateMask(&'static str),
    #[error("no source pixels to propagate")]
    NoSourcePixels,
    #[error("invalid padding parameters: {0}")]
    InvalidPadding(&'static str),
    #[error("unsupported PNG layout: {0}")]
    Unsupported(String),
    #[error("{0}")]
    Parse(String),
    #[error("PNG decode error: {0}")]
    Decode(#[from] ::png::DecodingError),
    #[error("PNG encode error: {0}")]
    Encode(#[from] ::png::EncodingError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}
