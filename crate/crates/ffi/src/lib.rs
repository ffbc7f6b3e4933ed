//! C interface to the alphafill toolkit.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns an
//! [`AfStatus`]; on failure a message is kept per thread and can be read
//! with [`af_last_error`]. Panics never unwind into C. Enum-valued arguments
//! are plain integers so that out-of-range values from C are reported
//! instead of being undefined behaviour.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use alphafill::adapter::{inpaint, AdapterModel, NoiseStrategy};
use alphafill::aeq::{compute_aeq, AeqClassifier};
use alphafill::edge::BinaryMask;
use alphafill::rgba::{
    composite_over, load_png, rgb_pad, save_png, Background, InpaintMask, PaddingStrategy, PaddingVariant, RgbaImage,
};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// An argument was out of range or malformed.
    InvalidArgument = 2,
    /// Reading or writing a file failed.
    Io = 3,
    /// The operation rejected its input (shape mismatch, untrained model, ...).
    Domain = 4,
    /// An internal panic was caught.
    Panic = 5,
}

/// Values of the `variant` argument of [`af_pad`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfPadding {
    ContentExtension = 0,
    Telea = 1,
    TeleaLocalized = 2,
    GreyBackground = 3,
}

/// Values of the `strategy` argument of [`af_inpaint`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfStrategy {
    PureNoise = 0,
    BlendedNoise = 1,
}

/// An RGBA image.
pub struct AfImage(RgbaImage);

/// A trained edge-quality classifier.
pub struct AfClassifier(AeqClassifier);

/// A trained inpainting adapter.
pub struct AfAdapter(AdapterModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(AfStatus, String);

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Failure(AfStatus::InvalidArgument, msg.into())
    }

    fn null(name: &str) -> Self {
        Failure(AfStatus::NullArgument, format!("{name} is NULL"))
    }
}

impl<E: std::error::Error + 'static> From<E> for Failure {
    fn from(e: E) -> Self {
        let mut src: Option<&(dyn std::error::Error + 'static)> = Some(&e);
        while let Some(s) = src {
            if s.is::<std::io::Error>() {
                return Failure(AfStatus::Io, e.to_string());
            }
            src = s.source();
        }
        Failure(AfStatus::Domain, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            AfStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    str_arg(p, name).map(PathBuf::from)
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::invalid(format!("{name} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(name))
}

unsafe fn out_arg<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn mask_arg(img: &RgbaImage, mask: *const u8, len: usize) -> Result<InpaintMask, Failure> {
    if mask.is_null() {
        return Err(Failure::null("mask"));
    }
    if len != img.len() {
        return Err(Failure::invalid(format!("mask has {len} bytes, image has {} pixels", img.len())));
    }
    let bits = std::slice::from_raw_parts(mask, len).iter().map(|&b| b != 0).collect();
    Ok(InpaintMask::new(BinaryMask::from_vec(img.width(), img.height(), bits)?)?)
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn af_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn af_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads an 8- or 16-bit PNG.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn af_image_load(path: *const c_char, out: *mut *mut AfImage) -> AfStatus {
    guard(|| {
        let img = load_png(path_arg(path, "path")?)?;
        out_arg(out, AfImage(img))
    })
}

/// Builds an image from interleaved 8-bit RGBA bytes (`4 * width * height`).
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn af_image_from_rgba8(
    width: usize,
    height: usize,
    data: *const u8,
    len: usize,
    out: *mut *mut AfImage,
) -> AfStatus {
    guard(|| {
        if data.is_null() {
            return Err(Failure::null("data"));
        }
        if width.checked_mul(height).and_then(|n| n.checked_mul(4)) != Some(len) {
            return Err(Failure::invalid(format!("{len} bytes for a {width}x{height} image")));
        }
        let img = RgbaImage::from_rgba8(width, height, std::slice::from_raw_parts(data, len))?;
        out_arg(out, AfImage(img))
    })
}

/// Writes the image as an 8-bit RGBA PNG.
///
/// # Safety
/// `img` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn af_image_save(img: *const AfImage, path: *const c_char) -> AfStatus {
    guard(|| Ok(save_png(&handle(img, "img")?.0, path_arg(path, "path")?)?))
}

/// Width in pixels, or 0 for NULL.
///
/// # Safety
/// `img` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn af_image_width(img: *const AfImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.width())
}

/// Height in pixels, or 0 for NULL.
///
/// # Safety
/// `img` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn af_image_height(img: *const AfImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.height())
}

/// Copies the image as interleaved 8-bit RGBA into `buf`, which must hold
/// exactly `4 * width * height` bytes.
///
/// # Safety
/// `img` must be a live handle and `buf` point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn af_image_to_rgba8(img: *const AfImage, buf: *mut u8, len: usize) -> AfStatus {
    guard(|| {
        let bytes = handle(img, "img")?.0.to_rgba8();
        if buf.is_null() {
            return Err(Failure::null("buf"));
        }
        if bytes.len() != len {
            return Err(Failure::invalid(format!("buffer holds {len} bytes, image needs {}", bytes.len())));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf, len);
        Ok(())
    })
}

/// # Safety
/// `img` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn af_image_free(img: *mut AfImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Composites over an opaque background; the result is opaque.
///
/// # Safety
/// `img` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn af_composite_over(img: *const AfImage, r: f64, g: f64, b: f64, out: *mut *mut AfImage) -> AfStatus {
    guard(|| {
        let bg = Background::new([r, g, b]).map_err(|e| Failure::invalid(e.to_string()))?;
        out_arg(out, AfImage(composite_over(&handle(img, "img")?.0, bg).to_rgba()))
    })
}

/// Replaces the RGB of pixels with alpha below `alpha_threshold`.
///
/// # Safety
/// `img` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn af_pad(
    img: *const AfImage,
    variant: u32,
    alpha_threshold: f64,
    expansion: usize,
    out: *mut *mut AfImage,
) -> AfStatus {
    guard(|| {
        if !(0.0..=1.0).contains(&alpha_threshold) {
            return Err(Failure::invalid(format!("alpha threshold {alpha_threshold} outside [0, 1]")));
        }
        let variant = match variant {
            v if v == AfPadding::ContentExtension as u32 => PaddingVariant::ContentExtension,
            v if v == AfPadding::Telea as u32 => PaddingVariant::Telea,
            v if v == AfPadding::TeleaLocalized as u32 => PaddingVariant::TeleaLocalized,
            v if v == AfPadding::GreyBackground as u32 => PaddingVariant::GreyBackground,
            v => return Err(Failure::invalid(format!("unknown padding variant {v}"))),
        };
        let strategy = PaddingStrategy { variant, alpha_threshold, expansion };
        out_arg(out, AfImage(rgb_pad(&handle(img, "img")?.0, &strategy)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn af_classifier_load(path: *const c_char, out: *mut *mut AfClassifier) -> AfStatus {
    guard(|| out_arg(out, AfClassifier(AeqClassifier::load(path_arg(path, "path")?)?)))
}

/// # Safety
/// `clf` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn af_classifier_free(clf: *mut AfClassifier) {
    if !clf.is_null() {
        drop(Box::from_raw(clf));
    }
}

/// Alpha edge quality of `img` in `[0, 1]`. `mask` holds one byte per pixel
/// (nonzero = inpainted) or is NULL to score the whole image.
///
/// # Safety
/// Handles must be live, `mask` NULL or `mask_len` readable bytes, and
/// `score` writable.
#[no_mangle]
pub unsafe extern "C" fn af_aeq_score(
    img: *const AfImage,
    clf: *const AfClassifier,
    mask: *const u8,
    mask_len: usize,
    score: *mut f64,
) -> AfStatus {
    guard(|| {
        let img = &handle(img, "img")?.0;
        let clf = &handle(clf, "clf")?.0;
        let mask = if mask.is_null() { None } else { Some(mask_arg(img, mask, mask_len)?) };
        if score.is_null() {
            return Err(Failure::null("score"));
        }
        *score = compute_aeq(img, mask.as_ref(), clf)?.score;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn af_adapter_load(path: *const c_char, out: *mut *mut AfAdapter) -> AfStatus {
    guard(|| out_arg(out, AfAdapter(AdapterModel::load(path_arg(path, "path")?)?)))
}

/// # Safety
/// `model` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn af_adapter_free(model: *mut AfAdapter) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Inpaints `img` inside `mask` (one byte per pixel, nonzero = inpaint).
/// `strength` is used by the blended strategy only and must lie in `[0, 1]`.
///
/// # Safety
/// Handles must be live, `mask` point to `mask_len` bytes, `prompt` be a
/// NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn af_inpaint(
    model: *const AfAdapter,
    img: *const AfImage,
    mask: *const u8,
    mask_len: usize,
    prompt: *const c_char,
    strategy: u32,
    strength: f64,
    steps: usize,
    seed: u64,
    out: *mut *mut AfImage,
) -> AfStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let img = &handle(img, "img")?.0;
        let mask = mask_arg(img, mask, mask_len)?;
        let prompt = str_arg(prompt, "prompt")?;
        let strategy = match strategy {
            s if s == AfStrategy::PureNoise as u32 => NoiseStrategy::PureNoise,
            s if s == AfStrategy::BlendedNoise as u32 => {
                if !(0.0..=1.0).contains(&strength) {
                    return Err(Failure::invalid(format!("strength {strength} outside [0, 1]")));
                }
                NoiseStrategy::BlendedNoise(strength)
            }
            s => return Err(Failure::invalid(format!("unknown strategy {s}"))),
        };
        out_arg(out, AfImage(inpaint(model, img, &mask, prompt, strategy, steps, seed)?))
    })
}
