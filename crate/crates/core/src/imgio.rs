//! 8-bit image representation, PGM/PNG I/O and synthetic fixtures.
//!
//! Everything downstream works on [`PixelImage`]: row-major `u8` samples with
//! one (gray) or three (RGB) interleaved channels. PGM (`P5`, maxval 255) is
//! read and written by hand so golden files stay byte-exact; PNG goes through
//! the `image` crate.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Largest sample count accepted from a file header.
const MAX_SAMPLES: usize = 1 << 30;

#[derive(Clone, PartialEq, Eq)]
pub struct PixelImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl fmt::Debug for PixelImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PixelImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl PixelImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!("channels must be 1 or 3, got {channels}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("zero-sized image".into()));
        }
        let len = sample_count(width, height, channels)?;
        if data.len() != len {
            return Err(Error::InvalidImage(format!(
                "expected {len} samples, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, 1, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of pixel locations (not samples).
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn is_gray(&self) -> bool {
        self.channels == 1
    }

    /// Sample at column `x`, row `y`, channel `c`.
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub(crate) fn ensure_same_dims(&self, other: &PixelImage) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }

    /// Extract one channel as a float plane.
    pub(crate) fn channel_plane(&self, c: usize) -> Plane {
        let data = self
            .data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .map(|&v| f64::from(v))
            .collect();
        Plane::new(self.width, self.height, data)
    }

    /// Gray image as a float plane; panics on RGB (callers convert first).
    pub(crate) fn plane(&self) -> Plane {
        assert_eq!(self.channels, 1, "plane() requires a grayscale image");
        self.channel_plane(0)
    }

    /// Reassemble an image from per-channel planes, rounding and clamping.
    pub(crate) fn from_planes(planes: &[Plane]) -> Result<Self> {
        let (w, h) = (planes[0].width, planes[0].height);
        let ch = planes.len();
        let mut data = vec![0u8; w * h * ch];
        for (c, plane) in planes.iter().enumerate() {
            for (i, &v) in plane.data.iter().enumerate() {
                data[i * ch + c] = quantize(v);
            }
        }
        Self::new(w, h, ch, data)
    }
}

/// Round to nearest and clamp into `[0, 255]`.
pub(crate) fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn sample_count(width: usize, height: usize, channels: usize) -> Result<usize> {
    width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .filter(|&n| n <= MAX_SAMPLES)
        .ok_or(Error::DimensionOverflow {
            width,
            height,
            channels,
        })
}

/// Row-major `f64` plane used by every numeric stage.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height])
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Identifies a source image: a human name plus a digest of its pixels.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentId {
    pub name: String,
    pub digest: String,
}

impl ContentId {
    pub fn new(name: impl Into<String>, image: &PixelImage) -> Self {
        Self {
            name: name.into(),
            digest: pixel_digest(image),
        }
    }
}

/// SHA-256 over dimensions and samples, hex encoded.
pub fn pixel_digest(image: &PixelImage) -> String {
    let mut hasher = Sha256::new();
    for v in [image.width, image.height, image.channels] {
        hasher.update((v as u64).to_le_bytes());
    }
    hasher.update(&image.data);
    hex::encode(hasher.finalize())
}

/// Load a PGM (`P5`, maxval 255) or 8-bit PNG (gray or RGB).
pub fn load_image(path: impl AsRef<Path>) -> Result<PixelImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes).map_err(|e| match e {
            Error::UnreadableFile { reason, .. } => Error::UnreadableFile {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes, path)
    } else {
        Err(Error::UnsupportedFormat(format!(
            "{}: not a binary PGM or PNG",
            path.display()
        )))
    }
}

fn unreadable(reason: impl Into<String>) -> Error {
    Error::UnreadableFile {
        path: Default::default(),
        reason: reason.into(),
    }
}

fn overflow() -> Error {
    Error::DimensionOverflow {
        width: usize::MAX,
        height: usize::MAX,
        channels: 1,
    }
}

/// Decode an 8-bit binary PGM from memory. Maxvals below 255 are rescaled.
pub fn decode_pgm(bytes: &[u8]) -> Result<PixelImage> {
    use image::{DynamicImage, ImageError, ImageFormat};
    if !bytes.starts_with(b"P5") {
        return Err(Error::UnsupportedFormat("missing P5 magic".into()));
    }
    let decoded = image::load_from_memory_with_format(bytes, ImageFormat::Pnm).map_err(|e| match e {
        ImageError::Limits(_) => overflow(),
        e if e.to_string().to_ascii_lowercase().contains("overflow") => overflow(),
        e => unreadable(e.to_string()),
    })?;
    match decoded {
        DynamicImage::ImageLuma8(img) => {
            let (w, h) = img.dimensions();
            PixelImage::gray(w as usize, h as usize, img.into_raw())
        }
        other => Err(Error::UnsupportedFormat(format!(
            "PGM sample type {:?}: only 8-bit is supported",
            other.color()
        ))),
    }
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<PixelImage> {
    use image::{DynamicImage, ImageFormat};
    let decoded = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    match decoded {
        DynamicImage::ImageLuma8(img) => {
            let (w, h) = img.dimensions();
            PixelImage::new(w as usize, h as usize, 1, img.into_raw())
        }
        DynamicImage::ImageRgb8(img) => {
            let (w, h) = img.dimensions();
            PixelImage::new(w as usize, h as usize, 3, img.into_raw())
        }
        other => Err(Error::UnsupportedFormat(format!(
            "{}: PNG color type {:?} (only 8-bit gray and RGB)",
            path.display(),
            other.color()
        ))),
    }
}

/// Encode a grayscale image as binary PGM.
pub fn encode_pgm(image: &PixelImage) -> Result<Vec<u8>> {
    use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
    use image::{ExtendedColorType, ImageEncoder};
    if !image.is_gray() {
        return Err(Error::UnsupportedFormat("PGM requires a grayscale image".into()));
    }
    let mut out = Vec::with_capacity(image.data.len() + 20);
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(
            &image.data,
            image.width as u32,
            image.height as u32,
            ExtendedColorType::L8,
        )
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(out)
}

pub fn save_pgm(image: &PixelImage, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pgm(image)?)?;
    Ok(())
}

pub fn save_png(image: &PixelImage, path: impl AsRef<Path>) -> Result<()> {
    let color = if image.is_gray() {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer_with_format(
        path.as_ref(),
        &image.data,
        image.width as u32,
        image.height as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// Save as PGM or PNG depending on the file extension.
pub fn save_image(image: &PixelImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => save_pgm(image, path),
        Some("png") => save_png(image, path),
        other => Err(Error::UnsupportedFormat(format!("cannot write extension {other:?}"))),
    }
}

/// BT.709 luma; identity on grayscale input.
pub fn to_grayscale(image: &PixelImage) -> PixelImage {
    if image.is_gray() {
        return image.clone();
    }
    let data = image
        .data
        .chunks_exact(3)
        .map(|px| {
            let y = 0.2126 * f64::from(px[0]) + 0.7152 * f64::from(px[1]) + 0.0722 * f64::from(px[2]);
            quantize(y)
        })
        .collect();
    PixelImage {
        width: image.width,
        height: image.height,
        channels: 1,
        data,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixtureKind {
    Flat,
    Gradient,
    Checkerboard,
    NaturalProxy,
}

impl FixtureKind {
    pub fn name(self) -> &'static str {
        match self {
            FixtureKind::Flat => "flat",
            FixtureKind::Gradient => "gradient",
            FixtureKind::Checkerboard => "checkerboard",
            FixtureKind::NaturalProxy => "natural-proxy",
        }
    }
}

impl FromStr for FixtureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(FixtureKind::Flat),
            "gradient" => Ok(FixtureKind::Gradient),
            "checkerboard" => Ok(FixtureKind::Checkerboard),
            "natural-proxy" | "natural" => Ok(FixtureKind::NaturalProxy),
            other => Err(Error::UnknownFixture(other.to_string())),
        }
    }
}

pub const CHECKER_TILE: usize = 8;

/// Deterministic synthetic test image.
///
/// `natural-proxy` sums bilinearly interpolated random lattices at dyadic cell
/// sizes 2..=min(w,h)/2 with amplitude proportional to cell size, which gives
/// an approximately 1/f amplitude spectrum, then rescales to codes 16..=240.
/// Only additions and multiplications are involved, so the output is
/// bit-identical on every platform for a given seed.
pub fn make_fixture(kind: FixtureKind, width: usize, height: usize, seed: u64) -> Result<PixelImage> {
    if width < 32 || height < 32 {
        return Err(Error::ImageTooSmall(format!(
            "fixtures need at least 32x32, got {width}x{height}"
        )));
    }
    let n = width * height;
    let data = match kind {
        FixtureKind::Flat => vec![128u8; n],
        FixtureKind::Gradient => (0..n)
            .map(|i| {
                let x = i % width;
                ((255 * x + (width - 1) / 2) / (width - 1)) as u8
            })
            .collect(),
        FixtureKind::Checkerboard => (0..n)
            .map(|i| {
                let (x, y) = (i % width, i / width);
                if (x / CHECKER_TILE + y / CHECKER_TILE).is_multiple_of(2) {
                    64
                } else {
                    192
                }
            })
            .collect(),
        FixtureKind::NaturalProxy => natural_proxy(width, height, seed),
    };
    PixelImage::gray(width, height, data)
}

fn natural_proxy(width: usize, height: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0f64; width * height];
    let mut cell = 2usize;
    while cell <= width.min(height) / 2 {
        let gw = width / cell + 2;
        let gh = height / cell + 2;
        let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(-1.0..1.0)).collect();
        let amplitude = cell as f64;
        let inv = 1.0 / cell as f64;
        for y in 0..height {
            let gy = y / cell;
            let ty = (y % cell) as f64 * inv;
            for x in 0..width {
                let gx = x / cell;
                let tx = (x % cell) as f64 * inv;
                let v00 = lattice[gy * gw + gx];
                let v10 = lattice[gy * gw + gx + 1];
                let v01 = lattice[(gy + 1) * gw + gx];
                let v11 = lattice[(gy + 1) * gw + gx + 1];
                let top = v00 + (v10 - v00) * tx;
                let bottom = v01 + (v11 - v01) * tx;
                acc[y * width + x] += amplitude * (top + (bottom - top) * ty);
            }
        }
        cell *= 2;
    }
    let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    acc.iter().map(|&v| quantize(16.0 + 224.0 * (v - lo) / span)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn black_pgm_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("black.pgm");
        let mut bytes = b"P5\n4 4\n255\n".to_vec();
        bytes.extend([0u8; 16]);
        fs::write(&path, bytes).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.dims(), (4, 4, 1));
        assert!(img.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn hand_written_pgm_keeps_row_major_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ramp.pgm");
        fs::write(&path, b"P5\n# comment line\n2 2\n255\n\x00\x55\xaa\xff").unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.data(), &[0, 85, 170, 255]);
        assert_eq!(img.get(1, 0, 0), 85);
        assert_eq!(img.get(0, 1, 0), 170);
    }

    #[test]
    fn truncated_pgm_is_unreadable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.pgm");
        fs::write(&path, b"P5\n4 4\n255\n\x00\x00\x00").unwrap();
        let err = load_image(&path).unwrap_err();
        assert!(matches!(err, Error::UnreadableFile { .. }), "{err}");
        assert!(err.to_string().starts_with("unreadable file"));
    }

    #[test]
    fn sixteen_bit_pgm_is_rejected() {
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend([0u8, 1]);
        assert!(matches!(decode_pgm(&bytes), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn unknown_format_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bmp");
        fs::write(&path, b"BM\x00\x00").unwrap();
        assert!(matches!(load_image(&path), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(
            load_image(dir.path().join("missing.pgm")),
            Err(Error::UnreadableFile { .. })
        ));
    }

    #[test]
    fn huge_header_overflows() {
        let bytes = b"P5\n99999999999 99999999999\n255\n".to_vec();
        assert!(matches!(decode_pgm(&bytes), Err(Error::DimensionOverflow { .. })));
    }

    #[test]
    fn png_round_trip_rgb_and_sixteen_bit_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = PixelImage::new(2, 1, 3, vec![1, 2, 3, 250, 251, 252]).unwrap();
        let path = dir.path().join("rgb.png");
        save_png(&rgb, &path).unwrap();
        assert_eq!(load_image(&path).unwrap(), rgb);

        let deep = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(1, 1, vec![1000u16]).unwrap();
        let deep_path = dir.path().join("deep.png");
        deep.save(&deep_path).unwrap();
        assert!(matches!(load_image(&deep_path), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn luma_of_primaries() {
        let white = PixelImage::new(1, 1, 3, vec![255, 255, 255]).unwrap();
        assert_eq!(to_grayscale(&white).data(), &[255]);
        let red = PixelImage::new(1, 1, 3, vec![255, 0, 0]).unwrap();
        // 0.2126 * 255 = 54.213
        assert_eq!(to_grayscale(&red).data(), &[54]);
        let gray = make_fixture(FixtureKind::NaturalProxy, 32, 32, 1).unwrap();
        assert_eq!(to_grayscale(&gray), gray);
    }

    #[test]
    fn fixtures_match_their_definitions() {
        let flat = make_fixture(FixtureKind::Flat, 64, 64, 99).unwrap();
        assert!(flat.data().iter().all(|&v| v == 128));

        let checker = make_fixture(FixtureKind::Checkerboard, 64, 64, 0).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let expected = if (x / 8 + y / 8) % 2 == 0 { 64 } else { 192 };
                assert_eq!(checker.get(x, y, 0), expected);
            }
        }

        let grad = make_fixture(FixtureKind::Gradient, 64, 32, 0).unwrap();
        assert_eq!(grad.get(0, 5, 0), 0);
        assert_eq!(grad.get(63, 5, 0), 255);

        let a = make_fixture(FixtureKind::NaturalProxy, 256, 256, 7).unwrap();
        let b = make_fixture(FixtureKind::NaturalProxy, 256, 256, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_fixture(FixtureKind::NaturalProxy, 256, 256, 8).unwrap());
        assert!(a.data().iter().all(|&v| (16..=240).contains(&v)));
    }

    #[test]
    fn fixture_errors() {
        assert!(matches!(
            make_fixture(FixtureKind::Flat, 16, 64, 0),
            Err(Error::ImageTooSmall(_))
        ));
        assert!(matches!("plasma".parse::<FixtureKind>(), Err(Error::UnknownFixture(_))));
    }

    #[test]
    fn digest_is_a_function_of_pixels() {
        let a = make_fixture(FixtureKind::NaturalProxy, 32, 32, 3).unwrap();
        assert_eq!(ContentId::new("x", &a).digest, ContentId::new("y", &a.clone()).digest);
        let b = make_fixture(FixtureKind::NaturalProxy, 32, 32, 4).unwrap();
        assert_ne!(pixel_digest(&a), pixel_digest(&b));
    }

    fn any_image() -> impl Strategy<Value = PixelImage> {
        (1usize..12, 1usize..12, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(w, h, c)| {
            proptest::collection::vec(any::<u8>(), w * h * c)
                .prop_map(move |data| PixelImage::new(w, h, c, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn save_then_load_reproduces_samples(img in any_image()) {
            let dir = tempfile::tempdir().unwrap();
            let png = dir.path().join("a.png");
            save_png(&img, &png).unwrap();
            prop_assert_eq!(&load_image(&png).unwrap(), &img);
            if img.is_gray() {
                let pgm = dir.path().join("a.pgm");
                save_pgm(&img, &pgm).unwrap();
                prop_assert_eq!(&load_image(&pgm).unwrap(), &img);
            }
        }

        #[test]
        fn grayscale_is_idempotent(img in any_image()) {
            let once = to_grayscale(&img);
            prop_assert_eq!(to_grayscale(&once), once);
        }
    }
}
