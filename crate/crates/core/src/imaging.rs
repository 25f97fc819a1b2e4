//! RGB rasters, nucleus-centred patches, grayscale conversion and gray-level
//! quantization.

use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit RGB image stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("pixel buffer matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Encode {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}

/// Decodes a PNG or TIFF file. Alpha, if present, is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let decoded = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    let pixels = rgb.pixels().map(|p| p.0).collect();
    RgbImage::new(w as usize, h as usize, pixels)
}

/// Maps an arbitrary coordinate into `[0, len)` by mirror reflection about
/// the borders without repeating the edge sample (`-1 -> 1`).
#[inline]
pub(crate) fn reflect_index(i: i64, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as i64 - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as i64 {
        m = period - m;
    }
    m as usize
}

/// Square pixel window. Windows cut by `extract_patch` have odd side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    side: usize,
    center: (usize, usize),
    pixels: Vec<[u8; 3]>,
}

impl Patch {
    pub fn from_pixels(side: usize, center: (usize, usize), pixels: Vec<[u8; 3]>) -> Result<Self> {
        if side == 0 {
            return Err(Error::EmptyImage);
        }
        if pixels.len() != side * side {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for side {side}",
                pixels.len()
            )));
        }
        Ok(Self {
            side,
            center,
            pixels,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn center(&self) -> (usize, usize) {
        self.center
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.side + x]
    }
}

/// Cuts a `side`x`side` window centred on `center`, reflect-padding outside
/// the image.
pub fn extract_patch(img: &RgbImage, center: (i64, i64), side: usize) -> Result<Patch> {
    if side.is_multiple_of(2) {
        return Err(Error::EvenSide(side));
    }
    let (cx, cy) = center;
    if !img.contains(cx, cy) {
        return Err(Error::CenterOutside {
            x: cx,
            y: cy,
            width: img.width,
            height: img.height,
        });
    }
    let half = (side / 2) as i64;
    let mut pixels = Vec::with_capacity(side * side);
    for dy in -half..=half {
        let sy = reflect_index(cy + dy, img.height);
        for dx in -half..=half {
            let sx = reflect_index(cx + dx, img.width);
            pixels.push(img.get(sx, sy));
        }
    }
    Ok(Patch {
        side,
        center: (cx as usize, cy as usize),
        pixels,
    })
}

/// Single-channel 8-bit square patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayPatch {
    pub side: usize,
    pub values: Vec<u8>,
}

#[inline]
pub fn luma(rgb: [u8; 3]) -> u8 {
    let g = 0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64;
    g.round().clamp(0.0, 255.0) as u8
}

pub fn to_grayscale(p: &Patch) -> GrayPatch {
    GrayPatch {
        side: p.side,
        values: p.pixels.iter().map(|&px| luma(px)).collect(),
    }
}

/// Patch of gray levels in `[0, levels)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelPatch {
    pub side: usize,
    pub levels: usize,
    pub values: Vec<u8>,
}

#[inline]
pub fn quantize_value(g: u8, levels: usize) -> u8 {
    (g as usize * levels / 256) as u8
}

pub fn quantize(g: &GrayPatch, levels: usize) -> Result<LevelPatch> {
    if !(2..=256).contains(&levels) {
        return Err(Error::InvalidParameter(format!(
            "levels must be in [2, 256], got {levels}"
        )));
    }
    Ok(LevelPatch {
        side: g.side,
        levels,
        values: g.values.iter().map(|&v| quantize_value(v, levels)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient_image(w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            [(x * 7 % 256) as u8, (y * 13 % 256) as u8, ((x + y) % 256) as u8]
        })
        .unwrap()
    }

    #[test]
    fn interior_patch_equals_direct_crop() {
        let img = gradient_image(200, 150);
        let p = extract_patch(&img, (100, 75), 71).unwrap();
        for y in 0..71 {
            for x in 0..71 {
                assert_eq!(p.get(x, y), img.get(100 - 35 + x, 75 - 35 + y));
            }
        }
    }

    #[test]
    fn corner_patch_of_constant_image_is_constant() {
        let img = RgbImage::filled(40, 30, [128, 128, 128]).unwrap();
        let p = extract_patch(&img, (0, 0), 71).unwrap();
        assert_eq!(p.pixels().len(), 71 * 71);
        assert!(p.pixels().iter().all(|&px| px == [128, 128, 128]));
    }

    #[test]
    fn even_side_rejected() {
        let img = RgbImage::filled(10, 10, [0, 0, 0]).unwrap();
        let err = extract_patch(&img, (5, 5), 4).unwrap_err();
        assert!(err.to_string().contains("side must be odd"));
    }

    #[test]
    fn center_outside_rejected() {
        let img = RgbImage::filled(10, 10, [0, 0, 0]).unwrap();
        assert!(matches!(
            extract_patch(&img, (10, 0), 3),
            Err(Error::CenterOutside { .. })
        ));
        assert!(extract_patch(&img, (-1, 0), 3).is_err());
    }

    #[test]
    fn reflect_padding_mirrors_without_edge_repeat() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(-9, 5), 1);
        assert_eq!(reflect_index(17, 1), 0);
    }

    #[test]
    fn luma_values() {
        assert_eq!(luma([255, 255, 255]), 255);
        assert_eq!(luma([0, 0, 0]), 0);
        // 0.299 * 255 = 76.245
        assert_eq!(luma([255, 0, 0]), 76);
    }

    #[test]
    fn quantize_values() {
        assert_eq!(quantize_value(0, 5), 0);
        assert_eq!(quantize_value(255, 5), 4);
        // 128 * 5 / 256 = 2.5
        assert_eq!(quantize_value(128, 5), 2);
        let g = GrayPatch {
            side: 1,
            values: vec![0],
        };
        assert!(quantize(&g, 1).is_err());
    }

    #[test]
    fn quantize_is_monotone_and_surjective() {
        for levels in 2..=16 {
            let mapped: Vec<u8> = (0..=255u8).map(|g| quantize_value(g, levels)).collect();
            assert!(mapped.windows(2).all(|w| w[0] <= w[1]));
            for l in 0..levels {
                assert!(mapped.contains(&(l as u8)));
            }
        }
    }

    #[test]
    fn load_missing_file() {
        let err = load_image("/nonexistent/a.png").unwrap_err();
        assert!(err.to_string().contains("file not found"));
    }

    #[test]
    fn png_roundtrip_and_alpha_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::new(2, 2, vec![[1, 2, 3], [250, 0, 9], [7, 7, 7], [0, 255, 128]]).unwrap();
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);

        let rgba = image::RgbaImage::from_raw(2, 1, vec![10, 20, 30, 0, 40, 50, 60, 255]).unwrap();
        let path = dir.path().join("b.png");
        rgba.save(&path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.pixels(), &[[10, 20, 30], [40, 50, 60]]);
    }

    #[test]
    fn tiff_decodes_full_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.tiff");
        let buf = image::RgbImage::from_pixel(2048, 1536, image::Rgb([200, 100, 50]));
        buf.save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.width(), img.height()), (2048, 1536));
    }

    #[test]
    fn garbage_file_fails_to_decode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        std::fs::write(&path, b"not an image at all").unwrap();
        assert!(load_image(&path).is_err());
    }

    proptest! {
        #[test]
        fn patch_size_is_side_squared(w in 1usize..60, h in 1usize..60, fx in 0.0f64..1.0, fy in 0.0f64..1.0, half in 0usize..40) {
            let img = gradient_image(w, h);
            let cx = ((w - 1) as f64 * fx) as i64;
            let cy = ((h - 1) as f64 * fy) as i64;
            let side = 2 * half + 1;
            let p = extract_patch(&img, (cx, cy), side).unwrap();
            prop_assert_eq!(p.pixels().len(), side * side);
            prop_assert_eq!(p.get(half, half), img.get(cx as usize, cy as usize));
        }

        #[test]
        fn patch_is_translation_consistent(dx in 0usize..20, dy in 0usize..20, cx in 30usize..60, cy in 30usize..60) {
            let base = gradient_image(120, 120);
            let shifted = RgbImage::from_fn(140, 140, |x, y| {
                if x >= dx && y >= dy && x - dx < 120 && y - dy < 120 {
                    base.get(x - dx, y - dy)
                } else {
                    [0, 0, 0]
                }
            }).unwrap();
            let a = extract_patch(&base, (cx as i64, cy as i64), 21).unwrap();
            let b = extract_patch(&shifted, ((cx + dx) as i64, (cy + dy) as i64), 21).unwrap();
            prop_assert_eq!(a.pixels(), b.pixels());
        }
    }
}
