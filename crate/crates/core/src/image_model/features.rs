use image::imageops::FilterType;
use image::{DynamicImage, GenericImageView, RgbImage};
use serde::{Deserialize, Serialize};

use super::ImageModelError;

pub const THUMB_SIDE: u32 = 32;
pub const HIST_BINS: usize = 16;
pub const FEATURE_LEN: usize = (THUMB_SIDE * THUMB_SIDE * 3) as usize + 3 * HIST_BINS;

/// 32x32 bilinear RGB thumbnail in [0, 1] (row-major, interleaved channels)
/// followed by one normalized 16-bin histogram per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFeatureVector(pub Vec<f64>);

impl ImageFeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn thumbnail(&self) -> &[f64] {
        &self.0[..FEATURE_LEN - 3 * HIST_BINS]
    }

    pub fn histogram(&self, channel: usize) -> &[f64] {
        let start = FEATURE_LEN - 3 * HIST_BINS + channel * HIST_BINS;
        &self.0[start..start + HIST_BINS]
    }
}

pub fn image_features(img: &DynamicImage) -> Result<ImageFeatureVector, ImageModelError> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(ImageModelError::EmptyImage);
    }
    Ok(rgb_features(&img.to_rgb8()))
}

pub fn rgb_features(rgb: &RgbImage) -> ImageFeatureVector {
    let mut values = Vec::with_capacity(FEATURE_LEN);
    let thumb = image::imageops::resize(rgb, THUMB_SIDE, THUMB_SIDE, FilterType::Triangle);
    for p in thumb.pixels() {
        for c in p.0 {
            values.push(c as f64 / 255.0);
        }
    }
    let mut hist = [[0u64; HIST_BINS]; 3];
    for p in rgb.pixels() {
        for (c, &v) in p.0.iter().enumerate() {
            hist[c][v as usize * HIST_BINS / 256] += 1;
        }
    }
    let n = (rgb.width() as u64 * rgb.height() as u64) as f64;
    for channel in hist {
        values.extend(channel.iter().map(|&count| count as f64 / n));
    }
    ImageFeatureVector(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Luma, Rgb};

    fn uniform(v: u8) -> DynamicImage {
        DynamicImage::ImageRgb8(RgbImage::from_pixel(60, 90, Rgb([v, v, v])))
    }

    #[test]
    fn black_and_white() {
        let f = image_features(&uniform(0)).unwrap();
        assert_eq!(f.0.len(), FEATURE_LEN);
        assert_eq!(FEATURE_LEN, 3120);
        assert!(f.thumbnail().iter().all(|&v| v == 0.0));
        for c in 0..3 {
            let mut expected = vec![0.0; HIST_BINS];
            expected[0] = 1.0;
            assert_eq!(f.histogram(c), expected.as_slice());
        }

        let f = image_features(&uniform(255)).unwrap();
        assert!(f.thumbnail().iter().all(|&v| v == 1.0));
        for c in 0..3 {
            assert_eq!(f.histogram(c)[HIST_BINS - 1], 1.0);
        }
    }

    #[test]
    fn grayscale_expands_to_three_channels() {
        let gray = DynamicImage::ImageLuma8(image::GrayImage::from_fn(50, 70, |x, y| Luma([(x * 3 + y) as u8])));
        let f = image_features(&gray).unwrap();
        assert_eq!(f.histogram(0), f.histogram(1));
        assert_eq!(f.histogram(1), f.histogram(2));
        for px in f.thumbnail().chunks(3) {
            assert_eq!(px[0], px[1]);
            assert_eq!(px[1], px[2]);
        }
    }

    #[test]
    fn same_pixels_any_encoding() {
        let img = RgbImage::from_fn(97, 140, |x, y| Rgb([(x * 2) as u8, (y * 3 % 256) as u8, ((x ^ y) % 256) as u8]));
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("a.png");
        let bmp = dir.path().join("a.bmp");
        img.save(&png).unwrap();
        img.save(&bmp).unwrap();
        let a = image_features(&image::open(&png).unwrap()).unwrap();
        let b = image_features(&image::open(&bmp).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_rejected() {
        assert!(image_features(&DynamicImage::new_rgb8(0, 4)).is_err());
    }
}
