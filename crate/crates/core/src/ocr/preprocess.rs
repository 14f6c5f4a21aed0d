use image::imageops::FilterType;
use image::{DynamicImage, GenericImageView, GrayImage, Luma};

use super::{ExtractionMethodSpec, OcrError};

/// Applies a method's steps in order: grayscale, upscale, Otsu binarization.
pub fn preprocess(img: &DynamicImage, spec: &ExtractionMethodSpec) -> Result<DynamicImage, OcrError> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(OcrError::EmptyImage);
    }
    let mut out = if spec.grayscale() || spec.otsu_binarize() {
        DynamicImage::ImageLuma8(luma_bt601(img))
    } else {
        img.clone()
    };
    if spec.upscale_factor() > 1 {
        out = upscale(&out, spec.upscale_factor());
    }
    if spec.otsu_binarize() {
        let gray = out.to_luma8();
        out = DynamicImage::ImageLuma8(otsu_binarize(&gray).0);
    }
    Ok(out)
}

/// Luma with ITU-R BT.601 weights, rounded to nearest.
pub fn luma_bt601(img: &DynamicImage) -> GrayImage {
    if let DynamicImage::ImageLuma8(g) = img {
        return g.clone();
    }
    let rgb = img.to_rgb8();
    GrayImage::from_fn(rgb.width(), rgb.height(), |x, y| {
        let [r, g, b] = rgb.get_pixel(x, y).0;
        let v = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
        Luma([v.round().clamp(0.0, 255.0) as u8])
    })
}

pub fn upscale(img: &DynamicImage, factor: u32) -> DynamicImage {
    let (w, h) = img.dimensions();
    img.resize_exact(w * factor, h * factor, FilterType::Triangle)
}

/// Threshold maximizing between-class variance, where the lower class is
/// `value <= t`. Ties keep the lowest threshold; a single-valued image yields 0.
pub fn otsu_threshold(hist: &[u64; 256]) -> u8 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0;
    }
    let total_f = total as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum();

    let mut best_t = 0u8;
    let mut best_var = 0.0f64;
    let mut w0 = 0.0f64;
    let mut sum0 = 0.0f64;
    for (t, &count) in hist.iter().enumerate() {
        w0 += count as f64;
        sum0 += t as f64 * count as f64;
        let w1 = total_f - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let var = (w0 / total_f) * (w1 / total_f) * (mu0 - mu1).powi(2);
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    best_t
}

/// Binarizes to {0, 255}: pixels above the Otsu threshold become 255.
pub fn otsu_binarize(gray: &GrayImage) -> (GrayImage, u8) {
    let mut hist = [0u64; 256];
    for p in gray.pixels() {
        hist[p.0[0] as usize] += 1;
    }
    let t = otsu_threshold(&hist);
    let out = GrayImage::from_fn(gray.width(), gray.height(), |x, y| {
        if gray.get_pixel(x, y).0[0] > t {
            Luma([255])
        } else {
            Luma([0])
        }
    });
    (out, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocr::canonical_methods;
    use image::{Rgb, RgbImage};

    /// Exhaustive search over candidate thresholds straight from pixel values.
    fn brute_force_otsu(pixels: &[u8]) -> u8 {
        let n = pixels.len() as f64;
        let mut best = (0u8, 0.0f64);
        for t in 0u16..=255 {
            let (lo, hi): (Vec<f64>, Vec<f64>) = {
                let lo = pixels.iter().filter(|&&p| p as u16 <= t).map(|&p| p as f64).collect();
                let hi = pixels.iter().filter(|&&p| p as u16 > t).map(|&p| p as f64).collect();
                (lo, hi)
            };
            if lo.is_empty() || hi.is_empty() {
                continue;
            }
            let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
            let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
            let var = (lo.len() as f64 / n) * (hi.len() as f64 / n) * (m0 - m1).powi(2);
            if var > best.1 + 1e-9 {
                best = (t as u8, var);
            }
        }
        best.0
    }

    fn bimodal() -> GrayImage {
        GrayImage::from_fn(40, 20, |x, _| if x < 20 { Luma([40]) } else { Luma([200]) })
    }

    #[test]
    fn all_flags_off_is_identity() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_fn(13, 7, |x, y| Rgb([x as u8, y as u8, 99])));
        let raw = canonical_methods()[0];
        assert_eq!(preprocess(&img, &raw).unwrap(), img);
    }

    #[test]
    fn upscale_by_four() {
        let img = DynamicImage::ImageRgb8(RgbImage::new(100, 50));
        let m6 = canonical_methods()[5];
        let out = preprocess(&img, &m6).unwrap();
        assert_eq!(out.dimensions(), (400, 200));
        assert!(matches!(out, DynamicImage::ImageLuma8(_)));
    }

    #[test]
    fn otsu_on_bimodal_matches_brute_force() {
        let gray = bimodal();
        let pixels: Vec<u8> = gray.pixels().map(|p| p.0[0]).collect();
        let oracle = brute_force_otsu(&pixels);
        let (bin, t) = otsu_binarize(&gray);
        assert_eq!(t, oracle);
        let mut values: Vec<u8> = bin.pixels().map(|p| p.0[0]).collect();
        for x in 0..40 {
            let expected = if x < 20 { 0 } else { 255 };
            assert_eq!(bin.get_pixel(x, 5).0[0], expected);
        }
        values.sort();
        values.dedup();
        assert_eq!(values, vec![0, 255]);
    }

    #[test]
    fn otsu_on_noisy_histogram_matches_brute_force() {
        let gray = GrayImage::from_fn(64, 32, |x, y| {
            let base = if (x + y) % 3 == 0 { 60 } else { 170 };
            Luma([(base + (x * 7 + y * 13) % 41) as u8])
        });
        let pixels: Vec<u8> = gray.pixels().map(|p| p.0[0]).collect();
        assert_eq!(otsu_binarize(&gray).1, brute_force_otsu(&pixels));
    }

    #[test]
    fn method_eight_outputs_two_levels() {
        let img = DynamicImage::ImageLuma8(bimodal()).to_rgb8();
        let out = preprocess(&DynamicImage::ImageRgb8(img), &canonical_methods()[7]).unwrap();
        assert_eq!(out.dimensions(), (160, 80));
        let gray = out.to_luma8();
        assert!(gray.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
        assert_eq!(gray.get_pixel(0, 0).0[0], 0);
        assert_eq!(gray.get_pixel(159, 79).0[0], 255);
    }

    #[test]
    fn bt601_weights() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(1, 1, Rgb([255, 0, 0])));
        assert_eq!(luma_bt601(&img).get_pixel(0, 0).0[0], 76);
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(1, 1, Rgb([0, 255, 0])));
        assert_eq!(luma_bt601(&img).get_pixel(0, 0).0[0], 150);
    }

    #[test]
    fn empty_image_rejected() {
        let img = DynamicImage::ImageRgb8(RgbImage::new(0, 0));
        assert!(matches!(preprocess(&img, &canonical_methods()[0]), Err(OcrError::EmptyImage)));
    }
}
