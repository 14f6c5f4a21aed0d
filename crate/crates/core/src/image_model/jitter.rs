use image::{Rgb, RgbImage};
use rand::Rng;

/// RGB in [0,1] to (hue in [0,6), saturation, value).
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    (h, s, v)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

/// Scales saturation by one factor drawn uniformly from `[lo, hi]`.
pub fn jitter_saturation<R: Rng + ?Sized>(img: &RgbImage, factor_range: (f64, f64), rng: &mut R) -> RgbImage {
    let (lo, hi) = factor_range;
    assert!(lo >= 0.0 && hi >= lo, "saturation factor range must satisfy 0 <= lo <= hi");
    let factor = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    scale_saturation(img, factor)
}

pub fn scale_saturation(img: &RgbImage, factor: f64) -> RgbImage {
    let to_u8 = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let [r, g, b] = img.get_pixel(x, y).0;
        let (h, s, v) = rgb_to_hsv(r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
        let (r, g, b) = hsv_to_rgb(h, (s * factor).clamp(0.0, 1.0), v);
        Rgb([to_u8(r), to_u8(g), to_u8(b)])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn palette() -> RgbImage {
        RgbImage::from_fn(32, 32, |x, y| Rgb([(x * 8) as u8, (y * 8) as u8, ((x * y) % 256) as u8]))
    }

    #[test]
    fn unit_factor_is_identity() {
        let img = palette();
        let out = jitter_saturation(&img, (1.0, 1.0), &mut ChaCha8Rng::seed_from_u64(0));
        for (a, b) in img.pixels().zip(out.pixels()) {
            for c in 0..3 {
                assert!((a.0[c] as i16 - b.0[c] as i16).abs() <= 1);
            }
        }
    }

    #[test]
    fn gray_is_a_fixed_point() {
        let img = RgbImage::from_fn(10, 10, |x, _| Rgb([(x * 20) as u8; 3]));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            assert_eq!(jitter_saturation(&img, (0.5, 1.5), &mut rng), img);
        }
    }

    #[test]
    fn zero_saturation_on_red() {
        // red (128,0,0): h=0, s=1, v=128/255 -> s=0 keeps v on every channel
        let img = RgbImage::from_pixel(3, 3, Rgb([128, 0, 0]));
        assert_eq!(scale_saturation(&img, 0.0).get_pixel(1, 1).0, [128, 128, 128]);
        let img = RgbImage::from_pixel(3, 3, Rgb([255, 0, 0]));
        assert_eq!(scale_saturation(&img, 0.0).get_pixel(0, 0).0, [255, 255, 255]);
    }

    #[test]
    fn seeded_draws_repeat() {
        let img = palette();
        let a = jitter_saturation(&img, (0.5, 1.5), &mut ChaCha8Rng::seed_from_u64(9));
        let b = jitter_saturation(&img, (0.5, 1.5), &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
