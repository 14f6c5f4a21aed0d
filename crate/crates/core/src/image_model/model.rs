use std::borrow::Cow;
use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use image::{DynamicImage, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{image_features, jitter_saturation, rgb_features, ImageFeatureVector, ImageModelError, FEATURE_LEN};
use crate::fusion::softmax;

pub const IMAGE_MODEL_FORMAT: &str = "leaflet-image-model";
const IMAGE_MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageHyperparams {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Saturation factor range for training-time jitter; `None` disables it.
    #[serde(default)]
    pub saturation_jitter: Option<(f64, f64)>,
}

impl Default for ImageHyperparams {
    fn default() -> Self {
        ImageHyperparams {
            lr: 0.001,
            momentum: 0.95,
            batch_size: 16,
            epochs: 30,
            seed: 0,
            weight_decay: 0.0,
            saturation_jitter: None,
        }
    }
}

/// Per-feature standardization fitted on the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureStats {
    pub fn fit(features: &[ImageFeatureVector]) -> Self {
        let n = features.len().max(1) as f64;
        let mut mean = vec![0.0; FEATURE_LEN];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f.values()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; FEATURE_LEN];
        for f in features {
            for ((s, v), m) in var.iter_mut().zip(f.values()).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        FeatureStats { mean, scale }
    }

    pub fn apply(&self, f: &ImageFeatureVector) -> Vec<f64> {
        f.values()
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Multinomial logistic regression over image features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageModel {
    /// Row-major `[classes.len() x FEATURE_LEN]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub classes: Vec<usize>,
    pub train_stats: FeatureStats,
    pub hyperparams: ImageHyperparams,
}

#[derive(Serialize, Deserialize)]
struct ImageModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: ImageModel,
}

fn check_inputs(n: usize, y: &[usize], classes: &[usize]) -> Result<HashMap<usize, usize>, ImageModelError> {
    if n != y.len() {
        return Err(ImageModelError::LengthMismatch {
            samples: n,
            labels: y.len(),
        });
    }
    let position: HashMap<usize, usize> = classes.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    if let Some(&bad) = y.iter().find(|c| !position.contains_key(c)) {
        return Err(ImageModelError::UnknownClass(bad));
    }
    if y.iter().collect::<BTreeSet<_>>().len() < 2 {
        return Err(ImageModelError::SingleClass);
    }
    Ok(position)
}

/// Trains on precomputed features. Pure in (features, y, classes, hp).
pub fn train_image_model(
    features: &[ImageFeatureVector],
    y: &[usize],
    classes: &[usize],
    hp: ImageHyperparams,
) -> Result<ImageModel, ImageModelError> {
    let position = check_inputs(features.len(), y, classes)?;
    if let Some(f) = features.iter().find(|f| f.values().len() != FEATURE_LEN) {
        return Err(ImageModelError::FeatureLength {
            expected: FEATURE_LEN,
            found: f.values().len(),
        });
    }
    let stats = FeatureStats::fit(features);
    let standardized: Vec<Vec<f64>> = features.iter().map(|f| stats.apply(f)).collect();
    let targets: Vec<usize> = y.iter().map(|c| position[c]).collect();
    let (weights, bias) = fit(&targets, classes.len(), &hp, |_| Cow::Borrowed(&standardized));
    Ok(ImageModel {
        weights,
        bias,
        classes: classes.to_vec(),
        train_stats: stats,
        hyperparams: hp,
    })
}

/// Trains from decoded images. With `hp.saturation_jitter` set, every epoch
/// sees freshly jittered copies; each image's draw is seeded by
/// (seed, epoch, index), so results do not depend on thread scheduling.
pub fn train_image_model_from_images(
    images: &[RgbImage],
    y: &[usize],
    classes: &[usize],
    hp: ImageHyperparams,
) -> Result<ImageModel, ImageModelError> {
    let Some(range) = hp.saturation_jitter else {
        let features: Vec<ImageFeatureVector> = images.par_iter().map(rgb_features).collect();
        return train_image_model(&features, y, classes, hp);
    };
    let position = check_inputs(images.len(), y, classes)?;
    let clean: Vec<ImageFeatureVector> = images.par_iter().map(rgb_features).collect();
    let stats = FeatureStats::fit(&clean);
    let targets: Vec<usize> = y.iter().map(|c| position[c]).collect();
    let (weights, bias) = fit(&targets, classes.len(), &hp, |epoch| {
        Cow::Owned(
            images
                .par_iter()
                .enumerate()
                .map(|(i, img)| {
                    let seed = hp.seed
                        ^ ((epoch as u64 + 1) << 32)
                        ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    stats.apply(&rgb_features(&jitter_saturation(img, range, &mut rng)))
                })
                .collect(),
        )
    });
    Ok(ImageModel {
        weights,
        bias,
        classes: classes.to_vec(),
        train_stats: stats,
        hyperparams: hp,
    })
}

/// Mini-batch SGD with heavy-ball momentum on softmax cross-entropy.
fn fit<'a, F>(targets: &[usize], n_classes: usize, hp: &ImageHyperparams, mut epoch_inputs: F) -> (Vec<f64>, Vec<f64>)
where
    F: FnMut(usize) -> Cow<'a, [Vec<f64>]>,
{
    let d = FEATURE_LEN;
    let mut w = vec![0.0; n_classes * d];
    let mut b = vec![0.0; n_classes];
    let mut vel_w = vec![0.0; n_classes * d];
    let mut vel_b = vec![0.0; n_classes];
    let mut grad_w = vec![0.0; n_classes * d];
    let mut grad_b = vec![0.0; n_classes];
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let batch_size = hp.batch_size.max(1);

    for epoch in 0..hp.epochs {
        let inputs = epoch_inputs(epoch);
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            grad_b.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let x = &inputs[i];
                let logits: Vec<f64> = (0..n_classes)
                    .map(|k| dot(&w[k * d..(k + 1) * d], x) + b[k])
                    .collect();
                let mut p = softmax(&logits).expect("finite logits");
                p[targets[i]] -= 1.0;
                for (k, &pk) in p.iter().enumerate() {
                    if pk != 0.0 {
                        for (g, xv) in grad_w[k * d..(k + 1) * d].iter_mut().zip(x) {
                            *g += pk * xv;
                        }
                    }
                    grad_b[k] += pk;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for j in 0..w.len() {
                let g = grad_w[j] * inv + hp.weight_decay * w[j];
                vel_w[j] = hp.momentum * vel_w[j] + g;
                w[j] -= hp.lr * vel_w[j];
            }
            for k in 0..n_classes {
                vel_b[k] = hp.momentum * vel_b[k] + grad_b[k] * inv;
                b[k] -= hp.lr * vel_b[k];
            }
        }
    }
    (w, b)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ImageModel {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn logits(&self, features: &ImageFeatureVector) -> Result<Vec<f64>, ImageModelError> {
        if features.values().len() != FEATURE_LEN {
            return Err(ImageModelError::FeatureLength {
                expected: FEATURE_LEN,
                found: features.values().len(),
            });
        }
        let x = self.train_stats.apply(features);
        let d = FEATURE_LEN;
        Ok((0..self.n_classes())
            .map(|k| dot(&self.weights[k * d..(k + 1) * d], &x) + self.bias[k])
            .collect())
    }

    fn check(&self) -> Result<(), String> {
        let c = self.n_classes();
        if self.weights.len() != c * FEATURE_LEN || self.bias.len() != c {
            return Err(format!("parameter shapes do not match {c} classes x {FEATURE_LEN} features"));
        }
        if self.train_stats.mean.len() != FEATURE_LEN || self.train_stats.scale.len() != FEATURE_LEN {
            return Err("standardization stats have the wrong length".into());
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err("non-finite parameter".into());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageModelError> {
        let file = ImageModelFile {
            format: IMAGE_MODEL_FORMAT.into(),
            version: IMAGE_MODEL_VERSION,
            model: self.clone(),
        };
        std::fs::write(path, serde_json::to_string(&file).expect("model serializes")).map_err(|source| {
            ImageModelError::Io {
                path: path.to_path_buf(),
                source,
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, ImageModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ImageModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let format_err = |message: String| ImageModelError::Format {
            path: path.to_path_buf(),
            message,
        };
        let file: ImageModelFile = serde_json::from_str(&text).map_err(|e| format_err(e.to_string()))?;
        if file.format != IMAGE_MODEL_FORMAT {
            return Err(format_err(format!("unexpected format tag {:?}", file.format)));
        }
        if file.version != IMAGE_MODEL_VERSION {
            return Err(format_err(format!(
                "format version {} (supported: {IMAGE_MODEL_VERSION})",
                file.version
            )));
        }
        file.model.check().map_err(format_err)?;
        Ok(file.model)
    }
}

/// Class probabilities for one image: softmax of the linear logits.
pub fn predict_image_scores(model: &ImageModel, img: &DynamicImage) -> Result<Vec<f64>, ImageModelError> {
    let logits = model.logits(&image_features(img)?)?;
    Ok(softmax(&logits).expect("finite logits"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use image::Rgb;

    fn card(color: [u8; 3], seed: u32) -> RgbImage {
        // small per-image texture so samples are not identical
        RgbImage::from_fn(40, 60, |x, y| {
            let n = ((x * 31 + y * 17 + seed * 13) % 7) as u8;
            Rgb([color[0].saturating_add(n), color[1].saturating_add(n), color[2].saturating_add(n)])
        })
    }

    fn rgb_set() -> (Vec<RgbImage>, Vec<usize>) {
        let colors = [[200, 20, 20], [20, 200, 20], [20, 20, 200]];
        let mut images = Vec::new();
        let mut y = Vec::new();
        for (c, color) in colors.iter().enumerate() {
            for i in 0..10 {
                images.push(card(*color, i));
                y.push(c);
            }
        }
        (images, y)
    }

    #[test]
    fn colored_cards_are_separated() {
        let (images, y) = rgb_set();
        let features: Vec<_> = images.iter().map(rgb_features).collect();
        let model = train_image_model(&features, &y, &[0, 1, 2], ImageHyperparams::default()).unwrap();
        for (f, &label) in features.iter().zip(&y) {
            let p = softmax(&model.logits(f).unwrap()).unwrap();
            let best = (0..3).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
            assert_eq!(best, label);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (images, y) = rgb_set();
        let features: Vec<_> = images.iter().map(rgb_features).collect();
        let hp = ImageHyperparams {
            epochs: 3,
            seed: 42,
            ..ImageHyperparams::default()
        };
        let a = train_image_model(&features, &y, &[0, 1, 2], hp).unwrap();
        let b = train_image_model(&features, &y, &[0, 1, 2], hp).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn jittered_training_is_deterministic() {
        let (images, y) = rgb_set();
        let hp = ImageHyperparams {
            epochs: 2,
            seed: 3,
            saturation_jitter: Some((0.5, 1.5)),
            ..ImageHyperparams::default()
        };
        let a = train_image_model_from_images(&images, &y, &[0, 1, 2], hp).unwrap();
        let b = train_image_model_from_images(&images, &y, &[0, 1, 2], hp).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn input_errors() {
        let (images, _) = rgb_set();
        let features: Vec<_> = images.iter().take(2).map(rgb_features).collect();
        let hp = ImageHyperparams::default();
        assert!(matches!(
            train_image_model(&features, &[0, 0], &[0, 1], hp),
            Err(ImageModelError::SingleClass)
        ));
        let short = vec![ImageFeatureVector(vec![0.0; 10]), ImageFeatureVector(vec![0.0; 10])];
        assert!(matches!(
            train_image_model(&short, &[0, 1], &[0, 1], hp),
            Err(ImageModelError::FeatureLength { .. })
        ));
    }

    fn zero_model(n: usize) -> ImageModel {
        ImageModel {
            weights: vec![0.0; n * FEATURE_LEN],
            bias: vec![0.0; n],
            classes: (0..n).collect(),
            train_stats: FeatureStats {
                mean: vec![0.0; FEATURE_LEN],
                scale: vec![1.0; FEATURE_LEN],
            },
            hyperparams: ImageHyperparams::default(),
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let img = DynamicImage::ImageRgb8(card([9, 80, 160], 1));
        let p = predict_image_scores(&zero_model(4), &img).unwrap();
        for v in p {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn bias_only_logits() {
        let mut m = zero_model(2);
        m.bias = vec![2f64.ln(), 0.0];
        let p = predict_image_scores(&m, &DynamicImage::ImageRgb8(card([1, 2, 3], 0))).unwrap();
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn save_load_bit_exact() {
        let (images, y) = rgb_set();
        let features: Vec<_> = images.iter().map(rgb_features).collect();
        let hp = ImageHyperparams {
            epochs: 2,
            ..ImageHyperparams::default()
        };
        let m = train_image_model(&features, &y, &[0, 1, 2], hp).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.json");
        m.save(&path).unwrap();
        let back = ImageModel::load(&path).unwrap();
        assert_eq!(back, m);
        for f in &features {
            let a: Vec<u64> = m.logits(f).unwrap().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.logits(f).unwrap().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }
}
