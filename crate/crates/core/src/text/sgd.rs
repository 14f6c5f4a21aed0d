//! One-vs-rest linear classifier trained by plain SGD on the modified Huber
//! loss with an adaptive step size.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{SparseVector, TextModelError};

/// Step size is divided by this after `patience` epochs without improvement.
pub const ETA_DIVISOR: f64 = 5.0;
/// Training stops once the step size drops below this.
pub const MIN_ETA: f64 = 1e-6;

/// Loss and its derivative with respect to the margin `z = y * f(x)`.
///
/// Zero beyond the margin, quadratic on `[-1, 1)`, linear below `-1`.
pub fn modified_huber(margin: f64) -> (f64, f64) {
    let z = margin;
    if z >= 1.0 {
        (0.0, 0.0)
    } else if z >= -1.0 {
        let r = 1.0 - z;
        (r * r, -2.0 * r)
    } else {
        (-4.0 * z, -4.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextHyperparams {
    pub eta0: f64,
    pub tolerance: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub l2_penalty: f64,
}

impl Default for TextHyperparams {
    fn default() -> Self {
        TextHyperparams {
            eta0: 0.1,
            tolerance: 1e-3,
            patience: 5,
            max_epochs: 1000,
            seed: 0,
            l2_penalty: 0.0,
        }
    }
}

/// Per-epoch record of a binary fit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochTrace {
    /// Mean loss over the epoch's updates.
    pub losses: Vec<f64>,
    /// Best mean loss seen so far after each epoch.
    pub best_losses: Vec<f64>,
    /// Step size in effect during each epoch.
    pub etas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub trace: EpochTrace,
}

/// Fits one binary problem with targets in {+1, -1}.
pub fn fit_binary(
    x: &[SparseVector],
    targets: &[f64],
    n_features: usize,
    hp: &TextHyperparams,
    seed: u64,
) -> BinaryFit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..x.len()).collect();
    // w = scale * v keeps the L2 shrink O(1) per step
    let mut v = vec![0.0f64; n_features];
    let mut scale = 1.0f64;
    let mut bias = 0.0f64;
    let mut eta = hp.eta0;
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let mut trace = EpochTrace::default();

    for _ in 0..hp.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let xi = &x[i];
            let y = targets[i];
            let f = scale * xi.dot(&v) + bias;
            let (loss, dloss) = modified_huber(y * f);
            total += loss;
            if hp.l2_penalty > 0.0 {
                scale *= 1.0 - eta * hp.l2_penalty;
                if scale < 1e-9 {
                    for w in &mut v {
                        *w *= scale;
                    }
                    scale = 1.0;
                }
            }
            if dloss != 0.0 {
                let step = -eta * dloss * y;
                for (j, val) in xi.iter() {
                    v[j] += step * val / scale;
                }
                bias += step;
            }
        }
        let mean = if x.is_empty() { 0.0 } else { total / x.len() as f64 };
        trace.etas.push(eta);
        trace.losses.push(mean);
        if mean > best - hp.tolerance {
            stale += 1;
        } else {
            stale = 0;
        }
        if mean < best {
            best = mean;
        }
        trace.best_losses.push(best);
        if stale >= hp.patience {
            eta /= ETA_DIVISOR;
            stale = 0;
            if eta < MIN_ETA {
                break;
            }
        }
    }
    for w in &mut v {
        *w *= scale;
    }
    BinaryFit {
        weights: v,
        bias,
        trace,
    }
}

fn class_seed(seed: u64, class_pos: usize) -> u64 {
    seed ^ (class_pos as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains one binary fit per entry of `classes`. Rows of the returned weight
/// matrix follow `classes`. Per-class problems run in parallel with seeds
/// derived from `hp.seed`, so results do not depend on scheduling.
pub fn train_one_vs_rest(
    x: &[SparseVector],
    y: &[usize],
    classes: &[usize],
    n_features: usize,
    hp: &TextHyperparams,
) -> Result<Vec<BinaryFit>, TextModelError> {
    if x.len() != y.len() {
        return Err(TextModelError::LengthMismatch {
            samples: x.len(),
            labels: y.len(),
        });
    }
    let known: BTreeSet<usize> = classes.iter().copied().collect();
    if let Some(&bad) = y.iter().find(|c| !known.contains(c)) {
        return Err(TextModelError::UnknownClass(bad));
    }
    let distinct: BTreeSet<usize> = y.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(TextModelError::SingleClass);
    }
    if let Some(idx) = x.iter().filter_map(SparseVector::max_index).max() {
        if idx >= n_features {
            return Err(TextModelError::FeatureIndexOutOfRange { index: idx, n_features });
        }
    }
    Ok(classes
        .par_iter()
        .enumerate()
        .map(|(pos, &c)| {
            let targets: Vec<f64> = y.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
            fit_binary(x, &targets, n_features, hp, class_seed(hp.seed, pos))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn central_difference(z: f64, h: f64) -> f64 {
        (modified_huber(z + h).0 - modified_huber(z - h).0) / (2.0 * h)
    }

    #[test]
    fn loss_branches() {
        assert_eq!(modified_huber(1.5), (0.0, 0.0));
        assert_eq!(modified_huber(0.0), (1.0, -2.0));
        assert_eq!(modified_huber(-2.0), (8.0, -4.0));
        // continuity at the joints
        assert_eq!(modified_huber(1.0).0, 0.0);
        assert_eq!(modified_huber(-1.0).0, 4.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 1000 {
            let z: f64 = rng.random_range(-5.0..5.0);
            if (z - 1.0).abs() < 1e-4 || (z + 1.0).abs() < 1e-4 {
                continue;
            }
            let analytic = modified_huber(z).1;
            let numeric = central_difference(z, 1e-6);
            let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
            assert!(err <= 1e-6, "z={z} analytic={analytic} numeric={numeric}");
            checked += 1;
        }
    }

    fn sv(pairs: &[(usize, f64)]) -> SparseVector {
        SparseVector {
            indices: pairs.iter().map(|p| p.0).collect(),
            values: pairs.iter().map(|p| p.1).collect(),
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = vec![sv(&[(0, 1.0)]), sv(&[(1, 1.0)])];
        let hp = TextHyperparams::default();
        assert!(matches!(
            train_one_vs_rest(&x, &[0, 0], &[0, 1], 2, &hp),
            Err(TextModelError::SingleClass)
        ));
        assert!(matches!(
            train_one_vs_rest(&x, &[0], &[0, 1], 2, &hp),
            Err(TextModelError::LengthMismatch { .. })
        ));
        assert!(matches!(
            train_one_vs_rest(&x, &[0, 7], &[0, 1], 2, &hp),
            Err(TextModelError::UnknownClass(7))
        ));
        assert!(matches!(
            train_one_vs_rest(&x, &[0, 1], &[0, 1], 1, &hp),
            Err(TextModelError::FeatureIndexOutOfRange { .. })
        ));
    }

    #[test]
    fn best_loss_is_monotone_and_eta_decays() {
        let x = vec![sv(&[(0, 0.6), (1, 0.8)]), sv(&[(1, 1.0)]), sv(&[(2, 1.0)]), sv(&[(0, 1.0)])];
        let targets = [1.0, -1.0, -1.0, 1.0];
        let fit = fit_binary(&x, &targets, 3, &TextHyperparams::default(), 3);
        let t = &fit.trace;
        assert!(t.best_losses.windows(2).all(|w| w[1] <= w[0]));
        assert!(t.etas.windows(2).all(|w| w[1] <= w[0]));
        assert!(t.losses.len() < 1000, "stops once eta falls below the floor");
        assert!(*t.etas.last().unwrap() >= MIN_ETA);
    }

    #[test]
    fn l2_penalty_shrinks_weights() {
        let x = vec![sv(&[(0, 1.0)]), sv(&[(1, 1.0)])];
        let targets = [1.0, -1.0];
        let free = fit_binary(&x, &targets, 2, &TextHyperparams::default(), 1);
        let hp = TextHyperparams {
            l2_penalty: 0.05,
            ..TextHyperparams::default()
        };
        let shrunk = fit_binary(&x, &targets, 2, &hp, 1);
        let norm = |w: &[f64]| w.iter().map(|v| v * v).sum::<f64>();
        assert!(norm(&shrunk.weights) < norm(&free.weights));
    }

    proptest! {
        #[test]
        fn best_loss_sequence_never_increases(
            seed in 0u64..1000,
            rows in proptest::collection::vec((0usize..6, 0.1f64..1.0, any::<bool>()), 2..20),
        ) {
            let x: Vec<SparseVector> = rows.iter().map(|(i, v, _)| sv(&[(*i, *v)])).collect();
            let targets: Vec<f64> = rows.iter().map(|r| if r.2 { 1.0 } else { -1.0 }).collect();
            let hp = TextHyperparams { max_epochs: 60, seed, ..TextHyperparams::default() };
            let fit = fit_binary(&x, &targets, 6, &hp, seed);
            prop_assert!(fit.trace.best_losses.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
