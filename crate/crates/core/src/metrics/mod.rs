//! Saliency evaluation: MAE, P-R curve over 256 thresholds, max
//! F-measure (β² = 0.3) and S-measure.
//!
//! Maps are `(1, 1, H, W)` tensors (any equal shapes work for the pixel-wise
//! metrics); mask pixels `≥ 0.5` count as foreground.

mod report;
mod smeasure;

pub use report::{evaluate, EvalReport, ImageRecord, PrRow};
pub use smeasure::{s_measure, S_EPS};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA2: f64 = 0.3;
pub const THRESHOLDS: usize = 256;

fn check(s: &Tensor, g: &Tensor, op: &'static str) -> Result<()> {
    if s.shape() != g.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: s.shape(),
            right: g.shape(),
        });
    }
    Ok(())
}

pub fn mae(s: &Tensor, g: &Tensor) -> Result<f64> {
    check(s, g, "mae")?;
    let sum: f64 = s.data().iter().zip(g.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / s.numel() as f64)
}

/// `round_half_up(255 s)` clamped to `0..=255`.
pub fn quantize(v: f64) -> usize {
    ((v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as usize).min(255)
}

/// Precision and recall at thresholds `t = 0..=255`, predicting foreground
/// where `quantize(s) ≥ t`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

pub fn pr_curve(s: &Tensor, g: &Tensor) -> Result<PrCurve> {
    check(s, g, "pr_curve")?;
    let mut pos_hist = [0u64; THRESHOLDS];
    let mut neg_hist = [0u64; THRESHOLDS];
    for (&sv, &gv) in s.data().iter().zip(g.data()) {
        let q = quantize(sv);
        if gv >= 0.5 {
            pos_hist[q] += 1;
        } else {
            neg_hist[q] += 1;
        }
    }
    let positives: u64 = pos_hist.iter().sum();
    if positives == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let mut precision = vec![0.0; THRESHOLDS];
    let mut recall = vec![0.0; THRESHOLDS];
    let (mut tp, mut fp) = (0u64, 0u64);
    for t in (0..THRESHOLDS).rev() {
        tp += pos_hist[t];
        fp += neg_hist[t];
        precision[t] = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        recall[t] = tp as f64 / positives as f64;
    }
    Ok(PrCurve { precision, recall })
}

/// `(1 + β²) P R / (β² P + R)`, zero when the denominator vanishes.
pub fn f_measure(p: f64, r: f64) -> f64 {
    let den = BETA2 * p + r;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + BETA2) * p * r / den
    }
}

pub fn max_f_measure(curve: &PrCurve) -> f64 {
    curve
        .precision
        .iter()
        .zip(&curve.recall)
        .map(|(&p, &r)| f_measure(p, r))
        .fold(0.0, f64::max)
}

/// Data-independent reference map: an isotropic Gaussian centred on the
/// image with standard deviation `size / 4`, peak 1.
pub fn center_prior(h: usize, w: usize) -> Tensor {
    let sigma = h.min(w) as f64 / 4.0;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Tensor::zeros([1, 1, h, w]);
    for y in 0..h {
        for x in 0..w {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            out.set(0, 0, y, x, (-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn map(data: Vec<f64>, h: usize, w: usize) -> Tensor {
        Tensor::from_vec([1, 1, h, w], data).unwrap()
    }

    #[test]
    fn mae_examples() {
        let g = map(vec![0.0, 1.0, 1.0, 0.0], 2, 2);
        assert_eq!(mae(&g, &g).unwrap(), 0.0);
        assert_eq!(mae(&map(vec![1.0; 4], 2, 2), &map(vec![0.0; 4], 2, 2)).unwrap(), 1.0);
        assert_eq!(mae(&map(vec![0.25; 4], 2, 2), &map(vec![0.0; 4], 2, 2)).unwrap(), 0.25);
        assert!(mae(&g, &map(vec![0.0; 6], 2, 3)).is_err());
    }

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(1.5 / 255.0), 2);
    }

    #[test]
    fn perfect_and_constant_maps() {
        let mut rng = Rng::new(1);
        let g = Tensor::rand_uniform([1, 1, 8, 8], 0.0, 1.0, &mut rng).map(|v| (v > 0.6) as u8 as f64);
        let c = pr_curve(&g, &g).unwrap();
        for t in 1..256 {
            assert_eq!((c.precision[t], c.recall[t]), (1.0, 1.0));
        }
        assert_eq!(max_f_measure(&c), 1.0);
        let ones = pr_curve(&Tensor::ones([1, 1, 8, 8]), &g).unwrap();
        let frac = g.sum() / 64.0;
        for t in 0..256 {
            assert_eq!(ones.recall[t], 1.0);
            assert_eq!(ones.precision[t], frac);
        }
    }

    #[test]
    fn f_measure_examples() {
        assert_eq!(f_measure(1.0, 1.0), 1.0);
        assert!((f_measure(0.25, 1.0) - 0.325 / 1.075).abs() < 1e-15);
        assert!((f_measure(0.25, 1.0) - 0.302326).abs() < 1e-6);
        assert_eq!(f_measure(0.0, 0.0), 0.0);
    }

    #[test]
    fn center_prior_peaks_in_the_middle() {
        let p = center_prior(8, 8);
        assert_eq!(p.at(0, 0, 3, 3), p.at(0, 0, 4, 4));
        assert!(p.at(0, 0, 3, 3) > p.at(0, 0, 0, 0));
        assert!(p.data().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn empty_mask_is_rejected() {
        let z = Tensor::zeros([1, 1, 4, 4]);
        assert!(matches!(pr_curve(&z, &z), Err(Error::EmptyGroundTruth)));
    }

    #[test]
    fn matches_threshold_loop_oracle() {
        let mut rng = Rng::new(7);
        for _ in 0..20 {
            let s = Tensor::rand_uniform([1, 1, 8, 8], 0.0, 1.0, &mut rng);
            let mut g = Tensor::rand_uniform([1, 1, 8, 8], 0.0, 1.0, &mut rng).map(|v| (v > 0.5) as u8 as f64);
            g.data_mut()[0] = 1.0;
            let c = pr_curve(&s, &g).unwrap();
            for t in 0..256 {
                let (mut tp, mut fp, mut pos) = (0, 0, 0);
                for (&sv, &gv) in s.data().iter().zip(g.data()) {
                    let pred = (sv * 255.0 + 0.5).floor() >= t as f64;
                    pos += (gv == 1.0) as i32;
                    tp += (pred && gv == 1.0) as i32;
                    fp += (pred && gv == 0.0) as i32;
                }
                let p = if tp + fp == 0 {
                    1.0
                } else {
                    tp as f64 / (tp + fp) as f64
                };
                assert_eq!(c.precision[t], p);
                assert_eq!(c.recall[t], tp as f64 / pos as f64);
            }
        }
    }
}
