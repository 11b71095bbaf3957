use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mae, max_f_measure, pr_curve, s_measure, THRESHOLDS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub name: String,
    pub mae: f64,
    pub max_f: f64,
    pub s_measure: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrRow {
    pub threshold: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Per-image scores, their means and the mean P-R curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: Vec<ImageRecord>,
    pub mean_mae: f64,
    pub mean_max_f: f64,
    pub mean_s_measure: f64,
    /// Max F-measure of the mean curve.
    pub curve_max_f: f64,
    pub pr_curve: Vec<PrRow>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid("EvalReport", e.to_string()))
    }

    /// `threshold,precision,recall` with one row per threshold.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for r in &self.pr_curve {
            writeln!(out, "{},{},{}", r.threshold, r.precision, r.recall).unwrap();
        }
        out
    }
}

/// Score `(name, prediction, mask)` triples on up to `threads` workers.
/// Results keep input order, so the report does not depend on the thread
/// count.
pub fn evaluate(items: &[(String, Tensor, Tensor)], threads: Option<usize>) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::invalid("evaluate", "nothing to evaluate"));
    }
    let score = |(name, s, g): &(String, Tensor, Tensor)| -> Result<(ImageRecord, super::PrCurve)> {
        let curve = pr_curve(s, g)?;
        Ok((
            ImageRecord {
                name: name.clone(),
                mae: mae(s, g)?,
                max_f: max_f_measure(&curve),
                s_measure: s_measure(s, g)?,
            },
            curve,
        ))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid("evaluate", e.to_string()))?;
    let scored: Vec<_> = pool.install(|| items.par_iter().map(score).collect::<Result<Vec<_>>>())?;

    let n = scored.len() as f64;
    let mean = |f: fn(&ImageRecord) -> f64| scored.iter().map(|(r, _)| f(r)).sum::<f64>() / n;
    let mut precision = vec![0.0; THRESHOLDS];
    let mut recall = vec![0.0; THRESHOLDS];
    for (_, c) in &scored {
        for t in 0..THRESHOLDS {
            precision[t] += c.precision[t];
            recall[t] += c.recall[t];
        }
    }
    let mean_curve = super::PrCurve {
        precision: precision.iter().map(|p| p / n).collect(),
        recall: recall.iter().map(|r| r / n).collect(),
    };
    Ok(EvalReport {
        mean_mae: mean(|r| r.mae),
        mean_max_f: mean(|r| r.max_f),
        mean_s_measure: mean(|r| r.s_measure),
        curve_max_f: max_f_measure(&mean_curve),
        pr_curve: (0..THRESHOLDS)
            .map(|t| PrRow {
                threshold: t,
                precision: mean_curve.precision[t],
                recall: mean_curve.recall[t],
            })
            .collect(),
        images: scored.into_iter().map(|(r, _)| r).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn items(n: usize, seed: u64, perfect: bool) -> Vec<(String, Tensor, Tensor)> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|i| {
                let mut g = Tensor::rand_uniform([1, 1, 8, 8], 0.0, 1.0, &mut rng).map(|v| (v > 0.5) as u8 as f64);
                g.data_mut()[0] = 1.0;
                let s = if perfect {
                    g.clone()
                } else {
                    Tensor::rand_uniform([1, 1, 8, 8], 0.0, 1.0, &mut rng)
                };
                (format!("{i:04}"), s, g)
            })
            .collect()
    }

    #[test]
    fn perfect_predictions() {
        let r = evaluate(&items(5, 1, true), Some(2)).unwrap();
        assert_eq!((r.mean_mae, r.mean_max_f), (0.0, 1.0));
        assert!((r.mean_s_measure - 1.0).abs() < 1e-12);
        assert_eq!(r.pr_curve.len(), 256);
    }

    #[test]
    fn aggregates_are_means_and_thread_count_is_irrelevant() {
        let it = items(9, 2, false);
        let a = evaluate(&it, Some(1)).unwrap();
        let b = evaluate(&it, Some(3)).unwrap();
        assert_eq!(a, b);
        let m: f64 = a.images.iter().map(|r| r.mae).sum::<f64>() / 9.0;
        assert!((a.mean_mae - m).abs() < 1e-12);
        let csv = a.curve_csv();
        assert_eq!(csv.lines().count(), 257);
        assert!(csv.starts_with("threshold,precision,recall\n0,"));
        let back: EvalReport = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }
}
