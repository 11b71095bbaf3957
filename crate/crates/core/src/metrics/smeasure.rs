use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Machine epsilon guard used throughout the structure measure.
pub const S_EPS: f64 = f64::EPSILON;
const ALPHA: f64 = 0.5;

/// Structure measure `0.5 S_object + 0.5 S_region`, clamped to `[0, 1]`.
///
/// Object term: foreground and background similarity
/// `2x / (x² + 1 + σ + eps)` (σ the sample standard deviation) weighted by
/// the foreground fraction. Region term: the map is split at the mask
/// centroid into four blocks, each scored by an SSIM-style statistic and
/// weighted by area. An all-background mask scores `1 - mean(s)`, an
/// all-foreground mask `mean(s)`.
pub fn s_measure(s: &Tensor, g: &Tensor) -> Result<f64> {
    if s.shape() != g.shape() {
        return Err(Error::ShapeMismatch {
            op: "s_measure",
            left: s.shape(),
            right: g.shape(),
        });
    }
    let [n, c, h, w] = s.shape();
    if n * c != 1 {
        return Err(Error::invalid("s_measure", "expects a single (1, 1, H, W) map"));
    }
    let pred = s.data();
    let gt: Vec<bool> = g.data().iter().map(|&v| v >= 0.5).collect();
    let fg = gt.iter().filter(|&&b| b).count();
    let mean_pred = pred.iter().sum::<f64>() / pred.len() as f64;
    let score = if fg == 0 {
        1.0 - mean_pred
    } else if fg == gt.len() {
        mean_pred
    } else {
        ALPHA * object_score(pred, &gt) + (1.0 - ALPHA) * region_score(pred, &gt, h, w)
    };
    Ok(score.clamp(0.0, 1.0))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() <= 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn similarity(values: &[f64]) -> f64 {
    let (x, sigma) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma + S_EPS)
}

fn object_score(pred: &[f64], gt: &[bool]) -> f64 {
    let fg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| g).map(|(&p, _)| p).collect();
    let bg: Vec<f64> = pred
        .iter()
        .zip(gt)
        .filter(|(_, &g)| !g)
        .map(|(&p, _)| 1.0 - p)
        .collect();
    let u = fg.len() as f64 / gt.len() as f64;
    u * similarity(&fg) + (1.0 - u) * similarity(&bg)
}

/// 1-based split point from the rounded (ties to even) foreground centroid.
fn centroid(gt: &[bool], h: usize, w: usize) -> (usize, usize) {
    let (mut sy, mut sx, mut count) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if gt[y * w + x] {
                sy += y as f64;
                sx += x as f64;
                count += 1.0;
            }
        }
    }
    let cx = (sx / count).round_ties_even() as usize + 1;
    let cy = (sy / count).round_ties_even() as usize + 1;
    (cx, cy)
}

fn block_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let x = pred.iter().sum::<f64>() / n;
    let y = gt.iter().sum::<f64>() / n;
    let den = n - 1.0 + S_EPS;
    let sx = pred.iter().map(|p| (p - x).powi(2)).sum::<f64>() / den;
    let sy = gt.iter().map(|g| (g - y).powi(2)).sum::<f64>() / den;
    let sxy = pred.iter().zip(gt).map(|(p, g)| (p - x) * (g - y)).sum::<f64>() / den;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + S_EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn region_score(pred: &[f64], gt: &[bool], h: usize, w: usize) -> f64 {
    let (cx, cy) = centroid(gt, h, w);
    let (cx, cy) = (cx.min(w), cy.min(h));
    let area = (h * w) as f64;
    let blocks = [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)];
    let weights = [
        (cx * cy) as f64 / area,
        (cy * (w - cx)) as f64 / area,
        ((h - cy) * cx) as f64 / area,
    ];
    let weights = [
        weights[0],
        weights[1],
        weights[2],
        1.0 - weights[0] - weights[1] - weights[2],
    ];
    let mut total = 0.0;
    for (&(y0, y1, x0, x1), &wt) in blocks.iter().zip(&weights) {
        if y1 <= y0 || x1 <= x0 {
            continue;
        }
        let mut p = Vec::with_capacity((y1 - y0) * (x1 - x0));
        let mut g = Vec::with_capacity(p.capacity());
        for y in y0..y1 {
            for x in x0..x1 {
                p.push(pred[y * w + x]);
                g.push(gt[y * w + x] as u8 as f64);
            }
        }
        total += wt * block_ssim(&p, &g);
    }
    total
}
