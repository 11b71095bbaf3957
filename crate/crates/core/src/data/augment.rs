use serde::{Deserialize, Serialize};

use super::Sample;
use crate::nn_ops::bilinear_resize;
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub rotate: bool,
    /// Candidate square training sizes; one is drawn per batch.
    pub scales: Vec<usize>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            rotate: true,
            scales: vec![48, 64, 80],
        }
    }
}

fn map_planes(x: &Tensor, out_hw: (usize, usize), f: impl Fn(usize, usize) -> (usize, usize)) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = out_hw;
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let (sy, sx) = f(y, xx);
                    debug_assert!(sy < h && sx < w);
                    out.set(b, ch, y, xx, x.at(b, ch, sy, sx));
                }
            }
        }
    }
    out
}

fn flip_tensor(x: &Tensor) -> Tensor {
    let [_, _, h, w] = x.shape();
    map_planes(x, (h, w), |y, xx| (y, w - 1 - xx))
}

/// Rotate each plane by `k` quarter turns counter-clockwise.
fn rotate_tensor(x: &Tensor, k: usize) -> Tensor {
    let [_, _, h, w] = x.shape();
    match k % 4 {
        0 => x.clone(),
        1 => map_planes(x, (w, h), |y, xx| (xx, w - 1 - y)),
        2 => map_planes(x, (h, w), |y, xx| (h - 1 - y, w - 1 - xx)),
        _ => map_planes(x, (w, h), |y, xx| (h - 1 - xx, y)),
    }
}

fn transform(s: &Sample, f: impl Fn(&Tensor) -> Tensor) -> Sample {
    Sample {
        rgb: f(&s.rgb),
        depth: f(&s.depth),
        gt: f(&s.gt),
    }
}

pub fn flip_horizontal(s: &Sample) -> Sample {
    transform(s, flip_tensor)
}

pub fn rotate90(s: &Sample, k: usize) -> Sample {
    transform(s, |x| rotate_tensor(x, k))
}

/// Bilinear resize of all three maps; the mask is re-binarized at 0.5.
pub fn resize_sample(s: &Sample, size: usize) -> Sample {
    let (h, w) = s.size();
    if (h, w) == (size, size) {
        return s.clone();
    }
    Sample {
        rgb: bilinear_resize(&s.rgb, size, size),
        depth: bilinear_resize(&s.depth, size, size),
        gt: bilinear_resize(&s.gt, size, size).map(|v| if v >= 0.5 { 1.0 } else { 0.0 }),
    }
}

/// Random flip, quarter-turn rotation and resize to `size`, drawing only
/// from `rng`.
pub fn augment(s: &Sample, cfg: &AugmentConfig, size: usize, rng: &mut Rng) -> Sample {
    let mut out = if rng.bernoulli(cfg.flip_prob) {
        flip_horizontal(s)
    } else {
        s.clone()
    };
    if cfg.rotate {
        let k = rng.below(4);
        out = rotate90(&out, k);
    }
    resize_sample(&out, size)
}
