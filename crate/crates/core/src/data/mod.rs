//! Seeded synthetic RGB-D scenes with exact masks, PNG dataset I/O and
//! training augmentation.
//!
//! Depth follows a "larger is nearer" convention: the background lies in
//! `[0.1, 0.4]` and objects in `[0.6, 1.0]`. A depth-noise level `ν` mixes
//! background depth back into object pixels with per-pixel weight `ν·u`,
//! `u ~ U(0, 1)`, imitating unreliable depth sensors.

mod augment;
mod io;
mod raster;

pub use augment::{augment, flip_horizontal, resize_sample, rotate90, AugmentConfig};
pub use io::{list_stems, load_gray, load_pairs, save_gray, save_sample, SampleDirs};
pub use raster::{Shape2d, ShapeKind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Scene generator settings. Equal settings always yield the same dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    /// Side length in pixels (multiple of 16).
    pub size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub shapes: Vec<ShapeKind>,
    /// Colour separation between objects and background, in `[0, 1]`.
    pub contrast: f64,
    /// Fraction of background depth blended into objects, in `[0, 1]`.
    pub depth_noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            size: 64,
            min_objects: 1,
            max_objects: 2,
            shapes: vec![ShapeKind::Disk, ShapeKind::Rectangle, ShapeKind::Triangle],
            contrast: 0.6,
            depth_noise: 0.2,
            seed: 0,
        }
    }
}

/// One RGB-D scene. All tensors are batch-of-one: rgb `(1, 3, H, W)`,
/// depth and gt `(1, 1, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub rgb: Tensor,
    pub depth: Tensor,
    pub gt: Tensor,
}

impl Sample {
    pub fn size(&self) -> (usize, usize) {
        let [_, _, h, w] = self.gt.shape();
        (h, w)
    }
}

/// Samples stacked along the batch axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub rgb: Tensor,
    pub depth: Tensor,
    pub gt: Tensor,
}

impl Batch {
    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let pick = |f: fn(&Sample) -> &Tensor| Tensor::stack(&samples.iter().map(f).collect::<Vec<_>>());
        Ok(Self {
            rgb: pick(|s| &s.rgb)?,
            depth: pick(|s| &s.depth)?,
            gt: pick(|s| &s.gt)?,
        })
    }

    pub fn len(&self) -> usize {
        self.gt.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("generate", m));
        if self.size == 0 || !self.size.is_multiple_of(16) {
            return bad(format!("size {} must be a positive multiple of 16", self.size));
        }
        if self.min_objects == 0 || self.max_objects < self.min_objects {
            return bad(format!(
                "object range {}..={} is empty",
                self.min_objects, self.max_objects
            ));
        }
        if self.shapes.is_empty() {
            return bad("no shape kinds".into());
        }
        if !(0.0..=1.0).contains(&self.contrast) || !(0.0..=1.0).contains(&self.depth_noise) {
            return bad("contrast and depth noise must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Random shape of `kind` for a canvas of side `size`.
    fn draw_shape(kind: ShapeKind, size: f64, rng: &mut Rng) -> Shape2d {
        let cx = rng.uniform_range(0.2 * size, 0.8 * size);
        let cy = rng.uniform_range(0.2 * size, 0.8 * size);
        let r = rng.uniform_range(0.1 * size, 0.22 * size);
        match kind {
            ShapeKind::Disk => Shape2d::Disk { cx, cy, r },
            ShapeKind::Rectangle => Shape2d::Rectangle {
                cx,
                cy,
                hw: r * rng.uniform_range(0.6, 1.0),
                hh: r * rng.uniform_range(0.6, 1.0),
            },
            ShapeKind::Triangle => {
                let start = rng.uniform_range(0.0, std::f64::consts::TAU);
                let v = [0.0, 1.0, 2.0].map(|k: f64| {
                    let a = start + k * std::f64::consts::TAU / 3.0 + rng.uniform_range(-0.3, 0.3);
                    let rr = r * rng.uniform_range(1.0, 1.4);
                    (cx + rr * a.cos(), cy + rr * a.sin())
                });
                Shape2d::Triangle { v }
            }
        }
    }

    /// Render sample `index`; depends only on `(self, index)`.
    pub fn sample(&self, index: u64) -> Result<Sample> {
        self.validate()?;
        let mut rng = Rng::derive(self.seed, index);
        let n = self.size;
        let pixels = n * n;

        let bg_color = [0; 3].map(|_| rng.uniform_range(0.2, 0.8));
        let bg_base = rng.uniform_range(0.1, 0.25);
        let bg_slope = rng.uniform_range(0.0, 0.15);
        let vertical = rng.bernoulli(0.5);

        let mut rgb = vec![0.0; 3 * pixels];
        let mut depth = vec![0.0; pixels];
        let mut gt = vec![0.0; pixels];
        for y in 0..n {
            for x in 0..n {
                let t = if vertical { y } else { x } as f64 / (n - 1) as f64;
                depth[y * n + x] = bg_base + bg_slope * t;
                for c in 0..3 {
                    rgb[c * pixels + y * n + x] = bg_color[c];
                }
            }
        }
        let bg_depth = depth.clone();

        let count = self.min_objects + rng.below(self.max_objects - self.min_objects + 1);
        for _ in 0..count {
            let kind = self.shapes[rng.below(self.shapes.len())];
            let shape = Self::draw_shape(kind, n as f64, &mut rng);
            let color = bg_color.map(|b| {
                let sign = if b > 0.5 { -1.0 } else { 1.0 };
                (b + sign * self.contrast * rng.uniform_range(0.25, 0.5)).clamp(0.0, 1.0)
            });
            let obj_depth = rng.uniform_range(0.6, 1.0);
            for (i, inside) in shape.rasterize(n, n).into_iter().enumerate() {
                if inside {
                    gt[i] = 1.0;
                    depth[i] = obj_depth;
                    for c in 0..3 {
                        rgb[c * pixels + i] = color[c];
                    }
                }
            }
        }

        for i in 0..pixels {
            if gt[i] == 1.0 && self.depth_noise > 0.0 {
                let wgt = self.depth_noise * rng.uniform();
                depth[i] = (1.0 - wgt) * depth[i] + wgt * bg_depth[i];
            }
        }
        for v in rgb.iter_mut() {
            *v = (*v + rng.uniform_range(-0.04, 0.04)).clamp(0.0, 1.0);
        }

        Ok(Sample {
            rgb: Tensor::from_vec([1, 3, n, n], rgb)?,
            depth: Tensor::from_vec([1, 1, n, n], depth)?,
            gt: Tensor::from_vec([1, 1, n, n], gt)?,
        })
    }
}

/// Samples `0..n` of `spec`.
pub fn generate(spec: &SceneSpec, n: usize) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::invalid("generate", "sample count must be at least 1"));
    }
    (0..n as u64).map(|i| spec.sample(i)).collect()
}
