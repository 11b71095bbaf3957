use super::net::Saliency;
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Joint loss node plus its three per-stream values.
#[derive(Clone, Copy, Debug)]
pub struct JointLoss {
    pub total: Var,
    pub rgb: Var,
    pub depth: Var,
    pub rgbd: Var,
}

/// Scalar values of a [`JointLoss`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub rgb: f64,
    pub depth: f64,
    pub rgbd: f64,
}

impl JointLoss {
    pub fn values(&self, tape: &Tape) -> LossValues {
        let v = |x: Var| tape.value(x).data()[0];
        LossValues {
            total: v(self.total),
            rgb: v(self.rgb),
            depth: v(self.depth),
            rgbd: v(self.rgbd),
        }
    }
}

/// Sum of the clamped mean BCE of each stream against the same mask.
pub fn joint_loss(tape: &mut Tape, s: &Saliency, gt: &Tensor) -> Result<JointLoss> {
    let rgb = tape.bce(s.rgb, gt)?;
    let depth = tape.bce(s.depth, gt)?;
    let rgbd = tape.bce(s.rgbd, gt)?;
    let partial = tape.add(rgb, depth)?;
    let total = tape.add(partial, rgbd)?;
    Ok(JointLoss {
        total,
        rgb,
        depth,
        rgbd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn run(maps: [&Tensor; 3], gt: &Tensor) -> LossValues {
        let mut tape = Tape::new();
        let s = Saliency {
            rgb: tape.constant(maps[0].clone()),
            depth: tape.constant(maps[1].clone()),
            rgbd: tape.constant(maps[2].clone()),
        };
        joint_loss(&mut tape, &s, gt).unwrap().values(&tape)
    }

    #[test]
    fn half_maps_cost_three_ln2() {
        let half = Tensor::full([2, 1, 4, 4], 0.5);
        let mut rng = Rng::new(1);
        let gt = Tensor::rand_uniform([2, 1, 4, 4], 0.0, 1.0, &mut rng).map(|v| (v > 0.5) as u8 as f64);
        let l = run([&half, &half, &half], &gt);
        assert!((l.rgb - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((l.total - 3.0 * std::f64::consts::LN_2).abs() < 1e-14);
    }

    #[test]
    fn perfect_fit_is_clamped_near_zero() {
        let mut rng = Rng::new(2);
        let gt = Tensor::rand_uniform([1, 1, 8, 8], 0.0, 1.0, &mut rng).map(|v| (v > 0.3) as u8 as f64);
        let l = run([&gt, &gt, &gt], &gt);
        let bound = -(1.0f64 - 1e-7).ln();
        for v in [l.rgb, l.depth, l.rgbd] {
            assert!(v <= bound + 1e-18 && v > 0.0);
        }
    }

    #[test]
    fn matches_pixel_loop_oracle() {
        let mut rng = Rng::new(3);
        for _ in 0..10 {
            let maps: Vec<Tensor> = (0..3)
                .map(|_| Tensor::rand_uniform([2, 1, 5, 5], 0.0, 1.0, &mut rng))
                .collect();
            let gt = Tensor::rand_uniform([2, 1, 5, 5], 0.0, 1.0, &mut rng).map(|v| v.round());
            let l = run([&maps[0], &maps[1], &maps[2]], &gt);
            let mut want = 0.0;
            for m in &maps {
                let mut acc = 0.0;
                for n in 0..2 {
                    for h in 0..5 {
                        for w in 0..5 {
                            let s = m.at(n, 0, h, w).clamp(1e-7, 1.0 - 1e-7);
                            let g = gt.at(n, 0, h, w);
                            acc -= g * s.ln() + (1.0 - g) * (1.0 - s).ln();
                        }
                    }
                }
                want += acc / 50.0;
            }
            assert!((l.total - want).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::full([1, 1, 2, 2], 0.5));
        let s = Saliency {
            rgb: a,
            depth: a,
            rgbd: a,
        };
        assert!(joint_loss(&mut tape, &s, &Tensor::zeros([1, 1, 3, 3])).is_err());
    }
}
