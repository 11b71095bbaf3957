//! Central-difference gradient checks for every differentiable operation,
//! layer and interaction unit, plus the full network with its joint loss.
//!
//! Each case builds its inputs from a seed, so a `(case, seed)` pair is
//! reproducible. Module parameters are jittered away from their
//! initial values (zero biases, unit BN gains, zeroed heads) before checking
//! so every parameter sees a non-trivial gradient.

use crate::attention::{attention_3d, ChannelAttention, SmarUnit, SmarVariant, SpatialAttention};
use crate::autodiff::{grad_check_many, GradCheckReport, Tape, Var};
use crate::error::Result;
use crate::fusion::{CmwrMode, CmwrUnit, IgfInputs, IgfMode, IgfUnit, PaiMode, PaiUnit};
use crate::model::{joint_loss, CirNet, ModelConfig};
use crate::nn_ops::{ConvBnRelu, ConvSpec, ResizeMode, BN_EPS};
use crate::params::{grad_check_module, ParamKind, ParamStore};
use crate::tensor::{Rng, Shape, Tensor};

pub const STEP: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-4;

/// One named check.
#[derive(Clone, Copy)]
pub struct Case {
    pub name: &'static str,
    pub run: fn(seed: u64, tol: f64) -> Result<GradCheckReport>,
}

impl std::fmt::Debug for Case {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name)
    }
}

/// Result row of [`run`].
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteRow {
    pub name: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

fn rand(shape: Shape, rng: &mut Rng) -> Tensor {
    Tensor::rand_uniform(shape, -1.0, 1.0, rng)
}

/// Check a tape expression of fresh random inputs, contracted with a random
/// projection so every output element contributes.
fn check_expr(
    seed: u64,
    tol: f64,
    shapes: &[Shape],
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let inputs: Vec<Tensor> = shapes.iter().map(|&s| rand(s, &mut rng)).collect();
    check_on(seed, tol, &inputs, f)
}

fn check_on(
    seed: u64,
    tol: f64,
    inputs: &[Tensor],
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let projection = std::cell::RefCell::new(None::<Tensor>);
    grad_check_many(
        |tape, vars| {
            let out = f(tape, vars)?;
            let shape = tape.shape(out);
            let p = projection
                .borrow_mut()
                .get_or_insert_with(|| rand(shape, &mut Rng::derive(seed, 0x9e)))
                .clone();
            let p = tape.constant(p);
            let y = tape.mul(out, p)?;
            Ok(tape.sum(y))
        },
        inputs,
        None,
        STEP,
        tol,
    )
}

/// Scalar `Σ_i sum(out_i ⊙ p_i)` with fixed random `p_i`, for units with
/// several outputs of different shapes.
fn contract(tape: &mut Tape, outs: &[Var], seed: u64) -> Result<Var> {
    let mut total = None;
    for (i, &o) in outs.iter().enumerate() {
        let p = rand(tape.shape(o), &mut Rng::derive(seed, 0x100 + i as u64));
        let p = tape.constant(p);
        let y = tape.mul(o, p)?;
        let y = tape.sum(y);
        total = Some(match total {
            None => y,
            Some(t) => tape.add(t, y)?,
        });
    }
    Ok(total.expect("at least one output"))
}

/// Move every learnable tensor off its initial value.
fn jitter(store: &mut ParamStore, rng: &mut Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.entry(id).kind == ParamKind::Weight {
            for v in store.get_mut(id).data_mut() {
                *v += rng.uniform_range(-0.2, 0.2);
            }
        }
    }
}

fn module<T>(seed: u64, build: impl FnOnce(&mut ParamStore, &mut Rng) -> Result<T>) -> Result<(ParamStore, T, Rng)> {
    let mut store = ParamStore::new();
    let mut rng = Rng::new(seed);
    let unit = build(&mut store, &mut rng)?;
    jitter(&mut store, &mut rng);
    Ok((store, unit, rng))
}

fn op_add(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 3, 4, 4], [1, 3, 1, 1]], |t, v| t.add(v[0], v[1]))
}

fn op_sub(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 3, 4, 4], [1, 1, 4, 4]], |t, v| t.sub(v[0], v[1]))
}

fn op_mul(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 3, 4, 4], [1, 3, 4, 4]], |t, v| t.mul(v[0], v[1]))
}

fn op_affine(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 2, 3, 3]], |t, v| Ok(t.affine(v[0], -1.5, 0.25)))
}

fn op_concat(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 1, 4, 4], [1, 3, 4, 4]], |t, v| t.concat_channels(v))
}

fn op_matmul(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 2, 3, 5], [1, 2, 5, 4]], |t, v| t.matmul(v[0], v[1]))
}

fn op_transpose(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 2, 3, 5]], |t, v| Ok(t.transpose(v[0])))
}

fn op_reshape(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 2, 3, 4]], |t, v| t.reshape(v[0], [1, 1, 6, 4]))
}

fn op_conv2d(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 3, 6, 6], [4, 3, 3, 3], [1, 4, 1, 1]], |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), 1, 1)
    })
}

fn op_conv2d_strided(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 2, 8, 8], [3, 2, 3, 3]], |t, v| {
        t.conv2d(v[0], v[1], None, 2, 1)
    })
}

fn op_batch_norm_train(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 3, 4, 4], [1, 3, 1, 1], [1, 3, 1, 1]], |t, v| {
        Ok(t.batch_norm_train(v[0], v[1], v[2], BN_EPS)?.0)
    })
}

fn op_batch_norm_eval(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = Rng::derive(seed, 1);
    let mean = rand([1, 3, 1, 1], &mut rng);
    let var = Tensor::rand_uniform([1, 3, 1, 1], 0.5, 2.0, &mut rng);
    check_expr(seed, tol, &[[1, 3, 4, 4], [1, 3, 1, 1], [1, 3, 1, 1]], move |t, v| {
        t.batch_norm_eval(v[0], v[1], v[2], &mean, &var, BN_EPS)
    })
}

fn op_relu(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 2, 4, 4]], |t, v| Ok(t.relu(v[0])))
}

fn op_sigmoid(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 2, 4, 4]], |t, v| Ok(t.sigmoid(v[0])))
}

fn op_softmax_rows(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 2, 4, 6]], |t, v| Ok(t.softmax_rows(v[0])))
}

fn op_global_avg_pool(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 4, 4, 4]], |t, v| Ok(t.global_avg_pool(v[0])))
}

fn op_channel_mean(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 4, 4, 4]], |t, v| Ok(t.channel_mean(v[0])))
}

fn op_channel_max(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 4, 4, 4]], |t, v| Ok(t.channel_max(v[0])))
}

fn op_bilinear_up(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 2, 3, 4]], |t, v| {
        t.resize(v[0], 8, 8, ResizeMode::BilinearUp)
    })
}

fn op_avg_pool_down(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 2, 8, 8]], |t, v| {
        t.resize(v[0], 2, 4, ResizeMode::AvgPoolDown)
    })
}

fn op_sum(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 2, 3, 3]], |t, v| Ok(t.sum(v[0])))
}

fn op_mean(seed: u64, tol: f64) -> Result<GradCheckReport> {
    check_expr(seed, tol, &[[1, 2, 3, 3]], |t, v| Ok(t.mean(v[0])))
}

fn op_bce(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let s = Tensor::rand_uniform([1, 1, 6, 6], 0.02, 0.98, &mut rng);
    let g = Tensor::rand_uniform([1, 1, 6, 6], 0.0, 1.0, &mut rng).map(|v| (v > 0.5) as u8 as f64);
    check_on(seed, tol, &[s], move |t, v| t.bce(v[0], &g))
}

fn layer_conv_bn_relu(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let (store, layer, mut rng) = module(seed, |s, r| Ok(ConvBnRelu::new(s, r, "cbr", ConvSpec::cbr(3, 4, 3))))?;
    let x = rand([1, 3, 5, 5], &mut rng);
    grad_check_module(&store, &[x], true, None, seed, tol, |ctx, v| layer.forward(ctx, v[0]))
}

fn layer_conv_bn_relu_eval(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let (store, layer, mut rng) = module(seed, |s, r| Ok(ConvBnRelu::new(s, r, "cbr", ConvSpec::cbr(3, 4, 3))))?;
    let x = rand([1, 3, 5, 5], &mut rng);
    grad_check_module(&store, &[x], false, None, seed, tol, |ctx, v| layer.forward(ctx, v[0]))
}

fn unit_sa(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let (store, sa, mut rng) = module(seed, |s, r| Ok(SpatialAttention::new(s, r, "sa")))?;
    let x = rand([1, 4, 6, 6], &mut rng);
    grad_check_module(&store, &[x], true, None, seed, tol, |ctx, v| sa.forward(ctx, v[0]))
}

fn unit_ca(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let (store, ca, mut rng) = module(seed, |s, r| ChannelAttention::new(s, r, "ca", 4, 2))?;
    let x = rand([1, 4, 6, 6], &mut rng);
    grad_check_module(&store, &[x], true, None, seed, tol, |ctx, v| ca.forward(ctx, v[0]))
}

fn unit_a3d(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let c = Tensor::rand_uniform([1, 4, 1, 1], 0.0, 1.0, &mut rng);
    let s = Tensor::rand_uniform([1, 1, 5, 5], 0.0, 1.0, &mut rng);
    grad_check_module(&ParamStore::new(), &[c, s], true, None, seed, tol, |ctx, v| {
        attention_3d(ctx, v[0], v[1])
    })
}

fn smar(seed: u64, tol: f64, variant: SmarVariant) -> Result<GradCheckReport> {
    let (store, unit, mut rng) = module(seed, |s, r| SmarUnit::new(s, r, "smar", 4, 2, variant))?;
    let x = rand([1, 4, 4, 4], &mut rng);
    grad_check_module(&store, &[x], true, None, seed, tol, |ctx, v| unit.forward(ctx, v[0]))
}

fn unit_smar(seed: u64, tol: f64) -> Result<GradCheckReport> {
    smar(seed, tol, SmarVariant::Full3d)
}

fn unit_smar_channel(seed: u64, tol: f64) -> Result<GradCheckReport> {
    smar(seed, tol, SmarVariant::ChannelOnly)
}

fn unit_smar_spatial(seed: u64, tol: f64) -> Result<GradCheckReport> {
    smar(seed, tol, SmarVariant::SpatialOnly)
}

fn unit_smar_spatial_channel(seed: u64, tol: f64) -> Result<GradCheckReport> {
    smar(seed, tol, SmarVariant::SpatialThenChannel)
}

fn pai(seed: u64, tol: f64, mode: PaiMode) -> Result<GradCheckReport> {
    let (store, unit, mut rng) = module(seed, |s, r| {
        Ok(PaiUnit::new(s, r, "pai", [2, 3, 3], [1, 2, 2], [3, 4, 4], mode))
    })?;
    let inputs = vec![
        rand([1, 2, 8, 8], &mut rng),
        rand([1, 3, 4, 4], &mut rng),
        rand([1, 3, 4, 4], &mut rng),
        rand([1, 1, 8, 8], &mut rng),
        rand([1, 2, 4, 4], &mut rng),
        rand([1, 2, 4, 4], &mut rng),
    ];
    grad_check_module(&store, &inputs, true, None, seed, tol, |ctx, v| {
        let out = unit.forward(ctx, &[v[0], v[1], v[2]], &[v[3], v[4], v[5]])?;
        contract(ctx.tape, &out, seed)
    })
}

fn unit_pai(seed: u64, tol: f64) -> Result<GradCheckReport> {
    pai(seed, tol, PaiMode::On)
}

fn unit_pai_off(seed: u64, tol: f64) -> Result<GradCheckReport> {
    pai(seed, tol, PaiMode::Off)
}

fn cmwr(seed: u64, tol: f64, mode: CmwrMode) -> Result<GradCheckReport> {
    let (store, unit, mut rng) = module(seed, |s, r| CmwrUnit::new(s, r, "cmwr", 4, mode))?;
    let inputs: Vec<Tensor> = (0..3).map(|_| rand([1, 4, 3, 3], &mut rng)).collect();
    grad_check_module(&store, &inputs, true, None, seed, tol, |ctx, v| {
        let out = unit.forward(ctx, v[0], v[1], v[2])?;
        contract(ctx.tape, &[out.rgb, out.depth, out.rgbd], seed)
    })
}

fn unit_cmwr(seed: u64, tol: f64) -> Result<GradCheckReport> {
    cmwr(seed, tol, CmwrMode::Full)
}

fn unit_cmwr_m1(seed: u64, tol: f64) -> Result<GradCheckReport> {
    cmwr(seed, tol, CmwrMode::M1Only)
}

fn unit_cmwr_m2(seed: u64, tol: f64) -> Result<GradCheckReport> {
    cmwr(seed, tol, CmwrMode::M2Only)
}

fn igf(seed: u64, tol: f64, mode: IgfMode) -> Result<GradCheckReport> {
    let (store, unit, mut rng) = module(seed, |s, r| IgfUnit::new(s, r, "igf", 4, 2, 3, 2, mode))?;
    let inputs = vec![
        rand([1, 4, 4, 4], &mut rng),
        rand([1, 4, 4, 4], &mut rng),
        rand([1, 2, 4, 4], &mut rng),
        rand([1, 3, 4, 4], &mut rng),
        rand([1, 4, 2, 2], &mut rng),
    ];
    grad_check_module(&store, &inputs, true, None, seed, tol, |ctx, v| {
        let x = IgfInputs {
            rgb_dec: v[0],
            depth_dec: v[1],
            rgb_skip: v[2],
            depth_skip: v[3],
            prev: v[4],
        };
        unit.forward(ctx, &x)
    })
}

fn unit_igf(seed: u64, tol: f64) -> Result<GradCheckReport> {
    igf(seed, tol, IgfMode::Gate)
}

fn unit_igf_add(seed: u64, tol: f64) -> Result<GradCheckReport> {
    igf(seed, tol, IgfMode::Add)
}

fn unit_igf_cat(seed: u64, tol: f64) -> Result<GradCheckReport> {
    igf(seed, tol, IgfMode::Cat)
}

fn unit_igf_off(seed: u64, tol: f64) -> Result<GradCheckReport> {
    igf(seed, tol, IgfMode::Off)
}

/// Coordinates sampled per seed for the full network, roughly a fifth of
/// its parameters and inputs. The smaller cases check every coordinate.
pub const NETWORK_COORDS: usize = 2500;

/// The smallest admissible network (16×16 input, batch of two, training
/// mode) through the three-stream joint loss.
fn network_loss(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut net = CirNet::new(ModelConfig::tiny(), seed)?;
    let mut rng = Rng::derive(seed, 7);
    jitter(&mut net.store, &mut rng);
    let size = net.config.image_size;
    let rgb = Tensor::rand_uniform([2, 3, size, size], 0.0, 1.0, &mut rng);
    let depth = Tensor::rand_uniform([2, 1, size, size], 0.0, 1.0, &mut rng);
    let gt = Tensor::rand_uniform([2, 1, size, size], 0.0, 1.0, &mut rng).map(|v| (v > 0.5) as u8 as f64);
    grad_check_module(
        &net.store,
        &[rgb, depth],
        true,
        Some(NETWORK_COORDS),
        seed,
        tol,
        |ctx, v| {
            let s = net.forward(ctx, v[0], v[1])?;
            Ok(joint_loss(ctx.tape, &s, &gt)?.total)
        },
    )
}

macro_rules! cases {
    ($($name:literal => $f:ident),* $(,)?) => {
        &[$(Case { name: $name, run: $f }),*]
    };
}

pub const CASES: &[Case] = cases![
    "add" => op_add,
    "sub" => op_sub,
    "mul" => op_mul,
    "affine" => op_affine,
    "concat_channels" => op_concat,
    "matmul" => op_matmul,
    "transpose" => op_transpose,
    "reshape" => op_reshape,
    "conv2d" => op_conv2d,
    "conv2d_stride2" => op_conv2d_strided,
    "batch_norm_train" => op_batch_norm_train,
    "batch_norm_eval" => op_batch_norm_eval,
    "relu" => op_relu,
    "sigmoid" => op_sigmoid,
    "softmax_rows" => op_softmax_rows,
    "global_avg_pool" => op_global_avg_pool,
    "channel_mean" => op_channel_mean,
    "channel_max" => op_channel_max,
    "bilinear_up" => op_bilinear_up,
    "avg_pool_down" => op_avg_pool_down,
    "sum" => op_sum,
    "mean" => op_mean,
    "bce" => op_bce,
    "conv_bn_relu" => layer_conv_bn_relu,
    "conv_bn_relu_eval" => layer_conv_bn_relu_eval,
    "spatial_attention" => unit_sa,
    "channel_attention" => unit_ca,
    "attention_3d" => unit_a3d,
    "smar" => unit_smar,
    "smar_channel_only" => unit_smar_channel,
    "smar_spatial_only" => unit_smar_spatial,
    "smar_spatial_then_channel" => unit_smar_spatial_channel,
    "pai" => unit_pai,
    "pai_off" => unit_pai_off,
    "cmwr" => unit_cmwr,
    "cmwr_m1_only" => unit_cmwr_m1,
    "cmwr_m2_only" => unit_cmwr_m2,
    "igf" => unit_igf,
    "igf_add" => unit_igf_add,
    "igf_cat" => unit_igf_cat,
    "igf_off" => unit_igf_off,
    "network_joint_loss" => network_loss,
];

/// Run every case whose name contains `filter` (all when `None`) on each seed.
pub fn run(seeds: &[u64], tol: f64, filter: Option<&str>) -> Result<Vec<SuiteRow>> {
    let mut rows = Vec::new();
    for case in CASES.iter().filter(|c| filter.is_none_or(|f| c.name.contains(f))) {
        for &seed in seeds {
            rows.push(SuiteRow {
                name: case.name,
                seed,
                report: (case.run)(seed, tol)?,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut names: Vec<_> = CASES.iter().map(|c| c.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), CASES.len());
    }

    #[test]
    fn cheap_cases_pass() {
        for row in run(&[0], DEFAULT_TOL, Some("m")).unwrap() {
            assert!(row.report.pass, "{} {:?}", row.name, row.report);
            assert!(row.report.checked > 0);
        }
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        // below finite-difference accuracy the comparison must fail
        let r = op_sigmoid(0, 1e-14).unwrap();
        assert!(!r.pass);
    }
}
