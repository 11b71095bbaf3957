use super::config::{ModelConfig, STRIDES};
use crate::attention::SmarUnit;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::fusion::{CmwrUnit, IgfInputs, IgfUnit, PaiUnit};
use crate::nn_ops::{ConvBnRelu, ConvSpec};
use crate::params::{Ctx, ParamStore};
use crate::tensor::{Rng, Tensor};

/// Five strided conv-BN-ReLU stages standing in for a pretrained backbone.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub stages: Vec<ConvBnRelu>,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, in_channels: usize, channels: [usize; 5]) -> Self {
        let mut prev = in_channels;
        let stages = channels
            .iter()
            .zip(STRIDES)
            .enumerate()
            .map(|(i, (&c, s))| {
                let layer = ConvBnRelu::new(
                    store,
                    rng,
                    &format!("{name}.stage{}", i + 1),
                    ConvSpec::cbr(prev, c, 3).stride(s),
                );
                prev = c;
                layer
            })
            .collect();
        Self { stages }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<[Var; 5]> {
        let mut out = [x; 5];
        let mut cur = x;
        for (i, stage) in self.stages.iter().enumerate() {
            cur = stage.forward(ctx, cur)?;
            out[i] = cur;
        }
        Ok(out)
    }
}

/// One UNet-style decoder per modality: `d5 = conv(f5)`,
/// `d_i = conv([up(d_{i+1}), f_i])`.
#[derive(Clone, Debug)]
pub struct ModalityDecoder {
    pub top: ConvBnRelu,
    /// Levels 1..4.
    pub levels: Vec<ConvBnRelu>,
}

impl ModalityDecoder {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, channels: [usize; 5], width: usize) -> Self {
        let top = ConvBnRelu::new(
            store,
            rng,
            &format!("{name}.level5"),
            ConvSpec::cbr(channels[4], width, 3),
        );
        let levels = (0..4)
            .map(|i| {
                ConvBnRelu::new(
                    store,
                    rng,
                    &format!("{name}.level{}", i + 1),
                    ConvSpec::cbr(width + channels[i], width, 3),
                )
            })
            .collect();
        Self { top, levels }
    }

    /// Decoder features for levels 1..5; `refined` replaces the level-5
    /// encoder feature.
    pub fn forward(&self, ctx: &mut Ctx, encoder: &[Var; 5], refined: Var) -> Result<[Var; 5]> {
        let mut out = [refined; 5];
        out[4] = self.top.forward(ctx, refined)?;
        for i in (0..4).rev() {
            let [_, _, h, w] = ctx.tape.shape(encoder[i]);
            let up = ctx.tape.upsample_to(out[i + 1], h, w)?;
            let cat = ctx.tape.concat_channels(&[up, encoder[i]])?;
            out[i] = self.levels[i].forward(ctx, cat)?;
        }
        Ok(out)
    }
}

/// The three saliency maps, each `(N, 1, H, W)` in `(0, 1)`.
#[derive(Clone, Copy, Debug)]
pub struct Saliency {
    pub rgb: Var,
    pub depth: Var,
    pub rgbd: Var,
}

/// Plain-tensor counterpart of [`Saliency`].
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub rgb: Tensor,
    pub depth: Tensor,
    pub rgbd: Tensor,
}

/// Three-stream encoder-decoder with cross-modality interaction.
///
/// RGB and depth backbones feed an attention-guided RGB-D encoder branch
/// (levels 3..5). The three level-5 features are refined per modality, then
/// reweighted jointly. Two modality decoders and a gated RGB-D decoder
/// produce one saliency map each.
#[derive(Clone, Debug)]
pub struct CirNet {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub rgb_backbone: Backbone,
    pub depth_backbone: Backbone,
    pub pai: PaiUnit,
    pub smar_rgb: SmarUnit,
    pub smar_depth: SmarUnit,
    pub smar_rgbd: SmarUnit,
    pub cmwr: CmwrUnit,
    pub seed_conv: ConvBnRelu,
    pub rgb_decoder: ModalityDecoder,
    pub depth_decoder: ModalityDecoder,
    /// Levels 1..5.
    pub igf: Vec<IgfUnit>,
    pub head_rgb: ConvBnRelu,
    pub head_depth: ConvBnRelu,
    pub head_rgbd: ConvBnRelu,
}

impl CirNet {
    /// Build with seeded fan-in uniform conv weights and zeroed heads.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let rng = &mut Rng::new(seed);
        let s = &mut store;
        let c = config.channels;
        let d = config.decoder_width;
        let r = config.reduction;
        let c5 = c[4];
        let smar_variant = config.smar.variant().unwrap_or_default();
        let rgb_backbone = Backbone::new(s, rng, "rgb_backbone", 3, c);
        let depth_backbone = Backbone::new(s, rng, "depth_backbone", 1, c);
        let lv = [c[2], c[3], c[4]];
        let pai = PaiUnit::new(s, rng, "pai", lv, lv, lv, config.pai);
        let smar_rgb = SmarUnit::new(s, rng, "smar_rgb", c5, r, smar_variant)?;
        let smar_depth = SmarUnit::new(s, rng, "smar_depth", c5, r, smar_variant)?;
        let smar_rgbd = SmarUnit::new(s, rng, "smar_rgbd", c5, r, smar_variant)?;
        let cmwr = CmwrUnit::new(s, rng, "cmwr", c5, config.cmwr.mode().unwrap_or_default())?;
        let seed_conv = ConvBnRelu::new(s, rng, "seed", ConvSpec::cbr(c5, d, 1));
        let rgb_decoder = ModalityDecoder::new(s, rng, "rgb_decoder", c, d);
        let depth_decoder = ModalityDecoder::new(s, rng, "depth_decoder", c, d);
        let igf = (0..5)
            .map(|i| IgfUnit::new(s, rng, &format!("igf{}", i + 1), d, c[i], c[i], r, config.igf))
            .collect::<Result<Vec<_>>>()?;
        let head = |s: &mut ParamStore, rng: &mut Rng, name: &str| {
            let h = ConvBnRelu::new(s, rng, name, ConvSpec::plain(d, 1, 1));
            h.zero(s);
            h
        };
        let head_rgb = head(s, rng, "head_rgb");
        let head_depth = head(s, rng, "head_depth");
        let head_rgbd = head(s, rng, "head_rgbd");
        Ok(Self {
            config,
            store,
            rgb_backbone,
            depth_backbone,
            pai,
            smar_rgb,
            smar_depth,
            smar_rgbd,
            cmwr,
            seed_conv,
            rgb_decoder,
            depth_decoder,
            igf,
            head_rgb,
            head_depth,
            head_rgbd,
        })
    }

    fn check_inputs(&self, rgb: [usize; 4], depth: [usize; 4]) -> Result<()> {
        if rgb[1] != 3 || depth[1] != 1 || rgb[0] != depth[0] || rgb[2..] != depth[2..] {
            return Err(Error::ShapeMismatch {
                op: "CirNet::forward",
                left: rgb,
                right: depth,
            });
        }
        if !rgb[2].is_multiple_of(16) || !rgb[3].is_multiple_of(16) || rgb[2] == 0 || rgb[3] == 0 {
            return Err(Error::invalid(
                "CirNet::forward",
                format!("spatial size {}x{} must be a positive multiple of 16", rgb[2], rgb[3]),
            ));
        }
        Ok(())
    }

    /// Forward pass on a context bound to [`CirNet::store`] (or to leaves
    /// mirroring it).
    pub fn forward(&self, ctx: &mut Ctx, rgb: Var, depth: Var) -> Result<Saliency> {
        let (rs, ds) = (ctx.tape.shape(rgb), ctx.tape.shape(depth));
        self.check_inputs(rs, ds)?;
        let (h, w) = (rs[2], rs[3]);

        let fr = self.rgb_backbone.forward(ctx, rgb)?;
        let fd = self.depth_backbone.forward(ctx, depth)?;
        let frgbd = self.pai.forward(ctx, &[fr[2], fr[3], fr[4]], &[fd[2], fd[3], fd[4]])?;

        let (mut r5, mut d5, mut rgbd5) = (fr[4], fd[4], frgbd[2]);
        if self.config.smar.variant().is_some() {
            r5 = self.smar_rgb.forward(ctx, r5)?;
            d5 = self.smar_depth.forward(ctx, d5)?;
            rgbd5 = self.smar_rgbd.forward(ctx, rgbd5)?;
        }
        if self.config.cmwr.mode().is_some() {
            let out = self.cmwr.forward(ctx, r5, d5, rgbd5)?;
            (r5, d5, rgbd5) = (out.rgb, out.depth, out.rgbd);
        }

        let dr = self.rgb_decoder.forward(ctx, &fr, r5)?;
        let dd = self.depth_decoder.forward(ctx, &fd, d5)?;
        let mut prev = self.seed_conv.forward(ctx, rgbd5)?;
        for i in (0..5).rev() {
            let inputs = IgfInputs {
                rgb_dec: dr[i],
                depth_dec: dd[i],
                rgb_skip: fr[i],
                depth_skip: fd[i],
                prev,
            };
            prev = self.igf[i].forward(ctx, &inputs)?;
        }

        let mut head = |layer: &ConvBnRelu, x: Var| -> Result<Var> {
            let logits = layer.forward(ctx, x)?;
            let s = ctx.tape.sigmoid(logits);
            ctx.tape.upsample_to(s, h, w)
        };
        Ok(Saliency {
            rgb: head(&self.head_rgb, dr[0])?,
            depth: head(&self.head_depth, dd[0])?,
            rgbd: head(&self.head_rgbd, prev)?,
        })
    }

    /// Eval-mode inference on plain tensors.
    pub fn predict(&self, rgb: &Tensor, depth: &Tensor) -> Result<Prediction> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::bind(&mut tape, &self.store, false);
        let rv = ctx.tape.constant(rgb.clone());
        let dv = ctx.tape.constant(depth.clone());
        let s = self.forward(&mut ctx, rv, dv)?;
        Ok(Prediction {
            rgb: tape.value(s.rgb).clone(),
            depth: tape.value(s.depth).clone(),
            rgbd: tape.value(s.rgbd).clone(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.num_weights() + self.store.num_buffers()
    }
}
