use serde::{Deserialize, Serialize};

use crate::attention::SmarVariant;
use crate::error::{Error, Result};
use crate::fusion::{CmwrMode, IgfMode, PaiMode};

/// Self-modality refinement setting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmarSetting {
    #[default]
    #[serde(alias = "on")]
    Full3d,
    ChannelOnly,
    SpatialOnly,
    SpatialThenChannel,
    Off,
}

impl SmarSetting {
    pub fn variant(self) -> Option<SmarVariant> {
        match self {
            Self::Full3d => Some(SmarVariant::Full3d),
            Self::ChannelOnly => Some(SmarVariant::ChannelOnly),
            Self::SpatialOnly => Some(SmarVariant::SpatialOnly),
            Self::SpatialThenChannel => Some(SmarVariant::SpatialThenChannel),
            Self::Off => None,
        }
    }
}

/// Cross-modality weighting setting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmwrSetting {
    #[default]
    #[serde(alias = "on")]
    Full,
    M1Only,
    M2Only,
    Off,
}

impl CmwrSetting {
    pub fn mode(self) -> Option<CmwrMode> {
        match self {
            Self::Full => Some(CmwrMode::Full),
            Self::M1Only => Some(CmwrMode::M1Only),
            Self::M2Only => Some(CmwrMode::M2Only),
            Self::Off => None,
        }
    }
}

/// Network shape and ablation switches.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Encoder channels per level, 1 to 5.
    pub channels: [usize; 5],
    /// Width of all decoder features.
    pub decoder_width: usize,
    /// Channel-attention reduction ratio.
    pub reduction: usize,
    /// Training and inference resolution (square).
    pub image_size: usize,
    pub pai: PaiMode,
    pub smar: SmarSetting,
    pub cmwr: CmwrSetting,
    pub igf: IgfMode,
}

/// Encoder strides; levels 4 and 5 share a resolution.
pub const STRIDES: [usize; 5] = [2, 2, 2, 2, 1];

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: [16, 24, 32, 48, 64],
            decoder_width: 16,
            reduction: 4,
            image_size: 64,
            pai: PaiMode::On,
            smar: SmarSetting::Full3d,
            cmwr: CmwrSetting::Full,
            igf: IgfMode::Gate,
        }
    }
}

impl ModelConfig {
    /// Every interaction unit disabled: concat-conv encoder fusion, no
    /// middleware and a plain upsampling decoder.
    pub fn baseline() -> Self {
        Self {
            pai: PaiMode::Off,
            smar: SmarSetting::Off,
            cmwr: CmwrSetting::Off,
            igf: IgfMode::Off,
            ..Self::default()
        }
    }

    /// A very small network, handy for gradient checks.
    pub fn tiny() -> Self {
        Self {
            channels: [4; 5],
            decoder_width: 4,
            reduction: 2,
            image_size: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let r = self.reduction;
        if self.channels.contains(&0) || self.decoder_width == 0 {
            return bad("channel counts must be positive".into());
        }
        if r == 0 || !self.channels[4].is_multiple_of(r) || !self.decoder_width.is_multiple_of(r) {
            return bad(format!(
                "reduction {r} must divide the level-5 width {} and decoder width {}",
                self.channels[4], self.decoder_width
            ));
        }
        if !self.channels[4].is_multiple_of(2) {
            return bad(format!("level-5 width {} must be even", self.channels[4]));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(16) {
            return bad(format!(
                "image size {} must be a positive multiple of 16",
                self.image_size
            ));
        }
        Ok(())
    }

    /// Closed-form count of stored scalars (weights and BN running stats).
    ///
    /// With `cbr(i, o, k) = o i k² + 5 o` (conv, bias, BN gamma, beta, mean,
    /// var), `plain(i, o, k) = o i k² + o`, encoder widths `c1..c5`, `c0 = 3`
    /// for RGB and `1` for depth, decoder width `D` and reduction `r`:
    ///
    /// - backbones: `Σ cbr(c(i-1), ci, 3)` per modality
    /// - PAI: `Σ_{i=3..5} cbr(2ci, ci, 3) + plain(2, 1, 3)`
    /// - refinement, per modality: `plain(2, 1, 3) + plain(c5, c5/r, 1) + plain(c5/r, c5, 1) + cbr(c5, c5, 3)`
    /// - cross weighting: `4 plain(c5, c5/2, 1)`
    /// - decoder seed: `cbr(c5, D, 1)`
    /// - per-modality decoders: `cbr(c5, D, 3) + Σ_{i=1..4} cbr(D + ci, D, 3)`
    /// - gated fusion per level: `2 cbr(D + ci, D, 3) + plain(2D, D, 1) + cbr(3D, D, 1)
    ///   + plain(D, D/r, 1) + plain(D/r, D, 1) + cbr(D, D, 3)`
    /// - heads: `3 plain(D, 1, 1)`
    pub fn param_count(&self) -> usize {
        let cbr = |i: usize, o: usize, k: usize| o * i * k * k + 5 * o;
        let plain = |i: usize, o: usize, k: usize| o * i * k * k + o;
        let c = self.channels;
        let d = self.decoder_width;
        let r = self.reduction;
        let c5 = c[4];
        let backbone = |c0: usize| {
            let mut prev = c0;
            let mut total = 0;
            for &ci in &c {
                total += cbr(prev, ci, 3);
                prev = ci;
            }
            total
        };
        let pai: usize = c[2..].iter().map(|&ci| cbr(2 * ci, ci, 3)).sum::<usize>() + plain(2, 1, 3);
        let smar = plain(2, 1, 3) + plain(c5, c5 / r, 1) + plain(c5 / r, c5, 1) + cbr(c5, c5, 3);
        let cmwr = 4 * plain(c5, c5 / 2, 1);
        let seed = cbr(c5, d, 1);
        let decoder = cbr(c5, d, 3) + c[..4].iter().map(|&ci| cbr(d + ci, d, 3)).sum::<usize>();
        let igf: usize = c
            .iter()
            .map(|&ci| {
                2 * cbr(d + ci, d, 3)
                    + plain(2 * d, d, 1)
                    + cbr(3 * d, d, 1)
                    + plain(d, d / r, 1)
                    + plain(d / r, d, 1)
                    + cbr(d, d, 3)
            })
            .sum();
        let heads = 3 * plain(d, 1, 1);
        backbone(3) + backbone(1) + pai + 3 * smar + cmwr + seed + 2 * decoder + igf + heads
    }

    /// Spatial size of each encoder level for a square input of side `size`.
    pub fn level_sizes(size: usize) -> [usize; 5] {
        let mut out = [0; 5];
        let mut s = size;
        for (i, stride) in STRIDES.iter().enumerate() {
            s /= stride;
            out[i] = s;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let cfg = ModelConfig {
            smar: SmarSetting::SpatialThenChannel,
            cmwr: CmwrSetting::M2Only,
            igf: IgfMode::Cat,
            ..ModelConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<ModelConfig>(&text).unwrap(), cfg);
        assert!(toml::from_str::<ModelConfig>("chanels = [1, 2, 3, 4, 5]").is_err());
        let on: ModelConfig = toml::from_str("pai = \"on\"\nsmar = \"on\"\ncmwr = \"on\"\nigf = \"on\"").unwrap();
        assert_eq!(on, ModelConfig::default());
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::tiny().validate().is_ok());
        let bad = ModelConfig {
            image_size: 40,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            reduction: 5,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn level_sizes_follow_strides() {
        assert_eq!(ModelConfig::level_sizes(64), [32, 16, 8, 4, 4]);
    }
}
