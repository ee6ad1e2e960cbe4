use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// The three published depths. Names are labels; only the per-stage
/// repeat counts differ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    OpticNet47,
    OpticNet63,
    OpticNet71,
}

impl Variant {
    pub const ALL: [Variant; 3] = [
        Variant::OpticNet47,
        Variant::OpticNet63,
        Variant::OpticNet71,
    ];

    /// Residual units stacked in each stage's building block.
    pub fn repeats(self) -> [usize; 4] {
        match self {
            Variant::OpticNet47 => [2, 2, 2, 2],
            Variant::OpticNet63 => [3, 3, 3, 3],
            Variant::OpticNet71 => [4, 4, 3, 3],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::OpticNet47 => "opticnet47",
            Variant::OpticNet63 => "opticnet63",
            Variant::OpticNet71 => "opticnet71",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "opticnet47" | "47" => Ok(Variant::OpticNet47),
            "opticnet63" | "63" => Ok(Variant::OpticNet63),
            "opticnet71" | "71" => Ok(Variant::OpticNet71),
            _ => Err(Error::config(format!(
                "unknown variant `{s}` (expected opticnet47, opticnet63 or opticnet71)"
            ))),
        }
    }
}

/// Where a downsampling residual convolution unit applies its stride.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StridePlacement {
    /// On the last 1×1 convolution of the main path and on the projection.
    #[default]
    FinalConv,
}

impl FromStr for StridePlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final-conv" | "final_conv" => Ok(StridePlacement::FinalConv),
            other => Err(Error::config(format!(
                "unsupported stride placement `{other}` (only `final-conv`)"
            ))),
        }
    }
}

/// Widths of the branched residual unit: `C₁` (1×1), the two parallel
/// 2×2 dilation-2 branches `C₂`/`C₃`, and `C₄` (1×1 back to the input width).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResidualUnitConfig {
    pub w1: usize,
    pub w_branch: usize,
    pub w4: usize,
    pub kernel: usize,
    pub dilation: usize,
    /// BN→ReLU→conv ordering when true, conv→BN→ReLU otherwise.
    pub pre_activation: bool,
}

impl ResidualUnitConfig {
    pub fn new(w1: usize, w_branch: usize, w4: usize) -> Self {
        ResidualUnitConfig {
            w1,
            w_branch,
            w4,
            kernel: 2,
            dilation: 2,
            pre_activation: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w1 == 0 || self.w_branch == 0 || self.w4 == 0 {
            return Err(Error::config(format!(
                "residual unit widths must be positive: {self:?}"
            )));
        }
        if self.kernel == 0 || self.dilation == 0 {
            return Err(Error::config(
                "residual unit kernel and dilation must be positive",
            ));
        }
        Ok(())
    }
}

/// Bottleneck widths `[a, a, 4a]` of a residual convolution unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResConvConfig {
    pub widths: [usize; 3],
    /// Side of the middle kernel of the bottleneck.
    pub mid_kernel: usize,
    pub downsample: bool,
    pub stride_placement: StridePlacement,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageConfig {
    pub res_conv: ResConvConfig,
    pub unit: ResidualUnitConfig,
    pub repeats: usize,
}

impl StageConfig {
    pub fn out_channels(&self) -> usize {
        self.res_conv.widths[2]
    }
}

/// Middle kernel of the residual convolution units in the published
/// variants; with it the OpticNet-71 weight census lands on 12.38 M.
pub const DEFAULT_RES_CONV_MID_KERNEL: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Option<Variant>,
    /// Square input side.
    pub input_size: usize,
    pub in_channels: usize,
    pub classes: usize,
    pub stem_width: usize,
    pub stem_kernel: usize,
    pub stages: Vec<StageConfig>,
    pub fc_hidden: usize,
}

impl ModelConfig {
    /// Table of widths: stage `k` has bottleneck `[a, a, 4a]` with
    /// `a = 64·2^k` and residual units `[a/2, a/2, a/2, 4a]`.
    pub fn variant(variant: Variant, input_size: usize, classes: usize) -> Self {
        Self::variant_with_mid_kernel(variant, input_size, classes, DEFAULT_RES_CONV_MID_KERNEL)
    }

    pub fn variant_with_mid_kernel(
        variant: Variant,
        input_size: usize,
        classes: usize,
        mid_kernel: usize,
    ) -> Self {
        let stages = variant
            .repeats()
            .iter()
            .enumerate()
            .map(|(k, &repeats)| {
                let a = 64 << k;
                StageConfig {
                    res_conv: ResConvConfig {
                        widths: [a, a, 4 * a],
                        mid_kernel,
                        downsample: k > 0,
                        stride_placement: StridePlacement::FinalConv,
                    },
                    unit: ResidualUnitConfig::new(a / 2, a / 2, 4 * a),
                    repeats,
                }
            })
            .collect();
        ModelConfig {
            variant: Some(variant),
            input_size,
            in_channels: 3,
            classes,
            stem_width: 64,
            stem_kernel: 7,
            stages,
            fc_hidden: 256,
        }
    }

    /// A two-stage miniature (widths ÷16) for finite-difference checks.
    pub fn tiny(input_size: usize, classes: usize) -> Self {
        let stage = |a: usize, downsample: bool| StageConfig {
            res_conv: ResConvConfig {
                widths: [a, a, 4 * a],
                mid_kernel: DEFAULT_RES_CONV_MID_KERNEL,
                downsample,
                stride_placement: StridePlacement::FinalConv,
            },
            unit: ResidualUnitConfig::new(a / 2, a / 2, 4 * a),
            repeats: 1,
        };
        ModelConfig {
            variant: None,
            input_size,
            in_channels: 3,
            classes,
            stem_width: 4,
            stem_kernel: 7,
            stages: vec![stage(4, false), stage(8, true)],
            fc_hidden: 16,
        }
    }

    /// Total spatial reduction from input to the last stage.
    pub fn reduction(&self) -> usize {
        2 << self.stages.iter().filter(|s| s.res_conv.downsample).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::config("model needs at least one stage"));
        }
        if self.variant.is_some() && self.stages.len() != 4 {
            return Err(Error::config("named variants have exactly four stages"));
        }
        if self.classes < 2 {
            return Err(Error::config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.in_channels == 0
            || self.stem_width == 0
            || self.stem_kernel == 0
            || self.fc_hidden == 0
        {
            return Err(Error::config(
                "stem, input and dense widths must be positive",
            ));
        }
        for (k, stage) in self.stages.iter().enumerate() {
            if stage.repeats == 0 {
                return Err(Error::config(format!(
                    "stage {} needs at least one residual unit",
                    k + 1
                )));
            }
            if stage.res_conv.downsample != (k > 0) {
                return Err(Error::config(format!(
                    "stage {} downsample must be {} (stages 2 and later downsample)",
                    k + 1,
                    k > 0
                )));
            }
            if stage.res_conv.widths.contains(&0) || stage.res_conv.mid_kernel == 0 {
                return Err(Error::config(format!(
                    "stage {} has a zero width or kernel",
                    k + 1
                )));
            }
            stage.unit.validate()?;
            if stage.unit.w4 != stage.out_channels() {
                return Err(Error::config(format!(
                    "stage {}: residual unit output width {} must equal the stage width {} for the identity skip",
                    k + 1,
                    stage.unit.w4,
                    stage.out_channels()
                )));
            }
        }
        let red = self.reduction();
        if self.input_size == 0 || self.input_size % red != 0 {
            return Err(Error::config(format!(
                "input size {} must be a positive multiple of {red} for this stride plan",
                self.input_size
            )));
        }
        if self.input_size / red < 2 {
            return Err(Error::config(format!(
                "input size {} leaves the last stage smaller than the 2x2 exhaustion pool",
                self.input_size
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opticnet71_widths_match_the_architecture_table() {
        let cfg = ModelConfig::variant(Variant::OpticNet71, 224, 4);
        let units: Vec<[usize; 4]> = cfg
            .stages
            .iter()
            .map(|s| [s.unit.w1, s.unit.w_branch, s.unit.w_branch, s.unit.w4])
            .collect();
        assert_eq!(
            units,
            vec![
                [32, 32, 32, 256],
                [64, 64, 64, 512],
                [128, 128, 128, 1024],
                [256, 256, 256, 2048]
            ]
        );
        let convs: Vec<[usize; 3]> = cfg.stages.iter().map(|s| s.res_conv.widths).collect();
        assert_eq!(
            convs,
            vec![
                [64, 64, 256],
                [128, 128, 512],
                [256, 256, 1024],
                [512, 512, 2048]
            ]
        );
        let repeats: Vec<usize> = cfg.stages.iter().map(|s| s.repeats).collect();
        assert_eq!(repeats, vec![4, 4, 3, 3]);
        cfg.validate().unwrap();
    }

    #[test]
    fn variants_differ_only_in_repeats() {
        let a = ModelConfig::variant(Variant::OpticNet47, 224, 4);
        let b = ModelConfig::variant(Variant::OpticNet71, 224, 4);
        for (x, y) in a.stages.iter().zip(&b.stages) {
            assert_eq!(x.res_conv, y.res_conv);
            assert_eq!(x.unit, y.unit);
        }
        assert_eq!(
            a.stages.iter().map(|s| s.repeats).collect::<Vec<_>>(),
            vec![2, 2, 2, 2]
        );
    }

    #[test]
    fn input_size_must_fit_the_stride_plan() {
        assert!(ModelConfig::variant(Variant::OpticNet47, 64, 4)
            .validate()
            .is_ok());
        assert!(ModelConfig::variant(Variant::OpticNet47, 100, 4)
            .validate()
            .is_err());
        assert!(ModelConfig::variant(Variant::OpticNet47, 16, 4)
            .validate()
            .is_err());
    }

    #[test]
    fn skip_width_mismatch_is_a_config_error() {
        let mut cfg = ModelConfig::variant(Variant::OpticNet47, 64, 4);
        cfg.stages[0].unit.w4 = 128;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn variant_names_parse() {
        assert_eq!(
            "OpticNet-71".parse::<Variant>().unwrap(),
            Variant::OpticNet71
        );
        assert_eq!(
            "opticnet47".parse::<Variant>().unwrap(),
            Variant::OpticNet47
        );
        assert!("resnet50".parse::<Variant>().is_err());
        assert!("middle-conv".parse::<StridePlacement>().is_err());
    }
}
