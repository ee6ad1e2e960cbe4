//! Closed-form parameter counts for the middle convolution of a residual
//! unit, parameter depletion factors, whole-model weight census and FLOP
//! estimates.
//!
//! Closed forms use `f` for the kernel side of the conventional 3×3 middle
//! convolution being replaced, `D` for the middle width and `D_prev` for
//! the width feeding it. The atrous kinds use `(f-1)×(f-1)` kernels.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::LayerRow;
use crate::tensor::Float;

use super::model::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiddleKind {
    Regular,
    Atrous,
    Separable,
    AtrousSeparable,
    /// Atrous and atrous-separable branches of `D/2` channels each, fed by
    /// `D_prev/2` channels.
    Branched,
}

impl MiddleKind {
    pub const ALL: [MiddleKind; 5] = [
        MiddleKind::Regular,
        MiddleKind::Atrous,
        MiddleKind::Separable,
        MiddleKind::AtrousSeparable,
        MiddleKind::Branched,
    ];

    /// Depletion factors as printed in the published comparison table, for
    /// side-by-side reporting only.
    pub fn published_depletion(self) -> f64 {
        match self {
            MiddleKind::Regular => 100.0,
            MiddleKind::Atrous => 44.9,
            MiddleKind::Separable => 12.5,
            MiddleKind::AtrousSeparable => 11.6,
            MiddleKind::Branched => 14.4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MiddleKind::Regular => "regular",
            MiddleKind::Atrous => "atrous",
            MiddleKind::Separable => "separable",
            MiddleKind::AtrousSeparable => "atrous-separable",
            MiddleKind::Branched => "branched",
        }
    }
}

impl fmt::Display for MiddleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MiddleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MiddleKind::ALL
            .into_iter()
            .find(|k| k.label() == s.to_ascii_lowercase().replace('_', "-"))
            .ok_or_else(|| Error::contract(format!("unknown convolution kind `{s}`")))
    }
}

/// Bias-free parameter count of a residual unit's middle section.
pub fn middle_params(kind: MiddleKind, f: u64, d: u64, d_prev: u64) -> Result<u64> {
    if f == 0 || d == 0 || d_prev == 0 {
        return Err(Error::contract("kernel side and widths must be positive"));
    }
    let fm = (f - 1) * (f - 1);
    Ok(match kind {
        MiddleKind::Regular => f * f * d * d_prev,
        MiddleKind::Atrous => fm * d * d_prev,
        MiddleKind::Separable => (f * f + d) * d_prev,
        MiddleKind::AtrousSeparable => (fm + d) * d_prev,
        MiddleKind::Branched => {
            // ½((f-1)²(1 + ½D) + ½D)·D_prev, kept in integers.
            let quad = (fm * (2 + d) + d) * d_prev;
            if quad % 4 != 0 {
                return Err(Error::contract(format!(
                    "branched count is fractional for f={f}, D={d}, D_prev={d_prev}"
                )));
            }
            quad / 4
        }
    })
}

/// `Φ_p`: parameters of `kind` relative to the regular convolution, percent.
pub fn depletion_factor(kind: MiddleKind, f: u64, d: u64) -> f64 {
    let (f, d) = (f as f64, d as f64);
    let shrink = (1.0 - 1.0 / f).powi(2);
    100.0
        * match kind {
            MiddleKind::Regular => 1.0,
            MiddleKind::Atrous => shrink,
            MiddleKind::Separable => 1.0 / (f * f) + 1.0 / d,
            MiddleKind::AtrousSeparable => 1.0 / (f * f) + shrink / d,
            MiddleKind::Branched => 1.0 / (2.0 * f).powi(2) + shrink * (0.25 + 1.0 / (2.0 * d)),
        }
}

/// Totals of a layer trace.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Census {
    pub weights: u64,
    pub bn_params: u64,
    pub biases: u64,
    pub macs: u64,
}

impl Census {
    pub fn of(rows: &[LayerRow]) -> Self {
        rows.iter().fold(Census::default(), |c, r| Census {
            weights: c.weights + r.weights,
            bn_params: c.bn_params + r.bn_params,
            biases: c.biases + r.biases,
            macs: c.macs + r.macs,
        })
    }

    /// Two floating point operations per multiply-accumulate.
    pub fn flops(&self) -> u64 {
        2 * self.macs
    }

    pub fn trainable(&self) -> u64 {
        self.weights + self.bn_params + self.biases
    }
}

/// FLOPs of one forward pass over a single input.
pub fn estimate_flops(rows: &[LayerRow]) -> u64 {
    Census::of(rows).flops()
}

/// `12378304` as `12,378,304`.
pub fn thousands(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Comparison block for the five middle-convolution kinds.
pub fn middle_comparison(f: u64, d: u64, d_prev: u64) -> Result<String> {
    let mut out = String::new();
    writeln!(
        out,
        "middle convolution of a residual unit (f={f}, D={d}, D_prev={d_prev}, no bias)"
    )
    .unwrap();
    writeln!(
        out,
        "{:<18} {:>10} {:>12} {:>12}",
        "kind", "params", "phi_p exact", "published"
    )
    .unwrap();
    for kind in MiddleKind::ALL {
        let exact = depletion_factor(kind, f, d);
        let published = kind.published_depletion();
        let flag = if (exact - published).abs() >= 0.05 {
            "  (differs)"
        } else {
            ""
        };
        writeln!(
            out,
            "{:<18} {:>10} {:>11.2}% {:>11.1}%{flag}",
            kind.label(),
            thousands(middle_params(kind, f, d, d_prev)?),
            exact,
            published
        )
        .unwrap();
    }
    Ok(out)
}

/// Layer table with per-layer and total counts, stage shapes and costs.
pub fn layer_table<T: Float>(model: &Model<T>) -> Result<String> {
    let rows = model.net.trace()?;
    let census = Census::of(&rows);
    let cfg = model.cfg();
    let mut out = String::new();
    let name = cfg
        .variant
        .map_or_else(|| "custom".to_string(), |v| v.to_string());
    writeln!(
        out,
        "model: {name}  input: {0}x{0}x{1}  classes: {2}",
        cfg.input_size, cfg.in_channels, cfg.classes
    )
    .unwrap();
    let repeats: Vec<String> = cfg.stages.iter().map(|s| s.repeats.to_string()).collect();
    writeln!(out, "repeats: [{}]", repeats.join(",")).unwrap();
    writeln!(out).unwrap();
    writeln!(
        out,
        "{:<34} {:<26} {:>16} {:>12} {:>16}",
        "layer", "kind", "output", "weights", "MACs"
    )
    .unwrap();
    for r in &rows {
        let shape = format!("{}x{}x{}", r.output.h, r.output.w, r.output.c);
        let params = r.weights + r.bn_params + r.biases;
        writeln!(
            out,
            "{:<34} {:<26} {:>16} {:>12} {:>16}",
            r.path,
            r.kind,
            shape,
            thousands(params),
            thousands(r.macs)
        )
        .unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "{:<34} {:>12}", "Res Conv / Res Unit summary", "").unwrap();
    for (k, stage) in cfg.stages.iter().enumerate() {
        let [a, b, c] = stage.res_conv.widths;
        let u = stage.unit;
        writeln!(
            out,
            "stage{}: res conv [{a},{b},{c}] x1   res unit [{},{},{},{}] x{}",
            k + 1,
            u.w1,
            u.w_branch,
            u.w_branch,
            u.w4,
            stage.repeats
        )
        .unwrap();
    }
    writeln!(out).unwrap();
    writeln!(
        out,
        "bias-free weights : {} ({:.2} M)",
        thousands(census.weights),
        census.weights as f64 / 1e6
    )
    .unwrap();
    writeln!(out, "batch-norm params : {}", thousands(census.bn_params)).unwrap();
    writeln!(out, "dense biases      : {}", thousands(census.biases)).unwrap();
    writeln!(out, "trainable total   : {}", thousands(census.trainable())).unwrap();
    writeln!(
        out,
        "FLOPs (2 x MACs)  : {} ({:.3e})",
        thousands(census.flops()),
        census.flops() as f64
    )
    .unwrap();
    writeln!(
        out,
        "checkpoint size   : {} bytes ({})",
        thousands(crate::checkpoint::estimate_size(&model.params)),
        T::DTYPE
    )
    .unwrap();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_kind_is_a_contract_error() {
        assert!(matches!(
            "winograd".parse::<MiddleKind>(),
            Err(Error::Contract(_))
        ));
        assert_eq!(
            "atrous_separable".parse::<MiddleKind>().unwrap(),
            MiddleKind::AtrousSeparable
        );
    }

    #[test]
    fn regular_depletion_is_one_hundred_percent() {
        assert_eq!(depletion_factor(MiddleKind::Regular, 3, 64), 100.0);
    }

    #[test]
    fn depletion_matches_parameter_ratio() {
        for f in 2..6u64 {
            for d in [8u64, 16, 64, 128] {
                let regular = middle_params(MiddleKind::Regular, f, d, d).unwrap() as f64;
                for kind in MiddleKind::ALL {
                    let Ok(p) = middle_params(kind, f, d, d) else {
                        continue;
                    };
                    let ratio = 100.0 * p as f64 / regular;
                    assert!(
                        (ratio - depletion_factor(kind, f, d)).abs() < 1e-9,
                        "{kind} f={f} d={d}"
                    );
                }
            }
        }
    }

    #[test]
    fn thousands_separator() {
        assert_eq!(thousands(0), "0");
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands(36864), "36,864");
        assert_eq!(thousands(12_378_304), "12,378,304");
    }
}
