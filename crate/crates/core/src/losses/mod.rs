//! Class-imbalance segmentation losses with analytic gradients.
//!
//! Every kernel takes logits `z`, a binary mask `t` and a [`LossParams`], and
//! returns the scalar loss together with `dL/dz` for each pixel. Probabilities
//! are `P = sigmoid(z)`; the margin `m` is subtracted from foreground logits
//! before the sigmoid, giving the regularized prediction `P^ = sigmoid(z - m)`.
//!
//! Entropy losses are averaged over the `N` pixels of the grid. Overlap losses
//! (Dice, Tversky and their focal variants) aggregate all pixels of the
//! foreground class into a single ratio and carry no `1/N` factor.
//!
//! The probability clamp `eps` is applied before every logarithm and treated
//! as a constant for differentiation, so pixels whose probability sits in the
//! clamped band contribute no gradient through that factor.

mod compound;
mod entropy;
mod overlap;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::grid::{check_shape, Grid2D, MaskGrid};

pub use compound::compound;
pub use entropy::{
    asym_focal, asym_focal_margin, asym_large_margin, bce, entropy_terms, focal, margin_shift,
    sym_focal_margin, EntropyTerms,
};
pub use overlap::{dice_losses, focal_tversky, tversky_index};

/// Loss hyperparameters shared by every kernel.
///
/// `delta` maps to the Tversky weights as `alpha = delta` (false negatives)
/// and `beta = 1 - delta` (false positives).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct LossParams {
    /// Focal exponent on the entropy terms.
    pub gamma_hat: f64,
    /// Tversky class weight in `[0, 1]`.
    pub delta: f64,
    /// Exponent on `1 - TI`.
    pub gamma_tv: f64,
    /// Logit margin subtracted from foreground pixels.
    pub margin: f64,
    /// Mixing weight of the entropy component in the convex compounds.
    pub lambda: f64,
    /// Smoothing added to overlap ratios.
    pub smooth: f64,
    /// Probability clamp applied before every log.
    pub eps: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawParams {
    gamma_hat: f64,
    delta: f64,
    gamma_tv: f64,
    margin: f64,
    lambda: f64,
    smooth: f64,
    eps: f64,
}

impl Default for RawParams {
    fn default() -> Self {
        let d = LossParams::default();
        RawParams {
            gamma_hat: d.gamma_hat,
            delta: d.delta,
            gamma_tv: d.gamma_tv,
            margin: d.margin,
            lambda: d.lambda,
            smooth: d.smooth,
            eps: d.eps,
        }
    }
}

impl TryFrom<RawParams> for LossParams {
    type Error = Error;

    fn try_from(r: RawParams) -> Result<Self> {
        LossParams::new(
            r.gamma_hat,
            r.delta,
            r.gamma_tv,
            r.margin,
            r.lambda,
            r.smooth,
            r.eps,
        )
    }
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            gamma_hat: 2.0,
            delta: 0.7,
            gamma_tv: 0.75,
            margin: 0.5,
            lambda: 0.5,
            smooth: 1.0,
            eps: 1e-7,
        }
    }
}

impl LossParams {
    pub fn new(
        gamma_hat: f64,
        delta: f64,
        gamma_tv: f64,
        margin: f64,
        lambda: f64,
        smooth: f64,
        eps: f64,
    ) -> Result<Self> {
        let p = LossParams {
            gamma_hat,
            delta,
            gamma_tv,
            margin,
            lambda,
            smooth,
            eps,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, f64, bool, &str); 7] = [
            ("gamma_hat", self.gamma_hat, self.gamma_hat >= 0.0, ">= 0"),
            ("delta", self.delta, (0.0..=1.0).contains(&self.delta), "in [0, 1]"),
            ("gamma_tv", self.gamma_tv, self.gamma_tv > 0.0, "> 0"),
            ("margin", self.margin, self.margin >= 0.0, ">= 0"),
            ("lambda", self.lambda, (0.0..=1.0).contains(&self.lambda), "in [0, 1]"),
            ("smooth", self.smooth, self.smooth >= 0.0, ">= 0"),
            ("eps", self.eps, self.eps > 0.0 && self.eps < 0.5, "in (0, 0.5)"),
        ];
        for (name, value, ok, rule) in checks {
            if !ok || !value.is_finite() {
                return Err(param(format!("{name} must be {rule}, got {value}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("params serialize")
    }

    pub fn with_gamma_hat(mut self, v: f64) -> Self {
        self.gamma_hat = v;
        self
    }

    pub fn with_delta(mut self, v: f64) -> Self {
        self.delta = v;
        self
    }

    pub fn with_gamma_tv(mut self, v: f64) -> Self {
        self.gamma_tv = v;
        self
    }

    pub fn with_margin(mut self, v: f64) -> Self {
        self.margin = v;
        self
    }

    pub fn with_lambda(mut self, v: f64) -> Self {
        self.lambda = v;
        self
    }

    pub fn with_smooth(mut self, v: f64) -> Self {
        self.smooth = v;
        self
    }

    /// FN weight.
    pub fn alpha(&self) -> f64 {
        self.delta
    }

    /// FP weight.
    pub fn beta(&self) -> f64 {
        1.0 - self.delta
    }
}

/// Scalar loss and its gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossOutput {
    pub value: f64,
    pub grad_logits: Grid2D,
}

impl LossOutput {
    /// `wa * a + wb * b`, elementwise on the gradients.
    pub(crate) fn weighted_sum(wa: f64, a: LossOutput, wb: f64, b: LossOutput) -> LossOutput {
        let grad = a
            .grad_logits
            .zip_map(&b.grad_logits, |x, y| wa * x + wb * y)
            .expect("component gradients share a shape");
        LossOutput {
            value: wa * a.value + wb * b.value,
            grad_logits: grad,
        }
    }
}

macro_rules! loss_kinds {
    ($($variant:ident => $name:literal),* $(,)?) => {
        /// Every loss the crate can evaluate.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum LossKind {
            $($variant),*
        }

        impl LossKind {
            pub const ALL: &'static [LossKind] = &[$(LossKind::$variant),*];

            pub fn name(self) -> &'static str {
                match self {
                    $(LossKind::$variant => $name),*
                }
            }
        }

        impl FromStr for LossKind {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                let upper = s.trim().to_ascii_uppercase();
                match upper.as_str() {
                    $($name => Ok(LossKind::$variant),)*
                    _ => Err(param(format!("unknown loss kind {s:?}"))),
                }
            }
        }
    };
}

loss_kinds! {
    Bce => "BCE",
    DiceSorensen => "DICE_SORENSEN",
    DiceSquared => "DICE_SQUARED",
    BceDice => "BCEDICE",
    Focal => "FOCAL",
    AsymFocal => "ASYM_FOCAL",
    AsymLargeMargin => "ASYM_LARGE_MARGIN",
    Tversky => "TVERSKY",
    FocalTversky => "FOCAL_TVERSKY",
    AsymFocalTversky => "ASYM_FOCAL_TVERSKY",
    SymFocalMargin => "SYM_FOCAL_MARGIN",
    AsymFocalMargin => "ASYM_FOCAL_MARGIN",
    HybridFocal => "HYBRID_FOCAL",
    SymUnifiedFocal => "SYM_UNIFIED_FOCAL",
    AsymUnifiedFocal => "ASYM_UNIFIED_FOCAL",
    SymHybridFocalMargin => "SYM_HYBRID_FOCAL_MARGIN",
    Ours => "OURS",
}

impl LossKind {
    /// Sums of an entropy and an overlap component.
    pub fn is_compound(self) -> bool {
        matches!(
            self,
            LossKind::BceDice
                | LossKind::HybridFocal
                | LossKind::SymUnifiedFocal
                | LossKind::AsymUnifiedFocal
                | LossKind::SymHybridFocalMargin
                | LossKind::Ours
        )
    }

    /// Pure per-pixel entropy losses, which split into foreground and background terms.
    pub fn is_entropy(self) -> bool {
        matches!(
            self,
            LossKind::Bce
                | LossKind::Focal
                | LossKind::AsymFocal
                | LossKind::AsymLargeMargin
                | LossKind::SymFocalMargin
                | LossKind::AsymFocalMargin
        )
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for LossKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for LossKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Single entry point over every [`LossKind`].
pub fn loss_value_and_grad(
    kind: LossKind,
    z: &Grid2D,
    t: &MaskGrid,
    p: &LossParams,
) -> Result<LossOutput> {
    p.validate()?;
    check_shape(z.shape(), t.shape())?;
    match kind {
        LossKind::Bce => bce(z, t, p),
        LossKind::Focal => focal(z, t, p),
        LossKind::AsymFocal => asym_focal(z, t, p),
        LossKind::AsymLargeMargin => asym_large_margin(z, t, p),
        LossKind::AsymFocalMargin => asym_focal_margin(z, t, p),
        LossKind::SymFocalMargin => sym_focal_margin(z, t, p),
        LossKind::DiceSorensen => overlap::dice_loss_logits(z, t, p, false),
        LossKind::DiceSquared => overlap::dice_loss_logits(z, t, p, true),
        LossKind::Tversky => overlap::tversky_loss_logits(z, t, p),
        LossKind::FocalTversky => overlap::focal_tversky_logits(z, t, p),
        LossKind::AsymFocalTversky => overlap::asym_focal_tversky_logits(z, t, p),
        LossKind::BceDice
        | LossKind::HybridFocal
        | LossKind::SymUnifiedFocal
        | LossKind::AsymUnifiedFocal
        | LossKind::SymHybridFocalMargin
        | LossKind::Ours => compound(kind, z, t, p),
    }
}
