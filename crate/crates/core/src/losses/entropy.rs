//! Per-pixel entropy losses: cross-entropy, focal, large margin and focal margin.
//!
//! Each kernel is `-(1/N) * sum(t * fg(z) + (1 - t) * bg(z))` for a kernel
//! specific pair of foreground and background terms.

use crate::error::Result;
use crate::grid::{check_shape, sigmoid, Grid2D, MaskGrid};

use super::{LossKind, LossOutput, LossParams};

/// A per-pixel factor and its derivative with respect to the logit.
#[derive(Debug, Clone, Copy)]
pub(super) struct Term {
    pub value: f64,
    pub deriv: f64,
}

impl Term {
    fn times(self, other: Term) -> Term {
        Term {
            value: self.value * other.value,
            deriv: self.deriv * other.value + self.value * other.deriv,
        }
    }

    fn scaled(self, w: f64) -> Term {
        Term {
            value: w * self.value,
            deriv: w * self.deriv,
        }
    }
}

fn free(prob: f64, eps: f64) -> bool {
    prob >= eps && prob <= 1.0 - eps
}

/// `ln clamp(sigmoid(u))`.
pub(super) fn log_prob(u: f64, eps: f64) -> Term {
    let p = sigmoid(u);
    if free(p, eps) {
        Term {
            value: p.ln(),
            deriv: sigmoid(-u),
        }
    } else {
        Term {
            value: p.clamp(eps, 1.0 - eps).ln(),
            deriv: 0.0,
        }
    }
}

/// `ln clamp(1 - sigmoid(u))`, evaluated as `ln clamp(sigmoid(-u))`.
pub(super) fn log_comp(u: f64, eps: f64) -> Term {
    let q = sigmoid(-u);
    if free(q, eps) {
        Term {
            value: q.ln(),
            deriv: -sigmoid(u),
        }
    } else {
        Term {
            value: q.clamp(eps, 1.0 - eps).ln(),
            deriv: 0.0,
        }
    }
}

/// `clamp(sigmoid(u))^g`.
pub(super) fn pow_prob(u: f64, g: f64, eps: f64) -> Term {
    let p = sigmoid(u);
    let value = p.clamp(eps, 1.0 - eps).powf(g);
    let deriv = if free(p, eps) { g * value * sigmoid(-u) } else { 0.0 };
    Term { value, deriv }
}

/// `clamp(1 - sigmoid(u))^g`.
pub(super) fn pow_comp(u: f64, g: f64, eps: f64) -> Term {
    let q = sigmoid(-u);
    let value = q.clamp(eps, 1.0 - eps).powf(g);
    let deriv = if free(q, eps) { -g * value * sigmoid(u) } else { 0.0 };
    Term { value, deriv }
}

/// Foreground and background contributions of an entropy loss; `value = foreground + background`
/// up to rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyTerms {
    pub foreground: f64,
    pub background: f64,
}

struct Accumulated {
    fg_sum: f64,
    bg_sum: f64,
    out: LossOutput,
}

fn accumulate(
    z: &Grid2D,
    t: &MaskGrid,
    fg: impl Fn(f64) -> Term,
    bg: impl Fn(f64) -> Term,
) -> Result<Accumulated> {
    check_shape(z.shape(), t.shape())?;
    let n = z.len() as f64;
    let mut total = 0.0;
    let mut fg_sum = 0.0;
    let mut bg_sum = 0.0;
    let mut grad = Vec::with_capacity(z.len());
    for (&zi, &ti) in z.data().iter().zip(t.data()) {
        let term = if ti == 1.0 { fg(zi) } else { bg(zi) };
        total += term.value;
        if ti == 1.0 {
            fg_sum += term.value;
        } else {
            bg_sum += term.value;
        }
        grad.push(-term.deriv / n);
    }
    Ok(Accumulated {
        fg_sum,
        bg_sum,
        out: LossOutput {
            value: -total / n,
            grad_logits: Grid2D::new(z.height(), z.width(), grad)?,
        },
    })
}

/// Regularized prediction: `sigmoid(z - m)` on foreground pixels, `sigmoid(z)` elsewhere.
pub fn margin_shift(z: &Grid2D, t: &MaskGrid, m: f64) -> Result<Grid2D> {
    z.zip_map(t.as_grid(), |zi, ti| {
        if ti == 1.0 {
            sigmoid(zi - m)
        } else {
            sigmoid(zi)
        }
    })
}

pub fn bce(z: &Grid2D, t: &MaskGrid, p: &LossParams) -> Result<LossOutput> {
    let eps = p.eps;
    Ok(accumulate(z, t, |u| log_prob(u, eps), |u| log_comp(u, eps))?.out)
}

/// Symmetric focal loss: both classes attenuated by `gamma_hat`.
pub fn focal(z: &Grid2D, t: &MaskGrid, p: &LossParams) -> Result<LossOutput> {
    Ok(focal_acc(z, t, p)?.out)
}

fn focal_acc(z: &Grid2D, t: &MaskGrid, p: &LossParams) -> Result<Accumulated> {
    let (g, eps) = (p.gamma_hat, p.eps);
    accumulate(
        z,
        t,
        |u| pow_comp(u, g, eps).times(log_prob(u, eps)),
        |u| pow_prob(u, g, eps).times(log_comp(u, eps)),
    )
}

/// Focal attenuation on the background only.
pub fn asym_focal(z: &Grid2D, t: &MaskGrid, p: &LossParams) -> Result<LossOutput> {
    Ok(asym_focal_acc(z, t, p)?.out)
}

fn asym_focal_acc(z: &Grid2D, t: &MaskGrid, p: &LossParams) -> Result<Accumulated> {
    let (g, eps) = (p.gamma_hat, p.eps);
    accumulate(
        z,
        t,
        |u| log_prob(u, eps),
        |u| pow_prob(u, g, eps).times(log_comp(u, eps)),
    )
}

/// Margin on the foreground, plain cross-entropy on the background.
pub fn asym_large_margin(z: &Grid2D, t: &MaskGrid, p: &LossParams) -> Result<LossOutput> {
    Ok(asym_large_margin_acc(z, t, p)?.out)
}

fn asym_large_margin_acc(z: &Grid2D, t: &MaskGrid, p: &LossParams) -> Result<Accumulated> {
    let (m, eps) = (p.margin, p.eps);
    accumulate(z, t, |u| log_prob(u - m, eps), |u| log_comp(u, eps))
}

/// Margin-regularized foreground combined with the focal-attenuated background.
pub fn asym_focal_margin(z: &Grid2D, t: &MaskGrid, p: &LossParams) -> Result<LossOutput> {
    Ok(asym_focal_margin_acc(z, t, p)?.out)
}

fn asym_focal_margin_acc(z: &Grid2D, t: &MaskGrid, p: &LossParams) -> Result<Accumulated> {
    let (g, m, eps) = (p.gamma_hat, p.margin, p.eps);
    accumulate(
        z,
        t,
        |u| log_prob(u - m, eps),
        |u| pow_prob(u, g, eps).times(log_comp(u, eps)),
    )
}

/// Focal attenuation on both classes plus the foreground margin. The
/// attenuation factor uses the unshifted prediction.
pub fn sym_focal_margin(z: &Grid2D, t: &MaskGrid, p: &LossParams) -> Result<LossOutput> {
    Ok(sym_focal_margin_acc(z, t, p)?.out)
}

fn sym_focal_margin_acc(z: &Grid2D, t: &MaskGrid, p: &LossParams) -> Result<Accumulated> {
    let (g, m, eps) = (p.gamma_hat, p.margin, p.eps);
    accumulate(
        z,
        t,
        |u| pow_comp(u, g, eps).times(log_prob(u - m, eps)),
        |u| pow_prob(u, g, eps).times(log_comp(u, eps)),
    )
}

/// Class-weighted focal entropy of the unified focal family; `gamma_tv` is
/// the shared exponent and `delta` weights foreground against background.
pub(super) fn unified_entropy(
    z: &Grid2D,
    t: &MaskGrid,
    p: &LossParams,
    asymmetric: bool,
) -> Result<LossOutput> {
    let (g, d, eps) = (p.gamma_tv, p.delta, p.eps);
    let out = if asymmetric {
        accumulate(
            z,
            t,
            |u| log_prob(u, eps).scaled(d),
            |u| pow_prob(u, g, eps).times(log_comp(u, eps)).scaled(1.0 - d),
        )?
    } else {
        accumulate(
            z,
            t,
            |u| pow_comp(u, g, eps).times(log_prob(u, eps)).scaled(d),
            |u| pow_prob(u, g, eps).times(log_comp(u, eps)).scaled(1.0 - d),
        )?
    };
    Ok(out.out)
}

/// Splits an entropy loss into its foreground and background contributions.
pub fn entropy_terms(
    kind: LossKind,
    z: &Grid2D,
    t: &MaskGrid,
    p: &LossParams,
) -> Result<EntropyTerms> {
    p.validate()?;
    let eps = p.eps;
    let acc = match kind {
        LossKind::Bce => accumulate(z, t, |u| log_prob(u, eps), |u| log_comp(u, eps))?,
        LossKind::Focal => focal_acc(z, t, p)?,
        LossKind::AsymFocal => asym_focal_acc(z, t, p)?,
        LossKind::AsymLargeMargin => asym_large_margin_acc(z, t, p)?,
        LossKind::AsymFocalMargin => asym_focal_margin_acc(z, t, p)?,
        LossKind::SymFocalMargin => sym_focal_margin_acc(z, t, p)?,
        other => {
            return Err(crate::Error::Usage(format!(
                "{other} has no foreground/background split; use an entropy loss"
            )))
        }
    };
    let n = z.len() as f64;
    Ok(EntropyTerms {
        // adding 0.0 turns an empty class's -0.0 into 0.0
        foreground: -acc.fg_sum / n + 0.0,
        background: -acc.bg_sum / n + 0.0,
    })
}
