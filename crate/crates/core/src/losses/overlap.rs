//! Dice and Tversky overlap losses.
//!
//! The Tversky index is evaluated in the doubled arrangement
//!
//! ```text
//! TI = (2*TP + s) / (2*TP + 2*alpha*FN + 2*beta*FP + s)
//! ```
//!
//! which at `alpha = beta = 1/2` has the same denominator as the Sorensen
//! Dice coefficient `(2*TP + s) / (sum(t) + sum(P) + s)`, so the two agree
//! for every smoothing value. Gradients chain through `dP/dz = P (1 - P)`.

use crate::error::{param, Error, Result};
use crate::grid::{check_shape, sigmoid, Grid2D, MaskGrid};

use super::{LossOutput, LossParams};

fn check_probabilities(pr: &Grid2D) -> Result<()> {
    match pr.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(i) => Err(param(format!(
            "prediction at index {i} is {}, expected a probability",
            pr.data()[i]
        ))),
        None => Ok(()),
    }
}

/// Soft confusion sums over the whole grid.
struct Soft {
    tp: f64,
    fn_: f64,
    fp: f64,
}

fn soft_counts(pr: &[f64], t: &[f64]) -> Soft {
    let mut s = Soft {
        tp: 0.0,
        fn_: 0.0,
        fp: 0.0,
    };
    for (&p, &ti) in pr.iter().zip(t) {
        s.tp += ti * p;
        s.fn_ += (1.0 - p) * ti;
        s.fp += p * (1.0 - ti);
    }
    s
}

/// Index value plus `dTI/dP_i` for every pixel.
fn tversky_with_grad(pr: &[f64], t: &[f64], p: &LossParams) -> (f64, Vec<f64>) {
    let (alpha, beta, s) = (p.alpha(), p.beta(), p.smooth);
    let c = soft_counts(pr, t);
    let num = 2.0 * c.tp + s;
    let den = 2.0 * c.tp + 2.0 * alpha * c.fn_ + 2.0 * beta * c.fp + s;
    if den == 0.0 {
        // no foreground, no predicted mass and no smoothing: treat as perfect overlap
        return (1.0, vec![0.0; pr.len()]);
    }
    let ti = num / den;
    let grad = t
        .iter()
        .map(|&ti_| {
            let d_num = 2.0 * ti_;
            let d_den = 2.0 * ti_ - 2.0 * alpha * ti_ + 2.0 * beta * (1.0 - ti_);
            (d_num * den - num * d_den) / (den * den)
        })
        .collect();
    (ti, grad)
}

pub fn tversky_index(pr: &Grid2D, t: &MaskGrid, p: &LossParams) -> Result<f64> {
    check_shape(pr.shape(), t.shape())?;
    check_probabilities(pr)?;
    Ok(tversky_with_grad(pr.data(), t.data(), p).0)
}

/// `(1 - TI)^gamma_tv`.
pub fn focal_tversky(pr: &Grid2D, t: &MaskGrid, p: &LossParams) -> Result<f64> {
    let ti = tversky_index(pr, t, p)?;
    Ok(focal_power(1.0 - ti, p.gamma_tv).0)
}

/// Sorensen (`squared = false`) or squared-denominator Dice loss.
pub fn dice_losses(pr: &Grid2D, t: &MaskGrid, p: &LossParams, squared: bool) -> Result<f64> {
    check_shape(pr.shape(), t.shape())?;
    check_probabilities(pr)?;
    Ok(dice_with_grad(pr.data(), t.data(), p.smooth, squared).0)
}

/// Dice loss value plus `dL/dP_i`.
fn dice_with_grad(pr: &[f64], t: &[f64], s: f64, squared: bool) -> (f64, Vec<f64>) {
    let mut tp = 0.0;
    let mut t_mass = 0.0;
    let mut p_mass = 0.0;
    for (&p, &ti) in pr.iter().zip(t) {
        tp += ti * p;
        if squared {
            t_mass += ti * ti;
            p_mass += p * p;
        } else {
            t_mass += ti;
            p_mass += p;
        }
    }
    let num = 2.0 * tp + s;
    let den = t_mass + p_mass + s;
    if den == 0.0 {
        return (0.0, vec![0.0; pr.len()]);
    }
    let grad = pr
        .iter()
        .zip(t)
        .map(|(&p, &ti)| {
            let d_den = if squared { 2.0 * p } else { 1.0 };
            -(2.0 * ti * den - num * d_den) / (den * den)
        })
        .collect();
    (1.0 - num / den, grad)
}

/// `base^e` and its derivative in `base`. At `base = 0` with `e < 1` the true
/// derivative is unbounded; it is reported as 0 (only reachable at exact
/// perfect overlap).
fn focal_power(base: f64, e: f64) -> (f64, f64) {
    let base = base.max(0.0);
    if base == 0.0 {
        let value = if e == 0.0 { 1.0 } else { 0.0 };
        let deriv = if e == 1.0 { 1.0 } else { 0.0 };
        return (value, deriv);
    }
    let value = base.powf(e);
    (value, e * value / base)
}

/// Probabilities and `dP/dz` from logits.
fn activate(z: &Grid2D) -> (Vec<f64>, Vec<f64>) {
    z.data()
        .iter()
        .map(|&zi| {
            let p = sigmoid(zi);
            (p, p * sigmoid(-zi))
        })
        .unzip()
}

fn chain(z: &Grid2D, d_prob: Vec<f64>, slope: &[f64], value: f64) -> Result<LossOutput> {
    let grad = d_prob.iter().zip(slope).map(|(g, s)| g * s).collect();
    Ok(LossOutput {
        value,
        grad_logits: Grid2D::new(z.height(), z.width(), grad)?,
    })
}

pub(super) fn dice_loss_logits(
    z: &Grid2D,
    t: &MaskGrid,
    p: &LossParams,
    squared: bool,
) -> Result<LossOutput> {
    check_shape(z.shape(), t.shape())?;
    let (pr, slope) = activate(z);
    let (value, d_prob) = dice_with_grad(&pr, t.data(), p.smooth, squared);
    chain(z, d_prob, &slope, value)
}

/// `(1 - TI)^e` with its logit gradient.
fn tversky_power_logits(z: &Grid2D, t: &MaskGrid, p: &LossParams, e: f64) -> Result<LossOutput> {
    check_shape(z.shape(), t.shape())?;
    let (pr, slope) = activate(z);
    let (ti, d_ti) = tversky_with_grad(&pr, t.data(), p);
    let (value, d_base) = focal_power(1.0 - ti, e);
    let d_prob = d_ti.into_iter().map(|g| -d_base * g).collect();
    chain(z, d_prob, &slope, value)
}

pub(super) fn tversky_loss_logits(z: &Grid2D, t: &MaskGrid, p: &LossParams) -> Result<LossOutput> {
    tversky_power_logits(z, t, p, 1.0)
}

pub(super) fn focal_tversky_logits(
    z: &Grid2D,
    t: &MaskGrid,
    p: &LossParams,
) -> Result<LossOutput> {
    tversky_power_logits(z, t, p, p.gamma_tv)
}

/// Rare-class term of the asymmetric focal Tversky loss, `(1 - TI)^(1 - gamma_tv)`.
/// The binary setting has no non-rare class term.
pub(super) fn asym_focal_tversky_logits(
    z: &Grid2D,
    t: &MaskGrid,
    p: &LossParams,
) -> Result<LossOutput> {
    if p.gamma_tv > 1.0 {
        return Err(Error::Param(format!(
            "asymmetric focal Tversky needs gamma_tv <= 1, got {}",
            p.gamma_tv
        )));
    }
    tversky_power_logits(z, t, p, 1.0 - p.gamma_tv)
}

#[cfg(test)]
// oracle values are quoted at full reference precision
#[allow(clippy::excessive_precision, clippy::approx_constant)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, v: &[f64]) -> Grid2D {
        Grid2D::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn tversky_at_half_is_dice_coefficient() {
        let pr = grid(2, 3, &[0.1, 0.9, 0.4, 0.0, 0.65, 1.0]);
        let t = MaskGrid::new(2, 3, vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        for s in [0.0, 0.5, 1.0, 3.0] {
            let p = LossParams::default().with_delta(0.5).with_smooth(s);
            let ti = tversky_index(&pr, &t, &p).unwrap();
            let dice = 1.0 - dice_losses(&pr, &t, &p, false).unwrap();
            assert!((ti - dice).abs() <= 1e-15, "s={s}: {ti} vs {dice}");
        }
    }

    #[test]
    fn tversky_perfect_and_empty() {
        let p = LossParams::default();
        let t = MaskGrid::new(1, 4, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(tversky_index(t.as_grid(), &t, &p).unwrap(), 1.0);
        let empty = MaskGrid::zeros(2, 2).unwrap();
        assert_eq!(tversky_index(empty.as_grid(), &empty, &p).unwrap(), 1.0);
    }

    #[test]
    fn tversky_weights_false_negatives_by_delta() {
        // one missed foreground pixel vs one false alarm
        let t = MaskGrid::new(1, 2, vec![1.0, 0.0]).unwrap();
        let p = LossParams::default().with_delta(0.7).with_smooth(0.0);
        let miss = tversky_index(&grid(1, 2, &[0.0, 0.0]), &t, &p).unwrap();
        let both = tversky_index(&grid(1, 2, &[1.0, 1.0]), &t, &p).unwrap();
        assert_eq!(miss, 0.0);
        // 2 / (2 + 2 * 0.3)
        assert!((both - 2.0 / 2.6).abs() < 1e-15);
    }

    #[test]
    fn focal_tversky_examples() {
        let pr = grid(1, 3, &[0.2, 0.8, 0.5]);
        let t = MaskGrid::new(1, 3, vec![0.0, 1.0, 1.0]).unwrap();
        let p = LossParams::default().with_gamma_tv(1.0);
        let ti = tversky_index(&pr, &t, &p).unwrap();
        assert_eq!(focal_tversky(&pr, &t, &p).unwrap(), 1.0 - ti);
        for g in [0.25, 0.75, 2.0] {
            let p = p.with_gamma_tv(g);
            assert_eq!(focal_tversky(t.as_grid(), &t, &p).unwrap(), 0.0);
        }
        // 0.25^0.75 from mpmath
        assert!((focal_power(0.25, 0.75).0 - 0.353553390593273762200422181052).abs() < 1e-16);
    }

    #[test]
    fn dice_examples() {
        let p = LossParams::default();
        let t = MaskGrid::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(dice_losses(t.as_grid(), &t, &p, false).unwrap(), 0.0);
        assert_eq!(dice_losses(t.as_grid(), &t, &p, true).unwrap(), 0.0);
        let pred = grid(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(
            dice_losses(&pred, &t, &p, false).unwrap(),
            dice_losses(&pred, &t, &p, true).unwrap()
        );
        let empty = MaskGrid::zeros(3, 3).unwrap();
        assert_eq!(dice_losses(empty.as_grid(), &empty, &p, false).unwrap(), 0.0);
    }

    #[test]
    fn overlap_rejects_non_probabilities_and_shapes() {
        let t = MaskGrid::zeros(1, 2).unwrap();
        let p = LossParams::default();
        assert!(tversky_index(&grid(1, 2, &[0.5, 1.5]), &t, &p).is_err());
        assert!(dice_losses(&grid(1, 3, &[0.5, 0.5, 0.5]), &t, &p, false).is_err());
    }

    #[test]
    fn asym_focal_tversky_rejects_large_gamma() {
        let z = grid(1, 2, &[0.0, 1.0]);
        let t = MaskGrid::new(1, 2, vec![1.0, 0.0]).unwrap();
        let p = LossParams::default().with_gamma_tv(1.5);
        assert!(asym_focal_tversky_logits(&z, &t, &p).is_err());
    }
}
