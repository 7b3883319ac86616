//! Entropy + overlap compounds.
//!
//! | kind                      | value                                   |
//! |---------------------------|-----------------------------------------|
//! | `BCEDICE`                 | `BCE + DICE_SORENSEN`                   |
//! | `HYBRID_FOCAL`            | `ASYM_FOCAL + FOCAL_TVERSKY`            |
//! | `OURS`                    | `ASYM_FOCAL_MARGIN + FOCAL_TVERSKY`     |
//! | `SYM_HYBRID_FOCAL_MARGIN` | `l * SYM_FOCAL_MARGIN + (1-l) * FOCAL_TVERSKY` |
//! | `SYM_UNIFIED_FOCAL`       | `l * unified focal + (1-l) * FOCAL_TVERSKY`    |
//! | `ASYM_UNIFIED_FOCAL`      | `l * asym unified focal + (1-l) * ASYM_FOCAL_TVERSKY` |
//!
//! `l` is `LossParams::lambda`. The unit-weighted rows ignore it.

use crate::error::{Error, Result};
use crate::grid::{check_shape, Grid2D, MaskGrid};

use super::entropy::{asym_focal, asym_focal_margin, bce, sym_focal_margin, unified_entropy};
use super::overlap::{asym_focal_tversky_logits, dice_loss_logits, focal_tversky_logits};
use super::{LossKind, LossOutput, LossParams};

pub fn compound(kind: LossKind, z: &Grid2D, t: &MaskGrid, p: &LossParams) -> Result<LossOutput> {
    check_shape(z.shape(), t.shape())?;
    let lambda = p.lambda;
    let (w_entropy, entropy, w_overlap, overlap) = match kind {
        LossKind::BceDice => (1.0, bce(z, t, p)?, 1.0, dice_loss_logits(z, t, p, false)?),
        LossKind::HybridFocal => (1.0, asym_focal(z, t, p)?, 1.0, focal_tversky_logits(z, t, p)?),
        LossKind::Ours => (
            1.0,
            asym_focal_margin(z, t, p)?,
            1.0,
            focal_tversky_logits(z, t, p)?,
        ),
        LossKind::SymHybridFocalMargin => (
            lambda,
            sym_focal_margin(z, t, p)?,
            1.0 - lambda,
            focal_tversky_logits(z, t, p)?,
        ),
        LossKind::SymUnifiedFocal => (
            lambda,
            unified_entropy(z, t, p, false)?,
            1.0 - lambda,
            focal_tversky_logits(z, t, p)?,
        ),
        LossKind::AsymUnifiedFocal => (
            lambda,
            unified_entropy(z, t, p, true)?,
            1.0 - lambda,
            asym_focal_tversky_logits(z, t, p)?,
        ),
        other => {
            return Err(Error::Usage(format!("{other} is not a compound loss")));
        }
    };
    Ok(LossOutput::weighted_sum(w_entropy, entropy, w_overlap, overlap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::loss_value_and_grad;

    fn sample() -> (Grid2D, MaskGrid) {
        let z = Grid2D::new(2, 3, vec![-2.0, 0.5, 1.5, -0.3, 3.0, -4.0]).unwrap();
        let t = MaskGrid::new(2, 3, vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        (z, t)
    }

    #[test]
    fn non_compound_kind_is_usage_error() {
        let (z, t) = sample();
        let err = compound(LossKind::Bce, &z, &t, &LossParams::default()).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn ours_without_margin_is_hybrid_focal() {
        let (z, t) = sample();
        let p = LossParams::default().with_margin(0.0);
        assert_eq!(
            compound(LossKind::Ours, &z, &t, &p).unwrap(),
            compound(LossKind::HybridFocal, &z, &t, &p).unwrap()
        );
    }

    #[test]
    fn convex_endpoints() {
        let (z, t) = sample();
        let p = LossParams::default();
        let lam1 = compound(LossKind::SymHybridFocalMargin, &z, &t, &p.with_lambda(1.0)).unwrap();
        assert_eq!(lam1, loss_value_and_grad(LossKind::SymFocalMargin, &z, &t, &p).unwrap());
        let lam0 = compound(LossKind::SymUnifiedFocal, &z, &t, &p.with_lambda(0.0)).unwrap();
        assert_eq!(lam0, loss_value_and_grad(LossKind::FocalTversky, &z, &t, &p).unwrap());
        let lam0 = compound(LossKind::SymHybridFocalMargin, &z, &t, &p.with_lambda(0.0)).unwrap();
        assert_eq!(lam0.value, loss_value_and_grad(LossKind::FocalTversky, &z, &t, &p).unwrap().value);
    }

    #[test]
    fn hybrid_focal_is_sum_of_components() {
        let (z, t) = sample();
        let p = LossParams::default();
        let hf = compound(LossKind::HybridFocal, &z, &t, &p).unwrap();
        let af = loss_value_and_grad(LossKind::AsymFocal, &z, &t, &p).unwrap();
        let ft = loss_value_and_grad(LossKind::FocalTversky, &z, &t, &p).unwrap();
        assert_eq!(hf.value, af.value + ft.value);
    }
}
