//! Reduction-identity audit.
//!
//! The focal margin family collapses onto simpler losses at particular
//! parameter values: zero margin gives the asymmetric focal loss, zero focal
//! exponent gives the large margin loss, both give cross-entropy, and the
//! compounds inherit the same edges. Each [`Edge`] evaluates both sides on
//! random instances and records the worst relative discrepancy over the
//! value and every gradient entry.

use serde::Serialize;

use crate::error::{param, Result};
use crate::grid::{Grid2D, MaskGrid};
use crate::losses::{loss_value_and_grad, LossKind, LossOutput, LossParams};
use crate::rng::XorShift64Star;

pub const DEFAULT_TOLERANCE: f64 = 1e-12;

const AUDIT_RATES: [f64; 3] = [0.1, 0.2, 0.3];

type Tweak = fn(LossParams) -> LossParams;

pub struct Edge {
    pub name: &'static str,
    pub from: LossKind,
    pub from_params: Tweak,
    pub to: LossKind,
    pub to_params: Tweak,
}

fn same(p: LossParams) -> LossParams {
    p
}

pub const EDGES: &[Edge] = &[
    Edge {
        name: "ASYM_FOCAL_MARGIN(m=0) -> ASYM_FOCAL",
        from: LossKind::AsymFocalMargin,
        from_params: |p| p.with_margin(0.0),
        to: LossKind::AsymFocal,
        to_params: same,
    },
    Edge {
        name: "ASYM_FOCAL_MARGIN(gamma_hat=0) -> ASYM_LARGE_MARGIN",
        from: LossKind::AsymFocalMargin,
        from_params: |p| p.with_gamma_hat(0.0),
        to: LossKind::AsymLargeMargin,
        to_params: same,
    },
    Edge {
        name: "ASYM_FOCAL_MARGIN(m=0,gamma_hat=0) -> BCE",
        from: LossKind::AsymFocalMargin,
        from_params: |p| p.with_margin(0.0).with_gamma_hat(0.0),
        to: LossKind::Bce,
        to_params: same,
    },
    Edge {
        name: "OURS(m=0) -> HYBRID_FOCAL",
        from: LossKind::Ours,
        from_params: |p| p.with_margin(0.0),
        to: LossKind::HybridFocal,
        to_params: same,
    },
    Edge {
        name: "ASYM_FOCAL(gamma_hat=0) -> BCE",
        from: LossKind::AsymFocal,
        from_params: |p| p.with_gamma_hat(0.0),
        to: LossKind::Bce,
        to_params: same,
    },
    Edge {
        name: "ASYM_LARGE_MARGIN(m=0) -> BCE",
        from: LossKind::AsymLargeMargin,
        from_params: |p| p.with_margin(0.0),
        to: LossKind::Bce,
        to_params: same,
    },
    Edge {
        name: "SYM_FOCAL_MARGIN(m=0) -> FOCAL",
        from: LossKind::SymFocalMargin,
        from_params: |p| p.with_margin(0.0),
        to: LossKind::Focal,
        to_params: same,
    },
    Edge {
        name: "SYM_FOCAL_MARGIN(m=0,gamma_hat=0) -> BCE",
        from: LossKind::SymFocalMargin,
        from_params: |p| p.with_margin(0.0).with_gamma_hat(0.0),
        to: LossKind::Bce,
        to_params: same,
    },
    Edge {
        name: "FOCAL(gamma_hat=0) -> BCE",
        from: LossKind::Focal,
        from_params: |p| p.with_gamma_hat(0.0),
        to: LossKind::Bce,
        to_params: same,
    },
    Edge {
        name: "SYM_HYBRID_FOCAL_MARGIN(lambda=1) -> SYM_FOCAL_MARGIN",
        from: LossKind::SymHybridFocalMargin,
        from_params: |p| p.with_lambda(1.0),
        to: LossKind::SymFocalMargin,
        to_params: same,
    },
    Edge {
        name: "SYM_HYBRID_FOCAL_MARGIN(lambda=0) -> FOCAL_TVERSKY",
        from: LossKind::SymHybridFocalMargin,
        from_params: |p| p.with_lambda(0.0),
        to: LossKind::FocalTversky,
        to_params: same,
    },
    Edge {
        name: "SYM_UNIFIED_FOCAL(lambda=0) -> FOCAL_TVERSKY",
        from: LossKind::SymUnifiedFocal,
        from_params: |p| p.with_lambda(0.0),
        to: LossKind::FocalTversky,
        to_params: same,
    },
    Edge {
        name: "ASYM_UNIFIED_FOCAL(lambda=0) -> ASYM_FOCAL_TVERSKY",
        from: LossKind::AsymUnifiedFocal,
        from_params: |p| p.with_lambda(0.0),
        to: LossKind::AsymFocalTversky,
        to_params: same,
    },
    Edge {
        name: "TVERSKY(delta=0.5) -> DICE_SORENSEN",
        from: LossKind::Tversky,
        from_params: |p| p.with_delta(0.5),
        to: LossKind::DiceSorensen,
        to_params: same,
    },
    Edge {
        name: "FOCAL_TVERSKY(gamma=1) -> TVERSKY",
        from: LossKind::FocalTversky,
        from_params: |p| p.with_gamma_tv(1.0),
        to: LossKind::Tversky,
        to_params: same,
    },
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeResult {
    pub edge: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub seed: u64,
    pub trials: usize,
    pub tolerance: f64,
    pub edges: Vec<EdgeResult>,
    pub pass: bool,
}

/// `|a - b| / max(|a|, |b|)`, zero when both are zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if a == b {
        0.0
    } else if scale == 0.0 || !scale.is_finite() {
        f64::INFINITY
    } else {
        (a - b).abs() / scale
    }
}

/// Worst relative error over the value and every gradient entry.
pub fn output_discrepancy(a: &LossOutput, b: &LossOutput) -> f64 {
    a.grad_logits
        .data()
        .iter()
        .zip(b.grad_logits.data())
        .map(|(&x, &y)| relative_error(x, y))
        .fold(relative_error(a.value, b.value), f64::max)
}

/// One audit instance: logits in `[-4, 4]`, a Bernoulli mask (every fifth
/// trial is all background) and randomized parameters.
pub fn audit_instance(
    rng: &mut XorShift64Star,
    trial: usize,
    height: usize,
    width: usize,
) -> Result<(Grid2D, MaskGrid, LossParams)> {
    let n = height * width;
    let z = Grid2D::new(height, width, (0..n).map(|_| rng.uniform(-4.0, 4.0)).collect())?;
    let rate = if trial % 5 == 4 {
        0.0
    } else {
        // denser than the gradcheck rates so small grids rarely come out empty
        AUDIT_RATES[rng.below(AUDIT_RATES.len())]
    };
    let bits: Vec<bool> = (0..n).map(|_| rng.bernoulli(rate)).collect();
    let t = MaskGrid::from_bits(height, width, &bits)?;
    let p = LossParams::new(
        rng.uniform(0.5, 3.0),
        rng.uniform(0.0, 1.0),
        rng.uniform(0.1, 1.0),
        rng.uniform(0.25, 2.0),
        rng.uniform(0.0, 1.0),
        1.0,
        1e-7,
    )?;
    Ok((z, t, p))
}

pub fn reduce_audit(seed: u64, trials: usize, tolerance: f64) -> Result<AuditReport> {
    if trials == 0 {
        return Err(param("reduce-audit needs at least one trial"));
    }
    let mut rng = XorShift64Star::new(seed);
    let mut worst = vec![0.0f64; EDGES.len()];
    for trial in 0..trials {
        let (z, t, p) = audit_instance(&mut rng, trial, 8, 8)?;
        for (edge, w) in EDGES.iter().zip(worst.iter_mut()) {
            let a = loss_value_and_grad(edge.from, &z, &t, &(edge.from_params)(p))?;
            let b = loss_value_and_grad(edge.to, &z, &t, &(edge.to_params)(p))?;
            *w = w.max(output_discrepancy(&a, &b));
        }
    }
    let edges: Vec<EdgeResult> = EDGES
        .iter()
        .zip(worst)
        .map(|(e, err)| EdgeResult {
            edge: e.name.to_string(),
            max_rel_err: err,
            pass: err <= tolerance,
        })
        .collect();
    let pass = edges.iter().all(|e| e.pass);
    Ok(AuditReport {
        seed,
        trials,
        tolerance,
        edges,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_audit_passes_and_is_deterministic() {
        let a = reduce_audit(0, 40, DEFAULT_TOLERANCE).unwrap();
        assert!(a.pass, "{a:#?}");
        assert_eq!(a, reduce_audit(0, 40, DEFAULT_TOLERANCE).unwrap());
        assert_eq!(a.edges.len(), EDGES.len());
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(reduce_audit(1, 0, DEFAULT_TOLERANCE).is_err());
    }

    #[test]
    fn relative_error_edge_cases() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(0.0, -0.0), 0.0);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert_eq!(relative_error(0.0, 1e-300), 1.0);
    }
}
