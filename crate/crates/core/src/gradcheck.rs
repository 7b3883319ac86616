//! Central-difference oracle for the analytic loss gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::grid::{sigmoid, Grid2D, MaskGrid};
use crate::losses::{loss_value_and_grad, LossKind, LossParams};
use crate::rng::XorShift64Star;

pub const DEFAULT_STEP: f64 = 1e-4;

/// Foreground rates drawn for random masks.
pub const FOREGROUND_RATES: [f64; 3] = [0.03, 0.05, 0.07];

/// `(f(z + h e_i) - f(z - h e_i)) / 2h` for every coordinate.
pub fn finite_diff(f: impl Fn(&Grid2D) -> Result<f64>, z: &Grid2D, h: f64) -> Result<Grid2D> {
    if h.is_nan() || h <= 0.0 {
        return Err(param(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = z.clone();
    let mut out = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        let orig = z.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Grid2D::new(z.height(), z.width(), out)
}

pub fn finite_diff_grad(
    kind: LossKind,
    z: &Grid2D,
    t: &MaskGrid,
    p: &LossParams,
    h: f64,
) -> Result<Grid2D> {
    finite_diff(|zz| Ok(loss_value_and_grad(kind, zz, t, p)?.value), z, h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub trials: usize,
    pub height: usize,
    pub width: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            trials: 200,
            height: 8,
            width: 8,
            rel_tol: 1e-5,
            abs_tol: 1e-8,
            h: DEFAULT_STEP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub kind: LossKind,
    pub options: GradCheckOptions,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Trial and `(row, col)` of the entry closest to failing.
    pub worst_trial: usize,
    pub worst_index: (usize, usize),
    pub checked: usize,
    pub skipped: usize,
    pub pass: bool,
}

/// Random logits in `[-4, 4]` and a Bernoulli mask at one of [`FOREGROUND_RATES`].
pub fn random_instance(rng: &mut XorShift64Star, height: usize, width: usize) -> Result<(Grid2D, MaskGrid)> {
    let n = height * width;
    let z = (0..n).map(|_| rng.uniform(-4.0, 4.0)).collect();
    let rate = FOREGROUND_RATES[rng.below(FOREGROUND_RATES.len())];
    let bits: Vec<bool> = (0..n).map(|_| rng.bernoulli(rate)).collect();
    Ok((Grid2D::new(height, width, z)?, MaskGrid::from_bits(height, width, &bits)?))
}

fn relative(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Pixels whose probability (or margin-shifted probability) is within
/// `2 * eps` of 0 or 1, where the clamp makes the loss non-differentiable.
fn near_clamp(z: f64, is_fg: bool, p: &LossParams) -> bool {
    let band = 2.0 * p.eps;
    let near = |q: f64| q < band || q > 1.0 - band;
    near(sigmoid(z)) || (is_fg && near(sigmoid(z - p.margin)))
}

struct TrialOutcome {
    max_rel: f64,
    max_abs: f64,
    worst: Option<(f64, usize)>,
    checked: usize,
    skipped: usize,
    pass: bool,
}

fn compare_trial(
    kind: LossKind,
    z: &Grid2D,
    t: &MaskGrid,
    p: &LossParams,
    opts: &GradCheckOptions,
) -> Result<TrialOutcome> {
    let analytic = loss_value_and_grad(kind, z, t, p)?.grad_logits;
    let numeric = finite_diff_grad(kind, z, t, p, opts.h)?;
    let mut o = TrialOutcome {
        max_rel: 0.0,
        max_abs: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
        pass: true,
    };
    for i in 0..z.len() {
        if near_clamp(z.data()[i], t.is_set(i), p) {
            o.skipped += 1;
            continue;
        }
        let (a, f) = (analytic.data()[i], numeric.data()[i]);
        let abs = (a - f).abs();
        let rel = relative(a, f);
        o.checked += 1;
        o.max_rel = o.max_rel.max(rel);
        o.max_abs = o.max_abs.max(abs);
        let entry_ok = rel < opts.rel_tol || abs < opts.abs_tol;
        o.pass &= entry_ok;
        // how close this entry is to failing, on the looser of its two tests
        let badness = (rel / opts.rel_tol).min(abs / opts.abs_tol);
        let badness = if badness.is_nan() { f64::INFINITY } else { badness };
        if o.worst.is_none_or(|(b, _)| badness > b) {
            o.worst = Some((badness, i));
        }
    }
    Ok(o)
}

/// Runs `opts.trials` random instances through the analytic gradient and the
/// central-difference oracle. Deterministic in `opts.seed`.
pub fn check(kind: LossKind, p: &LossParams, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if opts.trials == 0 {
        return Err(param("gradcheck needs at least one trial"));
    }
    p.validate()?;
    let mut rng = XorShift64Star::new(opts.seed);
    let instances = (0..opts.trials)
        .map(|_| random_instance(&mut rng, opts.height, opts.width))
        .collect::<Result<Vec<_>>>()?;
    let outcomes = instances
        .par_iter()
        .map(|(z, t)| compare_trial(kind, z, t, p, opts))
        .collect::<Result<Vec<_>>>()?;

    let mut report = GradCheckReport {
        kind,
        options: *opts,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_trial: 0,
        worst_index: (0, 0),
        checked: 0,
        skipped: 0,
        pass: true,
    };
    let mut worst_badness = f64::NEG_INFINITY;
    for (trial, o) in outcomes.iter().enumerate() {
        report.max_rel_err = report.max_rel_err.max(o.max_rel);
        report.max_abs_err = report.max_abs_err.max(o.max_abs);
        report.checked += o.checked;
        report.skipped += o.skipped;
        report.pass &= o.pass;
        if let Some((b, i)) = o.worst {
            if b > worst_badness {
                worst_badness = b;
                report.worst_trial = trial;
                report.worst_index = (i / opts.width, i % opts.width);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_single_pixel_matches_closed_form() {
        let z = Grid2D::new(1, 1, vec![0.0]).unwrap();
        let t = MaskGrid::ones(1, 1).unwrap();
        let g = finite_diff_grad(LossKind::Bce, &z, &t, &LossParams::default(), 1e-4).unwrap();
        assert!((g.data()[0] + 0.5).abs() < 1e-8);
    }

    #[test]
    fn harness_calibration_on_sum() {
        let z = Grid2D::new(2, 3, vec![0.3, -1.0, 2.0, 5.0, 0.0, -7.5]).unwrap();
        let g = finite_diff(|zz| Ok(zz.reduce_sum()), &z, 1e-3).unwrap();
        assert!(g.data().iter().all(|&v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn rejects_bad_step_and_zero_trials() {
        let z = Grid2D::zeros(1, 1).unwrap();
        assert!(finite_diff(|zz| Ok(zz.reduce_sum()), &z, 0.0).is_err());
        let opts = GradCheckOptions { trials: 0, ..Default::default() };
        assert!(check(LossKind::Bce, &LossParams::default(), &opts).is_err());
    }

    #[test]
    fn ours_random_4x4() {
        let mut rng = XorShift64Star::new(11);
        let (z, t) = random_instance(&mut rng, 4, 4).unwrap();
        let p = LossParams::default();
        let a = loss_value_and_grad(LossKind::Ours, &z, &t, &p).unwrap().grad_logits;
        let f = finite_diff_grad(LossKind::Ours, &z, &t, &p, 1e-4).unwrap();
        for (x, y) in a.data().iter().zip(f.data()) {
            assert!(relative(*x, *y) < 1e-5 || (x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn report_is_deterministic() {
        let opts = GradCheckOptions { trials: 5, seed: 3, ..Default::default() };
        let p = LossParams::default();
        let a = check(LossKind::AsymFocalMargin, &p, &opts).unwrap();
        let b = check(LossKind::AsymFocalMargin, &p, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.pass);
    }

    #[test]
    fn infinite_abs_tol_always_passes() {
        let opts = GradCheckOptions {
            trials: 3,
            abs_tol: f64::INFINITY,
            rel_tol: 0.0,
            h: 0.5,
            ..Default::default()
        };
        assert!(check(LossKind::Ours, &LossParams::default(), &opts).unwrap().pass);
    }

    #[test]
    fn central_difference_error_is_second_order() {
        // smooth single-pixel BCE: error ratio for h and h/2 is close to 4
        let z = Grid2D::new(1, 1, vec![0.8]).unwrap();
        let t = MaskGrid::ones(1, 1).unwrap();
        let p = LossParams::default();
        let exact = loss_value_and_grad(LossKind::Bce, &z, &t, &p).unwrap().grad_logits.data()[0];
        let err = |h: f64| (finite_diff_grad(LossKind::Bce, &z, &t, &p, h).unwrap().data()[0] - exact).abs();
        let ratio = err(1e-2) / err(5e-3);
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn clamp_band_pixels_are_skipped() {
        let p = LossParams::default();
        assert!(near_clamp(20.0, false, &p));
        assert!(near_clamp(-20.0, true, &p));
        assert!(!near_clamp(0.0, true, &p));
        let z = Grid2D::new(1, 2, vec![25.0, 0.3]).unwrap();
        let t = MaskGrid::new(1, 2, vec![1.0, 0.0]).unwrap();
        let o = compare_trial(LossKind::Bce, &z, &t, &p, &GradCheckOptions::default()).unwrap();
        assert_eq!((o.checked, o.skipped), (1, 1));
    }
}
