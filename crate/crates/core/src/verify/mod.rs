//! Verification tools: finite-difference gradient checks, seeded random
//! scenes and pass/fail self-checks.

mod scenes;
pub mod suites;

pub use scenes::{arc_cameras, orbit_camera, random_gaussians, random_splats, render_views};

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Magnitude below which errors are measured absolutely.
    pub floor: f64,
    /// Maximum number of entries probed per input (evenly strided).
    pub max_entries: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            floor: 1e-6,
            max_entries: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst per-entry `|a - n| / max(|a|, |n|, floor)`.
    pub max_rel_err: f64,
    /// `‖a - n‖ / max(‖a‖, ‖n‖, floor)` over all probed entries.
    pub norm_rel_err: f64,
    /// Input and flat index of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences, perturbing one entry of one input at a time.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], opts: GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        norm_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let (mut diff2, mut a2, mut n2) = (0.0f64, 0.0f64, 0.0f64);
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let len = inputs[which].numel();
        let analytic: Vec<f64> = tape.grad(*var).map(|g| g.to_vec()).unwrap_or_else(|| alloc::vec![0.0; len]);
        let stride = (len / opts.max_entries.max(1)).max(1);
        for idx in (0..len).step_by(stride) {
            let orig = inputs[which].data()[idx];
            probe[which].data_mut()[idx] = orig + opts.step;
            let up = eval(&probe)?;
            probe[which].data_mut()[idx] = orig - opts.step;
            let down = eval(&probe)?;
            probe[which].data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            if rel > report.max_rel_err || rel.is_nan() {
                report.max_rel_err = rel;
                report.worst = (which, idx);
            }
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            report.checked += 1;
        }
    }
    report.norm_rel_err = libm::sqrt(diff2) / libm::sqrt(a2).max(libm::sqrt(n2)).max(opts.floor);
    Ok(report)
}
