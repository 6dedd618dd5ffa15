//! Central-difference gradient verification.

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of a gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Largest error across all coordinates (see [`check_gradient`] for the
    /// normalization).
    pub max_rel_err: f64,
    /// Coordinate where it occurred.
    pub worst_index: usize,
    /// Number of coordinates checked.
    pub checked: usize,
}

/// Compares `analytic` against central finite differences of `f` around
/// `x0`, one coordinate at a time.
///
/// The per-coordinate error is `|a - n| / max(|a|, |n|, 1)`: relative for
/// gradients above one, absolute below, so coordinates whose true gradient
/// is legitimately zero do not blow the ratio up.
pub fn check_gradient<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x0: &[f64],
    analytic: &[f64],
    step: f64,
) -> GradCheckReport {
    assert_eq!(x0.len(), analytic.len());
    assert!(step > 0.0);
    let mut x = x0.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        checked: x0.len(),
    };
    for i in 0..x.len() {
        let original = x[i];
        x[i] = original + step;
        let plus = f(&x);
        x[i] = original - step;
        let minus = f(&x);
        x[i] = original;
        let numeric = (plus - minus) / (2.0 * step);
        let scale = analytic[i].abs().max(numeric.abs()).max(1.0);
        let err = (analytic[i] - numeric).abs() / scale;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = i;
        }
    }
    report
}
