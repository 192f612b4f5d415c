//! Central finite-difference verification of analytic gradients.
//!
//! Used by the gradient test suite: build the graph twice per probed entry
//! with a perturbed input and compare the slope against the backward pass.

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Error between analytic and numeric derivatives with the usual
/// atol + rtol semantics: differences inside the absolute floor read as
/// zero (central differences of a deep graph carry rounding noise that
/// dwarfs genuinely tiny gradients), everything else is relative.
pub fn rel_err_with_atol(analytic: f64, numeric: f64, atol: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= atol {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs()).max(atol)
    }
}

/// Check `analytic` against central differences of `f` at `x`, probing the
/// entries listed in `probe` (all entries when empty).
pub fn check_entries<F>(
    mut f: F,
    x: &mut [f64],
    analytic: &[f64],
    probe: &[usize],
    step: f64,
    atol: f64,
) -> GradCheck
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let all: Vec<usize>;
    let probe = if probe.is_empty() {
        all = (0..x.len()).collect();
        &all
    } else {
        probe
    };
    let mut worst = GradCheck {
        max_rel_err: 0.0,
        worst_index: 0,
        checked: probe.len(),
    };
    for &i in probe {
        let orig = x[i];
        let h = step * orig.abs().max(1.0);
        x[i] = orig + h;
        let fp = f(x);
        x[i] = orig - h;
        let fm = f(x);
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let err = rel_err_with_atol(analytic[i], numeric, atol);
        if err > worst.max_rel_err {
            worst.max_rel_err = err;
            worst.worst_index = i;
        }
    }
    worst
}

/// Deterministic probe subset: at most `max` evenly spread entries.
pub fn probe_subset(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    (0..max).map(|i| i * len / max).collect()
}
