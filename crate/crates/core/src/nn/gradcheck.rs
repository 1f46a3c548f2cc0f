/// Step and denominator floor for central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Relative errors are measured as `|a - n| / max(|a|, |n|, floor)`, so
    /// gradients far below the finite-difference noise level compare
    /// absolutely.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Compares `analytic` with central differences of `f` around `point` at the
/// listed coordinates (all coordinates when `indices` is `None`).
pub fn grad_check<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    indices: Option<&[usize]>,
    opts: GradCheckOptions,
) -> GradReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(point.len(), analytic.len(), "gradient length");
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut x = point.to_vec();
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst_index: None,
        analytic: Vec::with_capacity(idx.len()),
        numeric: Vec::with_capacity(idx.len()),
    };
    for &i in idx {
        let orig = x[i];
        x[i] = orig + opts.step;
        let up = f(&x);
        x[i] = orig - opts.step;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * opts.step);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        if report.worst_index.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
        report.analytic.push(a);
        report.numeric.push(numeric);
    }
    report
}
