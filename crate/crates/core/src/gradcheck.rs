//! Central finite differences and the comparison used by every gradient check.

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_differences(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradComparison {
    pub total: usize,
    pub within: usize,
    pub max_rel_error: f64,
}

impl GradComparison {
    pub fn fraction_within(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.within as f64 / self.total as f64
        }
    }
}

/// Relative error `|a - n| / max(|a|, |n|, floor)` per coordinate, where
/// `floor` keeps coordinates whose true gradient is numerically zero from
/// dividing noise by noise.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

pub fn compare(analytic: &[f64], numeric: &[f64], rel_tol: f64, floor: f64) -> GradComparison {
    assert_eq!(analytic.len(), numeric.len());
    let mut within = 0;
    let mut max_rel: f64 = 0.0;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let rel = relative_error(a, n, floor);
        max_rel = max_rel.max(rel);
        if rel < rel_tol {
            within += 1;
        }
    }
    GradComparison {
        total: analytic.len(),
        within,
        max_rel_error: max_rel,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let g = central_differences(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], 1e-3);
        assert!((g[0] - 4.0).abs() < 1e-9);
        assert!((g[1] - 3.0).abs() < 1e-9);
        let c = compare(&[4.0, 3.0], &g, 1e-6, 0.0);
        assert_eq!(c.within, 2);
    }

    #[test]
    fn floor_guards_zero_gradients() {
        assert_eq!(relative_error(0.0, 0.0, 0.0), 0.0);
        assert!(relative_error(0.0, 1e-12, 1e-6) < 1e-5);
        assert!((relative_error(1.0, 0.5, 1e-6) - 0.5).abs() < 1e-15);
    }
}
