//! Scalar root finding, minimisation and least-squares helpers.

use crate::{Error, Result};

/// Bisection for a sign change of `f` on `[lo, hi]` down to width `tol`.
///
/// `f` may fail; errors are propagated. Returns the midpoint of the final bracket.
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut flo = f(lo)?;
    let fhi = f(hi)?;
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Bracketing(format!(
            "no sign change on [{lo:.6e}, {hi:.6e}] (values {flo:.3e}, {fhi:.3e})"
        )));
    }
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bisection on a boolean predicate that is `false` at `lo` and `true` at `hi`.
pub fn bisect_predicate<F>(mut pred: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<bool>,
{
    if pred(lo)? || !pred(hi)? {
        return Err(Error::Bracketing(format!(
            "predicate does not switch from false to true on [{lo:.6e}, {hi:.6e}]"
        )));
    }
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Golden-section minimisation on `[lo, hi]`; returns `(argmin, min)`.
pub fn golden_min<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    const R: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - R * (hi - lo);
    let mut x2 = lo + R * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..400 {
        if hi - lo <= tol {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - R * (hi - lo);
            if x1 <= lo || x1 >= x2 {
                break;
            }
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + R * (hi - lo);
            if x2 >= hi || x2 <= x1 {
                break;
            }
            f2 = f(x2)?;
        }
    }
    Ok(if f1 <= f2 { (x1, f1) } else { (x2, f2) })
}

/// Coarse scan followed by golden-section refinement around the best sample.
pub fn scan_then_golden<F>(
    mut f: F,
    lo: f64,
    hi: f64,
    samples: usize,
    tol: f64,
) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let n = samples.max(3);
    let xs: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    let mut best = (0usize, f64::INFINITY);
    for (i, &x) in xs.iter().enumerate() {
        let v = f(x)?;
        if v < best.1 {
            best = (i, v);
        }
    }
    let a = xs[best.0.saturating_sub(1)];
    let b = xs[(best.0 + 1).min(n - 1)];
    let (x, v) = golden_min(&mut f, a, b, tol)?;
    Ok(if v <= best.1 {
        (x, v)
    } else {
        (xs[best.0], best.1)
    })
}

/// Ordinary least-squares line `y = intercept + slope x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).1
}

/// `n` logarithmically spaced points between `lo` and `hi`.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(|x| Ok(x * x - 2.0), 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn bisect_reports_missing_bracket() {
        assert!(matches!(
            bisect(|x| Ok(x * x + 1.0), -1.0, 1.0, 1e-8),
            Err(Error::Bracketing(_))
        ));
    }

    #[test]
    fn golden_finds_v_shaped_minimum() {
        let (x, v) = golden_min(|x| Ok((x - 0.3).abs().cbrt()), -1.0, 1.0, 1e-13).unwrap();
        assert!((x - 0.3).abs() < 1e-12);
        assert!(v < 1e-4);
    }

    #[test]
    fn slope_of_power_law() {
        let x = logspace(1e-6, 1e-2, 20);
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v.powf(0.37)).collect();
        assert!((log_log_slope(&x, &y) - 0.37).abs() < 1e-12);
    }
}
