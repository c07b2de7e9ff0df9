//! Free convolution with the semicircle: `m_s(z) = m*(z + s m_s(z))`.

use crate::dyson::{richardson, DensityProfile, DysonSolver, Method, SolverOptions, SpectralPoint};
use crate::optim::{bisect_predicate, golden_min, scan_then_golden};
use crate::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// A Herglotz function `m*` on the upper half-plane together with its derivative.
pub trait StieltjesEvaluator: Sync {
    fn m(&self, z: Complex64) -> Result<Complex64>;
    fn m_prime(&self, z: Complex64) -> Result<Complex64>;
}

/// Stieltjes transform `<m>` of a model's density.
pub struct DysonBase {
    solver: DysonSolver,
}

impl DysonBase {
    pub fn new(model: &crate::model::ModelSpec) -> Self {
        let opts = SolverOptions {
            tolerance: 1e-13,
            ..SolverOptions::default()
        };
        Self {
            solver: DysonSolver::new(model, opts),
        }
    }

    pub fn from_solver(solver: DysonSolver) -> Self {
        Self { solver }
    }

    pub fn solver(&self) -> &DysonSolver {
        &self.solver
    }
}

impl StieltjesEvaluator for DysonBase {
    fn m(&self, z: Complex64) -> Result<Complex64> {
        self.solver.average(z)
    }

    fn m_prime(&self, z: Complex64) -> Result<Complex64> {
        let sol = self.solver.solve_reduced(z, None)?;
        let d = self.solver.derivative_reduced(&sol.values)?;
        Ok(self.solver.weighted(&d))
    }
}

/// Semicircle law of variance `variance` (support `[-2√v, 2√v]`).
#[derive(Debug, Clone, Copy)]
pub struct SemicircleBase {
    pub variance: f64,
}

impl StieltjesEvaluator for SemicircleBase {
    fn m(&self, z: Complex64) -> Result<Complex64> {
        if !(z.im > 0.0) {
            return Err(Error::Domain(format!("Im z must be positive, got {z}")));
        }
        let v = self.variance;
        let d = (z * z - 4.0 * v).sqrt();
        let r1 = (-z + d) / (2.0 * v);
        let r2 = (-z - d) / (2.0 * v);
        Ok(if r1.im > r2.im { r1 } else { r2 })
    }

    fn m_prime(&self, z: Complex64) -> Result<Complex64> {
        let m = self.m(z)?;
        Ok(-m / (2.0 * self.variance * m + z))
    }
}

/// Cauchy transform of a piecewise-linear density stored on a grid.
#[derive(Debug, Clone)]
pub struct GridBase {
    profile: DensityProfile,
    mass: f64,
}

impl GridBase {
    /// Wraps a profile; the density is renormalised to unit mass.
    pub fn new(profile: DensityProfile) -> Result<Self> {
        let mass = profile.integral();
        if !(mass > 0.0) {
            return Err(Error::InvalidParameter("profile has no mass".into()));
        }
        Ok(Self { profile, mass })
    }

    pub fn profile(&self) -> &DensityProfile {
        &self.profile
    }

    fn transform(&self, z: Complex64, derivative: bool) -> Complex64 {
        let g = &self.profile.grid;
        let r = &self.profile.rho;
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..g.len() - 1 {
            let (x0, x1) = (g[i], g[i + 1]);
            let (r0, r1) = (r[i], r[i + 1]);
            if r0 == 0.0 && r1 == 0.0 {
                continue;
            }
            let slope = (r1 - r0) / (x1 - x0);
            let icpt = r0 - slope * x0;
            let d0 = x0 - z;
            let d1 = x1 - z;
            let log = d1.ln() - d0.ln();
            if derivative {
                acc += slope * log + (icpt + slope * z) * (d0.inv() - d1.inv());
            } else {
                acc += slope * (x1 - x0) + (icpt + slope * z) * log;
            }
        }
        acc / self.mass
    }
}

impl StieltjesEvaluator for GridBase {
    fn m(&self, z: Complex64) -> Result<Complex64> {
        if !(z.im > 0.0) {
            return Err(Error::Domain(format!("Im z must be positive, got {z}")));
        }
        Ok(self.transform(z, false))
    }

    fn m_prime(&self, z: Complex64) -> Result<Complex64> {
        if !(z.im > 0.0) {
            return Err(Error::Domain(format!("Im z must be positive, got {z}")));
        }
        Ok(self.transform(z, true))
    }
}

/// The flowed transform `m_s` viewed as a new base.
pub struct FlowedBase<'a> {
    pub base: &'a dyn StieltjesEvaluator,
    pub s: f64,
    pub opts: FlowOptions,
}

impl StieltjesEvaluator for FlowedBase<'_> {
    fn m(&self, z: Complex64) -> Result<Complex64> {
        fc_solve_with(self.base, self.s, z, None, self.opts)
    }

    fn m_prime(&self, z: Complex64) -> Result<Complex64> {
        let m = self.m(z)?;
        let d = self.base.m_prime(z + self.s * m)?;
        Ok(d / (1.0 - self.s * d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub theta0: f64,
    pub method: Method,
    /// Evaluation `eta` for limits `eta -> 0`.
    pub eta: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-13,
            max_iterations: 20_000,
            theta0: 0.5,
            method: Method::Newton,
            eta: 1e-13,
        }
    }
}

/// `m_s(z)` with default options.
pub fn fc_solve(base: &dyn StieltjesEvaluator, s: f64, z: SpectralPoint) -> Result<Complex64> {
    if !(z.eta > 0.0) {
        return Err(Error::Domain(format!(
            "eta must be positive, got {}",
            z.eta
        )));
    }
    fc_solve_with(base, s, z.z(), None, FlowOptions::default())
}

/// Solves `m = m*(z + s m)` in the upper half-plane.
pub fn fc_solve_with(
    base: &dyn StieltjesEvaluator,
    s: f64,
    z: Complex64,
    warm: Option<Complex64>,
    opts: FlowOptions,
) -> Result<Complex64> {
    if !(z.im > 0.0) {
        return Err(Error::Domain(format!("Im z must be positive, got {z}")));
    }
    if !(s >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "flow time must be nonnegative, got {s}"
        )));
    }
    if s == 0.0 {
        return base.m(z);
    }
    if let Some(w) = warm {
        if let Ok(Some(m)) = solve_at(base, s, z, w, opts, opts.max_iterations.min(500)) {
            return Ok(m);
        }
    }
    let target = z.im;
    let mut eta = target.max(1.0 + 2.0 * s.sqrt());
    let mut zc = Complex64::new(z.re, eta);
    let mut m = base.m(zc)?;
    loop {
        match solve_at(base, s, zc, m, opts, opts.max_iterations)? {
            Some(v) => m = v,
            None => {
                let res = (m - base.m(zc + s * m)?).norm();
                return Err(Error::Divergence {
                    iterations: opts.max_iterations,
                    residual: res,
                });
            }
        }
        if eta <= target {
            return Ok(m);
        }
        let next = (eta / 4.0).max(target);
        let znext = Complex64::new(z.re, next);
        if let Ok(d) = base.m_prime(zc + s * m) {
            // derivative of m_s along the path
            let dm = d / (1.0 - s * d);
            let pred = m + (znext - zc) * dm;
            if pred.im > 0.0 && pred.is_finite() {
                m = pred;
            }
        }
        eta = next;
        zc = znext;
    }
}

fn solve_at(
    base: &dyn StieltjesEvaluator,
    s: f64,
    z: Complex64,
    start: Complex64,
    opts: FlowOptions,
    budget: usize,
) -> Result<Option<Complex64>> {
    let defect = |m: Complex64| -> Result<Complex64> { Ok(m - base.m(z + s * m)?) };
    let mut m = if start.im > 0.0 {
        start
    } else {
        Complex64::new(0.0, 1.0)
    };
    let mut f = defect(m)?;
    if opts.method == Method::Newton {
        for _ in 0..60.min(budget) {
            if f.norm() <= opts.tolerance {
                return Ok(Some(m));
            }
            let d = base.m_prime(z + s * m)?;
            let step = f / (1.0 - s * d);
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial = m - lambda * step;
                if trial.im > 0.0 {
                    if let Ok(ft) = defect(trial) {
                        if ft.norm() < f.norm() * (1.0 - 1e-4 * lambda) {
                            m = trial;
                            f = ft;
                            accepted = true;
                            break;
                        }
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if f.norm() <= opts.tolerance {
            return Ok(Some(m));
        }
    }
    // damped fixed point, restarted from i on loss of positivity
    let mut theta = opts.theta0;
    let mut res = f.norm();
    for _ in 0..budget {
        if res <= opts.tolerance {
            return Ok(Some(m));
        }
        let next = (1.0 - theta) * m + theta * base.m(z + s * m)?;
        if next.im <= 0.0 {
            theta *= 0.5;
            m = Complex64::new(0.0, 1.0);
            res = defect(m)?.norm();
            if theta < 1e-12 {
                break;
            }
            continue;
        }
        let r = defect(next)?.norm();
        if r > res {
            theta = (theta * 0.5).max(1e-6);
        }
        m = next;
        res = r;
    }
    Ok((res <= opts.tolerance).then_some(m))
}

/// Flowed density `Im m_s / π`, extrapolated to `eta -> 0`.
pub fn flow_density(
    base: &dyn StieltjesEvaluator,
    s: f64,
    x: f64,
    opts: FlowOptions,
) -> Result<f64> {
    let a = fc_solve_with(base, s, Complex64::new(x, opts.eta), None, opts)?;
    let b = fc_solve_with(base, s, Complex64::new(x, 2.0 * opts.eta), Some(a), opts)?;
    Ok(richardson(a.im / PI, b.im / PI))
}

/// `Re m_s(x)` extrapolated to `eta -> 0`.
pub fn flow_real_part(
    base: &dyn StieltjesEvaluator,
    s: f64,
    x: f64,
    opts: FlowOptions,
) -> Result<f64> {
    let a = fc_solve_with(base, s, Complex64::new(x, opts.eta), None, opts)?;
    let b = fc_solve_with(base, s, Complex64::new(x, 2.0 * opts.eta), Some(a), opts)?;
    Ok(2.0 * a.re - b.re)
}

const EDGE_LEVEL: f64 = 1e-10;

/// Edges `(e-, e+)` and gap length of `ρ_s` inside `bracket`.
pub fn track_edges(
    base: &dyn StieltjesEvaluator,
    s: f64,
    bracket: (f64, f64),
) -> Result<(f64, f64, f64)> {
    track_edges_with(base, s, bracket, FlowOptions::default())
}

///
/// For `s > 0` the edges are the images `ζ - s m*(ζ)` of the two points of
/// the base gap where `s m*'(ζ) = 1`; when the base has no gap in `bracket`
/// the edges are located on the extrapolated flowed density instead.
pub fn track_edges_with(
    base: &dyn StieltjesEvaluator,
    s: f64,
    bracket: (f64, f64),
    opts: FlowOptions,
) -> Result<(f64, f64, f64)> {
    if s > 0.0 {
        match base_gap_stiffness(base, bracket, opts) {
            Ok((x0, stiffness)) => {
                return edges_from_base_gap(base, s, bracket, x0, stiffness, opts)
            }
            Err(Error::GapClosed(_)) | Err(Error::Bracketing(_)) => {}
            Err(e) => return Err(e),
        }
    }
    edges_from_density(base, s, bracket, opts)
}

fn edges_from_base_gap(
    base: &dyn StieltjesEvaluator,
    s: f64,
    bracket: (f64, f64),
    x0: f64,
    stiffness: f64,
    opts: FlowOptions,
) -> Result<(f64, f64, f64)> {
    if s * stiffness >= 1.0 {
        return Err(Error::GapClosed(format!(
            "s = {s} reaches 1/min m*' = {:.12}",
            1.0 / stiffness
        )));
    }
    let (b_minus, b_plus, _) = edges_from_density(base, 0.0, bracket, opts)?;
    let width = b_plus - b_minus;
    let inset = 1e-12 * width;
    let slope = |x: f64| -> Result<f64> { Ok(s * base.m_prime(Complex64::new(x, opts.eta))?.re) };
    let tol = 1e-15 * width.max(1.0);
    let left = bisect_predicate(|x| Ok(slope(x)? < 1.0), b_minus + inset, x0, tol)?;
    let right = bisect_predicate(|x| Ok(slope(x)? >= 1.0), x0, b_plus - inset, tol)?;
    let image = |x: f64| -> Result<f64> { Ok(x - s * base.m(Complex64::new(x, opts.eta))?.re) };
    let (e_minus, e_plus) = (image(left)?, image(right)?);
    Ok((e_minus, e_plus, e_plus - e_minus))
}

fn edges_from_density(
    base: &dyn StieltjesEvaluator,
    s: f64,
    bracket: (f64, f64),
    opts: FlowOptions,
) -> Result<(f64, f64, f64)> {
    let (lo, hi) = bracket;
    let dens = |x: f64| flow_density(base, s, x, opts);
    if dens(lo)? <= EDGE_LEVEL || dens(hi)? <= EDGE_LEVEL {
        return Err(Error::Bracketing(format!(
            "bracket [{lo}, {hi}] must end inside the support"
        )));
    }
    let (xm, rm) = scan_then_golden(dens, lo, hi, 101, 1e-15)?;
    if rm > EDGE_LEVEL {
        return Err(Error::GapClosed(format!(
            "minimal density {rm:.3e} at {xm:.9} at s = {s}"
        )));
    }
    let e_minus = bisect_predicate(|x| Ok(dens(x)? <= EDGE_LEVEL), lo, xm, 1e-15)?;
    let e_plus = bisect_predicate(|x| Ok(dens(x)? > EDGE_LEVEL), xm, hi, 1e-15)?;
    Ok((e_minus, e_plus, e_plus - e_minus))
}

/// Smallest value of `Re m*'` on the real axis between the base edges, and where it occurs.
///
/// The flowed density has a gap exactly while `s · min m*' < 1`.
pub fn base_gap_stiffness(
    base: &dyn StieltjesEvaluator,
    bracket: (f64, f64),
    opts: FlowOptions,
) -> Result<(f64, f64)> {
    let (e_minus, e_plus, _) = edges_from_density(base, 0.0, bracket, opts)?;
    let width = e_plus - e_minus;
    let inset = 1e-9 * width;
    let stiffness = |x: f64| -> Result<f64> { Ok(base.m_prime(Complex64::new(x, opts.eta))?.re) };
    golden_min(
        stiffness,
        e_minus + inset,
        e_plus - inset,
        1e-12 * width.max(1e-300),
    )
}

/// Critical time at which the gap inside `window` closes.
///
/// `bracket = (s_lo, s_hi)` with the gap open at `s_lo` and closed at `s_hi`.
pub fn find_cusp_time(
    base: &dyn StieltjesEvaluator,
    bracket: (f64, f64),
    window: (f64, f64),
) -> Result<f64> {
    find_cusp_time_with(base, bracket, window, FlowOptions::default())
}

pub fn find_cusp_time_with(
    base: &dyn StieltjesEvaluator,
    bracket: (f64, f64),
    window: (f64, f64),
    opts: FlowOptions,
) -> Result<f64> {
    let (s_lo, s_hi) = bracket;
    if !(0.0 <= s_lo && s_lo < s_hi) {
        return Err(Error::InvalidParameter(format!(
            "invalid time bracket {bracket:?}"
        )));
    }
    let (_, stiffness) = base_gap_stiffness(base, window, opts).map_err(|e| match e {
        Error::GapClosed(msg) => {
            Error::Bracketing(format!("base density has no gap in the window: {msg}"))
        }
        other => other,
    })?;
    let closed = |s: f64| Ok(s * stiffness >= 1.0);
    bisect_predicate(closed, s_lo, s_hi, 1e-6 * s_hi * 1e-3)
}

/// Location and value of the minimum of `ρ_s` in `bracket` (for `s > t*`).
pub fn track_minimum(
    base: &dyn StieltjesEvaluator,
    s: f64,
    bracket: (f64, f64),
) -> Result<(f64, f64)> {
    track_minimum_with(base, s, bracket, FlowOptions::default())
}

pub fn track_minimum_with(
    base: &dyn StieltjesEvaluator,
    s: f64,
    bracket: (f64, f64),
    opts: FlowOptions,
) -> Result<(f64, f64)> {
    let (lo, hi) = bracket;
    let dens = |x: f64| flow_density(base, s, x, opts);
    let (x, v) = scan_then_golden(dens, lo, hi, 61, 1e-9 * 1e-3)?;
    let width = hi - lo;
    if x - lo < 1e-6 * width || hi - x < 1e-6 * width {
        return Err(Error::Bracketing(format!(
            "minimum of the flowed density at the bracket end {x}"
        )));
    }
    if v <= EDGE_LEVEL {
        return Err(Error::Bracketing(format!(
            "density vanishes at {x}: gap still open at s = {s}"
        )));
    }
    Ok((x, v))
}

/// `ξ_s(x) = x + s Re m_s(x)`.
pub fn xi_probe(base: &dyn StieltjesEvaluator, s: f64, point: f64) -> Result<f64> {
    if s == 0.0 {
        return Ok(point);
    }
    Ok(point + s * flow_real_part(base, s, point, FlowOptions::default())?)
}

/// Snapshot of the flow at time `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub s: f64,
    pub edges: Option<(f64, f64)>,
    pub gap: Option<f64>,
    pub minimum: Option<(f64, f64)>,
    pub t_star: Option<f64>,
    pub xi_of: Vec<(f64, f64)>,
}

/// Edges or minimum of the flow at time `s` inside `window`, plus `ξ_s` at the probes.
pub fn flow_state(
    base: &dyn StieltjesEvaluator,
    s: f64,
    window: (f64, f64),
    t_star: Option<f64>,
    probes: &[f64],
) -> Result<FlowState> {
    let mut state = FlowState {
        s,
        edges: None,
        gap: None,
        minimum: None,
        t_star,
        xi_of: Vec::new(),
    };
    match track_edges(base, s, window) {
        Ok((a, b, d)) => {
            state.edges = Some((a, b));
            state.gap = Some(d);
        }
        Err(Error::GapClosed(_)) => {
            state.minimum = Some(track_minimum(base, s, window)?);
        }
        Err(e) => return Err(e),
    }
    for &p in probes {
        state.xi_of.push((p, xi_probe(base, s, p)?));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{instantiate_two_block, ModelSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn semicircle_flows_to_wider_semicircle() {
        let base = SemicircleBase { variance: 1.0 };
        let m = fc_solve(&base, 1.0, SpectralPoint::new(0.0, 1e-12)).unwrap();
        assert_abs_diff_eq!(m.im, 1.0 / 2f64.sqrt(), epsilon = 1e-9);
        let z = SpectralPoint::new(0.7, 0.3);
        assert_eq!(fc_solve(&base, 0.0, z).unwrap(), base.m(z.z()).unwrap());
    }

    #[test]
    fn dyson_base_matches_augmented_variance() {
        let model = instantiate_two_block((1, 1), (1.0, 1.0, 1.0), (-1.2, 1.2)).unwrap();
        let base = DysonBase::new(&model);
        let s = 0.3;
        let shifted = DysonSolver::new(
            &model.with_added_variance(s).unwrap(),
            SolverOptions::default(),
        );
        for tau in [-2.0, -0.4, 0.0, 0.9, 1.7] {
            let z = Complex64::new(tau, 1e-3);
            let a = fc_solve_with(&base, s, z, None, FlowOptions::default()).unwrap();
            let b = shifted.average(z).unwrap();
            assert!((a - b).norm() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn grid_base_reproduces_semicircle() {
        let model = ModelSpec::flat(1).unwrap();
        let profile = crate::dyson::density_grid(&model, (-2.5, 2.5), 1e-4, 1e-9).unwrap();
        let base = GridBase::new(profile).unwrap();
        let exact = SemicircleBase { variance: 1.0 };
        for tau in [-1.0, 0.0, 0.5, 3.0] {
            let z = Complex64::new(tau, 0.1);
            assert!((base.m(z).unwrap() - exact.m(z).unwrap()).norm() < 2e-4);
            assert!((base.m_prime(z).unwrap() - exact.m_prime(z).unwrap()).norm() < 2e-3);
        }
    }

    #[test]
    fn edges_from_base_gap_match_density_edges() {
        let a: f64 = 1.3;
        let model = instantiate_two_block((1, 1), (1.0, 1.0, 1.0), (-a, a)).unwrap();
        let base = DysonBase::new(&model);
        let s = 0.3;
        let (lo, hi, gap) = track_edges(&base, s, (-0.8, 0.8)).unwrap();
        let (lo2, hi2, _) =
            edges_from_density(&base, s, (-0.8, 0.8), FlowOptions::default()).unwrap();
        assert_abs_diff_eq!(lo, lo2, epsilon = 1e-7);
        assert_abs_diff_eq!(hi, hi2, epsilon = 1e-7);
        assert_abs_diff_eq!(lo, -hi, epsilon = 1e-12);
        assert!(gap > 0.0);
        let t = a * a - 1.0;
        assert!(matches!(
            track_edges(&base, t + 1e-3, (-0.8, 0.8)),
            Err(Error::GapClosed(_))
        ));
    }

    #[test]
    fn no_gap_means_no_cusp_time() {
        let base = SemicircleBase { variance: 1.0 };
        let e = find_cusp_time(&base, (0.0, 1.0), (-1.0, 1.0)).unwrap_err();
        assert!(matches!(e, Error::Bracketing(_)));
    }

    #[test]
    fn symmetric_two_block_cusp_time() {
        // the symmetric model with shifts ±a and unit variances closes its gap at s = a² - 1
        let a: f64 = 1.1;
        let model = instantiate_two_block((1, 1), (1.0, 1.0, 1.0), (-a, a)).unwrap();
        let base = DysonBase::new(&model);
        let t = find_cusp_time(&base, (0.0, 1.0), (-0.5, 0.5)).unwrap();
        assert_abs_diff_eq!(t, a * a - 1.0, epsilon = 1e-7);
        let (e0, e1, d) = track_edges(&base, 0.0, (-0.5, 0.5)).unwrap();
        assert_abs_diff_eq!(e0, -e1, epsilon = 1e-9);
        assert!(d > 0.0);
        let (xm, _) = track_minimum(&base, 2.0 * t, (-0.5, 0.5)).unwrap();
        assert_abs_diff_eq!(xm, 0.0, epsilon = 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn associativity(tau in -3.0f64..3.0, eta in 1e-3f64..1.0, s1 in 0.05f64..1.0, s2 in 0.05f64..1.0) {
            let base = SemicircleBase { variance: 0.7 };
            let opts = FlowOptions::default();
            let z = Complex64::new(tau, eta);
            let direct = fc_solve_with(&base, s1 + s2, z, None, opts).unwrap();
            let inner = FlowedBase { base: &base, s: s1, opts };
            let nested = fc_solve_with(&inner, s2, z, None, opts).unwrap();
            prop_assert!((direct - nested).norm() <= 1e-10);
        }
    }
}
