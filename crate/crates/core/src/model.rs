//! Deformed Wigner-type matrix models `H = A + W`.
//!
//! A model is described by the diagonal expectation `a`, the variance profile
//! `s_ij = E|w_ij|^2` and the second-moment profile `t_ij = E w_ij^2`.

use crate::{invalid, Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Symmetry {
    #[default]
    ComplexHermitian,
    RealSymmetric,
}

/// Second-moment profile `t_ij = E w_ij^2`; the diagonal is always zero.
#[derive(Debug, Clone, PartialEq)]
pub enum SecondMoment {
    /// `t = 0`, the default for complex Hermitian models.
    Zero,
    /// `t_ij = s_ij` off the diagonal, as forced by real symmetric entries.
    MatchVariance,
    /// Arbitrary row-major `N × N` profile.
    Explicit(Vec<Complex64>),
}

/// Witnessed model constants: `c/N <= s_ij <= C/N` and the fullness bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    pub lower: f64,
    pub upper: f64,
    pub fullness: f64,
}

/// An immutable matrix model.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    n: usize,
    a: Vec<f64>,
    s: Vec<f64>,
    t: SecondMoment,
    symmetry: Symmetry,
    constants: ModelConstants,
}

impl ModelSpec {
    /// Builds a model from a diagonal `a` and a row-major variance profile `s`.
    ///
    /// Only shapes are checked here; use [`validate`] for the model invariants.
    pub fn new(a: Vec<f64>, s: Vec<f64>, t: SecondMoment, symmetry: Symmetry) -> Result<Self> {
        let n = a.len();
        if n == 0 {
            return invalid("model dimension must be positive");
        }
        if s.len() != n * n {
            return invalid(format!(
                "variance profile has {} entries, expected {}",
                s.len(),
                n * n
            ));
        }
        if let SecondMoment::Explicit(t) = &t {
            if t.len() != n * n {
                return invalid(format!(
                    "second-moment profile has {} entries, expected {}",
                    t.len(),
                    n * n
                ));
            }
        }
        if a.iter().chain(&s).any(|x| !x.is_finite()) {
            return invalid("model entries must be finite");
        }
        let constants = witness(n, &s, &t, symmetry);
        Ok(Self {
            n,
            a,
            s,
            t,
            symmetry,
            constants,
        })
    }

    /// The flat model `s_ij = 1/N`, `a = 0`, whose density is the semicircle.
    pub fn flat(n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("model dimension must be positive");
        }
        Self::new(
            vec![0.0; n],
            vec![1.0 / n as f64; n * n],
            SecondMoment::Zero,
            Symmetry::ComplexHermitian,
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// Row-major variance profile.
    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn s_at(&self, i: usize, j: usize) -> f64 {
        self.s[i * self.n + j]
    }

    pub fn t_at(&self, i: usize, j: usize) -> Complex64 {
        if i == j {
            return Complex64::new(0.0, 0.0);
        }
        match &self.t {
            SecondMoment::Zero => Complex64::new(0.0, 0.0),
            SecondMoment::MatchVariance => Complex64::new(self.s_at(i, j), 0.0),
            SecondMoment::Explicit(t) => t[i * self.n + j],
        }
    }

    pub fn second_moment(&self) -> &SecondMoment {
        &self.t
    }

    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }

    pub fn constants(&self) -> ModelConstants {
        self.constants
    }

    /// Same model with the variance profile replaced by `s + shift/N` off and on the diagonal.
    ///
    /// Adding `shift/N` everywhere is the self-energy of an independent GUE
    /// of variance `shift`, which is how the semicircular flow acts on models.
    pub fn with_added_variance(&self, shift: f64) -> Result<Self> {
        let add = shift / self.n as f64;
        let s = self.s.iter().map(|x| x + add).collect();
        Self::new(self.a.clone(), s, self.t.clone(), self.symmetry)
    }

    /// Groups indices with identical `a_i` and identical rows of `s` (and `t`).
    pub fn reduce(&self) -> Reduction {
        Reduction::new(self)
    }
}

fn witness(n: usize, s: &[f64], t: &SecondMoment, symmetry: Symmetry) -> ModelConstants {
    let nf = n as f64;
    let lower = s.iter().copied().fold(f64::INFINITY, f64::min) * nf;
    let upper = s.iter().copied().fold(0.0, f64::max) * nf;
    let mut fullness = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            let sij = s[i * n + j];
            let tij = if i == j {
                Complex64::new(0.0, 0.0)
            } else {
                match t {
                    SecondMoment::Zero => Complex64::new(0.0, 0.0),
                    SecondMoment::MatchVariance => Complex64::new(sij, 0.0),
                    SecondMoment::Explicit(t) => t[i * n + j],
                }
            };
            let smallest = match symmetry {
                Symmetry::RealSymmetric => sij,
                Symmetry::ComplexHermitian if i == j => sij,
                // covariance of (Re w, Im w) has eigenvalues (s ± |t|)/2
                Symmetry::ComplexHermitian => 0.5 * (sij - tij.norm()),
            };
            fullness = fullness.min(smallest * nf);
        }
    }
    ModelConstants {
        lower,
        upper,
        fullness,
    }
}

/// Outcome of a single invariant check.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ValidationReport {
    pub passed: bool,
    pub checks: Vec<InvariantCheck>,
    pub constants: ModelConstants,
}

impl ValidationReport {
    pub fn failures(&self) -> impl Iterator<Item = &InvariantCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Converts a failed report into a validation error.
    pub fn into_result(self) -> Result<ModelConstants> {
        if self.passed {
            return Ok(self.constants);
        }
        let msg = self
            .failures()
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::Validation(msg))
    }
}

/// Checks symmetry, bounds, flatness and fullness of a model.
pub fn validate(model: &ModelSpec) -> ValidationReport {
    let n = model.n;
    let tol = 1e-12 * model.constants.upper.max(1.0) / n as f64;
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(InvariantCheck {
            name: name.into(),
            passed,
            detail,
        });
    };

    let mut asym = 0.0_f64;
    let mut negative = 0usize;
    for i in 0..n {
        for j in 0..n {
            let v = model.s_at(i, j);
            asym = asym.max((v - model.s_at(j, i)).abs());
            if v < 0.0 {
                negative += 1;
            }
        }
    }
    push(
        "s-symmetric",
        asym <= tol,
        format!("max |s_ij - s_ji| = {asym:.3e}"),
    );
    push(
        "s-nonnegative",
        negative == 0,
        format!("{negative} negative entries"),
    );
    let c = model.constants;
    push(
        "s-bounded",
        c.upper.is_finite(),
        format!("max N s_ij = {:.6}", c.upper),
    );
    push(
        "flatness",
        c.lower > 0.0,
        format!("min N s_ij = {:.6}", c.lower),
    );

    match &model.t {
        SecondMoment::Explicit(t) => {
            let mut tasym = 0.0_f64;
            let mut diag = 0.0_f64;
            for i in 0..n {
                diag = diag.max(t[i * n + i].norm());
                for j in 0..n {
                    tasym = tasym.max((t[i * n + j] - t[j * n + i]).norm());
                }
            }
            push(
                "t-symmetric",
                tasym <= tol,
                format!("max |t_ij - t_ji| = {tasym:.3e}"),
            );
            push(
                "t-zero-diagonal",
                diag <= tol,
                format!("max |t_ii| = {diag:.3e}"),
            );
            if model.symmetry == Symmetry::RealSymmetric {
                let mut dev = 0.0_f64;
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            dev = dev
                                .max((t[i * n + j] - Complex64::new(model.s_at(i, j), 0.0)).norm());
                        }
                    }
                }
                push(
                    "real-symmetric-consistency",
                    dev <= tol,
                    format!("max |t_ij - s_ij| = {dev:.3e}"),
                );
            }
        }
        SecondMoment::Zero => {
            push(
                "real-symmetric-consistency",
                model.symmetry == Symmetry::ComplexHermitian,
                "t = 0".into(),
            );
        }
        SecondMoment::MatchVariance => {}
    }
    push(
        "fullness",
        c.fullness > 0.0,
        format!("min N * smallest covariance eigenvalue = {:.6}", c.fullness),
    );

    let passed = checks.iter().all(|c| c.passed);
    ValidationReport {
        passed,
        checks,
        constants: c,
    }
}

/// Two-block model: blocks of sizes `(n1, n2)`, block variances
/// `(s11, s12, s22)` scaled by `1/N`, and diagonal shifts `(a1, a2)`.
pub fn instantiate_two_block(
    sizes: (usize, usize),
    variances: (f64, f64, f64),
    shifts: (f64, f64),
) -> Result<ModelSpec> {
    instantiate_two_block_with(sizes, variances, shifts, Symmetry::ComplexHermitian)
}

pub fn instantiate_two_block_with(
    sizes: (usize, usize),
    variances: (f64, f64, f64),
    shifts: (f64, f64),
    symmetry: Symmetry,
) -> Result<ModelSpec> {
    let (n1, n2) = sizes;
    let n = n1 + n2;
    if n1 == 0 || n2 == 0 {
        return invalid("both blocks must be nonempty");
    }
    let (v11, v12, v22) = variances;
    if !(v11 > 0.0 && v12 > 0.0 && v22 > 0.0) {
        return invalid(format!(
            "block variances must be positive, got {variances:?}"
        ));
    }
    if !(shifts.0.is_finite() && shifts.1.is_finite()) {
        return invalid("shifts must be finite");
    }
    let nf = n as f64;
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let v = match (i < n1, j < n1) {
                (true, true) => v11,
                (false, false) => v22,
                _ => v12,
            };
            s[i * n + j] = v / nf;
        }
    }
    let a = (0..n)
        .map(|i| if i < n1 { shifts.0 } else { shifts.1 })
        .collect();
    let t = match symmetry {
        Symmetry::ComplexHermitian => SecondMoment::Zero,
        Symmetry::RealSymmetric => SecondMoment::MatchVariance,
    };
    ModelSpec::new(a, s, t, symmetry)
}

/// Parametrised model families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelFamily {
    FlatSemicircle,
    TwoBlock {
        /// Fraction of indices in the first block, or explicit sizes.
        #[serde(default)]
        sizes: Option<(usize, usize)>,
        #[serde(default = "default_fraction")]
        fraction: f64,
        variances: (f64, f64, f64),
        shifts: (f64, f64),
    },
    Custom {
        a: Vec<f64>,
        s: Vec<Vec<f64>>,
        #[serde(default)]
        t_re: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        t_im: Option<Vec<Vec<f64>>>,
    },
}

fn default_fraction() -> f64 {
    0.5
}

impl ModelFamily {
    pub fn instantiate(&self, n: usize, symmetry: Symmetry) -> Result<ModelSpec> {
        match self {
            ModelFamily::FlatSemicircle => {
                let t = match symmetry {
                    Symmetry::ComplexHermitian => SecondMoment::Zero,
                    Symmetry::RealSymmetric => SecondMoment::MatchVariance,
                };
                if n == 0 {
                    return invalid("model dimension must be positive");
                }
                ModelSpec::new(vec![0.0; n], vec![1.0 / n as f64; n * n], t, symmetry)
            }
            ModelFamily::TwoBlock {
                sizes,
                fraction,
                variances,
                shifts,
            } => {
                let sizes = match sizes {
                    Some(sz) => {
                        if sz.0 + sz.1 != n {
                            return invalid(format!("block sizes {sz:?} do not sum to n = {n}"));
                        }
                        *sz
                    }
                    None => {
                        if !(0.0..=1.0).contains(fraction) {
                            return invalid("block fraction must lie in [0, 1]");
                        }
                        let n1 = (fraction * n as f64).round() as usize;
                        (n1, n - n1)
                    }
                };
                instantiate_two_block_with(sizes, *variances, *shifts, symmetry)
            }
            ModelFamily::Custom { a, s, t_re, t_im } => {
                if a.len() != n || s.len() != n || s.iter().any(|r| r.len() != n) {
                    return invalid("custom model arrays do not match n");
                }
                let flat: Vec<f64> = s.iter().flatten().copied().collect();
                let t = match (t_re, t_im) {
                    (None, None) => match symmetry {
                        Symmetry::ComplexHermitian => SecondMoment::Zero,
                        Symmetry::RealSymmetric => SecondMoment::MatchVariance,
                    },
                    _ => {
                        let get = |m: &Option<Vec<Vec<f64>>>, i: usize, j: usize| {
                            m.as_ref()
                                .and_then(|m| m.get(i))
                                .and_then(|r| r.get(j))
                                .copied()
                                .unwrap_or(0.0)
                        };
                        for m in [t_re, t_im].into_iter().flatten() {
                            if m.len() != n || m.iter().any(|r| r.len() != n) {
                                return invalid("custom second-moment arrays do not match n");
                            }
                        }
                        let mut t = Vec::with_capacity(n * n);
                        for i in 0..n {
                            for j in 0..n {
                                t.push(Complex64::new(get(t_re, i, j), get(t_im, i, j)));
                            }
                        }
                        SecondMoment::Explicit(t)
                    }
                };
                ModelSpec::new(a.clone(), flat, t, symmetry)
            }
        }
    }
}

/// On-disk model description (TOML).
///
/// ```toml
/// n = 400
/// symmetry = "complex-hermitian"
///
/// [family]
/// kind = "two-block"
/// variances = [1.0, 1.0, 1.0]
/// shifts = [-1.0, 1.0]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    #[serde(default)]
    pub symmetry: Symmetry,
    pub family: ModelFamily,
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn instantiate(&self) -> Result<ModelSpec> {
        self.family.instantiate(self.n, self.symmetry)
    }
}

/// Index classes of a model sharing `a_i` and the rows of `s` and `t`.
///
/// Within a class the Dyson solution is constant, so the equation reduces to
/// one unknown per class with kernel `kernel[k][l] = sum_{j in l} s_{i_k j}`.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub class_of: Vec<usize>,
    pub sizes: Vec<usize>,
    pub shifts: Vec<f64>,
    /// Row-major `K × K` reduced variance kernel.
    pub kernel: Vec<f64>,
    /// Block value of `s` inside each class (the diagonal block entry).
    pub self_variance: Vec<f64>,
    pub n: usize,
}

impl Reduction {
    fn new(model: &ModelSpec) -> Self {
        let n = model.n;
        let mut classes: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut class_of = Vec::with_capacity(n);
        let mut reps = Vec::new();
        for i in 0..n {
            let mut key = Vec::with_capacity(1 + n * 3);
            key.push(model.a[i].to_bits());
            key.extend(model.s[i * n..(i + 1) * n].iter().map(|x| x.to_bits()));
            if let SecondMoment::Explicit(t) = &model.t {
                // t rows differ at the zero diagonal, so compare them with it masked
                for j in 0..n {
                    let v = if j == i {
                        Complex64::new(f64::NAN, 0.0)
                    } else {
                        t[i * n + j]
                    };
                    key.push(v.re.to_bits());
                    key.push(v.im.to_bits());
                }
                key.push(i as u64);
            }
            let next = classes.len();
            let k = *classes.entry(key).or_insert_with(|| {
                reps.push(i);
                next
            });
            class_of.push(k);
        }
        let kk = reps.len();
        let mut sizes = vec![0usize; kk];
        for &c in &class_of {
            sizes[c] += 1;
        }
        let mut kernel = vec![0.0; kk * kk];
        for (k, &i) in reps.iter().enumerate() {
            for j in 0..n {
                kernel[k * kk + class_of[j]] += model.s_at(i, j);
            }
        }
        let shifts = reps.iter().map(|&i| model.a[i]).collect();
        let self_variance = reps.iter().map(|&i| model.s_at(i, i)).collect();
        Self {
            class_of,
            sizes,
            shifts,
            kernel,
            self_variance,
            n,
        }
    }

    pub fn classes(&self) -> usize {
        self.sizes.len()
    }

    /// Weight `|class| / N` of each class.
    pub fn weights(&self) -> Vec<f64> {
        self.sizes
            .iter()
            .map(|&s| s as f64 / self.n as f64)
            .collect()
    }

    /// Expands per-class values to a full length-`N` vector.
    pub fn expand<T: Copy>(&self, values: &[T]) -> Vec<T> {
        self.class_of.iter().map(|&c| values[c]).collect()
    }

    /// Averages a full vector over each class.
    pub fn compress(&self, full: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.classes()];
        for (i, &c) in self.class_of.iter().enumerate() {
            out[c] += full[i];
        }
        for (o, &s) in out.iter_mut().zip(&self.sizes) {
            *o /= s as f64;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flat_model_passes_with_unit_constants() {
        let m = ModelSpec::flat(16).unwrap();
        let r = validate(&m);
        assert!(r.passed, "{r:?}");
        assert!((r.constants.lower - 1.0).abs() < 1e-12);
        assert!((r.constants.upper - 1.0).abs() < 1e-12);
        assert!((r.constants.fullness - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_entry_breaks_flatness() {
        let n = 4;
        let mut s = vec![0.25; n * n];
        s[1] = 0.0;
        s[n] = 0.0;
        let m = ModelSpec::new(
            vec![0.0; n],
            s,
            SecondMoment::Zero,
            Symmetry::ComplexHermitian,
        )
        .unwrap();
        let r = validate(&m);
        assert!(!r.passed);
        assert!(r.failures().any(|c| c.name == "flatness"));
    }

    #[test]
    fn inconsistent_real_symmetric_profile_fails() {
        let n = 3;
        let s = vec![1.0 / 3.0; n * n];
        let mut t: Vec<Complex64> = (0..n * n)
            .map(|k| {
                if k / n == k % n {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(1.0 / 3.0, 0.0)
                }
            })
            .collect();
        t[1] = Complex64::new(0.1, 0.0);
        t[n] = Complex64::new(0.1, 0.0);
        let m = ModelSpec::new(
            vec![0.0; n],
            s,
            SecondMoment::Explicit(t),
            Symmetry::RealSymmetric,
        )
        .unwrap();
        let r = validate(&m);
        assert!(r.failures().any(|c| c.name == "real-symmetric-consistency"));
    }

    #[test]
    fn asymmetric_profile_fails() {
        let mut s = vec![0.5; 4];
        s[1] = 0.6;
        let m = ModelSpec::new(
            vec![0.0; 2],
            s,
            SecondMoment::Zero,
            Symmetry::ComplexHermitian,
        )
        .unwrap();
        assert!(validate(&m).failures().any(|c| c.name == "s-symmetric"));
    }

    #[test]
    fn degenerate_two_block_is_flat() {
        let m = instantiate_two_block((5, 5), (1.0, 1.0, 1.0), (0.0, 0.0)).unwrap();
        let f = ModelSpec::flat(10).unwrap();
        assert_eq!(m.s(), f.s());
        assert_eq!(m.a(), f.a());
        assert_eq!(m.reduce().classes(), 1);
    }

    #[test]
    fn nonpositive_variance_rejected() {
        let e = instantiate_two_block((2, 2), (1.0, 0.0, 1.0), (0.0, 0.0)).unwrap_err();
        assert!(matches!(e, Error::InvalidParameter(_)));
    }

    #[test]
    fn reduction_of_two_block() {
        let m = instantiate_two_block((3, 7), (1.0, 0.5, 2.0), (-1.0, 1.0)).unwrap();
        let r = m.reduce();
        assert_eq!(r.classes(), 2);
        assert_eq!(r.sizes, vec![3, 7]);
        assert!((r.kernel[0] - 0.3).abs() < 1e-14);
        assert!((r.kernel[1] - 0.35).abs() < 1e-14);
        assert!((r.kernel[2] - 0.15).abs() < 1e-14);
        assert!((r.kernel[3] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn model_file_roundtrip() {
        let text = r#"
n = 10
symmetry = "complex-hermitian"
[family]
kind = "two-block"
variances = [1.0, 1.0, 1.0]
shifts = [-1.0, 1.0]
"#;
        let file = ModelFile::parse(text).unwrap();
        let m = file.instantiate().unwrap();
        assert_eq!(m.n(), 10);
        assert_eq!(m.a()[0], -1.0);
        assert_eq!(m.a()[9], 1.0);
        let again = ModelFile::parse(&file.to_toml().unwrap()).unwrap();
        assert_eq!(again, file);
    }

    #[test]
    fn bad_model_file_is_parse_error() {
        assert!(matches!(
            ModelFile::parse("n = \"x\""),
            Err(Error::Parse(_))
        ));
    }

    proptest! {
        #[test]
        fn two_block_always_validates(
            n1 in 1usize..12, n2 in 1usize..12,
            v in (0.05f64..3.0, 0.05f64..3.0, 0.05f64..3.0),
            a in (-3.0f64..3.0, -3.0f64..3.0),
            real in any::<bool>(),
        ) {
            let sym = if real { Symmetry::RealSymmetric } else { Symmetry::ComplexHermitian };
            let m = instantiate_two_block_with((n1, n2), v, a, sym).unwrap();
            let r = validate(&m);
            prop_assert!(r.passed, "{:?}", r);
            prop_assert!(r.constants.lower > 0.0);
        }

        #[test]
        fn validate_is_deterministic(n in 1usize..8, seed in 0u64..1000) {
            let s: Vec<f64> = (0..n * n).map(|k| {
                let (i, j) = (k / n, k % n);
                let (lo, hi) = (i.min(j), i.max(j));
                ((lo * 31 + hi * 17) as u64 ^ seed) as f64 % 7.0 / n as f64
            }).collect();
            let m = ModelSpec::new(vec![0.0; n], s, SecondMoment::Zero, Symmetry::ComplexHermitian).unwrap();
            prop_assert_eq!(validate(&m), validate(&m));
        }
    }
}
