//! The DG Riccati equation
//! `𝓓^{+−} + ψ𝓓^{−+}ψ + 𝓓^{++}ψ + ψ𝓓^{−−} = 0`
//! for the first-return operator `ψ`, and the matrix `K = 𝓓^{++} + ψ𝓓^{−+}`.
//!
//! Both iterations start from `ψ = 0`, which selects the minimal nonnegative
//! solution.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Sylvester};
use crate::model::Sign;
use crate::operator_assembly::{DBlocks, SignLayout};
use crate::scalar::{lit, Real};
use crate::stencil::{BasisSet, CoefficientVector, StencilError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiccatiError {
    #[error("{method:?} iteration did not reach the tolerance in {iterations} steps (residual {residual:e})")]
    NoConvergence { method: PsiMethod, iterations: usize, residual: f64 },
    #[error("non-finite iterate at step {iteration}")]
    NonFiniteIterate { iteration: usize },
    #[error("K has an eigenvalue with real part {abscissa:e}")]
    UnstableK { abscissa: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Stencil(#[from] StencilError),
}

impl RiccatiError {
    pub fn code(&self) -> &'static str {
        match self {
            RiccatiError::NoConvergence { .. } => "NoConvergence",
            RiccatiError::NonFiniteIterate { .. } => "NonFiniteIterate",
            RiccatiError::UnstableK { .. } => "UnstableK",
            RiccatiError::DimensionMismatch(_) => "DimensionMismatch",
            RiccatiError::Linalg(_) => "LinearAlgebra",
            RiccatiError::Stencil(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiMethod {
    Newton,
    FixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiOptions {
    pub method: PsiMethod,
    pub tol: f64,
    /// Defaults to 200 Newton steps or 50 000 fixed-point steps.
    pub max_iter: Option<usize>,
    /// Retry with the fixed-point iteration when Newton fails.
    pub fallback: bool,
}

impl Default for PsiOptions {
    fn default() -> Self {
        Self { method: PsiMethod::Newton, tol: 1e-10, max_iter: None, fallback: true }
    }
}

impl PsiOptions {
    pub fn with_method(method: PsiMethod) -> Self {
        Self { method, ..Self::default() }
    }

    fn limit(&self, method: PsiMethod) -> usize {
        self.max_iter.unwrap_or(match method {
            PsiMethod::Newton => 200,
            PsiMethod::FixedPoint => 50_000,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiSolution<T: Real> {
    pub psi: DMatrix<T>,
    pub residual: T,
    pub iterations: usize,
    pub method: PsiMethod,
}

impl<T: Real> PsiSolution<T> {
    /// Largest row sum; below one when return to level zero is not certain.
    pub fn max_row_sum(&self) -> T {
        self.psi.row_iter().map(|r| r.sum()).fold(T::zero(), |a, b| if b > a { b } else { a })
    }
}

/// The Riccati residual at `psi`.
pub fn residual<T: Real>(d: &DBlocks<T>, psi: &DMatrix<T>) -> DMatrix<T> {
    &d.pm + psi * &d.mp * psi + &d.pp * psi + psi * &d.mm
}

fn check_dims<T: Real>(d: &DBlocks<T>) -> Result<(usize, usize), RiccatiError> {
    let (np, nm) = (d.pp.nrows(), d.mm.nrows());
    let ok = d.pp.is_square() && d.mm.is_square() && d.pm.shape() == (np, nm) && d.mp.shape() == (nm, np);
    if ok {
        Ok((np, nm))
    } else {
        Err(RiccatiError::DimensionMismatch("inconsistent D blocks".into()))
    }
}

fn finite<T: Real>(m: &DMatrix<T>) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub fn solve_psi<T: Real>(d: &DBlocks<T>, opts: &PsiOptions) -> Result<PsiSolution<T>, RiccatiError> {
    check_dims(d)?;
    match opts.method {
        PsiMethod::FixedPoint => fixed_point(d, opts),
        PsiMethod::Newton => match newton(d, opts) {
            Err(_) if opts.fallback => fixed_point(d, opts),
            other => other,
        },
    }
}

fn newton<T: Real>(d: &DBlocks<T>, opts: &PsiOptions) -> Result<PsiSolution<T>, RiccatiError> {
    let (np, nm) = check_dims(d)?;
    let tol: T = lit(opts.tol);
    let limit = opts.limit(PsiMethod::Newton);
    let mut psi = DMatrix::zeros(np, nm);
    let mut res = residual(d, &psi);
    for it in 0..=limit {
        let norm = linalg::inf_norm(&res);
        if !norm.is_finite() {
            return Err(RiccatiError::NonFiniteIterate { iteration: it });
        }
        if norm <= tol {
            return Ok(PsiSolution { psi, residual: norm, iterations: it, method: PsiMethod::Newton });
        }
        if it == limit {
            break;
        }
        let a = &d.pp + &psi * &d.mp;
        let b = &d.mm + &d.mp * &psi;
        let step = Sylvester::new(&a, &b)?.solve(&(-&res))?;
        psi += step;
        if !finite(&psi) {
            return Err(RiccatiError::NonFiniteIterate { iteration: it + 1 });
        }
        res = residual(d, &psi);
    }
    Err(RiccatiError::NoConvergence {
        method: PsiMethod::Newton,
        iterations: limit,
        residual: linalg::inf_norm(&res).lossy_f64(),
    })
}

/// Iterates `𝓓^{++}ψ' + ψ'𝓓^{−−} = −(𝓓^{+−} + ψ𝓓^{−+}ψ)` from zero.
pub fn fixed_point_iterates<T: Real>(d: &DBlocks<T>) -> Result<FixedPointIter<T>, RiccatiError> {
    let (np, nm) = check_dims(d)?;
    Ok(FixedPointIter { d: d.clone(), sylvester: Sylvester::new(&d.pp, &d.mm)?, psi: DMatrix::zeros(np, nm) })
}

/// Iterator over successive fixed-point iterates.
pub struct FixedPointIter<T: Real> {
    d: DBlocks<T>,
    sylvester: Sylvester<T>,
    psi: DMatrix<T>,
}

impl<T: Real> Iterator for FixedPointIter<T> {
    type Item = Result<DMatrix<T>, RiccatiError>;

    fn next(&mut self) -> Option<Self::Item> {
        let rhs = -(&self.d.pm + &self.psi * &self.d.mp * &self.psi);
        Some(self.sylvester.solve(&rhs).map_err(RiccatiError::from).inspect(|next| self.psi = next.clone()))
    }
}

fn fixed_point<T: Real>(d: &DBlocks<T>, opts: &PsiOptions) -> Result<PsiSolution<T>, RiccatiError> {
    let tol: T = lit(opts.tol);
    let limit = opts.limit(PsiMethod::FixedPoint);
    let mut last = T::zero();
    for (it, psi) in fixed_point_iterates(d)?.take(limit).enumerate() {
        let psi = psi?;
        if !finite(&psi) {
            return Err(RiccatiError::NonFiniteIterate { iteration: it + 1 });
        }
        if it % 8 == 7 || it + 1 == limit {
            last = linalg::inf_norm(&residual(d, &psi));
            if last <= tol {
                return Ok(PsiSolution { psi, residual: last, iterations: it + 1, method: PsiMethod::FixedPoint });
            }
        }
    }
    Err(RiccatiError::NoConvergence { method: PsiMethod::FixedPoint, iterations: limit, residual: last.lossy_f64() })
}

const K_TOL: f64 = 1e-8;

/// `K = 𝓓^{++}(0) + ψ𝓓^{−+}(0)` with its spectral abscissa.
#[derive(Debug, Clone, PartialEq)]
pub struct KMatrix<T: Real> {
    pub k: DMatrix<T>,
    pub abscissa: T,
}

impl<T: Real> KMatrix<T> {
    pub fn is_stable(&self) -> bool {
        self.abscissa < lit(-K_TOL)
    }
}

/// `K` without the stability check.
pub fn k_matrix<T: Real>(d: &DBlocks<T>, psi: &DMatrix<T>) -> Result<KMatrix<T>, RiccatiError> {
    let k = &d.pp + psi * &d.mp;
    let abscissa = linalg::spectral_abscissa(&k)?;
    Ok(KMatrix { k, abscissa })
}

/// `K`, rejected unless every eigenvalue has real part below `−1e-8`.
pub fn build_k<T: Real>(d: &DBlocks<T>, psi: &DMatrix<T>) -> Result<KMatrix<T>, RiccatiError> {
    let km = k_matrix(d, psi)?;
    if km.is_stable() {
        Ok(km)
    } else {
        Err(RiccatiError::UnstableK { abscissa: km.abscissa.lossy_f64() })
    }
}

/// Distribution of `(X_τ, φ_τ)` at the first return of `Y` to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnDistribution<T: Real> {
    basis: BasisSet<T>,
    density: CoefficientVector<T>,
    phases: Vec<usize>,
}

impl<T: Real> ReturnDistribution<T> {
    /// Phases that own at least one `−` coefficient.
    pub fn phases(&self) -> &[usize] {
        &self.phases
    }

    pub fn total(&self) -> T {
        self.density.mass(&self.basis)
    }

    pub fn phase_mass(&self, phase: usize) -> T {
        self.density.phase_mass(&self.basis, phase)
    }

    /// `P(X_τ ≤ x, φ_τ = phase)`, with each boundary mesh treated as an atom at its outer end.
    pub fn cdf(&self, phase: usize, x: T) -> T {
        let st = self.basis.stencil();
        let upper = st.upper();
        if x < T::zero() {
            return T::zero();
        }
        if x >= upper {
            return self.phase_mass(phase);
        }
        let first = self.basis.mesh(0);
        let last = self.basis.mesh(self.basis.n_meshes() - 1);
        let atom0 = self.density.integral(&self.basis, phase, first.left, first.right);
        let hi = if x < last.left { x } else { last.left };
        let lo = first.right;
        let body = if hi > lo { self.density.integral(&self.basis, phase, lo, hi) } else { T::zero() };
        atom0 + body
    }

    /// CDF at every stencil node.
    pub fn cdf_at_nodes(&self, phase: usize) -> Vec<(T, T)> {
        self.basis.stencil().nodes().iter().map(|&x| (x, self.cdf(phase, x))).collect()
    }

    pub fn density(&self) -> &CoefficientVector<T> {
        &self.density
    }
}

/// Pushes an initial distribution (density coordinates over all phases,
/// supported on `+` coefficients) through `ψ`.
pub fn first_return_cdf<T: Real>(
    basis: &BasisSet<T>,
    layout: &SignLayout,
    initial: &CoefficientVector<T>,
    psi: &DMatrix<T>,
) -> Result<ReturnDistribution<T>, RiccatiError> {
    let plus = layout.indices(Sign::Plus);
    let minus = layout.indices(Sign::Minus);
    if psi.shape() != (plus.len(), minus.len()) || initial.values().len() != layout.total() {
        return Err(RiccatiError::DimensionMismatch("initial vector, layout and ψ disagree".into()));
    }
    let masses = initial.to_masses(basis);
    let a_plus = DVector::from_iterator(plus.len(), plus.iter().map(|&g| masses[g]));
    let out = psi.tr_mul(&a_plus);
    let mut full = DVector::zeros(layout.total());
    for (j, &g) in minus.iter().enumerate() {
        full[g] = out[j];
    }
    let mut phases: Vec<usize> = minus.iter().map(|&g| layout.phase_of(g)).collect();
    phases.dedup();
    let density = CoefficientVector::from_masses(basis, &full)?;
    Ok(ReturnDistribution { basis: basis.clone(), density, phases })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_blocks(pp: f64, pm: f64, mp: f64, mm: f64) -> DBlocks<f64> {
        let s = |v| DMatrix::from_element(1, 1, v);
        DBlocks { pp: s(pp), pm: s(pm), mp: s(mp), mm: s(mm) }
    }

    #[test]
    fn zero_off_diagonal_gives_zero_psi() {
        let mut d = scalar_blocks(-2.0, 0.0, 1.0, -3.0);
        d.pm = DMatrix::zeros(1, 1);
        let sol = solve_psi(&d, &PsiOptions::default()).unwrap();
        assert_eq!(sol.psi[(0, 0)], 0.0);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn scalar_quadratic_minimal_root() {
        // ψ² − 3ψ + 2 = 0 has roots 1 and 2.
        let d = scalar_blocks(-1.5, 2.0, 1.0, -1.5);
        for method in [PsiMethod::Newton, PsiMethod::FixedPoint] {
            let sol = solve_psi(&d, &PsiOptions::with_method(method)).unwrap();
            assert_relative_eq!(sol.psi[(0, 0)], 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn double_root_scalar_case() {
        let d = scalar_blocks(-1.0, 1.0, 1.0, -1.0);
        let opts = PsiOptions { tol: 1e-12, ..PsiOptions::with_method(PsiMethod::Newton) };
        let sol = solve_psi(&d, &opts).unwrap();
        assert!((sol.psi[(0, 0)] - 1.0).abs() < 1e-5);
        let err = build_k(&d, &DMatrix::from_element(1, 1, 1.0)).unwrap_err();
        assert_eq!(err.code(), "UnstableK");
    }

    #[test]
    fn psi_zero_gives_k_equal_dpp() {
        let d = scalar_blocks(-2.0, 0.0, 1.0, -3.0);
        let k = build_k(&d, &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(k.k, d.pp);
    }

    #[test]
    fn fixed_point_exhausts_iterations() {
        let d = scalar_blocks(-1.0, 1.0, 1.0, -1.0);
        let opts = PsiOptions { max_iter: Some(16), ..PsiOptions::with_method(PsiMethod::FixedPoint) };
        assert!(matches!(solve_psi(&d, &opts), Err(RiccatiError::NoConvergence { iterations: 16, .. })));
    }

    #[test]
    fn mismatched_blocks_rejected() {
        let mut d = scalar_blocks(-1.0, 1.0, 1.0, -1.0);
        d.pm = DMatrix::zeros(2, 1);
        assert!(matches!(solve_psi(&d, &PsiOptions::default()), Err(RiccatiError::DimensionMismatch(_))));
    }
}
