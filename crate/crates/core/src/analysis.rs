//! Error metrics, reference solutions for the first-fluid marginal and
//! convergence studies.
//!
//! The stationary law of `(X, φ)` alone solves `f'(x) C = f(x) T` away from
//! the boundaries, so its density is a combination of `e^{z x} v` over left
//! eigenpairs `v T C⁻¹ = z v`. [`ChiOracle`] fixes the coefficients and the
//! boundary atoms from the boundary conditions and unit total mass.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::dg_core::assemble_generator;
use crate::linalg;
use crate::model::ModelSpec;
use crate::operator_assembly::first_fluid_generator;
use crate::stencil::{BasisSet, CoefficientVector, Degree, Stencil};

type C64 = Complex<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("T C⁻¹ has repeated eigenvalues; the exponential expansion is incomplete")]
    DegenerateSpectrum,
    #[error("every phase needs a nonzero first-fluid rate")]
    ZeroDrift,
    #[error("the first fluid has mean drift {drift:e} >= 0 and no stationary law on [0, ∞)")]
    UnstableFirstFluid { drift: f64 },
    #[error("boundary conditions are inconsistent (residual {residual:e})")]
    InconsistentBoundary { residual: f64 },
    #[error("a log-log fit needs at least three points with positive values")]
    TooFewPoints,
    #[error("study setting rejected: {0}")]
    BadStudy(String),
    #[error("{0}")]
    Upstream(String),
}

impl AnalysisError {
    pub fn code(&self) -> &'static str {
        match self {
            AnalysisError::DegenerateSpectrum => "DegenerateSpectrum",
            AnalysisError::ZeroDrift => "ZeroDrift",
            AnalysisError::UnstableFirstFluid { .. } => "UnstableFirstFluid",
            AnalysisError::InconsistentBoundary { .. } => "InconsistentBoundary",
            AnalysisError::TooFewPoints => "TooFewPoints",
            AnalysisError::BadStudy(_) => "BadStudy",
            AnalysisError::Upstream(_) => "Upstream",
        }
    }
}

fn upstream(e: impl std::fmt::Display) -> AnalysisError {
    AnalysisError::Upstream(e.to_string())
}

/// A phase-indexed function on `[0, upper]` that may carry atoms at both ends.
///
/// `integral` includes an atom whenever the interval touches it.
pub trait PhaseFunction {
    fn phases(&self) -> usize;
    fn upper(&self) -> f64;
    fn integral(&self, phase: usize, a: f64, b: f64) -> f64;
    fn abs_integral(&self, phase: usize, a: f64, b: f64) -> f64;
}

/// `Σ_i |∫₀^{Δh} g_i| + ∫_{Δh}^{𝓘−Δh} |g_i| + |∫_{𝓘−Δh}^{𝓘} g_i|`.
pub fn star_seminorm(g: &impl PhaseFunction, dh: f64) -> f64 {
    let upper = g.upper();
    (0..g.phases())
        .map(|i| {
            g.integral(i, 0.0, dh).abs() + g.abs_integral(i, dh, upper - dh) + g.integral(i, upper - dh, upper).abs()
        })
        .sum()
}

/// Phase-wise piecewise-linear function, possibly discontinuous at knots.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    upper: f64,
    /// Per phase, `(a, b, g(a+), g(b−))` covering `[0, upper]` in order.
    pieces: Vec<Vec<(f64, f64, f64, f64)>>,
}

impl PiecewiseLinear {
    pub fn new(upper: f64, pieces: Vec<Vec<(f64, f64, f64, f64)>>) -> Self {
        Self { upper, pieces }
    }

    pub fn constant(phases: usize, upper: f64, value: f64) -> Self {
        Self::new(upper, vec![vec![(0.0, upper, value, value)]; phases])
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        let pieces = self
            .pieces
            .iter()
            .map(|p| p.iter().map(|&(a, b, u, v)| (a, b, lambda * u, lambda * v)).collect())
            .collect();
        Self { upper: self.upper, pieces }
    }

    fn clip(&self, phase: usize, a: f64, b: f64) -> impl Iterator<Item = (f64, f64, f64, f64)> + '_ {
        self.pieces[phase].iter().filter_map(move |&(s, e, u, v)| {
            let (lo, hi) = (s.max(a), e.min(b));
            if hi <= lo {
                return None;
            }
            let at = |x: f64| u + (v - u) * (x - s) / (e - s);
            Some((lo, hi, at(lo), at(hi)))
        })
    }

    pub fn l1_norm(&self) -> f64 {
        (0..self.pieces.len()).map(|i| self.abs_integral(i, 0.0, self.upper)).sum()
    }
}

impl PhaseFunction for PiecewiseLinear {
    fn phases(&self) -> usize {
        self.pieces.len()
    }

    fn upper(&self) -> f64 {
        self.upper
    }

    fn integral(&self, phase: usize, a: f64, b: f64) -> f64 {
        self.clip(phase, a, b).map(|(lo, hi, u, v)| 0.5 * (u + v) * (hi - lo)).sum()
    }

    fn abs_integral(&self, phase: usize, a: f64, b: f64) -> f64 {
        self.clip(phase, a, b)
            .map(|(lo, hi, u, v)| {
                let w = hi - lo;
                if u * v >= 0.0 {
                    0.5 * (u.abs() + v.abs()) * w
                } else {
                    0.5 * (u * u + v * v) / (u.abs() + v.abs()) * w
                }
            })
            .sum()
    }
}

/// Stationary law of the first fluid and phase, as an exponential expansion
/// plus atoms at the boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiOracle {
    z: Vec<C64>,
    /// `a_k v_k` for each retained mode.
    rows: Vec<Vec<C64>>,
    shift: Vec<f64>,
    at_zero: Vec<f64>,
    at_upper: Vec<f64>,
    upper: Option<f64>,
}

fn left_eigenpairs(a: &DMatrix<f64>) -> Result<Vec<(C64, Vec<C64>)>, AnalysisError> {
    let s = a.nrows();
    let z = linalg::eigenvalues(a).map_err(upstream)?;
    let scale = 1.0 + z.iter().map(|v| v.norm()).fold(0.0, f64::max);
    for i in 0..s {
        for j in i + 1..s {
            if (z[i] - z[j]).norm() < 1e-9 * scale {
                return Err(AnalysisError::DegenerateSpectrum);
            }
        }
    }
    let at = a.transpose().map(|x| C64::new(x, 0.0));
    Ok(z.into_iter()
        .map(|zk| {
            let mut m = at.clone();
            for i in 0..s {
                m[(i, i)] -= zk;
            }
            let svd = m.svd(false, true);
            let v_t = svd.v_t.expect("requested right singular vectors");
            let k =
                (0..s).min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j])).expect("nonempty");
            let v: Vec<C64> = v_t.row(k).iter().map(|x| x.conj()).collect();
            (zk, v)
        })
        .collect())
}

fn exp_integral(z: C64, shift: f64, a: f64, b: f64) -> C64 {
    if z.norm() < 1e-12 {
        return C64::new(b - a, 0.0);
    }
    let at = |x: f64| if x.is_infinite() { C64::new(0.0, 0.0) } else { (z * (x - shift)).exp() };
    (at(b) - at(a)) / z
}

fn solve_boundary(rows: Vec<Vec<C64>>, rhs_len: usize) -> Result<DVector<C64>, AnalysisError> {
    let n = rows[0].len();
    let m = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    let mut rhs = DVector::from_element(rhs_len, C64::new(0.0, 0.0));
    rhs[rhs_len - 1] = C64::new(1.0, 0.0);
    let sol = m.clone().svd(true, true).solve(&rhs, 1e-14).map_err(|e| AnalysisError::Upstream(e.into()))?;
    let residual = (m * &sol - rhs).camax();
    if residual > 1e-8 {
        return Err(AnalysisError::InconsistentBoundary { residual });
    }
    Ok(sol)
}

impl ChiOracle {
    fn prepare(model: &ModelSpec<f64>) -> Result<(DMatrix<f64>, Vec<f64>), AnalysisError> {
        let c = model.c.clone();
        if c.contains(&0.0) {
            return Err(AnalysisError::ZeroDrift);
        }
        let a = &model.generator * DMatrix::from_diagonal(&DVector::from_iterator(c.len(), c.iter().map(|&x| 1.0 / x)));
        Ok((a, c))
    }

    /// Regulated at zero, unbounded above.
    pub fn unbounded(model: &ModelSpec<f64>) -> Result<Self, AnalysisError> {
        let (a, c) = Self::prepare(model)?;
        let t = &model.generator;
        let s = c.len();
        let pi = linalg::stationary_vector(t).map_err(upstream)?;
        let drift: f64 = pi.iter().zip(&c).map(|(p, ci)| p * ci).sum();
        if drift >= 0.0 {
            return Err(AnalysisError::UnstableFirstFluid { drift });
        }
        let modes: Vec<_> = left_eigenpairs(&a)?.into_iter().filter(|(z, _)| z.re < -1e-12).collect();
        let down: Vec<usize> = (0..s).filter(|&i| c[i] < 0.0).collect();
        let n = modes.len() + down.len();
        let zero = C64::new(0.0, 0.0);
        let mut eqs = Vec::with_capacity(s + 1);
        for j in 0..s {
            let mut row = vec![zero; n];
            for (k, (_, v)) in modes.iter().enumerate() {
                row[k] = v[j] * c[j];
            }
            for (m, &i) in down.iter().enumerate() {
                row[modes.len() + m] = C64::new(-t[(i, j)], 0.0);
            }
            eqs.push(row);
        }
        let mut norm = vec![C64::new(1.0, 0.0); n];
        for (k, (z, v)) in modes.iter().enumerate() {
            norm[k] = v.iter().sum::<C64>() / (-z);
        }
        eqs.push(norm);
        let sol = solve_boundary(eqs, s + 1)?;
        let mut at_zero = vec![0.0; s];
        for (m, &i) in down.iter().enumerate() {
            at_zero[i] = sol[modes.len() + m].re;
        }
        Ok(Self {
            z: modes.iter().map(|m| m.0).collect(),
            rows: modes.iter().enumerate().map(|(k, (_, v))| v.iter().map(|x| x * sol[k]).collect()).collect(),
            shift: vec![0.0; modes.len()],
            at_zero,
            at_upper: vec![0.0; s],
            upper: None,
        })
    }

    /// Regulated at zero and at `upper`.
    pub fn reflected(model: &ModelSpec<f64>, upper: f64) -> Result<Self, AnalysisError> {
        let (a, c) = Self::prepare(model)?;
        let t = &model.generator;
        let s = c.len();
        let modes = left_eigenpairs(&a)?;
        let shift: Vec<f64> = modes.iter().map(|(z, _)| if z.re > 1e-12 { upper } else { 0.0 }).collect();
        let down: Vec<usize> = (0..s).filter(|&i| c[i] < 0.0).collect();
        let up: Vec<usize> = (0..s).filter(|&i| c[i] > 0.0).collect();
        let n = s + down.len() + up.len();
        let zero = C64::new(0.0, 0.0);
        let e = |k: usize, x: f64| (modes[k].0 * (x - shift[k])).exp();
        let mut eqs = Vec::with_capacity(2 * s + 1);
        for (x, atoms, sign) in [(0.0, &down, -1.0), (upper, &up, 1.0)] {
            for j in 0..s {
                let mut row = vec![zero; n];
                for (k, (_, v)) in modes.iter().enumerate() {
                    row[k] = e(k, x) * v[j] * c[j];
                }
                let base = if x == 0.0 { s } else { s + down.len() };
                for (m, &i) in atoms.iter().enumerate() {
                    row[base + m] = C64::new(sign * t[(i, j)], 0.0);
                }
                eqs.push(row);
            }
        }
        let mut norm = vec![C64::new(1.0, 0.0); n];
        for (k, (z, v)) in modes.iter().enumerate() {
            norm[k] = exp_integral(*z, shift[k], 0.0, upper) * v.iter().sum::<C64>();
        }
        eqs.push(norm);
        let sol = solve_boundary(eqs, 2 * s + 1)?;
        let mut at_zero = vec![0.0; s];
        let mut at_upper = vec![0.0; s];
        for (m, &i) in down.iter().enumerate() {
            at_zero[i] = sol[s + m].re;
        }
        for (m, &i) in up.iter().enumerate() {
            at_upper[i] = sol[s + down.len() + m].re;
        }
        Ok(Self {
            z: modes.iter().map(|m| m.0).collect(),
            rows: modes.iter().enumerate().map(|(k, (_, v))| v.iter().map(|x| x * sol[k]).collect()).collect(),
            shift,
            at_zero,
            at_upper,
            upper: Some(upper),
        })
    }

    pub fn phases(&self) -> usize {
        self.at_zero.len()
    }

    pub fn density(&self, phase: usize, x: f64) -> f64 {
        self.z
            .iter()
            .zip(&self.rows)
            .zip(&self.shift)
            .map(|((z, row), &sh)| (z * (x - sh)).exp() * row[phase])
            .sum::<C64>()
            .re
    }

    /// `∫_a^b` of the density alone; `b` may be infinite for the unbounded law.
    pub fn density_integral(&self, phase: usize, a: f64, b: f64) -> f64 {
        self.z
            .iter()
            .zip(&self.rows)
            .zip(&self.shift)
            .map(|((&z, row), &sh)| exp_integral(z, sh, a, b) * row[phase])
            .sum::<C64>()
            .re
    }

    pub fn atom_at_zero(&self, phase: usize) -> f64 {
        self.at_zero[phase]
    }

    pub fn atom_at_upper(&self, phase: usize) -> f64 {
        self.at_upper[phase]
    }

    pub fn upper(&self) -> Option<f64> {
        self.upper
    }

    /// `P(X ≤ x, φ = phase)`.
    pub fn phase_cdf(&self, phase: usize, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let top = self.upper.map_or(x, |u| x.min(u));
        let hit_upper = self.upper.is_some_and(|u| x >= u);
        self.at_zero[phase]
            + self.density_integral(phase, 0.0, top)
            + if hit_upper { self.at_upper[phase] } else { 0.0 }
    }

    /// `P(X ≤ x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        (0..self.phases()).map(|i| self.phase_cdf(i, x)).sum()
    }

    pub fn total_mass(&self) -> f64 {
        (0..self.phases()).map(|i| self.phase_cdf(i, f64::INFINITY)).sum()
    }
}

/// Stationary law of `(X, φ)` under the DG generator `T ⊗ I + diag(Q^i)`.
pub fn dg_first_fluid_marginal(model: &ModelSpec<f64>, basis: &BasisSet<f64>) -> crate::Result<CoefficientVector<f64>> {
    let q = assemble_generator(model, basis)?;
    let b = first_fluid_generator(model, basis.len(), &q)?;
    let masses = linalg::stationary_vector(&b)?;
    Ok(CoefficientVector::from_masses(basis, &masses)?)
}

/// `χ̂ − χ` on the DG stencil. The upper boundary mesh is compared with
/// everything the reference places at or beyond its left edge.
pub struct DgOracleDifference<'a> {
    pub basis: &'a BasisSet<f64>,
    pub chi_hat: &'a CoefficientVector<f64>,
    pub oracle: &'a ChiOracle,
}

impl DgOracleDifference<'_> {
    fn oracle_integral(&self, phase: usize, a: f64, b: f64) -> f64 {
        let upper = self.basis.stencil().upper();
        let mut total = self.oracle.density_integral(phase, a, b);
        if a <= 0.0 {
            total += self.oracle.atom_at_zero(phase);
        }
        if b >= upper {
            total += match self.oracle.upper() {
                Some(_) => self.oracle.atom_at_upper(phase),
                None => self.oracle.density_integral(phase, upper, f64::INFINITY),
            };
        }
        total
    }
}

impl PhaseFunction for DgOracleDifference<'_> {
    fn phases(&self) -> usize {
        self.chi_hat.phases()
    }

    fn upper(&self) -> f64 {
        self.basis.stencil().upper()
    }

    fn integral(&self, phase: usize, a: f64, b: f64) -> f64 {
        self.chi_hat.integral(self.basis, phase, a, b) - self.oracle_integral(phase, a, b)
    }

    fn abs_integral(&self, phase: usize, a: f64, b: f64) -> f64 {
        const SAMPLES: usize = 32;
        let mut total = 0.0;
        for mb in self.basis.meshes() {
            let (lo, hi) = (mb.left.max(a), mb.right.min(b));
            if hi <= lo {
                continue;
            }
            let coeffs = &self.chi_hat.phase(phase)[mb.range()];
            let g = |x: f64| {
                let u: f64 = coeffs.iter().enumerate().map(|(n, &c)| c * mb.value(n, x)).sum();
                u - self.oracle.density(phase, x)
            };
            let signed = |s: f64, e: f64| {
                let u: f64 = coeffs.iter().enumerate().map(|(n, &c)| c * mb.partial_integral(n, s, e)).sum();
                u - self.oracle.density_integral(phase, s, e)
            };
            let mut cuts = vec![lo];
            let mut prev = (lo, g(lo));
            for k in 1..=SAMPLES {
                let x = lo + (hi - lo) * k as f64 / SAMPLES as f64;
                let gx = g(x);
                if prev.1 * gx < 0.0 {
                    cuts.push(bisect(&g, prev.0, x, prev.1));
                }
                prev = (x, gx);
            }
            cuts.push(hi);
            total += cuts.windows(2).map(|w| signed(w[0], w[1]).abs()).sum::<f64>();
        }
        total
    }
}

fn bisect(g: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, g_lo: f64) -> f64 {
    let lo_sign = g_lo.signum();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid).signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_loglog(points: &[(f64, f64)]) -> Result<LogLogFit, AnalysisError> {
    if points.len() < 3 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(AnalysisError::TooFewPoints);
    }
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(LogLogFit { slope, intercept: my - slope * mx, r_squared })
}

/// Which law the DG marginal is compared with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Unbounded above; mass beyond the stencil is compared with the last mesh.
    Unbounded,
    /// Regulated at the upper end of each stencil.
    Reflected,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StudyPoint {
    /// `h` or `Δh`, depending on the study.
    pub step: f64,
    pub error: f64,
    pub meshes: usize,
    /// Basis functions per phase.
    pub per_phase: usize,
    pub dofs: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConvergenceReport {
    pub degree: u32,
    pub points: Vec<StudyPoint>,
    pub fit: LogLogFit,
}

impl ConvergenceReport {
    pub fn slope(&self) -> f64 {
        self.fit.slope
    }
}

/// Number of nodes `K` for an ω stencil with mesh width `h` reaching at least `upper`.
pub fn nodes_for(upper: f64, h: f64) -> usize {
    (upper / h - 1e-9).ceil() as usize + 3
}

fn star_error(
    model: &ModelSpec<f64>,
    k: usize,
    h: f64,
    dh: f64,
    degree: Degree,
    reference: Reference,
    unbounded: Option<&ChiOracle>,
) -> crate::Result<StudyPoint> {
    let basis = BasisSet::new(Stencil::omega(k, h, dh)?, degree);
    let chi_hat = dg_first_fluid_marginal(model, &basis)?;
    let reflected;
    let oracle = match (reference, unbounded) {
        (Reference::Unbounded, Some(o)) => o,
        _ => {
            reflected = ChiOracle::reflected(model, basis.stencil().upper())?;
            &reflected
        }
    };
    let error = star_seminorm(&DgOracleDifference { basis: &basis, chi_hat: &chi_hat, oracle }, dh);
    Ok(StudyPoint {
        step: h,
        error,
        meshes: basis.n_meshes(),
        per_phase: basis.len(),
        dofs: basis.len() * model.n_phases(),
    })
}

/// Star-seminorm error of the DG first-fluid marginal for each `h`, on ω
/// stencils reaching `model.truncation`.
pub fn convergence_study(
    model: &ModelSpec<f64>,
    hs: &[f64],
    dh: f64,
    degree: Degree,
    reference: Reference,
) -> crate::Result<ConvergenceReport> {
    if hs.iter().any(|&h| !(h > dh)) {
        return Err(AnalysisError::BadStudy("every h must exceed Δh".into()).into());
    }
    let unbounded = match reference {
        Reference::Unbounded => Some(ChiOracle::unbounded(model)?),
        Reference::Reflected => None,
    };
    let points = hs
        .par_iter()
        .map(|&h| star_error(model, nodes_for(model.truncation, h), h, dh, degree, reference, unbounded.as_ref()))
        .collect::<crate::Result<Vec<_>>>()?;
    let fit = fit_loglog(&points.iter().map(|p| (p.step, p.error)).collect::<Vec<_>>())?;
    Ok(ConvergenceReport { degree: degree.as_u32(), points, fit })
}

/// `|e(Δh) − e(Δh_ref)|` for each `Δh` at fixed `h`, against the unbounded
/// reference on a stencil reaching `model.truncation`.
pub fn boundary_width_study(
    model: &ModelSpec<f64>,
    dhs: &[f64],
    h: f64,
    reference_dh: f64,
    degree: Degree,
) -> crate::Result<ConvergenceReport> {
    if dhs.iter().chain([&reference_dh]).any(|&d| !(d > 0.0 && d < h)) {
        return Err(AnalysisError::BadStudy("need 0 < Δh < h".into()).into());
    }
    let oracle = ChiOracle::unbounded(model)?;
    let k = nodes_for(model.truncation, h);
    let run = |dh: f64| star_error(model, k, h, dh, degree, Reference::Unbounded, Some(&oracle));
    let base = run(reference_dh)?.error;
    let points = dhs
        .par_iter()
        .map(|&dh| run(dh).map(|p| StudyPoint { step: dh, error: (p.error - base).abs(), ..p }))
        .collect::<crate::Result<Vec<_>>>()?;
    let fit = fit_loglog(&points.iter().map(|p| (p.step, p.error)).collect::<Vec<_>>())?;
    Ok(ConvergenceReport { degree: degree.as_u32(), points, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PhaseSpace, RateField, RatePiece};

    pub(crate) fn two_phase(a: f64, b: f64) -> ModelSpec<f64> {
        let pieces = vec![vec![RatePiece { start: 0.0, rate: 1.0 }], vec![RatePiece { start: 0.0, rate: -1.0 }]];
        ModelSpec::new(
            PhaseSpace::new(["up", "down"]).unwrap(),
            DMatrix::from_row_slice(2, 2, &[-a, a, b, -b]),
            vec![1.0, -1.0],
            RateField::new(pieces, None).unwrap(),
            16.0,
        )
        .unwrap()
    }

    #[test]
    fn constant_function_seminorm() {
        let g = PiecewiseLinear::constant(3, 5.0, 1.0);
        assert!((star_seminorm(&g, 0.1) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn cancellation_inside_boundary_mesh() {
        let g =
            PiecewiseLinear::new(4.0, vec![vec![(0.0, 0.05, 1.0, 1.0), (0.05, 0.1, -1.0, -1.0), (0.1, 4.0, 0.0, 0.0)]]);
        assert!(star_seminorm(&g, 0.1).abs() < 1e-15);
        assert!((g.l1_norm() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn linear_sign_change_integral() {
        let g = PiecewiseLinear::new(2.0, vec![vec![(0.0, 2.0, -1.0, 1.0)]]);
        assert!((g.abs_integral(0, 0.0, 2.0) - 1.0).abs() < 1e-15);
        assert!(g.integral(0, 0.0, 2.0).abs() < 1e-15);
    }

    #[test]
    fn two_phase_closed_form() {
        let (a, b) = (3.0, 1.0);
        let o = ChiOracle::unbounded(&two_phase(a, b)).unwrap();
        let p2 = (a - b) / (a + b);
        let k = p2 * b;
        assert!((o.atom_at_zero(1) - p2).abs() < 1e-12);
        assert_eq!(o.atom_at_zero(0), 0.0);
        for x in [0.0, 0.3, 1.0, 4.0] {
            let f = k * ((b - a) * x).exp();
            assert!((o.density(0, x) - f).abs() < 1e-12);
            assert!((o.density(1, x) - f).abs() < 1e-12);
        }
        assert!((o.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reflected_law_has_unit_mass() {
        let o = ChiOracle::reflected(&two_phase(3.0, 1.0), 2.0).unwrap();
        assert!((o.total_mass() - 1.0).abs() < 1e-12);
        assert!(o.atom_at_upper(0) > 0.0);
        assert_eq!(o.atom_at_upper(1), 0.0);
    }

    #[test]
    fn unstable_first_fluid_rejected() {
        assert!(matches!(ChiOracle::unbounded(&two_phase(1.0, 3.0)), Err(AnalysisError::UnstableFirstFluid { .. })));
    }

    #[test]
    fn fit_recovers_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 0.5, 0.25, 0.125].iter().map(|&h: &f64| (h, 3.0 * h.powf(1.5))).collect();
        let fit = fit_loglog(&pts).unwrap();
        assert!((fit.slope - 1.5).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit_loglog(&pts[..2]), Err(AnalysisError::TooFewPoints));
    }

    #[test]
    fn nodes_cover_truncation() {
        assert_eq!(nodes_for(16.0, 0.4), 43);
        assert_eq!(nodes_for(16.0, 1.5), 14);
        assert_eq!(nodes_for(16.0, 0.05), 323);
    }
}
