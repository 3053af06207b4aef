//! Stationary distribution of `(X, Y, φ)` from `ψ`.
//!
//! All vectors here are rows in mass coordinates over the global coefficient
//! space (`phase * N + basis index`). With `v = p [𝓑^{−+}; 𝓑^{0+}]`, where `p`
//! collects the masses at `Y = 0`, the level densities are
//!
//! * `π⁺(y) = v e^{Ky} 𝓡⁺`
//! * `π⁻(y) = v e^{Ky} ψ 𝓡⁻`
//! * `π⁰(y) = [π⁺(y) π⁻(y)] [𝓑^{+0}; 𝓑^{−0}] (−𝓑^{00})⁻¹`
//!
//! and `∫₀^∞ e^{Ky} dy = (−K)⁻¹`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{self, LinalgError};
use crate::model::{ModelSpec, Sign};
use crate::operator_assembly::{Discretisation, SignLayout};
use crate::riccati::{self, KMatrix, PsiOptions, PsiSolution, RiccatiError};
use crate::scalar::{lit, Real, Scalar};
use crate::stencil::{BasisSet, CoefficientVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StationaryError {
    #[error("the return map has no simple unit eigenvalue (residual {residual:e})")]
    NoStationaryReturn { residual: f64 },
    #[error("the censored block is singular")]
    SingularCensoredBlock,
    #[error("K has an eigenvalue with real part {abscissa:e}; the truncation level or the recurrence of Y is suspect")]
    UnstableK { abscissa: f64 },
    #[error("level densities are not defined when Y is transient")]
    TransientLevel,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

impl StationaryError {
    pub fn code(&self) -> &'static str {
        match self {
            StationaryError::NoStationaryReturn { .. } => "NoStationaryReturn",
            StationaryError::SingularCensoredBlock => "SingularCensoredBlock",
            StationaryError::UnstableK { .. } => "UnstableK",
            StationaryError::TransientLevel => "TransientLevel",
            StationaryError::Linalg(e) => e.code(),
        }
    }
}

const XI_RESIDUAL_TOL: f64 = 1e-8;
const TRANSIENT_ABSCISSA: f64 = -1e-8;
const DEFICIENT_RETURN: f64 = 1e-6;

fn rows<T: Real>(v: &DVector<T>, m: &DMatrix<T>) -> DVector<T> {
    m.tr_mul(v)
}

fn scatter<T: Real>(total: usize, idx: &[usize], vals: &DVector<T>, into: &mut DVector<T>) {
    debug_assert_eq!(into.len(), total);
    for (j, &g) in idx.iter().enumerate() {
        into[g] += vals[j];
    }
}

/// `ξ`: stationary law of `(X, φ)` at successive returns of `Y` to zero, as
/// masses on the packed `−` coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct XiVector<T: Real> {
    pub xi: DVector<T>,
    pub residual: T,
}

/// `(−[[𝓑^{−−}, 𝓑^{−0}], [𝓑^{0−}, 𝓑^{00}]])⁻¹` on the packed `(−, 0)` coefficients.
pub fn censored_inverse<T: Real>(disc: &Discretisation<T>) -> Result<DMatrix<T>, StationaryError> {
    let mz = [Sign::Minus, Sign::Zero];
    let block = -disc.op.packed(&mz, &mz);
    linalg::inverse(&block, "censored block").map_err(|_| StationaryError::SingularCensoredBlock)
}

/// Solves `ξ A = ξ`, `Σ ξ = 1`, with `A = [(−𝓑_{(−0)(−0)})⁻¹]_{−} [𝓑^{−+}; 𝓑^{0+}] ψ`.
pub fn solve_xi<T: Real>(
    disc: &Discretisation<T>,
    censored: &DMatrix<T>,
    psi: &DMatrix<T>,
) -> Result<XiVector<T>, StationaryError> {
    let nm = disc.layout().indices(Sign::Minus).len();
    let inflow = disc.op.packed(&[Sign::Minus, Sign::Zero], &[Sign::Plus]);
    let a = censored.rows(0, nm) * inflow * psi;
    let xi = linalg::unit_left_eigenvector(&a)?;
    let residual = linalg::inf_norm(&DMatrix::from_row_slice(1, nm, (a.tr_mul(&xi) - &xi).as_slice()));
    if !(residual <= lit(XI_RESIDUAL_TOL)) {
        return Err(StationaryError::NoStationaryReturn { residual: residual.lossy_f64() });
    }
    Ok(XiVector { xi, residual })
}

/// Unnormalised `[p⁻ p⁰] = [ξ 0] (−𝓑_{(−0)(−0)})⁻¹`, packed over `(−, 0)`.
pub fn boundary_masses<T: Real>(xi: &XiVector<T>, censored: &DMatrix<T>) -> DVector<T> {
    let nm = xi.xi.len();
    censored.rows(0, nm).tr_mul(&xi.xi)
}

/// Long-run behaviour of `Y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    PositiveRecurrent,
    /// `Y` drifts to infinity; all probability sits at `Y > 0` in the limit and
    /// the X-marginal is the stationary law of the first fluid alone.
    Transient,
}

/// How the X-marginal is split into groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    /// Phases with `c_i > 0` against the rest.
    OnOff,
    /// Mass at `Y = 0` against mass at `Y > 0`.
    YZeroPositive,
}

/// One group of an X-marginal as a single-phase coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalGroup<T: Scalar> {
    pub name: &'static str,
    pub chi: CoefficientVector<T>,
}

#[derive(Debug, Clone)]
struct Recurrent<T: Real> {
    v: DVector<T>,
    k: KMatrix<T>,
    r_plus: DVector<T>,
    r_minus: DVector<T>,
    to_zero: Option<DMatrix<T>>,
}

#[derive(Debug, Clone)]
pub struct StationarySolution<T: Real> {
    basis: BasisSet<T>,
    layout: SignLayout,
    c: Vec<T>,
    regime: Regime,
    /// Masses at `Y = 0` over the global coefficient space.
    atom: DVector<T>,
    /// `∫₀^∞ π(y) dy` over the global coefficient space.
    body: DVector<T>,
    normaliser: T,
    psi: PsiSolution<T>,
    xi: Option<XiVector<T>>,
    recurrent: Option<Recurrent<T>>,
}

impl<T: Real> StationarySolution<T> {
    pub fn solve(model: &ModelSpec<T>, disc: &Discretisation<T>, psi: PsiSolution<T>) -> Result<Self, StationaryError> {
        let layout = disc.layout().clone();
        let total = layout.total();
        let km = riccati::k_matrix(&disc.d0, &psi.psi).map_err(|e| match e {
            RiccatiError::Linalg(l) => StationaryError::Linalg(l),
            _ => StationaryError::UnstableK { abscissa: f64::NAN },
        })?;
        if !km.is_stable() {
            let deficient = psi.max_row_sum() < T::one() - lit(DEFICIENT_RETURN);
            if km.abscissa >= lit(TRANSIENT_ABSCISSA) && deficient {
                return Self::transient(model, disc, psi);
            }
            return Err(StationaryError::UnstableK { abscissa: km.abscissa.lossy_f64() });
        }

        let censored = censored_inverse(disc)?;
        let xi = solve_xi(disc, &censored, &psi.psi)?;
        let p = boundary_masses(&xi, &censored);
        let inflow = disc.op.packed(&[Sign::Minus, Sign::Zero], &[Sign::Plus]);
        let v = rows(&p, &inflow);

        let neg_k_inv = linalg::inverse(&(-&km.k), "−K")?;
        let w = rows(&v, &neg_k_inv);
        let r_plus = DVector::from_vec(disc.rho.reciprocal(&layout, Sign::Plus));
        let r_minus = DVector::from_vec(disc.rho.reciprocal(&layout, Sign::Minus));
        let int_plus = w.component_mul(&r_plus);
        let int_minus = rows(&w, &psi.psi).component_mul(&r_minus);

        let to_zero = zero_map(disc)?;
        let (plus, minus, zero) = (layout.indices(Sign::Plus), layout.indices(Sign::Minus), layout.indices(Sign::Zero));
        let mut atom = DVector::zeros(total);
        scatter(total, &layout.joined(&[Sign::Minus, Sign::Zero]), &p, &mut atom);
        let mut body = DVector::zeros(total);
        scatter(total, plus, &int_plus, &mut body);
        scatter(total, minus, &int_minus, &mut body);
        if let Some(map) = &to_zero {
            let pm = stack(&int_plus, &int_minus);
            scatter(total, zero, &rows(&pm, map), &mut body);
        }

        let mass = atom.sum() + body.sum();
        let normaliser = T::one() / mass;
        atom *= normaliser;
        body *= normaliser;
        let recurrent = Recurrent { v: v * normaliser, k: km, r_plus, r_minus, to_zero };
        Ok(Self {
            basis: disc.basis.clone(),
            layout,
            c: model.c.clone(),
            regime: Regime::PositiveRecurrent,
            atom,
            body,
            normaliser,
            psi,
            xi: Some(xi),
            recurrent: Some(recurrent),
        })
    }

    fn transient(model: &ModelSpec<T>, disc: &Discretisation<T>, psi: PsiSolution<T>) -> Result<Self, StationaryError> {
        let layout = disc.layout().clone();
        let body = linalg::stationary_vector(disc.op.full())?;
        Ok(Self {
            basis: disc.basis.clone(),
            atom: DVector::zeros(layout.total()),
            layout,
            c: model.c.clone(),
            regime: Regime::Transient,
            body,
            normaliser: T::zero(),
            psi,
            xi: None,
            recurrent: None,
        })
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn basis(&self) -> &BasisSet<T> {
        &self.basis
    }

    pub fn layout(&self) -> &SignLayout {
        &self.layout
    }

    pub fn psi(&self) -> &PsiSolution<T> {
        &self.psi
    }

    pub fn xi(&self) -> Option<&XiVector<T>> {
        self.xi.as_ref()
    }

    pub fn k(&self) -> Option<&KMatrix<T>> {
        self.recurrent.as_ref().map(|r| &r.k)
    }

    /// Scale applied to the unnormalised masses; zero in the transient limit.
    pub fn normaliser(&self) -> T {
        self.normaliser
    }

    /// Masses at `Y = 0` in mass coordinates.
    pub fn atom_masses(&self) -> &DVector<T> {
        &self.atom
    }

    /// `∫₀^∞ π(y) dy` in mass coordinates.
    pub fn level_masses(&self) -> &DVector<T> {
        &self.body
    }

    pub fn prob_y_zero(&self) -> T {
        self.atom.sum()
    }

    pub fn prob_y_positive(&self) -> T {
        self.body.sum()
    }

    pub fn total_probability(&self) -> T {
        self.prob_y_zero() + self.prob_y_positive()
    }

    /// `π(y)` in density coordinates over the global coefficient space.
    pub fn density_at_y(&self, y: T) -> Result<CoefficientVector<T>, StationaryError> {
        let rec = self.recurrent.as_ref().ok_or(StationaryError::TransientLevel)?;
        let e = (&rec.k.k * y).exp();
        let m = self.level_masses_at(rec, &rows(&rec.v, &e));
        CoefficientVector::from_masses(&self.basis, &m).map_err(|_| StationaryError::TransientLevel)
    }

    /// `π(y)` for every `y` in `ys`, evaluated in parallel.
    pub fn density_on_grid(&self, ys: &[T]) -> Result<Vec<CoefficientVector<T>>, StationaryError> {
        ys.par_iter().map(|&y| self.density_at_y(y)).collect()
    }

    fn level_masses_at(&self, rec: &Recurrent<T>, ve: &DVector<T>) -> DVector<T> {
        let total = self.layout.total();
        let plus = ve.component_mul(&rec.r_plus);
        let minus = rows(ve, &self.psi.psi).component_mul(&rec.r_minus);
        let mut out = DVector::zeros(total);
        scatter(total, self.layout.indices(Sign::Plus), &plus, &mut out);
        scatter(total, self.layout.indices(Sign::Minus), &minus, &mut out);
        if let Some(map) = &rec.to_zero {
            scatter(total, self.layout.indices(Sign::Zero), &rows(&stack(&plus, &minus), map), &mut out);
        }
        out
    }

    /// Per-phase X-marginal in density coordinates, summing both parts.
    pub fn joint_x(&self) -> CoefficientVector<T> {
        CoefficientVector::from_masses(&self.basis, &(&self.atom + &self.body)).expect("layout matches basis")
    }

    /// X-marginal split into two phase-aggregated groups.
    pub fn marginal_x(&self, split: Split) -> [MarginalGroup<T>; 2] {
        let n = self.layout.per_phase();
        let fold = |source: &DVector<T>, keep: &dyn Fn(usize) -> bool| {
            let mut out = DVector::zeros(n);
            for (g, &m) in source.iter().enumerate() {
                if keep(self.layout.phase_of(g)) {
                    out[self.layout.basis_of(g)] += m;
                }
            }
            CoefficientVector::from_masses(&self.basis, &out).expect("single phase")
        };
        let total = &self.atom + &self.body;
        match split {
            Split::YZeroPositive => [
                MarginalGroup { name: "y_zero", chi: fold(&self.atom, &|_| true) },
                MarginalGroup { name: "y_positive", chi: fold(&self.body, &|_| true) },
            ],
            Split::OnOff => [
                MarginalGroup { name: "on", chi: fold(&total, &|i| self.c[i] > T::zero()) },
                MarginalGroup { name: "off", chi: fold(&total, &|i| self.c[i] <= T::zero()) },
            ],
        }
    }
}

fn stack<T: Real>(a: &DVector<T>, b: &DVector<T>) -> DVector<T> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// `[𝓑^{+0}; 𝓑^{−0}] (−𝓑^{00})⁻¹`, absent when there are no zero-rate coefficients.
fn zero_map<T: Real>(disc: &Discretisation<T>) -> Result<Option<DMatrix<T>>, StationaryError> {
    if disc.layout().indices(Sign::Zero).is_empty() {
        return Ok(None);
    }
    let z = [Sign::Zero];
    let inv = linalg::inverse(&(-disc.op.packed(&z, &z)), "zero block")
        .map_err(|_| StationaryError::SingularCensoredBlock)?;
    Ok(Some(disc.op.packed(&[Sign::Plus, Sign::Minus], &z) * inv))
}

/// Solves for `ψ` and the stationary distribution in one call.
pub fn solve_model<T: Real>(
    model: &ModelSpec<T>,
    disc: &Discretisation<T>,
    opts: &PsiOptions,
) -> crate::Result<StationarySolution<T>> {
    let psi = riccati::solve_psi(&disc.d0, opts)?;
    Ok(StationarySolution::solve(model, disc, psi)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_bandwidth_model, BandwidthParams};
    use crate::operator_assembly::RhoMode;
    use crate::stencil::{Degree, Stencil};

    fn solve(alpha2: f64, k: usize, h: f64, degree: Degree) -> StationarySolution<f64> {
        let model = build_bandwidth_model(&BandwidthParams::reference().with_alpha2(alpha2)).unwrap();
        let basis = BasisSet::new(Stencil::omega(k, h, 0.01).unwrap(), degree);
        let disc = Discretisation::new(&model, basis, RhoMode::Normalized).unwrap();
        solve_model(&model, &disc, &PsiOptions::default()).unwrap()
    }

    #[test]
    fn normalised_and_split_consistent() {
        let sol = solve(22.0, 18, 0.4, Degree::Linear);
        assert_eq!(sol.regime(), Regime::PositiveRecurrent);
        assert!((sol.total_probability() - 1.0).abs() < 1e-10);
        let [z, p] = sol.marginal_x(Split::YZeroPositive);
        let [on, off] = sol.marginal_x(Split::OnOff);
        let diff = z.chi.values() + p.chi.values() - on.chi.values() - off.chi.values();
        assert!(diff.amax() < 1e-12);
    }

    #[test]
    fn xi_is_a_probability_vector() {
        let sol = solve(22.0, 18, 0.4, Degree::Constant);
        let xi = sol.xi().unwrap();
        assert!((xi.xi.sum() - 1.0).abs() < 1e-12);
        assert!(xi.xi.iter().all(|&x| x > -1e-12));
        assert!(xi.residual < 1e-10);
    }

    #[test]
    fn level_density_at_zero_uses_identity() {
        let sol = solve(22.0, 18, 0.4, Degree::Constant);
        let at0 = sol.density_at_y(0.0).unwrap().to_masses(sol.basis());
        let at1 = sol.density_at_y(1.0).unwrap().to_masses(sol.basis());
        assert!(at0.sum() > at1.sum());
    }

    #[test]
    fn transient_limit_for_small_alpha2() {
        let sol = solve(11.0, 18, 0.4, Degree::Constant);
        assert_eq!(sol.regime(), Regime::Transient);
        assert_eq!(sol.prob_y_zero(), 0.0);
        assert!((sol.prob_y_positive() - 1.0).abs() < 1e-12);
        assert!(matches!(sol.density_at_y(1.0), Err(StationaryError::TransientLevel)));
    }
}
