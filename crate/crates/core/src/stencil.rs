//! Nodal stencils, per-mesh polynomial bases and coefficient vectors.
//!
//! Boundary meshes always carry one constant basis function so that they can
//! hold the point masses at `0` and at the truncation level. Interior meshes
//! carry either a constant or the linear pair
//! `φ_L(x) = (x_{k+1} − x)/w`, `φ_R(x) = (x − x_k)/w`.

use std::ops::Range;

use nalgebra::DVector;
use thiserror::Error;

use crate::model::{Sign, SignPartition};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StencilError {
    #[error("bad stencil parameters: {0}")]
    BadStencilParams(String),
    #[error("unsupported basis degree {0}")]
    UnsupportedDegree(u32),
    #[error("sign of the rate in phase {phase} changes inside mesh {mesh} near x = {at}")]
    MisalignedBreakpoint { phase: usize, mesh: usize, at: f64 },
    #[error("x = {x} lies outside [0, {upper}]")]
    OutOfDomain { x: f64, upper: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

impl StencilError {
    pub fn code(&self) -> &'static str {
        match self {
            StencilError::BadStencilParams(_) => "BadStencilParams",
            StencilError::UnsupportedDegree(_) => "UnsupportedDegree",
            StencilError::MisalignedBreakpoint { .. } => "MisalignedBreakpoint",
            StencilError::OutOfDomain { .. } => "OutOfDomain",
            StencilError::DimensionMismatch(_) => "DimensionMismatch",
        }
    }
}

/// Polynomial degree of the interior basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Degree {
    Constant,
    Linear,
}

impl Degree {
    pub fn as_u32(self) -> u32 {
        match self {
            Degree::Constant => 0,
            Degree::Linear => 1,
        }
    }
}

impl TryFrom<u32> for Degree {
    type Error = StencilError;

    fn try_from(d: u32) -> Result<Self, StencilError> {
        match d {
            0 => Ok(Degree::Constant),
            1 => Ok(Degree::Linear),
            other => Err(StencilError::UnsupportedDegree(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stencil<T> {
    nodes: Vec<T>,
}

impl<T: Scalar> Stencil<T> {
    /// Stencil from explicit nodes; the first must be zero and the sequence strictly increasing.
    pub fn from_nodes(nodes: Vec<T>) -> Result<Self, StencilError> {
        if nodes.len() < 2 {
            return Err(StencilError::BadStencilParams("need at least two nodes".into()));
        }
        if nodes[0] != T::zero() {
            return Err(StencilError::BadStencilParams("first node must be 0".into()));
        }
        if !nodes.windows(2).all(|w| w[0] < w[1]) {
            return Err(StencilError::BadStencilParams("nodes must increase strictly".into()));
        }
        Ok(Self { nodes })
    }

    /// `(0, Δh, h, 2h, …, (K−4)h, (K−3)h − Δh, (K−3)h)`.
    pub fn omega(k: usize, h: T, dh: T) -> Result<Self, StencilError> {
        if k < 6 {
            return Err(StencilError::BadStencilParams(format!("K = {k} but the template needs K >= 6")));
        }
        if !(dh > T::zero() && dh < h) {
            return Err(StencilError::BadStencilParams("need 0 < dh < h".into()));
        }
        let last = T::int(k as i64 - 3) * h;
        let mut nodes = Vec::with_capacity(k);
        nodes.push(T::zero());
        nodes.push(dh);
        nodes.extend((1..=k - 4).map(|j| T::int(j as i64) * h));
        nodes.push(last - dh);
        nodes.push(last);
        Self::from_nodes(nodes)
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn n_meshes(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn mesh(&self, k: usize) -> (T, T) {
        (self.nodes[k], self.nodes[k + 1])
    }

    pub fn upper(&self) -> T {
        *self.nodes.last().expect("nonempty stencil")
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        k == 0 || k + 1 == self.n_meshes()
    }

    /// Mesh containing `x`, taking the right-hand mesh at interior nodes.
    pub fn locate(&self, x: T) -> Result<usize, StencilError> {
        if x < T::zero() || x > self.upper() {
            return Err(StencilError::OutOfDomain { x: x.lossy_f64(), upper: self.upper().lossy_f64() });
        }
        let k = self.nodes.partition_point(|&n| n <= x);
        Ok(k.saturating_sub(1).min(self.n_meshes() - 1))
    }
}

/// Basis functions living on one mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshBasis<T> {
    pub left: T,
    pub right: T,
    pub linear: bool,
    pub offset: usize,
}

impl<T: Scalar> MeshBasis<T> {
    pub fn len(&self) -> usize {
        if self.linear {
            2
        } else {
            1
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> T {
        self.right - self.left
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Integral of each basis function over the mesh.
    pub fn weight(&self) -> T {
        if self.linear {
            self.width() / T::int(2)
        } else {
            self.width()
        }
    }

    /// Value of basis function `n` at `x` inside the mesh.
    pub fn value(&self, n: usize, x: T) -> T {
        if !self.linear {
            return T::one();
        }
        let w = self.width();
        match n {
            0 => (self.right - x) / w,
            _ => (x - self.left) / w,
        }
    }

    /// Basis values at the left endpoint (limit from inside the mesh).
    pub fn at_left(&self) -> Vec<T> {
        if self.linear {
            vec![T::one(), T::zero()]
        } else {
            vec![T::one()]
        }
    }

    /// Basis values at the right endpoint (limit from inside the mesh).
    pub fn at_right(&self) -> Vec<T> {
        if self.linear {
            vec![T::zero(), T::one()]
        } else {
            vec![T::one()]
        }
    }

    /// `∫_s^e φ_n` for `[s, e]` inside the mesh.
    pub fn partial_integral(&self, n: usize, s: T, e: T) -> T {
        if !self.linear {
            return e - s;
        }
        let two_w = T::int(2) * self.width();
        match n {
            0 => {
                let (u, v) = (self.right - s, self.right - e);
                (u * u - v * v) / two_w
            }
            _ => {
                let (u, v) = (e - self.left, s - self.left);
                (u * u - v * v) / two_w
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet<T> {
    stencil: Stencil<T>,
    degree: Degree,
    meshes: Vec<MeshBasis<T>>,
    weights: Vec<T>,
}

impl<T: Scalar> BasisSet<T> {
    pub fn new(stencil: Stencil<T>, degree: Degree) -> Self {
        let mut meshes = Vec::with_capacity(stencil.n_meshes());
        let mut weights = Vec::new();
        let mut offset = 0;
        for k in 0..stencil.n_meshes() {
            let (left, right) = stencil.mesh(k);
            let linear = degree == Degree::Linear && !stencil.is_boundary(k);
            let mb = MeshBasis { left, right, linear, offset };
            weights.extend(std::iter::repeat_n(mb.weight(), mb.len()));
            offset += mb.len();
            meshes.push(mb);
        }
        Self { stencil, degree, meshes, weights }
    }

    pub fn stencil(&self) -> &Stencil<T> {
        &self.stencil
    }

    pub fn degree(&self) -> Degree {
        self.degree
    }

    /// Total number of basis functions `N`.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn n_meshes(&self) -> usize {
        self.meshes.len()
    }

    pub fn mesh(&self, k: usize) -> &MeshBasis<T> {
        &self.meshes[k]
    }

    pub fn meshes(&self) -> &[MeshBasis<T>] {
        &self.meshes
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn mesh_of(&self, idx: usize) -> usize {
        self.meshes.partition_point(|m| m.offset <= idx) - 1
    }
}

pub fn make_omega_stencil<T: Scalar>(k: usize, h: T, dh: T) -> Result<Stencil<T>, StencilError> {
    Stencil::omega(k, h, dh)
}

pub fn make_basis<T: Scalar>(stencil: Stencil<T>, degree: u32) -> Result<BasisSet<T>, StencilError> {
    Ok(BasisSet::new(stencil, Degree::try_from(degree)?))
}

/// Sign class of every mesh, per phase (meshes are zero-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeshIndexSets {
    signs: Vec<Vec<Sign>>,
}

impl MeshIndexSets {
    pub fn from_signs(signs: Vec<Vec<Sign>>) -> Self {
        Self { signs }
    }

    pub fn sign(&self, phase: usize, mesh: usize) -> Sign {
        self.signs[phase][mesh]
    }

    pub fn phases(&self) -> usize {
        self.signs.len()
    }

    /// `γ_i^ℓ` as zero-based mesh indices.
    pub fn gamma(&self, phase: usize, sign: Sign) -> Vec<usize> {
        self.signs[phase].iter().enumerate().filter(|(_, &s)| s == sign).map(|(k, _)| k).collect()
    }
}

/// Assigns each mesh to the sign region containing it. The first mesh follows
/// the at-zero rate when the model provides one.
pub fn mesh_index_sets<T: Scalar>(
    stencil: &Stencil<T>,
    part: &SignPartition<T>,
) -> Result<MeshIndexSets, StencilError> {
    let mut signs = Vec::with_capacity(part.phases());
    for phase in 0..part.phases() {
        let mut row = Vec::with_capacity(stencil.n_meshes());
        for k in 0..stencil.n_meshes() {
            let (a, b) = stencil.mesh(k);
            if k == 0 {
                if let Some(s) = part.at_zero(phase) {
                    row.push(s);
                    continue;
                }
            }
            let tol = T::slack() * (T::one() + b.magnitude());
            let mut found: Option<Sign> = None;
            for iv in part.intervals(phase) {
                let lo = if iv.start > a { iv.start } else { a };
                let hi = if iv.end < b { iv.end } else { b };
                if hi - lo > tol {
                    match found {
                        None => found = Some(iv.sign),
                        Some(s) if s == iv.sign => {}
                        Some(_) => {
                            return Err(StencilError::MisalignedBreakpoint { phase, mesh: k, at: iv.start.lossy_f64() })
                        }
                    }
                }
            }
            row.push(found.unwrap_or_else(|| part.sign_at(phase, a)));
        }
        signs.push(row);
    }
    Ok(MeshIndexSets { signs })
}

/// Density coefficients `α` of a phase-indexed function, stacked phase-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector<T: Scalar> {
    per_phase: usize,
    values: DVector<T>,
}

impl<T: Scalar> CoefficientVector<T> {
    pub fn zeros(phases: usize, per_phase: usize) -> Self {
        Self { per_phase, values: DVector::zeros(phases * per_phase) }
    }

    pub fn from_density(per_phase: usize, values: DVector<T>) -> Result<Self, StencilError> {
        if per_phase == 0 || values.len() % per_phase != 0 {
            return Err(StencilError::DimensionMismatch(format!(
                "{} coefficients do not split into phases of {per_phase}",
                values.len()
            )));
        }
        Ok(Self { per_phase, values })
    }

    /// From mass coordinates `a_{k,n} = α_{k,n} w_{k,n}`.
    pub fn from_masses(basis: &BasisSet<T>, masses: &DVector<T>) -> Result<Self, StencilError> {
        let n = basis.len();
        let values = DVector::from_fn(masses.len(), |i, _| masses[i] / basis.weights()[i % n]);
        Self::from_density(n, values)
    }

    pub fn to_masses(&self, basis: &BasisSet<T>) -> DVector<T> {
        let w = basis.weights();
        DVector::from_fn(self.values.len(), |i, _| self.values[i] * w[i % self.per_phase])
    }

    /// Projection of a unit point mass at `x0` in `phase`, in density coordinates.
    pub fn point_mass(basis: &BasisSet<T>, phases: usize, phase: usize, x0: T) -> Result<Self, StencilError> {
        let k = basis.stencil().locate(x0)?;
        let mb = basis.mesh(k);
        let mut out = Self::zeros(phases, basis.len());
        let base = phase * basis.len() + mb.offset;
        if mb.linear {
            let (pl, pr) = (mb.value(0, x0), mb.value(1, x0));
            let w = mb.width();
            let (two, four) = (T::int(2), T::int(4));
            out.values[base] = (four * pl - two * pr) / w;
            out.values[base + 1] = (four * pr - two * pl) / w;
        } else {
            out.values[base] = T::one() / mb.width();
        }
        Ok(out)
    }

    pub fn phases(&self) -> usize {
        self.values.len() / self.per_phase
    }

    pub fn per_phase(&self) -> usize {
        self.per_phase
    }

    pub fn values(&self) -> &DVector<T> {
        &self.values
    }

    pub fn phase(&self, i: usize) -> &[T] {
        &self.values.as_slice()[i * self.per_phase..(i + 1) * self.per_phase]
    }

    pub fn phase_mass(&self, basis: &BasisSet<T>, i: usize) -> T {
        self.phase(i).iter().zip(basis.weights()).fold(T::zero(), |acc, (&a, &w)| acc + a * w)
    }

    pub fn mass(&self, basis: &BasisSet<T>) -> T {
        (0..self.phases()).fold(T::zero(), |acc, i| acc + self.phase_mass(basis, i))
    }

    /// `Σ_k Σ_n α_{k,n} φ_n^k(x)` in `phase`; right limit at interior nodes.
    pub fn evaluate(&self, basis: &BasisSet<T>, phase: usize, x: T) -> Result<T, StencilError> {
        let k = basis.stencil().locate(x)?;
        let mb = basis.mesh(k);
        let coeffs = self.phase(phase);
        Ok(mb.range().enumerate().fold(T::zero(), |acc, (n, idx)| acc + coeffs[idx] * mb.value(n, x)))
    }

    /// `∫_s^e` of the represented density in `phase`, for `0 ≤ s ≤ e ≤ upper`.
    pub fn integral(&self, basis: &BasisSet<T>, phase: usize, s: T, e: T) -> T {
        let coeffs = self.phase(phase);
        let mut total = T::zero();
        for mb in basis.meshes() {
            let lo = if mb.left > s { mb.left } else { s };
            let hi = if mb.right < e { mb.right } else { e };
            if lo < hi {
                for (n, idx) in mb.range().enumerate() {
                    total += coeffs[idx] * mb.partial_integral(n, lo, hi);
                }
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_bandwidth_model, partition_rates, BandwidthParams};
    use num_rational::Ratio;

    type Q = Ratio<i64>;

    fn q(n: i64, d: i64) -> Q {
        Ratio::new(n, d)
    }

    fn four_mesh() -> BasisSet<Q> {
        let nodes = vec![q(0, 1), q(1, 4), q(5, 4), q(9, 4), q(11, 4)];
        BasisSet::new(Stencil::from_nodes(nodes).unwrap(), Degree::Linear)
    }

    #[test]
    fn omega_small_case() {
        let st = Stencil::omega(6, 1.0, 0.5).unwrap();
        assert_eq!(st.nodes(), &[0.0, 0.5, 1.0, 2.0, 2.5, 3.0]);
        assert!(matches!(Stencil::omega(5, 1.0, 0.5), Err(StencilError::BadStencilParams(_))));
        assert!(Stencil::omega(8, 1.0, 1.0).is_err());
    }

    #[test]
    fn omega_reference_stencil() {
        let st = Stencil::omega(43, q(2, 5), q(1, 1000)).unwrap();
        assert_eq!(st.n_meshes(), 42);
        assert_eq!(st.upper(), q(16, 1));
        let interior = (0..42).filter(|&k| st.mesh(k).1 - st.mesh(k).0 == q(2, 5)).count();
        assert_eq!(interior, 38);
    }

    #[test]
    fn four_mesh_weights() {
        let b = four_mesh();
        assert_eq!(b.len(), 6);
        assert_eq!(b.weights(), &[q(1, 4), q(1, 2), q(1, 2), q(1, 2), q(1, 2), q(1, 2)]);
        let m = b.mesh(1);
        assert_eq!(m.value(1, q(5, 4)), q(1, 1));
        assert_eq!(m.value(0, q(5, 4)), q(0, 1));
        assert_eq!(m.value(0, q(1, 4)), q(1, 1));
    }

    #[test]
    fn constant_degree_weights_are_widths() {
        let st = Stencil::omega(10, 1.0, 0.25).unwrap();
        let b = BasisSet::new(st.clone(), Degree::Constant);
        assert_eq!(b.len(), 9);
        for k in 0..9 {
            let (l, r) = st.mesh(k);
            assert_eq!(b.weights()[k], r - l);
        }
        assert!(matches!(make_basis(st, 2), Err(StencilError::UnsupportedDegree(2))));
    }

    #[test]
    fn evaluate_examples() {
        let b = four_mesh();
        let mut v = CoefficientVector::zeros(1, 6);
        v.values[1] = q(1, 1);
        assert_eq!(v.evaluate(&b, 0, q(1, 4)).unwrap(), q(1, 1));
        let mut first = CoefficientVector::zeros(1, 6);
        first.values[0] = q(1, 1);
        assert_eq!(first.evaluate(&b, 0, q(0, 1)).unwrap(), q(1, 1));
        assert!(matches!(v.evaluate(&b, 0, q(3, 1)), Err(StencilError::OutOfDomain { .. })));
    }

    #[test]
    fn point_mass_projection_has_unit_mass() {
        let b = BasisSet::new(Stencil::omega(43, q(2, 5), q(1, 1000)).unwrap(), Degree::Linear);
        let v = CoefficientVector::point_mass(&b, 4, 2, q(5, 1)).unwrap();
        assert_eq!(v.mass(&b), q(1, 1));
        let masses = v.to_masses(&b);
        let nz: Vec<Q> = masses.iter().copied().filter(|x| *x != q(0, 1)).collect();
        assert_eq!(nz, vec![q(1, 2), q(1, 2)]);
    }

    #[test]
    fn index_sets_for_reference_model() {
        let m = build_bandwidth_model(&BandwidthParams::<Q>::reference()).unwrap();
        let st = Stencil::omega(43, q(2, 5), q(1, 1000)).unwrap();
        let g = mesh_index_sets(&st, &partition_rates(&m)).unwrap();
        assert_eq!(g.gamma(1, Sign::Minus), (0..5).collect::<Vec<_>>());
        assert_eq!(g.gamma(1, Sign::Zero), (5..42).collect::<Vec<_>>());
        assert_eq!(g.gamma(0, Sign::Plus), (0..42).collect::<Vec<_>>());
    }

    #[test]
    fn misaligned_sign_change() {
        let mut p = BandwidthParams::<Q>::reference();
        p.x_star = q(17, 10);
        let m = build_bandwidth_model(&p).unwrap();
        let st = Stencil::omega(43, q(2, 5), q(1, 1000)).unwrap();
        let err = mesh_index_sets(&st, &partition_rates(&m)).unwrap_err();
        assert!(matches!(err, StencilError::MisalignedBreakpoint { phase: 1, mesh: 5, .. }));
    }

    #[test]
    fn index_sets_partition_every_mesh() {
        let m = build_bandwidth_model(&BandwidthParams::<f64>::reference()).unwrap();
        let st = Stencil::omega(43, 0.4, 0.001).unwrap();
        let g = mesh_index_sets(&st, &partition_rates(&m)).unwrap();
        for i in 0..4 {
            let mut all: Vec<usize> = Sign::ALL.iter().flat_map(|&s| g.gamma(i, s)).collect();
            all.sort();
            assert_eq!(all, (0..42).collect::<Vec<_>>());
        }
    }

    #[test]
    fn integral_matches_mass() {
        let b = four_mesh();
        let v = CoefficientVector::from_density(
            6,
            DVector::from_vec(vec![q(2, 1), q(1, 1), q(3, 1), q(0, 1), q(5, 1), q(7, 1)]),
        )
        .unwrap();
        assert_eq!(v.integral(&b, 0, q(0, 1), q(11, 4)), v.mass(&b));
        assert_eq!(v.integral(&b, 0, q(1, 4), q(3, 4)), q(1, 1) * q(3, 8) + q(3, 1) * q(1, 8));
    }
}
