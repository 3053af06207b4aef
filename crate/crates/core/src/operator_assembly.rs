//! DG approximations of the first-fluid generator `𝓑`, the rate scaling `𝓡`
//! and the censored, rate-scaled generator `𝓓(s)`.
//!
//! Coefficients are indexed globally as `phase * N + basis index`. Each index
//! belongs to the sign class of its mesh, and the packed `+`, `−`, `0` index
//! lists are what the solvers work on.

use nalgebra::{ComplexField, DMatrix};
use thiserror::Error;

use crate::dg_core::assemble_generator;
use crate::model::{partition_rates, ModelSpec, Sign};
use crate::scalar::{Real, Scalar};
use crate::stencil::{mesh_index_sets, BasisSet, MeshIndexSets};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssemblyError {
    #[error("effective rate is zero on mesh {mesh} of phase {phase} in a nonzero sign class")]
    ZeroRho { phase: usize, mesh: usize },
    #[error("sI − B⁰⁰ is singular")]
    SingularCensoredBlock,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

impl AssemblyError {
    pub fn code(&self) -> &'static str {
        match self {
            AssemblyError::ZeroRho { .. } => "ZeroRho",
            AssemblyError::SingularCensoredBlock => "SingularCensoredBlock",
            AssemblyError::DimensionMismatch(_) => "DimensionMismatch",
        }
    }
}

/// Global coefficient indices grouped by sign class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignLayout {
    n: usize,
    phases: usize,
    class: Vec<Sign>,
    plus: Vec<usize>,
    minus: Vec<usize>,
    zero: Vec<usize>,
}

impl SignLayout {
    pub fn new<T: Scalar>(basis: &BasisSet<T>, gamma: &MeshIndexSets) -> Self {
        let n = basis.len();
        let phases = gamma.phases();
        let mut class = Vec::with_capacity(n * phases);
        for i in 0..phases {
            for idx in 0..n {
                class.push(gamma.sign(i, basis.mesh_of(idx)));
            }
        }
        let pick = |s: Sign| (0..class.len()).filter(|&g| class[g] == s).collect::<Vec<_>>();
        let (plus, minus, zero) = (pick(Sign::Plus), pick(Sign::Minus), pick(Sign::Zero));
        Self { n, phases, class, plus, minus, zero }
    }

    pub fn per_phase(&self) -> usize {
        self.n
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn total(&self) -> usize {
        self.class.len()
    }

    pub fn class_of(&self, global: usize) -> Sign {
        self.class[global]
    }

    pub fn indices(&self, s: Sign) -> &[usize] {
        match s {
            Sign::Plus => &self.plus,
            Sign::Minus => &self.minus,
            Sign::Zero => &self.zero,
        }
    }

    /// Concatenation of the index lists of several classes, in the given order.
    pub fn joined(&self, classes: &[Sign]) -> Vec<usize> {
        classes.iter().flat_map(|&s| self.indices(s).iter().copied()).collect()
    }

    pub fn phase_of(&self, global: usize) -> usize {
        global / self.n
    }

    pub fn basis_of(&self, global: usize) -> usize {
        global % self.n
    }
}

/// `𝓑` over the whole coefficient space together with its sign layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOperator<T: Scalar> {
    layout: SignLayout,
    full: DMatrix<T>,
}

impl<T: Scalar> BlockOperator<T> {
    pub fn layout(&self) -> &SignLayout {
        &self.layout
    }

    pub fn full(&self) -> &DMatrix<T> {
        &self.full
    }

    /// `𝓑^{ℓm}_{ij}` as an `N × N` matrix, zero outside `γ_i^ℓ` rows and `γ_j^m` columns.
    pub fn block(&self, l: Sign, i: usize, m: Sign, j: usize) -> DMatrix<T> {
        let n = self.layout.n;
        DMatrix::from_fn(n, n, |r, c| {
            let (gr, gc) = (i * n + r, j * n + c);
            if self.layout.class[gr] == l && self.layout.class[gc] == m {
                self.full[(gr, gc)]
            } else {
                T::zero()
            }
        })
    }

    /// Submatrix on the packed rows of `rows` and columns of `cols`.
    pub fn packed(&self, rows: &[Sign], cols: &[Sign]) -> DMatrix<T> {
        let r = self.layout.joined(rows);
        let c = self.layout.joined(cols);
        self.full.select_rows(r.iter()).select_columns(c.iter())
    }
}

/// `T ⊗ I_N + diag(Q^i)`: the generator of `(X, φ)` on the coefficient space.
pub fn first_fluid_generator<T: Scalar>(
    model: &ModelSpec<T>,
    n: usize,
    generators: &[DMatrix<T>],
) -> Result<DMatrix<T>, AssemblyError> {
    let s = model.n_phases();
    if generators.len() != s || generators.iter().any(|q| q.shape() != (n, n)) {
        return Err(AssemblyError::DimensionMismatch("generators and phases disagree".into()));
    }
    let mut full = DMatrix::zeros(s * n, s * n);
    for i in 0..s {
        for j in 0..s {
            let t = model.generator[(i, j)];
            if t != T::zero() {
                for k in 0..n {
                    full[(i * n + k, j * n + k)] = t;
                }
            }
        }
        let mut view = full.view_mut((i * n, i * n), (n, n));
        view += &generators[i];
    }
    Ok(full)
}

/// Assembles `𝓑` with its phase-and-sign block structure.
pub fn assemble_b<T: Scalar>(
    model: &ModelSpec<T>,
    basis: &BasisSet<T>,
    gamma: &MeshIndexSets,
    generators: &[DMatrix<T>],
) -> Result<BlockOperator<T>, AssemblyError> {
    if gamma.phases() != model.n_phases() {
        return Err(AssemblyError::DimensionMismatch("index sets and phases disagree".into()));
    }
    let full = first_fluid_generator(model, basis.len(), generators)?;
    Ok(BlockOperator { layout: SignLayout::new(basis, gamma), full })
}

/// How the effective rate of a basis function is formed from `r_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RhoMode {
    /// `∫ r φ / ∫ φ`
    #[default]
    Normalized,
    /// `∫ r φ`
    Verbatim,
}

/// Effective second-fluid rate `ρ` for every global coefficient index.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoWeights<T> {
    pub rho: Vec<T>,
}

impl<T: Scalar> RhoWeights<T> {
    /// Diagonal of `𝓡^ℓ`, i.e. `1/|ρ|` on the packed indices of `sign`.
    pub fn reciprocal(&self, layout: &SignLayout, sign: Sign) -> Vec<T> {
        layout.indices(sign).iter().map(|&g| T::one() / self.rho[g].magnitude()).collect()
    }
}

/// Effective rates; the first mesh uses the at-zero rate when the model has one.
pub fn assemble_r<T: Scalar>(
    model: &ModelSpec<T>,
    basis: &BasisSet<T>,
    gamma: &MeshIndexSets,
    mode: RhoMode,
) -> Result<RhoWeights<T>, AssemblyError> {
    let n = basis.len();
    let mut rho = vec![T::zero(); n * model.n_phases()];
    for i in 0..model.n_phases() {
        for (k, mb) in basis.meshes().iter().enumerate() {
            let sign = gamma.sign(i, k);
            for (local, idx) in mb.range().enumerate() {
                let integral = match model.rates.at_zero(i) {
                    Some(r0) if k == 0 => r0 * mb.partial_integral(local, mb.left, mb.right),
                    _ => model
                        .rates
                        .clipped(i, mb.left, mb.right)
                        .into_iter()
                        .fold(T::zero(), |acc, (s, e, r)| acc + r * mb.partial_integral(local, s, e)),
                };
                let value = match mode {
                    RhoMode::Verbatim => integral,
                    RhoMode::Normalized => integral / mb.weight(),
                };
                if sign != Sign::Zero && value == T::zero() {
                    return Err(AssemblyError::ZeroRho { phase: i, mesh: k });
                }
                rho[i * n + idx] = value;
            }
        }
    }
    Ok(RhoWeights { rho })
}

/// The four blocks of `𝓓(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DBlocks<N: nalgebra::Scalar> {
    pub pp: DMatrix<N>,
    pub pm: DMatrix<N>,
    pub mp: DMatrix<N>,
    pub mm: DMatrix<N>,
}

/// `𝓓^{ℓm}(s) = 𝓡^ℓ (𝓑^{ℓm} − s I [ℓ = m] + 𝓑^{ℓ0} (s I − 𝓑^{00})⁻¹ 𝓑^{0m})`.
///
/// `N` may be the real type itself or its complex extension.
pub fn assemble_d<T, N>(op: &BlockOperator<T>, rho: &RhoWeights<T>, s: N) -> Result<DBlocks<N>, AssemblyError>
where
    T: Real,
    N: ComplexField<RealField = T> + Copy,
{
    let lift = |m: DMatrix<T>| m.map(N::from_real);
    let layout = op.layout();
    let (p, m, z) = (Sign::Plus, Sign::Minus, Sign::Zero);
    let nz = layout.indices(z).len();

    let censor = if nz > 0 {
        let mut a = lift(op.packed(&[z], &[z])).map(|x| -x);
        for i in 0..nz {
            a[(i, i)] += s;
        }
        let lu = a.lu();
        let to_plus = lu.solve(&lift(op.packed(&[z], &[p]))).ok_or(AssemblyError::SingularCensoredBlock)?;
        let to_minus = lu.solve(&lift(op.packed(&[z], &[m]))).ok_or(AssemblyError::SingularCensoredBlock)?;
        Some((to_plus, to_minus))
    } else {
        None
    };

    let block = |l: Sign, c: Sign| -> DMatrix<N> {
        let mut b = lift(op.packed(&[l], &[c]));
        if l == c {
            for i in 0..b.nrows() {
                b[(i, i)] -= s;
            }
        }
        if let Some((to_plus, to_minus)) = &censor {
            let inflow = lift(op.packed(&[l], &[z]));
            b += inflow * if c == p { to_plus } else { to_minus };
        }
        let r = rho.reciprocal(layout, l);
        for (i, mut row) in b.row_iter_mut().enumerate() {
            row *= N::from_real(r[i]);
        }
        b
    };

    Ok(DBlocks { pp: block(p, p), pm: block(p, m), mp: block(m, p), mm: block(m, m) })
}

/// Every assembled operator for one model on one basis.
#[derive(Debug, Clone)]
pub struct Discretisation<T: Real> {
    pub basis: BasisSet<T>,
    pub gamma: MeshIndexSets,
    pub generators: Vec<DMatrix<T>>,
    pub op: BlockOperator<T>,
    pub rho: RhoWeights<T>,
    pub d0: DBlocks<T>,
}

impl<T: Real> Discretisation<T> {
    pub fn new(model: &ModelSpec<T>, basis: BasisSet<T>, mode: RhoMode) -> Result<Self, crate::Error> {
        let gamma = mesh_index_sets(basis.stencil(), &partition_rates(model))?;
        let generators = assemble_generator(model, &basis)?;
        let op = assemble_b(model, &basis, &gamma, &generators)?;
        let rho = assemble_r(model, &basis, &gamma, mode)?;
        let d0 = assemble_d(&op, &rho, T::zero())?;
        Ok(Self { basis, gamma, generators, op, rho, d0 })
    }

    pub fn layout(&self) -> &SignLayout {
        self.op.layout()
    }
}
