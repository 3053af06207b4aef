//! Within-mesh matrices, upwind flux and the per-phase DG generator.
//!
//! All operators act on row vectors of mass coordinates, so a generator
//! `Q = c (G + F) M⁻¹` conserves mass exactly when its rows sum to zero.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg;
use crate::model::ModelSpec;
use crate::scalar::Scalar;
use crate::stencil::BasisSet;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DgError {
    #[error("meshes {l} and {k} are not adjacent")]
    NotAdjacent { l: usize, k: usize },
    #[error("basis integrals differ within mesh {mesh}")]
    IllDefinedEta { mesh: usize },
    #[error("row {row} of the generator for phase {phase} sums to {sum:e}")]
    ConservationViolation { phase: usize, row: usize, sum: f64 },
    #[error("generator for phase {phase} has an eigenvalue with real part {abscissa:e}")]
    SpectrumViolation { phase: usize, abscissa: f64 },
    #[error("eigenvalue computation failed for phase {phase}")]
    EigenFailure { phase: usize },
}

impl DgError {
    pub fn code(&self) -> &'static str {
        match self {
            DgError::NotAdjacent { .. } => "NotAdjacent",
            DgError::IllDefinedEta { .. } => "IllDefinedEta",
            DgError::ConservationViolation { .. } => "ConservationViolation",
            DgError::SpectrumViolation { .. } => "SpectrumViolation",
            DgError::EigenFailure { .. } => "EigenFailure",
        }
    }
}

/// Direction of first-fluid drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Drift {
    Up,
    Down,
}

impl Drift {
    pub fn of<T: Scalar>(c: T) -> Option<Drift> {
        if c > T::zero() {
            Some(Drift::Up)
        } else if c < T::zero() {
            Some(Drift::Down)
        } else {
            None
        }
    }
}

pub fn assemble_mass<T: Scalar>(basis: &BasisSet<T>) -> DMatrix<T> {
    let n = basis.len();
    let mut m = DMatrix::zeros(n, n);
    for mb in basis.meshes() {
        let w = mb.width();
        let o = mb.offset;
        if mb.linear {
            let (d, od) = (w / T::int(3), w / T::int(6));
            m[(o, o)] = d;
            m[(o + 1, o + 1)] = d;
            m[(o, o + 1)] = od;
            m[(o + 1, o)] = od;
        } else {
            m[(o, o)] = w;
        }
    }
    m
}

pub fn assemble_stiffness<T: Scalar>(basis: &BasisSet<T>) -> DMatrix<T> {
    let n = basis.len();
    let mut g = DMatrix::zeros(n, n);
    let half = T::ratio(1, 2);
    for mb in basis.meshes().iter().filter(|mb| mb.linear) {
        let o = mb.offset;
        g[(o, o)] = -half;
        g[(o, o + 1)] = half;
        g[(o + 1, o)] = -half;
        g[(o + 1, o + 1)] = half;
    }
    g
}

/// Exact inverse of the block-diagonal mass matrix.
pub fn mass_inverse<T: Scalar>(basis: &BasisSet<T>) -> DMatrix<T> {
    let n = basis.len();
    let mut inv = DMatrix::zeros(n, n);
    for mb in basis.meshes() {
        let w = mb.width();
        let o = mb.offset;
        if mb.linear {
            let (d, od) = (T::int(4) / w, T::int(-2) / w);
            inv[(o, o)] = d;
            inv[(o + 1, o + 1)] = d;
            inv[(o, o + 1)] = od;
            inv[(o + 1, o)] = od;
        } else {
            inv[(o, o)] = T::one() / w;
        }
    }
    inv
}

/// `η_{ℓ,k}`: ratio of per-basis integrals on mesh `k` to those on mesh `ℓ`.
pub fn compute_eta<T: Scalar>(basis: &BasisSet<T>, l: usize, k: usize) -> Result<T, DgError> {
    if l.abs_diff(k) != 1 || l.max(k) >= basis.n_meshes() {
        return Err(DgError::NotAdjacent { l, k });
    }
    let per_mesh = |m: usize| -> Result<T, DgError> {
        let r = basis.mesh(m).range();
        let w = basis.weights();
        let first = w[r.start];
        if w[r].iter().all(|&x| x == first) {
            Ok(first)
        } else {
            Err(DgError::IllDefinedEta { mesh: m })
        }
    };
    Ok(per_mesh(k)? / per_mesh(l)?)
}

fn add_outer<T: Scalar>(f: &mut DMatrix<T>, row0: usize, col0: usize, scale: T, u: &[T], v: &[T]) {
    for (a, &ua) in u.iter().enumerate() {
        for (b, &vb) in v.iter().enumerate() {
            f[(row0 + a, col0 + b)] += scale * ua * vb;
        }
    }
}

/// Upwind flux matrix including the outflow at both ends of the stencil.
pub fn assemble_flux<T: Scalar>(basis: &BasisSet<T>, drift: Drift) -> DMatrix<T> {
    flux(basis, drift, false)
}

fn flux<T: Scalar>(basis: &BasisSet<T>, drift: Drift, closed: bool) -> DMatrix<T> {
    let n = basis.len();
    let last = basis.n_meshes() - 1;
    let mut f = DMatrix::zeros(n, n);
    let one = T::one();
    for k in 0..=last {
        let mk = basis.mesh(k);
        match drift {
            Drift::Up => {
                if !(closed && k == last) {
                    add_outer(&mut f, mk.offset, mk.offset, -one, &mk.at_right(), &mk.at_right());
                }
                if k > 0 {
                    let mp = basis.mesh(k - 1);
                    let eta = compute_eta(basis, k - 1, k).expect("adjacent meshes with equal integrals");
                    add_outer(&mut f, mp.offset, mk.offset, eta, &mp.at_right(), &mk.at_left());
                }
            }
            Drift::Down => {
                if !(closed && k == 0) {
                    add_outer(&mut f, mk.offset, mk.offset, one, &mk.at_left(), &mk.at_left());
                }
                if k < last {
                    let mn = basis.mesh(k + 1);
                    let eta = compute_eta(basis, k + 1, k).expect("adjacent meshes with equal integrals");
                    add_outer(&mut f, mn.offset, mk.offset, -eta, &mn.at_left(), &mk.at_right());
                }
            }
        }
    }
    f
}

/// `c (G + F) M⁻¹` with the outflow through the far edge of the stencil
/// removed, so mass reaching `0` or the truncation level stays in the boundary mesh.
pub fn generator_for_rate<T: Scalar>(basis: &BasisSet<T>, c: T) -> DMatrix<T> {
    let n = basis.len();
    let Some(drift) = Drift::of(c) else {
        return DMatrix::zeros(n, n);
    };
    let g = assemble_stiffness(basis);
    let f = flux(basis, drift, true);
    ((g + f) * mass_inverse(basis)) * c
}

/// Per-phase generators `Q^i`, checked for zero row sums and a stable spectrum.
pub fn assemble_generator<T: Scalar>(model: &ModelSpec<T>, basis: &BasisSet<T>) -> Result<Vec<DMatrix<T>>, DgError> {
    let mut out = Vec::with_capacity(model.n_phases());
    for (phase, &c) in model.c.iter().enumerate() {
        let q = generator_for_rate(basis, c);
        check_conservation(phase, &q)?;
        check_spectrum(phase, &q)?;
        out.push(q);
    }
    Ok(out)
}

fn check_conservation<T: Scalar>(phase: usize, q: &DMatrix<T>) -> Result<(), DgError> {
    for (row, r) in q.row_iter().enumerate() {
        let sum = r.iter().fold(T::zero(), |acc, &x| acc + x);
        let scale = r.iter().fold(T::one(), |acc, &x| acc + x.magnitude());
        if sum.magnitude() > T::slack() * scale * T::int(100) {
            return Err(DgError::ConservationViolation { phase, row, sum: sum.lossy_f64() });
        }
    }
    Ok(())
}

const SPECTRUM_TOL: f64 = 1e-8;

fn check_spectrum<T: Scalar>(phase: usize, q: &DMatrix<T>) -> Result<(), DgError> {
    let qf = q.map(|x| x.lossy_f64());
    let abscissa = linalg::spectral_abscissa(&qf).map_err(|_| DgError::EigenFailure { phase })?;
    if abscissa > SPECTRUM_TOL {
        return Err(DgError::SpectrumViolation { phase, abscissa });
    }
    Ok(())
}
