//! Dense linear-algebra kernels used by the solvers.

use nalgebra::{Complex, DMatrix, DVector, Schur};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("Schur decomposition did not converge")]
    SchurFailed,
    #[error("singular system in {0}")]
    Singular(&'static str),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

impl LinalgError {
    pub fn code(&self) -> &'static str {
        match self {
            LinalgError::SchurFailed => "SchurFailed",
            LinalgError::Singular(_) => "SingularMatrix",
            LinalgError::DimensionMismatch(_) => "DimensionMismatch",
        }
    }
}

const SCHUR_MAX_ITER: usize = 100_000;

/// Unitary factor and upper-triangular form.
type SchurPair<T> = (DMatrix<Complex<T>>, DMatrix<Complex<T>>);

fn complex_schur<T: Real>(m: &DMatrix<T>) -> Result<SchurPair<T>, LinalgError> {
    let mc = m.map(|x| Complex::new(x, T::zero()));
    let schur = Schur::try_new(mc, T::default_epsilon(), SCHUR_MAX_ITER).ok_or(LinalgError::SchurFailed)?;
    Ok(schur.unpack())
}

/// Largest real part of the spectrum.
pub fn spectral_abscissa<T: Real>(m: &DMatrix<T>) -> Result<T, LinalgError> {
    if m.is_empty() {
        return Ok(T::min_value().unwrap_or(-T::one()));
    }
    let schur = Schur::try_new(m.clone(), T::default_epsilon(), SCHUR_MAX_ITER).ok_or(LinalgError::SchurFailed)?;
    Ok(schur.complex_eigenvalues().iter().map(|z| z.re).fold(T::min_value().unwrap_or(-T::one()), |a, b| {
        if b > a {
            b
        } else {
            a
        }
    }))
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues<T: Real>(m: &DMatrix<T>) -> Result<Vec<Complex<T>>, LinalgError> {
    let schur = Schur::try_new(m.clone(), T::default_epsilon(), SCHUR_MAX_ITER).ok_or(LinalgError::SchurFailed)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Infinity norm: largest absolute row sum.
pub fn inf_norm<T: Real>(m: &DMatrix<T>) -> T {
    m.row_iter()
        .map(|r| r.iter().fold(T::zero(), |acc, &x| acc + x.abs()))
        .fold(T::zero(), |a, b| if b > a { b } else { a })
}

/// Solver for `A X + X B = C` by reduction of `A` and `B` to complex Schur form.
///
/// The factorisations are kept so repeated right-hand sides cost one
/// triangular sweep each.
pub struct Sylvester<T: Real> {
    ua: DMatrix<Complex<T>>,
    ta: DMatrix<Complex<T>>,
    ub: DMatrix<Complex<T>>,
    tb: DMatrix<Complex<T>>,
}

impl<T: Real> Sylvester<T> {
    pub fn new(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<Self, LinalgError> {
        if !a.is_square() || !b.is_square() {
            return Err(LinalgError::DimensionMismatch("Sylvester coefficients must be square".into()));
        }
        let (ua, ta) = complex_schur(a)?;
        let (ub, tb) = complex_schur(b)?;
        Ok(Self { ua, ta, ub, tb })
    }

    pub fn solve(&self, c: &DMatrix<T>) -> Result<DMatrix<T>, LinalgError> {
        let (m, n) = (self.ta.nrows(), self.tb.nrows());
        if c.shape() != (m, n) {
            return Err(LinalgError::DimensionMismatch(format!("rhs is {:?}, expected {:?}", c.shape(), (m, n))));
        }
        let cc = c.map(|x| Complex::new(x, T::zero()));
        let f = self.ua.adjoint() * cc * &self.ub;
        let mut y = DMatrix::<Complex<T>>::zeros(m, n);
        let tiny = T::default_epsilon() * T::default_epsilon();
        let mut rhs = DVector::<Complex<T>>::zeros(m);
        for j in 0..n {
            rhs.copy_from(&f.column(j));
            for k in 0..j {
                let t = self.tb[(k, j)];
                if t != Complex::new(T::zero(), T::zero()) {
                    rhs.axpy(-t, &y.column(k), Complex::new(T::one(), T::zero()));
                }
            }
            let shift = self.tb[(j, j)];
            for i in (0..m).rev() {
                let mut acc = rhs[i];
                for l in i + 1..m {
                    acc -= self.ta[(i, l)] * y[(l, j)];
                }
                let d = self.ta[(i, i)] + shift;
                if d.norm_sqr() <= tiny {
                    return Err(LinalgError::Singular("Sylvester equation"));
                }
                y[(i, j)] = acc / d;
            }
        }
        let x = &self.ua * y * self.ub.adjoint();
        Ok(x.map(|z| z.re))
    }
}

/// Solves `A X + X B = C` once.
pub fn solve_sylvester<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, c: &DMatrix<T>) -> Result<DMatrix<T>, LinalgError> {
    Sylvester::new(a, b)?.solve(c)
}

/// `X` with `X A = B`.
pub fn solve_left<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>, LinalgError> {
    let lu = a.transpose().lu();
    let xt = lu.solve(&b.transpose()).ok_or(LinalgError::Singular("left solve"))?;
    Ok(xt.transpose())
}

pub fn inverse<T: Real>(a: &DMatrix<T>, what: &'static str) -> Result<DMatrix<T>, LinalgError> {
    if a.is_empty() {
        return Ok(a.clone());
    }
    a.clone().lu().try_inverse().ok_or(LinalgError::Singular(what))
}

/// Row vector `v` with `v (A − I) = 0` and `Σ v = 1`, by bordering the singular system.
pub fn unit_left_eigenvector<T: Real>(a: &DMatrix<T>) -> Result<DVector<T>, LinalgError> {
    let mut g = a.clone();
    for i in 0..g.nrows() {
        g[(i, i)] -= T::one();
    }
    normalised_left_null(&g)
}

/// Row vector `π` with `π G = 0` and `Σ π = 1`.
pub fn stationary_vector<T: Real>(g: &DMatrix<T>) -> Result<DVector<T>, LinalgError> {
    normalised_left_null(g)
}

fn normalised_left_null<T: Real>(g: &DMatrix<T>) -> Result<DVector<T>, LinalgError> {
    let n = g.nrows();
    if n == 0 || !g.is_square() {
        return Err(LinalgError::DimensionMismatch("expected a nonempty square matrix".into()));
    }
    // The equation with the largest diagonal gives way to the normalisation.
    let mut at = g.transpose();
    let drop = (0..n)
        .max_by(|&i, &j| at[(i, i)].abs().partial_cmp(&at[(j, j)].abs()).expect("finite entries"))
        .unwrap_or(n - 1);
    at.row_mut(drop).fill(T::one());
    let mut rhs = DVector::zeros(n);
    rhs[drop] = T::one();
    at.lu().solve(&rhs).ok_or(LinalgError::Singular("normalised null vector"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sylvester_round_trip() {
        let a = DMatrix::from_row_slice(3, 3, &[-4.0, 1.0, 0.5, 0.0, -3.0, 2.0, 1.0, 0.0, -5.0]);
        let b = DMatrix::from_row_slice(2, 2, &[-1.0, 3.0, -2.0, -1.0]);
        let c = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = solve_sylvester(&a, &b, &c).unwrap();
        assert_relative_eq!(&a * &x + &x * &b, c, epsilon = 1e-12);
    }

    #[test]
    fn sylvester_f32() {
        let a = DMatrix::from_row_slice(2, 2, &[-2.0f32, 1.0, 0.0, -3.0]);
        let b = DMatrix::from_row_slice(1, 1, &[-1.0f32]);
        let c = DMatrix::from_row_slice(2, 1, &[1.0f32, 1.0]);
        let x = solve_sylvester(&a, &b, &c).unwrap();
        assert!((&a * &x + &x * &b - c).amax() < 1e-5);
    }

    #[test]
    fn stationary_vector_of_two_state_chain() {
        let g = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 3.0, -3.0]);
        let pi = stationary_vector(&g).unwrap();
        assert_relative_eq!(pi, DVector::from_vec(vec![0.75, 0.25]), epsilon = 1e-14);
    }

    #[test]
    fn abscissa_of_rotation_generator() {
        let m = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, -2.0, -1.0]);
        assert_relative_eq!(spectral_abscissa(&m).unwrap(), -1.0, epsilon = 1e-12);
    }
}
