use ffdg::dg_core::{assemble_flux, generator_for_rate, Drift};
use ffdg::linalg::spectral_abscissa;
use ffdg::model::{build_bandwidth_model, BandwidthParams, Sign};
use ffdg::operator_assembly::{assemble_d, Discretisation, RhoMode};
use ffdg::stencil::{BasisSet, Degree, Stencil};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reference_disc(alpha2: f64) -> Discretisation<f64> {
    reference_disc_with(alpha2, Degree::Linear)
}

fn reference_disc_with(alpha2: f64, degree: Degree) -> Discretisation<f64> {
    let model = build_bandwidth_model(&BandwidthParams::reference().with_alpha2(alpha2)).unwrap();
    let basis = BasisSet::new(Stencil::omega(43, 0.4, 0.001).unwrap(), degree);
    Discretisation::new(&model, basis, RhoMode::Normalized).unwrap()
}

fn random_probability(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| rng.random::<f64>());
    let s = v.sum();
    v / s
}

#[test]
fn reference_generators_conserve_mass() {
    let disc = reference_disc(22.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for q in &disc.generators {
        let worst_row = q.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max);
        assert!(worst_row <= 1e-10, "row sum {worst_row}");
        assert!(spectral_abscissa(q).unwrap() <= 1e-8);
        let a = random_probability(q.nrows(), &mut rng);
        for t in [0.1, 1.0, 10.0] {
            let moved = a.tr_mul(&(q * t).exp());
            assert!((moved.sum() - 1.0).abs() <= 1e-8, "t = {t}: {}", moved.sum());
        }
    }
}

#[test]
fn full_operator_is_a_generator() {
    let disc = reference_disc(16.0);
    let b = disc.op.full();
    let worst = b.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-9, "{worst}");
    for i in 0..b.nrows() {
        for j in 0..b.ncols() {
            if i != j {
                assert!(b[(i, j)] >= -1e-12 || disc.layout().phase_of(i) == disc.layout().phase_of(j));
            }
        }
    }
}

fn zero_block_inverse_min(disc: &Discretisation<f64>) -> f64 {
    let z = disc.op.packed(&[Sign::Zero], &[Sign::Zero]);
    (-z).try_inverse().unwrap().min()
}

#[test]
fn censored_zero_block_inverse_is_nonnegative_for_constant_basis() {
    let m = zero_block_inverse_min(&reference_disc_with(22.0, Degree::Constant));
    assert!(m >= -1e-12, "{m}");
}

#[test]
fn off_diagonal_d_blocks_nonnegative_for_constant_basis() {
    let disc = reference_disc_with(22.0, Degree::Constant);
    assert!(disc.d0.pm.min() >= -1e-12);
    assert!(disc.d0.mp.min() >= -1e-12);
}

#[test]
fn linear_basis_sign_structure() {
    let disc = reference_disc(22.0);
    eprintln!(
        "degree 1: min (−B00)⁻¹ = {:e}, min D+- = {:e}, min D-+ = {:e}",
        zero_block_inverse_min(&disc),
        disc.d0.pm.min(),
        disc.d0.mp.min()
    );
    assert!(disc.d0.mp.min() >= -1e-12);
    assert!(disc.d0.pm.min() < 0.0);
    assert!(zero_block_inverse_min(&disc) < 0.0);
}

#[test]
fn d_at_unit_shift_matches_direct_assembly() {
    let disc = reference_disc(22.0);
    let d1 = assemble_d(&disc.op, &disc.rho, 1.0).unwrap();
    let layout = disc.layout();
    let z = disc.op.packed(&[Sign::Zero], &[Sign::Zero]);
    let nz = z.nrows();
    let shifted = (DMatrix::identity(nz, nz) - &z).try_inverse().unwrap();
    let unshifted = (-&z).try_inverse().unwrap();
    let r_plus = DMatrix::from_diagonal(&DVector::from_vec(disc.rho.reciprocal(layout, Sign::Plus)));
    let b_p0 = disc.op.packed(&[Sign::Plus], &[Sign::Zero]);
    let b_0p = disc.op.packed(&[Sign::Zero], &[Sign::Plus]);
    let n = r_plus.nrows();
    let expected =
        &disc.d0.pp - &r_plus * DMatrix::<f64>::identity(n, n) + &r_plus * (&b_p0 * (shifted - unshifted) * &b_0p);
    assert!((d1.pp - expected).amax() <= 1e-8);
}

/// Upwind value of the density at each node for drift `drift`.
fn upwind_traces(basis: &BasisSet<f64>, alpha: &[f64], drift: Drift) -> Vec<f64> {
    let k = basis.n_meshes();
    let inside = |mesh: usize, x: f64| {
        let mb = basis.mesh(mesh);
        (0..mb.len()).map(|n| alpha[mb.offset + n] * mb.value(n, x)).sum::<f64>()
    };
    let nodes = basis.stencil().nodes();
    (0..=k)
        .map(|j| match drift {
            Drift::Up if j == 0 => 0.0,
            Drift::Up => inside(j - 1, nodes[j]),
            Drift::Down if j == k => 0.0,
            Drift::Down => inside(j, nodes[j]),
        })
        .collect()
}

#[test]
fn flux_matches_upwind_boundary_terms() {
    // Every basis function integrates to 1/2, so η = 1 throughout.
    let basis = BasisSet::new(Stencil::from_nodes(vec![0.0, 0.5, 1.5, 2.5, 3.5, 4.0]).unwrap(), Degree::Linear);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let nodes = basis.stencil().nodes().to_vec();
    for drift in [Drift::Up, Drift::Down] {
        let f = assemble_flux(&basis, drift);
        for _ in 0..20 {
            let alpha: Vec<f64> = (0..basis.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs = DVector::from_column_slice(&alpha).tr_mul(&f);
            let star = upwind_traces(&basis, &alpha, drift);
            for k in 0..basis.n_meshes() {
                let mb = basis.mesh(k);
                for m in 0..mb.len() {
                    let (xl, xr) = (nodes[k], nodes[k + 1]);
                    let rhs = -(star[k + 1] * mb.value(m, xr) - star[k] * mb.value(m, xl));
                    assert!((lhs[mb.offset + m] - rhs).abs() <= 1e-12, "{drift:?} mesh {k} fn {m}");
                }
            }
        }
    }
}

#[test]
fn negative_drift_mirrors_positive() {
    let nodes = [0.0, 0.25, 1.25, 2.25, 2.75];
    let mirrored: Vec<f64> = nodes.iter().rev().map(|x| 2.75 - x).collect();
    let up = generator_for_rate(&BasisSet::new(Stencil::from_nodes(nodes.to_vec()).unwrap(), Degree::Linear), 1.5);
    let down = generator_for_rate(&BasisSet::new(Stencil::from_nodes(mirrored).unwrap(), Degree::Linear), -1.5);
    let n = up.nrows();
    let flipped = DMatrix::from_fn(n, n, |i, j| down[(n - 1 - i, n - 1 - j)]);
    assert!((flipped - up).amax() <= 1e-12);
}

#[test]
fn constant_basis_is_first_order_upwind() {
    let basis = BasisSet::new(Stencil::from_nodes(vec![0.0, 0.5, 1.0, 1.5, 2.0]).unwrap(), Degree::Constant);
    let q: DMatrix<f64> = generator_for_rate(&basis, 3.0);
    for k in 0..3 {
        assert!((q[(k, k)] + 6.0).abs() < 1e-12);
        assert!((q[(k, k + 1)] - 6.0).abs() < 1e-12);
    }
    assert_eq!(q.row(3).amax(), 0.0);
}
