//! MINRES for symmetric indefinite systems, with the diagonal prescaler.
//!
//! The recurrences are arranged so each iteration spends exactly two scalar
//! square roots (the Lanczos norm and the Givens radius) and two scalar
//! divisions (their reciprocals); everything else is multiply-accumulate.
//! The counters in [`MinresStats`] make that budget testable.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kkt::BlockSparseMatrix;

/// Symmetric linear operator: the only access MINRES needs.
pub trait SymOp {
    fn dim(&self) -> usize;
    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>>;
}

impl SymOp for BlockSparseMatrix {
    fn dim(&self) -> usize {
        BlockSparseMatrix::dim(self)
    }

    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.matvec(v)
    }
}

impl SymOp for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self * v)
    }
}

/// Iteration budget, resolved against the system dimension at solve time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterBudget {
    /// Exactly the system dimension -- the exact-arithmetic Krylov bound and
    /// the fixed count used on the target hardware.
    Dim,
    /// A multiple of the dimension; finite-precision Lanczos needs the slack
    /// on ill-conditioned late interior-point systems.
    DimTimes(usize),
    Fixed(usize),
}

impl IterBudget {
    pub fn resolve(self, dim: usize) -> usize {
        match self {
            IterBudget::Dim => dim,
            IterBudget::DimTimes(k) => k * dim,
            IterBudget::Fixed(n) => n,
        }
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinresConfig {
    /// Relative residual target. Zero disables the test: the solver runs its
    /// entire iteration budget, the mode used on the target hardware.
    pub rtol: f64,
    pub budget: IterBudget,
}

impl Default for MinresConfig {
    fn default() -> Self {
        Self { rtol: 1e-10, budget: IterBudget::DimTimes(3) }
    }
}

impl MinresConfig {
    /// Fixed-count mode matching the hardware: no residual test, exactly
    /// `dim` iterations.
    pub fn fixed_count() -> Self {
        Self { rtol: 0.0, budget: IterBudget::Dim }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MinresStats {
    pub iterations: usize,
    /// Recurrence estimate of `||b - Ax|| / ||b||`.
    pub final_relres: f64,
    pub scalar_divs: usize,
    pub scalar_sqrts: usize,
}

/// Minimum-residual solve of `A x = b` for symmetric `A`.
pub fn minres_solve<Op: SymOp + ?Sized>(
    op: &Op,
    b: &DVector<f64>,
    cfg: &MinresConfig,
) -> Result<(DVector<f64>, MinresStats)> {
    let n = op.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch { what: "minres rhs".into(), expected: n, got: b.len() });
    }
    let max_iter = cfg.budget.resolve(n);
    let mut stats = MinresStats::default();
    let mut x = DVector::zeros(n);

    let beta1 = b.norm();
    if beta1 == 0.0 {
        return Ok((x, stats));
    }
    let inv_beta1 = 1.0 / beta1;

    // Lanczos state: q_prev, q (normalized), beta = off-diagonal just computed.
    let mut q_prev = DVector::zeros(n);
    let mut q = b * inv_beta1;
    let mut beta = 0.0f64;

    // Givens / solution-update state (Paige-Saunders recurrences).
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let (mut dbar, mut epsln) = (0.0f64, 0.0f64);
    let mut phibar = beta1;
    let mut w_mm = DVector::zeros(n);
    let mut w_m = DVector::zeros(n);
    let mut relres = 1.0;

    let tiny = f64::MIN_POSITIVE * 16.0;

    for _ in 0..max_iter {
        let mut u = op.apply(&q)?;
        if beta != 0.0 {
            u.axpy(-beta, &q_prev, 1.0);
        }
        let alpha = q.dot(&u);
        u.axpy(-alpha, &q, 1.0);
        let beta_next = u.norm(); // sqrt #1
        stats.scalar_sqrts += 1;

        let oldeps = epsln;
        let delta = cs * dbar + sn * alpha;
        let gbar = sn * dbar - cs * alpha;
        epsln = sn * beta_next;
        dbar = -cs * beta_next;

        let gamma = (gbar * gbar + beta_next * beta_next).sqrt().max(f64::EPSILON); // sqrt #2
        stats.scalar_sqrts += 1;
        let g_inv = 1.0 / gamma; // div #1
        stats.scalar_divs += 1;
        cs = gbar * g_inv;
        sn = beta_next * g_inv;
        let phi = cs * phibar;
        phibar *= sn;

        let mut w_new = q.clone();
        w_new.axpy(-oldeps, &w_mm, 1.0);
        w_new.axpy(-delta, &w_m, 1.0);
        w_new *= g_inv;
        x.axpy(phi, &w_new, 1.0);
        w_mm = std::mem::replace(&mut w_m, w_new);

        stats.iterations += 1;
        relres = phibar.abs() * inv_beta1;

        if cfg.rtol > 0.0 && relres <= cfg.rtol {
            break;
        }
        if beta_next < tiny {
            // Krylov space exhausted: either the residual is already at the
            // floor (exact solve) or the recurrence has broken down.
            if cfg.rtol > 0.0 && relres > cfg.rtol {
                return Err(Error::Breakdown { iteration: stats.iterations, relres });
            }
            break;
        }
        let inv_b = 1.0 / beta_next; // div #2
        stats.scalar_divs += 1;
        q_prev = std::mem::replace(&mut q, u * inv_b);
        beta = beta_next;
    }

    stats.final_relres = relres;
    Ok((x, stats))
}

/// Symmetric diagonal prescaling `D A D z = D b` with
/// `D_i = ||row_i(A)||_2^{-1/2}` (unit rows are left alone).
pub struct Prescaled {
    pub a: BlockSparseMatrix,
    pub b: DVector<f64>,
    pub d: DVector<f64>,
}

pub fn prescale(a: &BlockSparseMatrix, b: &DVector<f64>) -> Prescaled {
    // Ruiz-style equilibration: each sweep halves the log-spread of the row
    // norms, so a few sweeps drive them all to 1. One sweep is the plain
    // row-norm prescaler; the extras noticeably help MINRES on the
    // ill-conditioned late interior-point systems.
    let mut a_tilde = a.clone();
    let mut d_total = DVector::from_element(a.dim(), 1.0);
    for _ in 0..3 {
        let sq = a_tilde.row_sq_norms();
        let d = DVector::from_iterator(
            sq.len(),
            sq.iter().map(|&s| if s > 0.0 { s.powf(-0.25) } else { 1.0 }),
        );
        a_tilde = a_tilde.scale_symmetric(&d);
        d_total.component_mul_assign(&d);
    }
    let b_tilde = b.component_mul(&d_total);
    Prescaled { a: a_tilde, b: b_tilde, d: d_total }
}

/// Prescale, run MINRES, and undo the scaling (`x = D z`).
pub fn solve_kkt(
    a: &BlockSparseMatrix,
    b: &DVector<f64>,
    cfg: &MinresConfig,
) -> Result<(DVector<f64>, MinresStats)> {
    let scaled = prescale(a, b);
    let (z, stats) = minres_solve(&scaled.a, &scaled.b, cfg)?;
    Ok((z.component_mul(&scaled.d), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kkt::BlockPattern;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_sym(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        (&m + m.transpose()) * 0.5 + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn identity_converges_immediately() {
        let a = DMatrix::<f64>::identity(5, 5);
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5, -0.1]);
        let cfg = MinresConfig { rtol: 1e-12, budget: IterBudget::Dim };
        let (x, stats) = minres_solve(&a, &b, &cfg).unwrap();
        assert!((x - b).norm() < 1e-12);
        assert_eq!(stats.iterations, 1);
    }

    #[test]
    fn matches_dense_lu_on_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let n = rng.gen_range(3..40);
            let a = random_sym(n, &mut rng);
            let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let cfg = MinresConfig { rtol: 1e-12, budget: IterBudget::DimTimes(4) };
            let (x, stats) = minres_solve(&a, &b, &cfg).unwrap();
            let x_ref = a.clone().full_piv_lu().solve(&b).unwrap();
            assert!((&x - &x_ref).norm() / x_ref.norm() < 1e-6, "relres {}", stats.final_relres);
            let true_res = (&b - &a * &x).norm() / b.norm();
            assert!(true_res <= 1e-8, "true residual {true_res}");
        }
    }

    #[test]
    fn indefinite_system_is_fine() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -2.0, 1.0, -0.5]));
        let b = DVector::from_vec(vec![3.0, 4.0, -1.0, 1.0]);
        let cfg = MinresConfig { rtol: 1e-13, budget: IterBudget::Dim };
        let (x, _) = minres_solve(&a, &b, &cfg).unwrap();
        let expect = DVector::from_vec(vec![1.0, -2.0, -1.0, -2.0]);
        assert!((x - expect).norm() < 1e-10);
    }

    #[test]
    fn fixed_count_mode_spends_two_divs_and_sqrts_per_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_sym(20, &mut rng);
        let b = DVector::from_fn(20, |_, _| rng.gen_range(-1.0..1.0));
        let cfg = MinresConfig { rtol: 0.0, budget: IterBudget::Fixed(12) };
        let (_, stats) = minres_solve(&a, &b, &cfg).unwrap();
        assert_eq!(stats.iterations, 12);
        assert_eq!(stats.scalar_sqrts, 2 * 12);
        assert_eq!(stats.scalar_divs, 2 * 12);
    }

    #[test]
    fn krylov_exhaustion_with_exact_solution_is_success() {
        // b lies in a one-dimensional invariant subspace of a diagonal matrix.
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0, 7.0]));
        let b = DVector::from_vec(vec![4.0, 0.0, 0.0]);
        let cfg = MinresConfig { rtol: 1e-12, budget: IterBudget::Dim };
        let (x, stats) = minres_solve(&a, &b, &cfg).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12);
        assert!(stats.iterations <= 2);
    }

    #[test]
    fn residual_estimate_tracks_true_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_sym(15, &mut rng);
        let b = DVector::from_fn(15, |_, _| rng.gen_range(-1.0..1.0));
        let cfg = MinresConfig { rtol: 1e-10, budget: IterBudget::Dim };
        let (x, stats) = minres_solve(&a, &b, &cfg).unwrap();
        let true_res = (&b - &a * &x).norm() / b.norm();
        assert!((true_res - stats.final_relres).abs() < 1e-7);
    }

    #[test]
    fn prescaler_unit_scales_a_constant_diagonal() {
        // A = 4 I: row norms are 4, so D = 1/2 and D A D = I.
        let n = 4;
        let coords: Vec<_> = (0..n).map(|i| (i, i)).collect();
        let pattern = Arc::new(BlockPattern::single_block(n, coords).unwrap());
        let a = BlockSparseMatrix::from_values(pattern, vec![vec![4.0; n]], vec![], vec![]).unwrap();
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let scaled = prescale(&a, &b);
        assert!(scaled.d.iter().all(|&d| (d - 0.5).abs() < 1e-15));
        let dense = scaled.a.to_dense();
        assert!((dense - DMatrix::<f64>::identity(n, n)).norm() < 1e-15);
        let cfg = MinresConfig { rtol: 1e-14, budget: IterBudget::Dim };
        let (x, _) = solve_kkt(&a, &b, &cfg).unwrap();
        assert!((x - b / 4.0).norm() < 1e-13);
    }
}
