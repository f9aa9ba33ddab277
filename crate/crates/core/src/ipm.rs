//! Fixed-iteration primal-dual interior-point method.
//!
//! Inequality multipliers are eliminated from the Newton system, leaving the
//! symmetric indefinite KKT matrix assembled in [`crate::kkt`]; the step in
//! `lambda` is recovered afterwards from the complementarity linearization.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::Result;
use crate::kkt::{assemble_kkt, BlockPattern, BlockSparseMatrix};
use crate::minres::{solve_kkt, MinresConfig, MinresStats};
use crate::nlp::{check_strict_feasibility, eval_bounds, BoundRow, Nlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuMode {
    /// `mu = sigma * (-lambda' g) / n_ineq` -- duality measure per constraint.
    #[default]
    Averaged,
    /// `mu = sigma * (-lambda' g)` -- the raw gap without the `1/n_ineq`
    /// normalization. Diverges on problems with many bounds; kept for
    /// comparison.
    Unnormalized,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IpmConfig {
    pub n_iter: usize,
    pub sigma: f64,
    /// Fraction-to-the-boundary factor.
    pub gamma: f64,
    pub mu_mode: MuMode,
    /// Tikhonov regularization: `+delta` primal / `-delta` dual diagonal.
    pub delta: f64,
    pub minres: MinresConfig,
    /// Optional early exit once all residuals drop below this; `None` keeps
    /// the hardware-faithful fixed iteration count.
    pub exit_tol: Option<f64>,
}

impl Default for IpmConfig {
    fn default() -> Self {
        Self {
            n_iter: 15,
            sigma: 0.1,
            gamma: 0.995,
            mu_mode: MuMode::Averaged,
            delta: 0.0,
            minres: MinresConfig::default(),
            exit_tol: None,
        }
    }
}

/// One logged iteration of the solve.
#[derive(Debug, Clone, Copy)]
pub struct IterRow {
    pub iter: usize,
    pub mu: f64,
    pub alpha: f64,
    pub r_eq_inf: f64,
    pub r_dual_inf: f64,
    pub compl: f64,
    pub minres_relres: f64,
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub theta: DVector<f64>,
    pub nu: DVector<f64>,
    pub lambda: DVector<f64>,
    pub log: Vec<IterRow>,
    pub r_eq_inf: f64,
    pub r_dual_inf: f64,
    pub compl: f64,
}

/// Warm-start triple; omit to start from the NLP's interior point with
/// `nu = 0`, `lambda = 1`.
#[derive(Debug, Clone)]
pub struct IpmInit {
    pub theta: DVector<f64>,
    pub nu: DVector<f64>,
    pub lambda: DVector<f64>,
}

/// How the reduced KKT system is solved each iteration. The production path
/// is MINRES over the block-sparse matrix; tests plug in a dense LU oracle.
pub trait KktSolver {
    fn solve(&self, a: &BlockSparseMatrix, rhs: &DVector<f64>) -> Result<(DVector<f64>, Option<MinresStats>)>;
}

pub struct MinresKktSolver(pub MinresConfig);

impl KktSolver for MinresKktSolver {
    fn solve(&self, a: &BlockSparseMatrix, rhs: &DVector<f64>) -> Result<(DVector<f64>, Option<MinresStats>)> {
        let (z, stats) = solve_kkt(a, rhs, &self.0)?;
        Ok((z, Some(stats)))
    }
}

/// Dense factorization oracle (tests and cross-checks only).
pub struct DenseLuKktSolver;

impl KktSolver for DenseLuKktSolver {
    fn solve(&self, a: &BlockSparseMatrix, rhs: &DVector<f64>) -> Result<(DVector<f64>, Option<MinresStats>)> {
        let dense = a.to_dense();
        let z = dense
            .full_piv_lu()
            .solve(rhs)
            .ok_or_else(|| crate::error::Error::Numerical("singular KKT matrix".into()))?;
        Ok((z, None))
    }
}

/// Newton right-hand side in natural ordering:
/// `r_dual = J' (mu G^{-1} e) - df' f - dp' nu`, `r_eq = -p`.
pub fn compute_residuals(
    nlp: &dyn Nlp,
    theta: &DVector<f64>,
    nu: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let _ = lambda;
    let f = nlp.eval_f(theta)?;
    let jf = nlp.jac_f(theta)?;
    let p = nlp.eval_p(theta)?;
    let jp = nlp.jac_p(theta)?;

    let mut r_dual = -(jf.transpose() * f);
    if nu.len() > 0 {
        r_dual -= jp.transpose() * nu;
    }
    for row in nlp.bound_rows() {
        let g = row.eval(theta);
        r_dual[row.var] += row.sign * mu / g;
    }
    Ok((r_dual, -p))
}

/// `dlambda_i = -lambda_i - mu/g_i - (lambda_i/g_i) (J dtheta)_i`.
pub fn recover_dlambda(
    rows: &[BoundRow],
    theta: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: f64,
    dtheta: &DVector<f64>,
) -> DVector<f64> {
    DVector::from_iterator(
        rows.len(),
        rows.iter().enumerate().map(|(i, row)| {
            let g = row.eval(theta);
            -lambda[i] - mu / g - lambda[i] / g * row.apply(dtheta)
        }),
    )
}

/// Single step length keeping `lambda > 0` and `g < 0` with margin `gamma`.
pub fn fraction_to_boundary(
    rows: &[BoundRow],
    theta: &DVector<f64>,
    lambda: &DVector<f64>,
    dtheta: &DVector<f64>,
    dlambda: &DVector<f64>,
    gamma: f64,
) -> f64 {
    let mut alpha = 1.0f64;
    for (i, row) in rows.iter().enumerate() {
        if dlambda[i] < 0.0 {
            alpha = alpha.min(gamma * (-lambda[i] / dlambda[i]));
        }
        let jd = row.apply(dtheta);
        if jd > 0.0 {
            alpha = alpha.min(gamma * (-row.eval(theta) / jd));
        }
    }
    alpha
}

fn kkt_metrics(
    nlp: &dyn Nlp,
    theta: &DVector<f64>,
    nu: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<(f64, f64, f64)> {
    let f = nlp.eval_f(theta)?;
    let jf = nlp.jac_f(theta)?;
    let p = nlp.eval_p(theta)?;
    let jp = nlp.jac_p(theta)?;
    let mut stat = jf.transpose() * f;
    if nu.len() > 0 {
        stat += jp.transpose() * nu;
    }
    let mut compl = 0.0f64;
    for (i, row) in nlp.bound_rows().iter().enumerate() {
        stat[row.var] += row.sign * lambda[i];
        compl = compl.max((lambda[i] * row.eval(theta)).abs());
    }
    let r_eq_inf = if p.len() > 0 { p.amax() } else { 0.0 };
    let r_dual_inf = if stat.len() > 0 { stat.amax() } else { 0.0 };
    Ok((r_eq_inf, r_dual_inf, compl))
}

/// Run the fixed-iteration primal-dual IPM.
pub fn ipm_solve(
    nlp: &dyn Nlp,
    pattern: &Arc<BlockPattern>,
    cfg: &IpmConfig,
    solver: &dyn KktSolver,
    init: Option<IpmInit>,
) -> Result<IpmResult> {
    let rows = nlp.bound_rows();
    let n_ineq = rows.len();

    let (mut theta, mut nu, mut lambda) = match init {
        Some(w) => (w.theta, w.nu, w.lambda),
        None => (
            nlp.interior_point()?,
            DVector::zeros(nlp.num_eq()),
            DVector::from_element(n_ineq, 1.0),
        ),
    };
    check_strict_feasibility(rows, &theta, &lambda)?;

    let mut log = Vec::with_capacity(cfg.n_iter);
    for it in 0..cfg.n_iter {
        let g = eval_bounds(rows, &theta);
        let mu = if n_ineq == 0 {
            0.0
        } else {
            let gap = -lambda.dot(&g);
            match cfg.mu_mode {
                MuMode::Averaged => cfg.sigma * gap / n_ineq as f64,
                MuMode::Unnormalized => cfg.sigma * gap,
            }
        };

        let (a, rhs) = assemble_kkt(nlp, pattern, &theta, &nu, &lambda, mu, cfg.delta)?;
        let (z, stats) = solver.solve(&a, &rhs)?;
        let (dtheta, dnu) = pattern.ordering.unpack(&z);
        let dlambda = recover_dlambda(rows, &theta, &lambda, mu, &dtheta);
        let alpha = fraction_to_boundary(rows, &theta, &lambda, &dtheta, &dlambda, cfg.gamma);

        theta.axpy(alpha, &dtheta, 1.0);
        nu.axpy(alpha, &dnu, 1.0);
        lambda.axpy(alpha, &dlambda, 1.0);

        let (r_eq_inf, r_dual_inf, compl) = kkt_metrics(nlp, &theta, &nu, &lambda)?;
        log.push(IterRow {
            iter: it + 1,
            mu,
            alpha,
            r_eq_inf,
            r_dual_inf,
            compl,
            minres_relres: stats.map_or(0.0, |s| s.final_relres),
        });
        if let Some(tol) = cfg.exit_tol {
            if r_eq_inf <= tol && r_dual_inf <= tol && compl <= tol {
                break;
            }
        }
    }

    let last = log.last().copied();
    Ok(IpmResult {
        theta,
        nu,
        lambda,
        r_eq_inf: last.map_or(0.0, |r| r.r_eq_inf),
        r_dual_inf: last.map_or(0.0, |r| r.r_dual_inf),
        compl: last.map_or(0.0, |r| r.compl),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kkt::{pattern_from_nlp, PatternOptions};
    use crate::nlp::SimpleNlp;
    use nalgebra::DMatrix;

    fn solve_simple(nlp: &SimpleNlp, cfg: &IpmConfig, dense: bool) -> IpmResult {
        let pattern = Arc::new(pattern_from_nlp(nlp, PatternOptions::default()).unwrap());
        if dense {
            ipm_solve(nlp, &pattern, cfg, &DenseLuKktSolver, None).unwrap()
        } else {
            ipm_solve(nlp, &pattern, cfg, &MinresKktSolver(cfg.minres), None).unwrap()
        }
    }

    #[test]
    fn unconstrained_scalar_reaches_minimum() {
        // min 0.5 (theta - 3)^2 with huge box bounds.
        let nlp = SimpleNlp::least_squares(
            1,
            Box::new(|t| DVector::from_vec(vec![t[0] - 3.0])),
            Box::new(|_| DMatrix::from_vec(1, 1, vec![1.0])),
            vec![
                crate::nlp::BoundRow { var: 0, sign: 1.0, offset: 1e6 },
                crate::nlp::BoundRow { var: 0, sign: -1.0, offset: 1e6 },
            ],
            DVector::zeros(1),
        );
        let cfg = IpmConfig::default();
        for dense in [true, false] {
            let res = solve_simple(&nlp, &cfg, dense);
            assert!((res.theta[0] - 3.0).abs() <= 1e-6, "theta = {}", res.theta[0]);
        }
    }

    #[test]
    fn active_bound_finds_primal_dual_pair() {
        // min 0.5 theta^2 s.t. theta >= 1: solution (theta, lambda) = (1, 1).
        let nlp = SimpleNlp::least_squares(
            1,
            Box::new(|t| DVector::from_vec(vec![t[0]])),
            Box::new(|_| DMatrix::from_vec(1, 1, vec![1.0])),
            vec![crate::nlp::BoundRow { var: 0, sign: -1.0, offset: -1.0 }],
            DVector::from_vec(vec![2.0]),
        );
        let cfg = IpmConfig::default();
        for dense in [true, false] {
            let res = solve_simple(&nlp, &cfg, dense);
            assert_eq!(res.log.len(), 15);
            assert!((res.theta[0] - 1.0).abs() <= 1e-4, "theta = {}", res.theta[0]);
            assert!((res.lambda[0] - 1.0).abs() <= 1e-4, "lambda = {}", res.lambda[0]);
        }
    }

    #[test]
    fn equality_qp_is_exact_after_one_newton_step() {
        // min 0.5 ||theta||^2 s.t. theta_0 + theta_1 = 1.
        let nlp = SimpleNlp {
            num_vars: 2,
            num_eq: 1,
            f: Box::new(|t| t.clone()),
            jf: Box::new(|_| DMatrix::identity(2, 2)),
            p: Box::new(|t| DVector::from_vec(vec![t[0] + t[1] - 1.0])),
            jp: Box::new(|_| DMatrix::from_vec(1, 2, vec![1.0, 1.0])),
            bounds: vec![],
            start: DVector::zeros(2),
        };
        let cfg = IpmConfig { n_iter: 1, ..Default::default() };
        let res = solve_simple(&nlp, &cfg, true);
        assert!((res.theta[0] - 0.5).abs() < 1e-12);
        assert!((res.theta[1] - 0.5).abs() < 1e-12);
        assert!((res.nu[0] + 0.5).abs() < 1e-12);
        assert!(res.r_eq_inf < 1e-12);
    }

    #[test]
    fn fraction_to_boundary_hand_value() {
        let rows = [crate::nlp::BoundRow { var: 0, sign: 1.0, offset: 1.0 }];
        let theta = DVector::from_vec(vec![0.0]);
        let lambda = DVector::from_vec(vec![1.0]);
        let dtheta = DVector::from_vec(vec![0.0]);
        let dlambda = DVector::from_vec(vec![-2.0]);
        let alpha = fraction_to_boundary(&rows, &theta, &lambda, &dtheta, &dlambda, 0.995);
        assert!((alpha - 0.4975).abs() < 1e-12);
    }

    #[test]
    fn dlambda_satisfies_linearized_complementarity() {
        let rows = [crate::nlp::BoundRow { var: 0, sign: 1.0, offset: 2.0 }];
        let theta = DVector::from_vec(vec![0.5]);
        let lambda = DVector::from_vec(vec![0.7]);
        let dtheta = DVector::from_vec(vec![0.3]);
        let mu = 0.05;
        let dl = recover_dlambda(&rows, &theta, &lambda, mu, &dtheta);
        // Linearized complementarity: g dlambda + lambda (J dtheta) + lambda g = -mu.
        let g = rows[0].eval(&theta);
        let lhs = g * dl[0] + lambda[0] * rows[0].apply(&dtheta) + lambda[0] * g;
        assert!((lhs + mu).abs() < 1e-14);
    }
}
