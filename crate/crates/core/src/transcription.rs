//! Direct transcription of the continuous OCP into a least-squares NLP.
//!
//! The decision vector is ordered stage-wise,
//! `theta = [x_0 u_0 r_0 s_0 ... x_{N-1} u_{N-1} r_{N-1} s_{N-1} x_N s_T]`,
//! where `r_k` stacks the integrator stage derivatives. Integrator defects are
//! kept as plain equality constraints; no inner solve happens for implicit
//! tableaus.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::OdeModel;
use crate::nlp::{BlockSpan, BlockStructure, BoundRow, Nlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableauKind {
    ExplicitEuler,
    Trapezoidal,
    Rk4,
    ImplicitMidpoint,
}

#[derive(Debug, Clone)]
pub struct ButcherTableau {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
}

impl ButcherTableau {
    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn is_explicit(&self) -> bool {
        let l = self.stages();
        (0..l).all(|i| (i..l).all(|j| self.a[(i, j)] == 0.0))
    }

    /// Consistency: weights sum to one, nodes match row sums of A.
    pub fn validate(&self) -> Result<()> {
        let l = self.stages();
        if self.a.nrows() != l || self.a.ncols() != l || self.c.len() != l {
            return Err(Error::Config("Butcher tableau dimensions are inconsistent".into()));
        }
        if (self.b.sum() - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("tableau weights sum to {}, not 1", self.b.sum())));
        }
        for i in 0..l {
            if (self.a.row(i).sum() - self.c[i]).abs() > 1e-12 {
                return Err(Error::Config(format!("tableau node c[{i}] does not match row sum")));
            }
        }
        Ok(())
    }
}

pub fn make_tableau(kind: TableauKind) -> ButcherTableau {
    let t = match kind {
        TableauKind::ExplicitEuler => ButcherTableau {
            a: DMatrix::zeros(1, 1),
            b: DVector::from_vec(vec![1.0]),
            c: DVector::from_vec(vec![0.0]),
        },
        TableauKind::Trapezoidal => ButcherTableau {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 0.5]),
            b: DVector::from_vec(vec![0.5, 0.5]),
            c: DVector::from_vec(vec![0.0, 1.0]),
        },
        TableauKind::Rk4 => ButcherTableau {
            a: DMatrix::from_row_slice(
                4,
                4,
                &[
                    0.0, 0.0, 0.0, 0.0, //
                    0.5, 0.0, 0.0, 0.0, //
                    0.0, 0.5, 0.0, 0.0, //
                    0.0, 0.0, 1.0, 0.0,
                ],
            ),
            b: DVector::from_vec(vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0]),
            c: DVector::from_vec(vec![0.0, 0.5, 0.5, 1.0]),
        },
        TableauKind::ImplicitMidpoint => ButcherTableau {
            a: DMatrix::from_element(1, 1, 0.5),
            b: DVector::from_vec(vec![1.0]),
            c: DVector::from_vec(vec![0.5]),
        },
    };
    debug_assert!(t.validate().is_ok());
    t
}

/// One-step prediction and integrator defects for stage values `r_k`.
///
/// `defects_i = r_k^(i) - f_c(x_k + T_s sum_j A_ij r_k^(j), u_k)` and
/// `x_next_pred = x_k + T_s sum_i b_i r_k^(i)`.
pub fn stage_residual(
    tableau: &ButcherTableau,
    model: &dyn OdeModel,
    x_k: &DVector<f64>,
    u_k: &DVector<f64>,
    r_k: &DVector<f64>,
    t_s: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = model.dim_state();
    let l = tableau.stages();
    if r_k.len() != n * l {
        return Err(Error::DimensionMismatch {
            what: "stage vector r_k".into(),
            expected: n * l,
            got: r_k.len(),
        });
    }
    let stage = |i: usize| r_k.rows(i * n, n);
    let mut defects = DVector::zeros(n * l);
    for i in 0..l {
        let mut xi = x_k.clone();
        for j in 0..l {
            let aij = tableau.a[(i, j)];
            if aij != 0.0 {
                xi += t_s * aij * stage(j);
            }
        }
        let fi = model.rhs(&xi, u_k)?;
        defects.rows_mut(i * n, n).copy_from(&(stage(i) - fi));
    }
    let mut x_next = x_k.clone();
    for i in 0..l {
        x_next += t_s * tableau.b[i] * stage(i);
    }
    Ok((x_next, defects))
}

/// Box bounds with +/- infinity encoding absent sides.
#[derive(Debug, Clone)]
pub struct BoxBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxBounds {
    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: DVector::from_element(dim, f64::NEG_INFINITY),
            upper: DVector::from_element(dim, f64::INFINITY),
        }
    }

    pub fn symmetric(dim: usize, limit: f64) -> Self {
        Self {
            lower: DVector::from_element(dim, -limit),
            upper: DVector::from_element(dim, limit),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn validate(&self, what: &str) -> Result<()> {
        for i in 0..self.dim() {
            if self.lower[i] > self.upper[i] {
                return Err(Error::Config(format!(
                    "{what}: lower bound {} exceeds upper bound {} at index {i}",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }

    /// Midpoint of finite bounds, 0 when unbounded, nudged strictly inside
    /// one-sided boxes.
    pub fn interior_value(&self, i: usize) -> Result<f64> {
        let (lo, hi) = (self.lower[i], self.upper[i]);
        if lo >= hi {
            return Err(Error::Infeasible(format!("empty interior: [{lo}, {hi}]")));
        }
        Ok(match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo + 1.0,
            (false, true) => hi - 1.0,
            (false, false) => 0.0,
        })
    }

    /// Clip `v` strictly inside the box (margin relative to box width).
    pub fn clip_interior(&self, i: usize, v: f64) -> Result<f64> {
        let (lo, hi) = (self.lower[i], self.upper[i]);
        if lo >= hi {
            return Err(Error::Infeasible(format!("empty interior: [{lo}, {hi}]")));
        }
        let margin = if lo.is_finite() && hi.is_finite() {
            1e-3 * (hi - lo)
        } else {
            1e-3 * (1.0 + v.abs())
        };
        let mut out = v;
        if lo.is_finite() && out <= lo {
            out = lo + margin;
        }
        if hi.is_finite() && out >= hi {
            out = hi - margin;
        }
        Ok(out)
    }
}

type StageFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type StageJacFn = Box<
    dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)
        + Send
        + Sync,
>;
type TermFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type TermJacFn =
    Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) + Send + Sync>;

/// Stage-wise residual `h(x, u, s)` (or slack equality `q`) with Jacobians
/// w.r.t. `(x, u, s)`.
pub struct StageResidual {
    pub dim: usize,
    pub eval: StageFn,
    pub jac: StageJacFn,
}

/// Terminal residual `h_T(x_N, s_T)` (or `q_T`) with Jacobians.
pub struct TerminalResidual {
    pub dim: usize,
    pub eval: TermFn,
    pub jac: TermJacFn,
}

/// Discrete OCP specification (horizon, sampling time, residuals, bounds).
pub struct OcpSpec {
    pub horizon: usize,
    pub t_s: f64,
    pub x_hat: DVector<f64>,
    pub n_slack: usize,
    pub n_slack_term: usize,
    pub h: StageResidual,
    pub h_term: TerminalResidual,
    pub q: Option<StageResidual>,
    pub q_term: Option<TerminalResidual>,
    pub x_bounds: BoxBounds,
    pub u_bounds: BoxBounds,
    pub s_bounds: BoxBounds,
    pub x_term_bounds: BoxBounds,
    pub s_term_bounds: BoxBounds,
}

/// Stage-wise offsets of the decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaLayout {
    pub n: usize,
    pub m: usize,
    pub stages: usize,
    pub n_slack: usize,
    pub n_slack_term: usize,
    pub horizon: usize,
}

impl ThetaLayout {
    /// Variables per non-terminal stage: x, u, r, s.
    pub fn stage_len(&self) -> usize {
        self.n + self.m + self.n * self.stages + self.n_slack
    }

    pub fn x_offset(&self, k: usize) -> usize {
        if k == self.horizon {
            self.horizon * self.stage_len()
        } else {
            k * self.stage_len()
        }
    }

    pub fn u_offset(&self, k: usize) -> usize {
        self.x_offset(k) + self.n
    }

    pub fn r_offset(&self, k: usize) -> usize {
        self.u_offset(k) + self.m
    }

    pub fn s_offset(&self, k: usize) -> usize {
        self.r_offset(k) + self.n * self.stages
    }

    pub fn s_term_offset(&self) -> usize {
        self.x_offset(self.horizon) + self.n
    }

    pub fn n_theta(&self) -> usize {
        self.horizon * self.stage_len() + self.n + self.n_slack_term
    }
}

/// The transcribed NLP: objective residual `f`, equality stack `p`, bound
/// rows `(J, d)` and the stage-block structure used by the KKT assembly.
pub struct NlpProblem {
    pub model: Box<dyn OdeModel>,
    pub tableau: ButcherTableau,
    pub spec: OcpSpec,
    pub layout: ThetaLayout,
    bounds: Vec<BoundRow>,
    n_q: usize,
    n_q_term: usize,
}

impl NlpProblem {
    /// Equality rows per non-terminal stage: state update + defects + q.
    fn stage_eq_len(&self) -> usize {
        let n = self.layout.n;
        n + n * self.layout.stages + self.n_q
    }

    fn eq_offset(&self, k: usize) -> usize {
        self.layout.n + k * self.stage_eq_len()
    }

    pub fn num_bounds(&self) -> usize {
        self.bounds.len()
    }

    /// Update the measured initial state between MPC samples.
    pub fn set_x_hat(&mut self, x_hat: DVector<f64>) -> Result<()> {
        if x_hat.len() != self.layout.n {
            return Err(Error::DimensionMismatch {
                what: "x_hat".into(),
                expected: self.layout.n,
                got: x_hat.len(),
            });
        }
        self.spec.x_hat = x_hat;
        Ok(())
    }

    fn stage_parts<'a>(
        &self,
        theta: &'a DVector<f64>,
        k: usize,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
        let l = &self.layout;
        let x = theta.rows(l.x_offset(k), l.n).into_owned();
        let u = theta.rows(l.u_offset(k), l.m).into_owned();
        let r = theta.rows(l.r_offset(k), l.n * l.stages).into_owned();
        let s = theta.rows(l.s_offset(k), l.n_slack).into_owned();
        (x, u, r, s)
    }
}

/// Assemble the NLP from an OCP spec, model and integrator tableau.
pub fn build_nlp(spec: OcpSpec, model: Box<dyn OdeModel>, tableau: ButcherTableau) -> Result<NlpProblem> {
    tableau.validate()?;
    let n = model.dim_state();
    let m = model.dim_input();
    if spec.horizon == 0 {
        return Err(Error::Config("horizon N must be >= 1".into()));
    }
    if !(spec.t_s > 0.0) {
        return Err(Error::Config(format!("sampling time T_s must be > 0, got {}", spec.t_s)));
    }
    if spec.x_hat.len() != n {
        return Err(Error::DimensionMismatch {
            what: "x_hat".into(),
            expected: n,
            got: spec.x_hat.len(),
        });
    }
    for (what, bounds, dim) in [
        ("x_bounds", &spec.x_bounds, n),
        ("u_bounds", &spec.u_bounds, m),
        ("s_bounds", &spec.s_bounds, spec.n_slack),
        ("x_term_bounds", &spec.x_term_bounds, n),
        ("s_term_bounds", &spec.s_term_bounds, spec.n_slack_term),
    ] {
        if bounds.dim() != dim {
            return Err(Error::DimensionMismatch {
                what: what.into(),
                expected: dim,
                got: bounds.dim(),
            });
        }
        bounds.validate(what)?;
    }
    if spec.q.is_none() && spec.n_slack > 0 {
        return Err(Error::Config("slack variables declared without a q residual".into()));
    }

    let layout = ThetaLayout {
        n,
        m,
        stages: tableau.stages(),
        n_slack: spec.n_slack,
        n_slack_term: spec.n_slack_term,
        horizon: spec.horizon,
    };

    let n_q = spec.q.as_ref().map_or(0, |q| q.dim);
    let n_q_term = spec.q_term.as_ref().map_or(0, |q| q.dim);

    // Bound rows in theta order: upper then lower per finite-bounded variable.
    let mut bounds = Vec::new();
    let push_box = |rows: &mut Vec<BoundRow>, offset: usize, b: &BoxBounds| {
        for i in 0..b.dim() {
            if b.upper[i].is_finite() {
                rows.push(BoundRow { var: offset + i, sign: 1.0, offset: b.upper[i] });
            }
            if b.lower[i].is_finite() {
                rows.push(BoundRow { var: offset + i, sign: -1.0, offset: -b.lower[i] });
            }
        }
    };
    for k in 0..spec.horizon {
        push_box(&mut bounds, layout.x_offset(k), &spec.x_bounds);
        push_box(&mut bounds, layout.u_offset(k), &spec.u_bounds);
        push_box(&mut bounds, layout.s_offset(k), &spec.s_bounds);
    }
    push_box(&mut bounds, layout.x_offset(spec.horizon), &spec.x_term_bounds);
    push_box(&mut bounds, layout.s_term_offset(), &spec.s_term_bounds);

    let nlp = NlpProblem { model, tableau, spec, layout, bounds, n_q, n_q_term };

    // Probe residual dimensions once so mismatches fail at build time.
    let theta0 = nlp.interior_point()?;
    let f0 = nlp.eval_f(&theta0)?;
    let expected_f = nlp.spec.horizon * nlp.spec.h.dim + nlp.spec.h_term.dim;
    if f0.len() != expected_f {
        return Err(Error::DimensionMismatch {
            what: "stacked objective residual f".into(),
            expected: expected_f,
            got: f0.len(),
        });
    }
    Ok(nlp)
}

impl Nlp for NlpProblem {
    fn num_vars(&self) -> usize {
        self.layout.n_theta()
    }

    fn num_eq(&self) -> usize {
        self.layout.n + self.spec.horizon * self.stage_eq_len() + self.n_q_term
    }

    fn eval_f(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let spec = &self.spec;
        let mut out = DVector::zeros(spec.horizon * spec.h.dim + spec.h_term.dim);
        let w = spec.t_s.sqrt();
        for k in 0..spec.horizon {
            let (x, u, _r, s) = self.stage_parts(theta, k);
            let hk = (spec.h.eval)(&x, &u, &s);
            if hk.len() != spec.h.dim {
                return Err(Error::DimensionMismatch {
                    what: "h".into(),
                    expected: spec.h.dim,
                    got: hk.len(),
                });
            }
            out.rows_mut(k * spec.h.dim, spec.h.dim).copy_from(&(w * hk));
        }
        let x_n = theta.rows(self.layout.x_offset(spec.horizon), self.layout.n).into_owned();
        let s_t = theta.rows(self.layout.s_term_offset(), self.layout.n_slack_term).into_owned();
        let ht = (spec.h_term.eval)(&x_n, &s_t);
        if ht.len() != spec.h_term.dim {
            return Err(Error::DimensionMismatch {
                what: "h_T".into(),
                expected: spec.h_term.dim,
                got: ht.len(),
            });
        }
        out.rows_mut(spec.horizon * spec.h.dim, spec.h_term.dim).copy_from(&ht);
        Ok(out)
    }

    fn eval_p(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let spec = &self.spec;
        let l = &self.layout;
        let n = l.n;
        let mut out = DVector::zeros(self.num_eq());

        // Initial condition written as x_hat - x_0 so its Jacobian is -I,
        // matching the identity-coupling convention of the KKT blocks.
        let x0 = theta.rows(l.x_offset(0), n);
        out.rows_mut(0, n).copy_from(&(&spec.x_hat - x0));

        for k in 0..spec.horizon {
            let (x, u, r, s) = self.stage_parts(theta, k);
            let (x_next_pred, defects) =
                stage_residual(&self.tableau, self.model.as_ref(), &x, &u, &r, spec.t_s)?;
            let x_next = theta.rows(l.x_offset(k + 1), n).into_owned();
            let off = self.eq_offset(k);
            out.rows_mut(off, n).copy_from(&(x_next_pred - x_next));
            out.rows_mut(off + n, n * l.stages).copy_from(&defects);
            if let Some(q) = &spec.q {
                let qk = (q.eval)(&x, &u, &s);
                out.rows_mut(off + n + n * l.stages, q.dim).copy_from(&qk);
            }
        }
        if let Some(qt) = &spec.q_term {
            let x_n = theta.rows(l.x_offset(spec.horizon), n).into_owned();
            let s_t = theta.rows(l.s_term_offset(), l.n_slack_term).into_owned();
            let v = (qt.eval)(&x_n, &s_t);
            out.rows_mut(self.eq_offset(spec.horizon), qt.dim).copy_from(&v);
        }
        Ok(out)
    }

    fn jac_f(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let spec = &self.spec;
        let l = &self.layout;
        let mut j = DMatrix::zeros(spec.horizon * spec.h.dim + spec.h_term.dim, self.num_vars());
        let w = spec.t_s.sqrt();
        for k in 0..spec.horizon {
            let (x, u, _r, s) = self.stage_parts(theta, k);
            let (jx, ju, js) = (spec.h.jac)(&x, &u, &s);
            let row = k * spec.h.dim;
            j.view_mut((row, l.x_offset(k)), (spec.h.dim, l.n)).copy_from(&(w * jx));
            j.view_mut((row, l.u_offset(k)), (spec.h.dim, l.m)).copy_from(&(w * ju));
            if l.n_slack > 0 {
                j.view_mut((row, l.s_offset(k)), (spec.h.dim, l.n_slack)).copy_from(&(w * js));
            }
        }
        let x_n = theta.rows(l.x_offset(spec.horizon), l.n).into_owned();
        let s_t = theta.rows(l.s_term_offset(), l.n_slack_term).into_owned();
        let (jx, js) = (spec.h_term.jac)(&x_n, &s_t);
        let row = spec.horizon * spec.h.dim;
        j.view_mut((row, l.x_offset(spec.horizon)), (spec.h_term.dim, l.n)).copy_from(&jx);
        if l.n_slack_term > 0 {
            j.view_mut((row, l.s_term_offset()), (spec.h_term.dim, l.n_slack_term)).copy_from(&js);
        }
        Ok(j)
    }

    fn jac_p(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let spec = &self.spec;
        let l = &self.layout;
        let n = l.n;
        let stages = l.stages;
        let t_s = spec.t_s;
        let mut j = DMatrix::zeros(self.num_eq(), self.num_vars());

        for i in 0..n {
            j[(i, l.x_offset(0) + i)] = -1.0;
        }

        for k in 0..spec.horizon {
            let (x, u, r, s) = self.stage_parts(theta, k);
            let off = self.eq_offset(k);

            // State update rows: I on x_k, T_s b_i I on r_i, -I on x_{k+1}.
            for i in 0..n {
                j[(off + i, l.x_offset(k) + i)] = 1.0;
                j[(off + i, l.x_offset(k + 1) + i)] = -1.0;
                for st in 0..stages {
                    j[(off + i, l.r_offset(k) + st * n + i)] = t_s * self.tableau.b[st];
                }
            }

            // Defect rows for each integrator stage.
            for i in 0..stages {
                let mut xi = x.clone();
                for jj in 0..stages {
                    let aij = self.tableau.a[(i, jj)];
                    if aij != 0.0 {
                        xi += t_s * aij * r.rows(jj * n, n);
                    }
                }
                let jx = self.model.jac_x(&xi, &u)?;
                let ju = self.model.jac_u(&xi, &u)?;
                let row = off + n + i * n;
                j.view_mut((row, l.x_offset(k)), (n, n)).copy_from(&(-&jx));
                j.view_mut((row, l.u_offset(k)), (n, l.m)).copy_from(&(-&ju));
                for jj in 0..stages {
                    let col = l.r_offset(k) + jj * n;
                    let aij = self.tableau.a[(i, jj)];
                    if aij != 0.0 {
                        let mut v = j.view_mut((row, col), (n, n));
                        v.copy_from(&(-t_s * aij * &jx));
                    }
                    if jj == i {
                        for d in 0..n {
                            j[(row + d, col + d)] += 1.0;
                        }
                    }
                }
            }

            if let Some(q) = &spec.q {
                let (qx, qu, qs) = (q.jac)(&x, &u, &s);
                let row = off + n + stages * n;
                j.view_mut((row, l.x_offset(k)), (q.dim, n)).copy_from(&qx);
                j.view_mut((row, l.u_offset(k)), (q.dim, l.m)).copy_from(&qu);
                if l.n_slack > 0 {
                    j.view_mut((row, l.s_offset(k)), (q.dim, l.n_slack)).copy_from(&qs);
                }
            }
        }

        if let Some(qt) = &spec.q_term {
            let x_n = theta.rows(l.x_offset(spec.horizon), n).into_owned();
            let s_t = theta.rows(l.s_term_offset(), l.n_slack_term).into_owned();
            let (qx, qs) = (qt.jac)(&x_n, &s_t);
            let row = self.eq_offset(spec.horizon);
            j.view_mut((row, l.x_offset(spec.horizon)), (qt.dim, n)).copy_from(&qx);
            if l.n_slack_term > 0 {
                j.view_mut((row, l.s_term_offset()), (qt.dim, l.n_slack_term)).copy_from(&qs);
            }
        }
        Ok(j)
    }

    fn bound_rows(&self) -> &[BoundRow] {
        &self.bounds
    }

    fn structure(&self) -> BlockStructure {
        let l = &self.layout;
        let n = l.n;
        let ne = self.stage_eq_len();
        let mut blocks = Vec::with_capacity(self.spec.horizon + 1);
        let mut couplings = Vec::new();

        // Initial-condition rows couple to the x_0 columns of block 0.
        for i in 0..n {
            couplings.push((i, l.x_offset(0) + i));
        }
        for k in 0..self.spec.horizon {
            blocks.push(BlockSpan {
                vars: l.x_offset(k)..l.x_offset(k) + l.stage_len(),
                eqs: self.eq_offset(k)..self.eq_offset(k) + ne,
            });
            // State-update rows couple to the x_{k+1} columns of the next block.
            for i in 0..n {
                couplings.push((self.eq_offset(k) + i, l.x_offset(k + 1) + i));
            }
        }
        blocks.push(BlockSpan {
            vars: l.x_offset(self.spec.horizon)..self.num_vars(),
            eqs: self.eq_offset(self.spec.horizon)..self.num_eq(),
        });
        BlockStructure { leading_eqs: 0..n, blocks, couplings }
    }

    fn interior_point(&self) -> Result<DVector<f64>> {
        let spec = &self.spec;
        let l = &self.layout;
        let n = l.n;
        let mut theta = DVector::zeros(self.num_vars());

        let mut x_init = spec.x_hat.clone();
        for i in 0..n {
            x_init[i] = spec.x_bounds.clip_interior(i, x_init[i])?;
        }
        let mut u_init = DVector::zeros(l.m);
        for i in 0..l.m {
            u_init[i] = spec.u_bounds.interior_value(i)?;
        }
        let mut s_init = DVector::zeros(l.n_slack);
        for i in 0..l.n_slack {
            s_init[i] = spec.s_bounds.clip_interior(i, 0.0)?;
        }

        // Stage derivatives: start every stage at f_c(x, u), then one sweep of
        // r_i = f_c(x + T_s sum_j A_ij r_j, u) as an explicit estimate.
        let f0 = self.model.rhs(&x_init, &u_init)?;
        let mut r_init = DVector::zeros(n * l.stages);
        for i in 0..l.stages {
            r_init.rows_mut(i * n, n).copy_from(&f0);
        }
        for i in 0..l.stages {
            let mut xi = x_init.clone();
            for jj in 0..l.stages {
                let aij = self.tableau.a[(i, jj)];
                if aij != 0.0 {
                    xi += spec.t_s * aij * r_init.rows(jj * n, n);
                }
            }
            let fi = self.model.rhs(&xi, &u_init)?;
            r_init.rows_mut(i * n, n).copy_from(&fi);
        }

        for k in 0..spec.horizon {
            theta.rows_mut(l.x_offset(k), n).copy_from(&x_init);
            theta.rows_mut(l.u_offset(k), l.m).copy_from(&u_init);
            theta.rows_mut(l.r_offset(k), n * l.stages).copy_from(&r_init);
            if l.n_slack > 0 {
                theta.rows_mut(l.s_offset(k), l.n_slack).copy_from(&s_init);
            }
        }
        let mut x_term = spec.x_hat.clone();
        for i in 0..n {
            x_term[i] = spec.x_term_bounds.clip_interior(i, x_term[i])?;
        }
        theta.rows_mut(l.x_offset(spec.horizon), n).copy_from(&x_term);
        for i in 0..l.n_slack_term {
            theta[l.s_term_offset() + i] = spec.s_term_bounds.clip_interior(i, 0.0)?;
        }

        for (i, row) in self.bounds.iter().enumerate() {
            let g = row.eval(&theta);
            if !(g < 0.0) {
                return Err(Error::Infeasible(format!(
                    "no strictly interior point: bound row {i} gives g = {g}"
                )));
            }
        }
        Ok(theta)
    }
}
