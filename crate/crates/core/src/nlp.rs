//! Generic least-squares NLP interface consumed by the interior-point solver.
//!
//! The problem is `min 0.5 ||f(theta)||^2  s.t.  p(theta) = 0, J theta - d < 0`
//! where every inequality row selects a single variable with a +/-1 entry.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One bound row of `J theta - d <= 0`: `g = sign * theta[var] - offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub var: usize,
    /// +1.0 for an upper bound, -1.0 for a lower bound.
    pub sign: f64,
    pub offset: f64,
}

impl BoundRow {
    pub fn eval(&self, theta: &DVector<f64>) -> f64 {
        self.sign * theta[self.var] - self.offset
    }

    /// `(J v)_i` for this row.
    pub fn apply(&self, v: &DVector<f64>) -> f64 {
        self.sign * v[self.var]
    }
}

/// Variable/equality spans of one KKT block in natural (theta, p) indexing.
#[derive(Debug, Clone)]
pub struct BlockSpan {
    pub vars: std::ops::Range<usize>,
    pub eqs: std::ops::Range<usize>,
}

/// How the NLP decomposes into repeated KKT blocks coupled by identities.
///
/// `leading_eqs` are equality rows that precede the first block (the initial
/// condition for transcribed OCPs) and appear in the KKT matrix only through
/// coupling links. `couplings` lists (equality row, variable column) pairs
/// whose Jacobian entry is a -1 bridging two different blocks.
#[derive(Debug, Clone)]
pub struct BlockStructure {
    pub leading_eqs: std::ops::Range<usize>,
    pub blocks: Vec<BlockSpan>,
    pub couplings: Vec<(usize, usize)>,
}

impl BlockStructure {
    /// Single dense block covering everything; no couplings.
    pub fn monolithic(num_vars: usize, num_eq: usize) -> Self {
        Self {
            leading_eqs: 0..0,
            blocks: vec![BlockSpan { vars: 0..num_vars, eqs: 0..num_eq }],
            couplings: Vec::new(),
        }
    }
}

pub trait Nlp: Send + Sync {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn eval_f(&self, theta: &DVector<f64>) -> Result<DVector<f64>>;
    fn eval_p(&self, theta: &DVector<f64>) -> Result<DVector<f64>>;
    fn jac_f(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>>;
    fn jac_p(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>>;
    fn bound_rows(&self) -> &[BoundRow];
    fn structure(&self) -> BlockStructure;
    /// A strictly feasible point used for initialization and sparsity probing.
    fn interior_point(&self) -> Result<DVector<f64>>;
}

/// `g(theta) = J theta - d` stacked over all bound rows.
pub fn eval_bounds(rows: &[BoundRow], theta: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|r| r.eval(theta)))
}

pub fn check_strict_feasibility(
    rows: &[BoundRow],
    theta: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<()> {
    if lambda.len() != rows.len() {
        return Err(Error::DimensionMismatch {
            what: "lambda".into(),
            expected: rows.len(),
            got: lambda.len(),
        });
    }
    for (i, r) in rows.iter().enumerate() {
        let g = r.eval(theta);
        if !(g < 0.0) {
            return Err(Error::Infeasible(format!("g[{i}] = {g} is not < 0")));
        }
        if !(lambda[i] > 0.0) {
            return Err(Error::Infeasible(format!("lambda[{i}] = {} is not > 0", lambda[i])));
        }
    }
    Ok(())
}

type ResFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Hand-assembled NLP backed by closures. Used for small library problems and
/// solver tests that do not come from an OCP transcription.
pub struct SimpleNlp {
    pub num_vars: usize,
    pub num_eq: usize,
    pub f: ResFn,
    pub jf: JacFn,
    pub p: ResFn,
    pub jp: JacFn,
    pub bounds: Vec<BoundRow>,
    pub start: DVector<f64>,
}

impl SimpleNlp {
    /// Unconstrained-style problem with residual `f` only (no equalities).
    pub fn least_squares(
        num_vars: usize,
        f: ResFn,
        jf: JacFn,
        bounds: Vec<BoundRow>,
        start: DVector<f64>,
    ) -> Self {
        Self {
            num_vars,
            num_eq: 0,
            f,
            jf,
            p: Box::new(|_| DVector::zeros(0)),
            jp: Box::new(move |_| DMatrix::zeros(0, num_vars)),
            bounds,
            start,
        }
    }
}

impl Nlp for SimpleNlp {
    fn num_vars(&self) -> usize {
        self.num_vars
    }

    fn num_eq(&self) -> usize {
        self.num_eq
    }

    fn eval_f(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok((self.f)(theta))
    }

    fn eval_p(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok((self.p)(theta))
    }

    fn jac_f(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok((self.jf)(theta))
    }

    fn jac_p(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok((self.jp)(theta))
    }

    fn bound_rows(&self) -> &[BoundRow] {
        &self.bounds
    }

    fn structure(&self) -> BlockStructure {
        BlockStructure::monolithic(self.num_vars, self.num_eq)
    }

    fn interior_point(&self) -> Result<DVector<f64>> {
        for (i, r) in self.bounds.iter().enumerate() {
            if !(r.eval(&self.start) < 0.0) {
                return Err(Error::Infeasible(format!("start violates bound row {i}")));
            }
        }
        Ok(self.start.clone())
    }
}
