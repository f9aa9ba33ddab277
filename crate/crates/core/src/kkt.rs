//! Block-sparse KKT matrix: repeated stage blocks holding `[H_i; dF_i]`,
//! coupled across sampling instants by negative identity links.
//!
//! Only the lower triangle of each block is stored. The matrix-vector product
//! runs in two phases: a coupling pass of signed (or diagonally scaled)
//! transfers, then independent symmetric MAC sweeps per block.

use std::collections::HashSet;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::nlp::{BlockSpan, Nlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingKind {
    /// Plain -1 identity bridges (the unscaled KKT matrix).
    NegIdentity,
    /// General diagonal links (after symmetric prescaling).
    Diagonal,
}

/// Permutation between natural `(theta, p)` indexing and the block-interleaved
/// KKT ordering `[leading duals | block 0 vars, block 0 duals | ...]`.
#[derive(Debug, Clone)]
pub struct KktOrdering {
    pub var_to_kkt: Vec<usize>,
    pub eq_to_kkt: Vec<usize>,
    pub n_total: usize,
}

impl KktOrdering {
    /// Permute `(r_dual, r_eq)` in natural order into a KKT-ordered vector.
    pub fn pack(&self, r_dual: &DVector<f64>, r_eq: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_total);
        for (i, &k) in self.var_to_kkt.iter().enumerate() {
            out[k] = r_dual[i];
        }
        for (j, &k) in self.eq_to_kkt.iter().enumerate() {
            out[k] = r_eq[j];
        }
        out
    }

    /// Split a KKT-ordered solution into `(delta_theta, delta_nu)`.
    pub fn unpack(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let dtheta = DVector::from_iterator(self.var_to_kkt.len(), self.var_to_kkt.iter().map(|&k| z[k]));
        let dnu = DVector::from_iterator(self.eq_to_kkt.len(), self.eq_to_kkt.iter().map(|&k| z[k]));
        (dtheta, dnu)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PatternOptions {
    /// Force every block-diagonal entry into the pattern (required when
    /// Tikhonov regularization is enabled).
    pub include_diagonal: bool,
}

/// Sparsity structure of the KKT matrix: one shared lower-triangular
/// pattern for all stage blocks, an optional terminal block, and the global
/// coupling links.
#[derive(Debug, Clone)]
pub struct BlockPattern {
    /// Stage block dimension (primal variables + stage duals).
    pub n_b: usize,
    /// Lower-triangular block-local coordinates shared by all stage blocks.
    pub coords: Vec<(usize, usize)>,
    pub terminal_dim: usize,
    pub terminal_coords: Vec<(usize, usize)>,
    pub n_stage_blocks: usize,
    /// Leading coupling-only dual rows (the initial-condition constraint).
    pub leading: usize,
    /// Global (row, col) coupling positions; structurally -1 entries.
    pub couplings: Vec<(usize, usize)>,
    pub coupling_kind: CouplingKind,
    pub ordering: KktOrdering,

    blocks: Vec<BlockSpan>,
    leading_eqs: std::ops::Range<usize>,
    coord_set: HashSet<(usize, usize)>,
    terminal_coord_set: HashSet<(usize, usize)>,
    coupling_nat_set: HashSet<(usize, usize)>,
}

impl BlockPattern {
    /// Standalone symmetric sparse matrix: one block, no duals, no couplings.
    /// Used for library patterns (e.g. scheduling examples) and tests.
    pub fn single_block(dim: usize, mut coords: Vec<(usize, usize)>) -> Result<Self> {
        for &(i, j) in &coords {
            if i >= dim || j > i {
                return Err(Error::Config(format!(
                    "coordinate ({i},{j}) is not lower-triangular within dim {dim}"
                )));
            }
        }
        coords.sort_unstable();
        coords.dedup();
        Ok(Self {
            n_b: dim,
            coord_set: coords.iter().copied().collect(),
            coords,
            terminal_dim: 0,
            terminal_coords: Vec::new(),
            terminal_coord_set: HashSet::new(),
            n_stage_blocks: 1,
            leading: 0,
            couplings: Vec::new(),
            coupling_kind: CouplingKind::NegIdentity,
            ordering: KktOrdering {
                var_to_kkt: (0..dim).collect(),
                eq_to_kkt: Vec::new(),
                n_total: dim,
            },
            blocks: vec![BlockSpan { vars: 0..dim, eqs: 0..0 }],
            leading_eqs: 0..0,
            coupling_nat_set: HashSet::new(),
        })
    }

    pub fn n_total(&self) -> usize {
        self.ordering.n_total
    }

    /// Number of blocks processed by the MAC sweep (stages + terminal).
    pub fn n_blocks(&self) -> usize {
        self.n_stage_blocks + usize::from(self.terminal_dim > 0)
    }

    pub fn block_dim(&self, b: usize) -> usize {
        if b < self.n_stage_blocks {
            self.n_b
        } else {
            self.terminal_dim
        }
    }

    pub fn block_offset(&self, b: usize) -> usize {
        self.leading + b.min(self.n_stage_blocks) * self.n_b
    }

    pub fn block_coords(&self, b: usize) -> &[(usize, usize)] {
        if b < self.n_stage_blocks {
            &self.coords
        } else {
            &self.terminal_coords
        }
    }

    /// Primal-variable count of a stage block (the split between `H_i` rows
    /// and `dF_i` rows).
    pub fn stage_primal_dim(&self) -> usize {
        self.blocks[0].vars.len()
    }

    /// MAC operations of one stage block's symmetric sweep: every stored
    /// off-diagonal element expands into the two accumulations it performs.
    pub fn stage_matvec_ops(&self) -> Vec<(usize, usize)> {
        expand_symmetric_ops(&self.coords)
    }

    pub fn terminal_matvec_ops(&self) -> Vec<(usize, usize)> {
        expand_symmetric_ops(&self.terminal_coords)
    }

    /// Largest per-block MAC operation count (sets the pipeline schedule).
    pub fn max_block_ops(&self) -> usize {
        self.stage_matvec_ops().len().max(self.terminal_matvec_ops().len())
    }

    fn map_local(&self, b: usize, local: usize) -> NatIndex {
        let span = &self.blocks[b];
        let nv = span.vars.len();
        if local < nv {
            NatIndex::Var(span.vars.start + local)
        } else {
            NatIndex::Eq(span.eqs.start + (local - nv))
        }
    }

    /// CSV export: `block_id,row,col` per stored entry; coupling links use
    /// block_id -1 with global row/col.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("block_id,row,col\n");
        for b in 0..self.n_blocks() {
            for &(i, j) in self.block_coords(b) {
                out.push_str(&format!("{b},{i},{j}\n"));
            }
        }
        for &(r, c) in &self.couplings {
            out.push_str(&format!("-1,{r},{c}\n"));
        }
        out
    }
}

fn expand_symmetric_ops(coords: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut ops = Vec::with_capacity(coords.len() * 2);
    for &(i, j) in coords {
        ops.push((i, j));
        if i != j {
            ops.push((j, i));
        }
    }
    ops
}

#[derive(Debug, Clone, Copy)]
enum NatIndex {
    Var(usize),
    Eq(usize),
}

fn build_ordering(blocks: &[BlockSpan], leading_eqs: &std::ops::Range<usize>, num_vars: usize, num_eq: usize) -> Result<KktOrdering> {
    let mut var_to_kkt = vec![usize::MAX; num_vars];
    let mut eq_to_kkt = vec![usize::MAX; num_eq];
    let mut next = 0usize;
    for e in leading_eqs.clone() {
        eq_to_kkt[e] = next;
        next += 1;
    }
    for span in blocks {
        for v in span.vars.clone() {
            var_to_kkt[v] = next;
            next += 1;
        }
        for e in span.eqs.clone() {
            eq_to_kkt[e] = next;
            next += 1;
        }
    }
    if next != num_vars + num_eq
        || var_to_kkt.iter().any(|&v| v == usize::MAX)
        || eq_to_kkt.iter().any(|&v| v == usize::MAX)
    {
        return Err(Error::Numerical("block structure does not partition the KKT system".into()));
    }
    Ok(KktOrdering { var_to_kkt, eq_to_kkt, n_total: next })
}

// Deterministic perturbation stream for sparsity probing.
fn xorshift(state: &mut u64) -> f64 {
    let mut x = *state;
    x ^= x << 13;
    x ^= x >> 7;
    x ^= x << 17;
    *state = x;
    // uniform in (-1, 1)
    (x >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Derive the block pattern from the NLP's stage structure by
/// probing Jacobians at perturbed interior points and unioning the observed
/// nonzeros across probes and across stage blocks.
pub fn pattern_from_nlp(nlp: &dyn Nlp, opts: PatternOptions) -> Result<BlockPattern> {
    let structure = nlp.structure();
    let blocks = structure.blocks.clone();
    if blocks.is_empty() {
        return Err(Error::Numerical("NLP declares no KKT blocks".into()));
    }
    let has_terminal = blocks.len() > 1;
    let n_stage_blocks = if has_terminal { blocks.len() - 1 } else { 1 };
    let stage_dim = blocks[0].vars.len() + blocks[0].eqs.len();
    for span in &blocks[..n_stage_blocks] {
        if span.vars.len() + span.eqs.len() != stage_dim || span.vars.len() != blocks[0].vars.len() {
            return Err(Error::Numerical("stage blocks must share one shape".into()));
        }
    }
    let terminal_dim = if has_terminal {
        let last = blocks.last().unwrap();
        last.vars.len() + last.eqs.len()
    } else {
        0
    };

    let ordering = build_ordering(&blocks, &structure.leading_eqs, nlp.num_vars(), nlp.num_eq())?;

    let base = nlp.interior_point()?;
    let mut stage_set: HashSet<(usize, usize)> = HashSet::new();
    let mut terminal_set: HashSet<(usize, usize)> = HashSet::new();
    let mut rng_state = 0x9e3779b97f4a7c15u64;

    for probe in 0..3 {
        let mut theta = base.clone();
        if probe > 0 {
            for v in theta.iter_mut() {
                *v += 1e-3 * (1.0 + v.abs()) * xorshift(&mut rng_state);
            }
        }
        let jf = nlp.jac_f(&theta)?;
        let jp = nlp.jac_p(&theta)?;
        let h = jf.transpose() * &jf;

        let mark = |set: &mut HashSet<(usize, usize)>, span: &BlockSpan| {
            let nv = span.vars.len();
            let dim = nv + span.eqs.len();
            for i in 0..dim {
                for j in 0..=i {
                    let val = match (i < nv, j < nv) {
                        (true, true) => h[(span.vars.start + i, span.vars.start + j)],
                        (false, true) => jp[(span.eqs.start + (i - nv), span.vars.start + j)],
                        (false, false) => 0.0,
                        (true, false) => unreachable!(),
                    };
                    if val != 0.0 {
                        set.insert((i, j));
                    }
                }
            }
        };
        for span in &blocks[..n_stage_blocks] {
            mark(&mut stage_set, span);
        }
        if has_terminal {
            mark(&mut terminal_set, blocks.last().unwrap());
        }
    }

    // Bound augmentation adds lambda/g to the diagonal of bounded variables.
    let var_block = {
        let mut map = vec![usize::MAX; nlp.num_vars()];
        for (b, span) in blocks.iter().enumerate() {
            for v in span.vars.clone() {
                map[v] = b;
            }
        }
        map
    };
    for row in nlp.bound_rows() {
        let b = var_block[row.var];
        let local = row.var - blocks[b].vars.start;
        if has_terminal && b == blocks.len() - 1 {
            terminal_set.insert((local, local));
        } else {
            stage_set.insert((local, local));
        }
    }

    if opts.include_diagonal {
        for i in 0..stage_dim {
            stage_set.insert((i, i));
        }
        for i in 0..terminal_dim {
            terminal_set.insert((i, i));
        }
    }

    let mut coords: Vec<_> = stage_set.iter().copied().collect();
    coords.sort_unstable();
    let mut terminal_coords: Vec<_> = terminal_set.iter().copied().collect();
    terminal_coords.sort_unstable();

    let couplings: Vec<(usize, usize)> = structure
        .couplings
        .iter()
        .map(|&(e, v)| (ordering.eq_to_kkt[e], ordering.var_to_kkt[v]))
        .collect();
    let coupling_nat_set: HashSet<_> = structure.couplings.iter().copied().collect();

    Ok(BlockPattern {
        n_b: stage_dim,
        coord_set: coords.iter().copied().collect(),
        coords,
        terminal_dim,
        terminal_coord_set: terminal_coords.iter().copied().collect(),
        terminal_coords,
        n_stage_blocks,
        leading: structure.leading_eqs.len(),
        couplings,
        coupling_kind: CouplingKind::NegIdentity,
        ordering,
        blocks,
        leading_eqs: structure.leading_eqs,
        coupling_nat_set,
    })
}

/// Symmetric block-sparse matrix: lower-triangular per-block values plus
/// coupling link values (all -1 until prescaled).
#[derive(Debug, Clone)]
pub struct BlockSparseMatrix {
    pub pattern: Arc<BlockPattern>,
    /// One value array per stage block, aligned with `pattern.coords`.
    pub stage_values: Vec<Vec<f64>>,
    pub terminal_values: Vec<f64>,
    pub coupling_values: Vec<f64>,
}

impl BlockSparseMatrix {
    pub fn from_values(
        pattern: Arc<BlockPattern>,
        stage_values: Vec<Vec<f64>>,
        terminal_values: Vec<f64>,
        coupling_values: Vec<f64>,
    ) -> Result<Self> {
        if stage_values.len() != pattern.n_stage_blocks
            || stage_values.iter().any(|v| v.len() != pattern.coords.len())
            || terminal_values.len() != pattern.terminal_coords.len()
            || coupling_values.len() != pattern.couplings.len()
        {
            return Err(Error::DimensionMismatch {
                what: "block value arrays".into(),
                expected: pattern.coords.len(),
                got: stage_values.first().map_or(0, |v| v.len()),
            });
        }
        Ok(Self { pattern, stage_values, terminal_values, coupling_values })
    }

    pub fn dim(&self) -> usize {
        self.pattern.n_total()
    }

    fn block_values(&self, b: usize) -> &[f64] {
        if b < self.pattern.n_stage_blocks {
            &self.stage_values[b]
        } else {
            &self.terminal_values
        }
    }

    /// Two-phase symmetric matvec: coupling transfers, then per-block
    /// lower-triangular MAC sweeps.
    pub fn matvec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let p = &self.pattern;
        if v.len() != p.n_total() {
            return Err(Error::DimensionMismatch {
                what: "matvec input".into(),
                expected: p.n_total(),
                got: v.len(),
            });
        }
        let mut y = DVector::zeros(v.len());

        // Phase 1: coupling pass. With -1 links this is pure sign-flipped
        // data transfer; after prescaling the links are general diagonals.
        for (idx, &(r, c)) in p.couplings.iter().enumerate() {
            let w = self.coupling_values[idx];
            y[r] += w * v[c];
            y[c] += w * v[r];
        }

        // Phase 2: independent per-block symmetric sweeps.
        let mut offset = p.leading;
        for b in 0..p.n_blocks() {
            let vals = self.block_values(b);
            for (idx, &(i, j)) in p.block_coords(b).iter().enumerate() {
                let (gi, gj) = (offset + i, offset + j);
                let a = vals[idx];
                y[gi] += a * v[gj];
                if gi != gj {
                    y[gj] += a * v[gi];
                }
            }
            offset += p.block_dim(b);
        }
        Ok(y)
    }

    /// Dense symmetric expansion (test oracle and direct-solver input).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = &self.pattern;
        let n = p.n_total();
        let mut m = DMatrix::zeros(n, n);
        for (idx, &(r, c)) in p.couplings.iter().enumerate() {
            m[(r, c)] += self.coupling_values[idx];
            m[(c, r)] += self.coupling_values[idx];
        }
        let mut offset = p.leading;
        for b in 0..p.n_blocks() {
            let vals = self.block_values(b);
            for (idx, &(i, j)) in p.block_coords(b).iter().enumerate() {
                let (gi, gj) = (offset + i, offset + j);
                m[(gi, gj)] += vals[idx];
                if gi != gj {
                    m[(gj, gi)] += vals[idx];
                }
            }
            offset += p.block_dim(b);
        }
        m
    }

    /// Squared 2-norm of every row of the full symmetric matrix.
    pub fn row_sq_norms(&self) -> DVector<f64> {
        let p = &self.pattern;
        let mut norms = DVector::zeros(p.n_total());
        for (idx, &(r, c)) in p.couplings.iter().enumerate() {
            let w = self.coupling_values[idx] * self.coupling_values[idx];
            norms[r] += w;
            norms[c] += w;
        }
        let mut offset = p.leading;
        for b in 0..p.n_blocks() {
            let vals = self.block_values(b);
            for (idx, &(i, j)) in p.block_coords(b).iter().enumerate() {
                let w = vals[idx] * vals[idx];
                norms[offset + i] += w;
                if i != j {
                    norms[offset + j] += w;
                }
            }
            offset += p.block_dim(b);
        }
        norms
    }

    /// Symmetric diagonal scaling `D A D`. The pattern is preserved; coupling
    /// links become general diagonals.
    pub fn scale_symmetric(&self, d: &DVector<f64>) -> BlockSparseMatrix {
        let p = &self.pattern;
        let mut pattern = (*self.pattern).clone();
        pattern.coupling_kind = CouplingKind::Diagonal;

        let coupling_values = p
            .couplings
            .iter()
            .zip(&self.coupling_values)
            .map(|(&(r, c), &w)| w * d[r] * d[c])
            .collect();

        let mut offset = p.leading;
        let mut stage_values = Vec::with_capacity(p.n_stage_blocks);
        let mut terminal_values = Vec::new();
        for b in 0..p.n_blocks() {
            let vals = self.block_values(b);
            let scaled: Vec<f64> = p
                .block_coords(b)
                .iter()
                .zip(vals)
                .map(|(&(i, j), &v)| v * d[offset + i] * d[offset + j])
                .collect();
            if b < p.n_stage_blocks {
                stage_values.push(scaled);
            } else {
                terminal_values = scaled;
            }
            offset += p.block_dim(b);
        }
        BlockSparseMatrix {
            pattern: Arc::new(pattern),
            stage_values,
            terminal_values,
            coupling_values,
        }
    }
}

/// Assemble the KKT matrix and right-hand side at the current iterate.
///
/// Diagonal (1,1) blocks hold `H_i - J_i^T W J_i` with `W = Lambda G^{-1}`;
/// off-diagonal parts hold the equality Jacobian. Optional Tikhonov terms add
/// `+delta` on the primal diagonal and `-delta` on the dual diagonal.
pub fn assemble_kkt(
    nlp: &dyn Nlp,
    pattern: &Arc<BlockPattern>,
    theta: &DVector<f64>,
    nu: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: f64,
    delta: f64,
) -> Result<(BlockSparseMatrix, DVector<f64>)> {
    crate::nlp::check_strict_feasibility(nlp.bound_rows(), theta, lambda)?;

    let jf = nlp.jac_f(theta)?;
    let jp = nlp.jac_p(theta)?;
    let mut h = jf.transpose() * &jf;
    for (i, row) in nlp.bound_rows().iter().enumerate() {
        let g = row.eval(theta);
        h[(row.var, row.var)] -= lambda[i] / g;
    }

    // Every nonzero must be representable by the pattern.
    verify_pattern_cover(pattern, &h, &jp)?;

    let p = pattern.as_ref();
    let mut stage_values = Vec::with_capacity(p.n_stage_blocks);
    let mut terminal_values = Vec::new();
    for b in 0..p.n_blocks() {
        let nv = p.blocks[b].vars.len();
        let vals: Vec<f64> = p
            .block_coords(b)
            .iter()
            .map(|&(i, j)| {
                let mut v = match (p.map_local(b, i), p.map_local(b, j)) {
                    (NatIndex::Var(vi), NatIndex::Var(vj)) => h[(vi, vj)],
                    (NatIndex::Eq(e), NatIndex::Var(vj)) => jp[(e, vj)],
                    (NatIndex::Eq(_), NatIndex::Eq(_)) => 0.0,
                    (NatIndex::Var(_), NatIndex::Eq(_)) => unreachable!("lower triangle"),
                };
                if delta != 0.0 && i == j {
                    v += if i < nv { delta } else { -delta };
                }
                v
            })
            .collect();
        if b < p.n_stage_blocks {
            stage_values.push(vals);
        } else {
            terminal_values = vals;
        }
    }
    if delta != 0.0 {
        let have_full_diag = (0..p.n_b).all(|i| p.coord_set.contains(&(i, i)))
            && (0..p.terminal_dim).all(|i| p.terminal_coord_set.contains(&(i, i)));
        if !have_full_diag {
            return Err(Error::Config(
                "regularization requires a pattern built with include_diagonal".into(),
            ));
        }
    }

    // Couplings are -1 by construction; read the actual Jacobian values to
    // stay honest about the convention.
    let coupling_values: Vec<f64> =
        nlp.structure().couplings.iter().map(|&(e, v)| jp[(e, v)]).collect();

    let matrix = BlockSparseMatrix {
        pattern: Arc::clone(pattern),
        stage_values,
        terminal_values,
        coupling_values,
    };

    // Right-hand side from the Jacobians already at hand:
    // r_dual = J'(mu G^{-1} e) - df' f - dp' nu, r_eq = -p.
    let f = nlp.eval_f(theta)?;
    let mut r_dual = -(jf.transpose() * f);
    if nu.len() > 0 {
        r_dual -= jp.transpose() * nu;
    }
    for row in nlp.bound_rows() {
        r_dual[row.var] += row.sign * mu / row.eval(theta);
    }
    let r_eq = -nlp.eval_p(theta)?;
    let rhs = p.ordering.pack(&r_dual, &r_eq);
    Ok((matrix, rhs))
}

fn verify_pattern_cover(pattern: &BlockPattern, h: &DMatrix<f64>, jp: &DMatrix<f64>) -> Result<()> {
    let p = pattern;
    let mut var_block = vec![usize::MAX; h.nrows()];
    for (b, span) in p.blocks.iter().enumerate() {
        for v in span.vars.clone() {
            var_block[v] = b;
        }
    }
    let mut eq_block = vec![usize::MAX; jp.nrows()];
    for (b, span) in p.blocks.iter().enumerate() {
        for e in span.eqs.clone() {
            eq_block[e] = b;
        }
    }

    for i in 0..h.nrows() {
        for j in 0..=i {
            if h[(i, j)] == 0.0 {
                continue;
            }
            let b = var_block[i];
            if b != var_block[j] {
                return Err(Error::Numerical(format!(
                    "Hessian entry ({i},{j}) crosses block boundaries"
                )));
            }
            let li = i - p.blocks[b].vars.start;
            let lj = j - p.blocks[b].vars.start;
            let set = if b < p.n_stage_blocks { &p.coord_set } else { &p.terminal_coord_set };
            if !set.contains(&(li.max(lj), li.min(lj))) {
                return Err(Error::Numerical(format!(
                    "Hessian entry ({i},{j}) missing from the block pattern"
                )));
            }
        }
    }
    for e in 0..jp.nrows() {
        for v in 0..jp.ncols() {
            if jp[(e, v)] == 0.0 {
                continue;
            }
            if p.coupling_nat_set.contains(&(e, v)) {
                continue;
            }
            if p.leading_eqs.contains(&e) {
                return Err(Error::Numerical(format!(
                    "leading equality row {e} touches variable {v} outside couplings"
                )));
            }
            let b = eq_block[e];
            if b == usize::MAX || var_block[v] != b {
                return Err(Error::Numerical(format!(
                    "equality Jacobian entry ({e},{v}) crosses blocks without a coupling"
                )));
            }
            let nv = p.blocks[b].vars.len();
            let li = nv + (e - p.blocks[b].eqs.start);
            let lj = v - p.blocks[b].vars.start;
            let set = if b < p.n_stage_blocks { &p.coord_set } else { &p.terminal_coord_set };
            if !set.contains(&(li, lj)) {
                return Err(Error::Numerical(format!(
                    "equality Jacobian entry ({e},{v}) missing from the block pattern"
                )));
            }
        }
    }
    Ok(())
}
