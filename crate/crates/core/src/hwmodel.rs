//! Cycle-count and memory models of the pipelined block-sparse matvec unit.
//!
//! One multiply-accumulate pipeline per block processor: a block with `N_ops`
//! scheduled MAC operations and initiation interval `II` finishes in
//! `II * (N_ops - 1) + L_mul + L_add + 1` cycles. Without scheduling the
//! accumulator forces `II = L_add`.

use crate::kkt::BlockPattern;
use crate::sched::initiation_interval;

#[derive(Debug, Clone, Copy)]
pub struct HwConfig {
    /// Floating-point adder latency in cycles.
    pub l_add: usize,
    /// Floating-point multiplier latency in cycles.
    pub l_mul: usize,
    /// Number of block processors working in parallel.
    pub parallel_blocks: usize,
    /// Clock frequency in MHz, used to convert cycle counts to microseconds.
    pub clock_mhz: f64,
}

impl Default for HwConfig {
    fn default() -> Self {
        Self { l_add: 6, l_mul: 5, parallel_blocks: 1, clock_mhz: 167.0 }
    }
}

impl HwConfig {
    /// Cycle count expressed in microseconds at the configured clock.
    pub fn cycles_to_us(&self, cycles: usize) -> f64 {
        cycles as f64 / self.clock_mhz
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LatencyReport {
    /// MAC operations of the largest block (full symmetric sweep).
    pub n_ops: usize,
    pub d_star: usize,
    pub ii: usize,
    pub per_block_cycles: usize,
    /// The same block with the accumulator unscheduled (`II = L_add`).
    pub unscheduled_block_cycles: usize,
    /// Sequential rounds over the block processors.
    pub rounds: usize,
    pub coupling_cycles: usize,
    pub total_cycles: usize,
}

/// Pipeline drain formula for one block.
pub fn block_latency(n_ops: usize, ii: usize, hw: &HwConfig) -> usize {
    if n_ops == 0 {
        return 0;
    }
    ii * (n_ops - 1) + hw.l_mul + hw.l_add + 1
}

/// Full matvec latency: rounds of block sweeps over `parallel_blocks`
/// processors plus the coupling transfer pass.
pub fn matvec_latency(pattern: &BlockPattern, d_star: usize, hw: &HwConfig) -> LatencyReport {
    let n_ops = pattern.max_block_ops();
    let ii = initiation_interval(hw.l_add, d_star);
    let per_block_cycles = block_latency(n_ops, ii, hw);
    let unscheduled_block_cycles = block_latency(n_ops, hw.l_add, hw);
    let rounds = pattern.n_blocks().div_ceil(hw.parallel_blocks.max(1));
    let coupling_cycles = pattern.couplings.len();
    LatencyReport {
        n_ops,
        d_star,
        ii,
        per_block_cycles,
        unscheduled_block_cycles,
        rounds,
        coupling_cycles,
        total_cycles: rounds * per_block_cycles + coupling_cycles,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MemoryReport {
    /// Half-bandwidth of the full symmetric matrix (max |i - j|).
    pub bandwidth: usize,
    /// Symmetric banded storage: `(bandwidth + 1) * n` words.
    pub dense_band: usize,
    /// Dense lower triangles per block plus coupling values.
    pub block_dense: usize,
    /// Scheduled block-sparse storage: per-instance values plus one shared
    /// copy of the pattern metadata (one word per stored coordinate).
    pub block_sparse_scheduled: usize,
}

pub fn memory_footprint(pattern: &BlockPattern) -> MemoryReport {
    let n = pattern.n_total();

    let mut bandwidth = 0usize;
    for b in 0..pattern.n_blocks() {
        let off = pattern.block_offset(b);
        for &(i, j) in pattern.block_coords(b) {
            bandwidth = bandwidth.max((off + i).abs_diff(off + j));
        }
    }
    for &(r, c) in &pattern.couplings {
        bandwidth = bandwidth.max(r.abs_diff(c));
    }
    let dense_band = (bandwidth + 1) * n;

    let tri = |d: usize| d * (d + 1) / 2;
    let mut block_dense = 0usize;
    for b in 0..pattern.n_blocks() {
        block_dense += tri(pattern.block_dim(b));
    }
    block_dense += pattern.couplings.len();

    let stage_nnz = pattern.coords.len();
    let terminal_nnz = pattern.terminal_coords.len();
    let values = pattern.n_stage_blocks * stage_nnz + terminal_nnz + pattern.couplings.len();
    // Metadata is shared: stage blocks reuse one coordinate list, and the
    // coupling layout repeats after the first stage (leading links plus one
    // stage-to-successor link set).
    let shared_coupling_meta = pattern
        .couplings
        .iter()
        .filter(|&&(r, c)| r.min(c) < pattern.leading + pattern.n_b)
        .count();
    let metadata = stage_nnz + terminal_nnz + shared_coupling_meta;

    MemoryReport {
        bandwidth,
        dense_band,
        block_dense,
        block_sparse_scheduled: values + metadata,
    }
}

/// Latency as a function of the block-processor count.
pub fn tradeoff_sweep(
    pattern: &BlockPattern,
    d_star: usize,
    hw: &HwConfig,
    parallel: impl IntoIterator<Item = usize>,
) -> Vec<(usize, LatencyReport)> {
    parallel
        .into_iter()
        .map(|p| {
            let cfg = HwConfig { parallel_blocks: p, ..*hw };
            (p, matvec_latency(pattern, d_star, &cfg))
        })
        .collect()
}
