//! MAC operation scheduling for the pipelined accumulator.
//!
//! Two operations targeting the same output row must be at least `d + 1`
//! issue slots apart or the second one reads a stale accumulator. The
//! schedulers maximize the worst-case reuse distance `d*`, which sets the
//! initiation interval `II = ceil(L_add / (d* + 1))`.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMethod {
    Greedy,
    BranchAndBound,
    Exhaustive,
}

#[derive(Debug, Clone)]
pub struct Schedule {
    /// MAC operations `(row, col)` in issue order.
    pub order: Vec<(usize, usize)>,
    pub d_star: usize,
    pub method: ScheduleMethod,
    /// `false` when branch-and-bound ran out of time and returned its
    /// best-so-far schedule.
    pub optimal: bool,
}

impl Schedule {
    pub fn initiation_interval(&self, l_add: usize) -> usize {
        initiation_interval(l_add, self.d_star)
    }
}

pub fn initiation_interval(l_add: usize, d_star: usize) -> usize {
    l_add.div_ceil(d_star + 1)
}

/// Worst-case same-row reuse distance of an issue order: the minimum over all
/// same-row pairs of `|t_i - t_j| - 1`. Vacuous (no row repeats) gives `N_nz`.
pub fn verify_schedule(order: &[(usize, usize)]) -> usize {
    let mut last: BTreeMap<usize, usize> = BTreeMap::new();
    let mut d = order.len();
    for (t, &(row, _)) in order.iter().enumerate() {
        if let Some(&prev) = last.get(&row) {
            d = d.min(t - prev - 1);
        }
        last.insert(row, t);
    }
    d
}

fn rows_and_cols(ops: &[(usize, usize)]) -> BTreeMap<usize, Vec<usize>> {
    let mut by_row: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(r, c) in ops {
        by_row.entry(r).or_default().push(c);
    }
    for cols in by_row.values_mut() {
        cols.sort_unstable();
    }
    by_row
}

/// Assign the concrete `(row, col)` operations to a row issue sequence,
/// consuming each row's columns in ascending order.
fn assign_columns(row_seq: &[usize], ops: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut by_row = rows_and_cols(ops);
    let mut cursor: BTreeMap<usize, usize> = by_row.keys().map(|&r| (r, 0)).collect();
    row_seq
        .iter()
        .map(|&r| {
            let k = cursor.get_mut(&r).unwrap();
            let c = by_row.get_mut(&r).unwrap()[*k];
            *k += 1;
            (r, c)
        })
        .collect()
}

/// One list-scheduling pass enforcing same-row spacing `>= d + 1`: at each
/// slot the eligible row with the most remaining operations (ties toward the
/// smallest index) is issued. Fails if every row is blocked or a row can no
/// longer fit its remaining operations.
fn list_schedule(counts: &BTreeMap<usize, usize>, n: usize, d: usize) -> Option<Vec<usize>> {
    let rows: Vec<usize> = counts.keys().copied().collect();
    let mut rem: Vec<usize> = rows.iter().map(|r| counts[r]).collect();
    let mut last: Vec<Option<usize>> = vec![None; rows.len()];
    let mut seq = Vec::with_capacity(n);

    for t in 0..n {
        let mut pick = None;
        for i in 0..rows.len() {
            if rem[i] == 0 {
                continue;
            }
            let earliest = match last[i] {
                Some(p) => t.max(p + d + 1),
                None => t,
            };
            if earliest + (rem[i] - 1) * (d + 1) > n - 1 {
                return None; // this row can no longer be spaced out
            }
            if earliest <= t && pick.map_or(true, |j: usize| rem[i] > rem[j]) {
                pick = Some(i);
            }
        }
        let i = pick?;
        rem[i] -= 1;
        last[i] = Some(t);
        seq.push(rows[i]);
    }
    Some(seq)
}

/// Greedy scheduler: descending scan over the target spacing `d`, taking the
/// largest value for which a single most-remaining-first list-scheduling pass
/// succeeds. No backtracking, so the result is a lower bound on the optimum.
pub fn schedule_greedy(ops: &[(usize, usize)]) -> Schedule {
    let n = ops.len();
    let counts: BTreeMap<usize, usize> =
        rows_and_cols(ops).into_iter().map(|(r, c)| (r, c.len())).collect();
    let cmax = counts.values().copied().max().unwrap_or(0);

    let mut order = ops.to_vec();
    order.sort_unstable();
    if cmax > 1 {
        let hi = (n - 1) / (cmax - 1); // spacing bound for the densest row
        for d in (1..hi).rev() {
            if let Some(seq) = list_schedule(&counts, n, d) {
                order = assign_columns(&seq, ops);
                break;
            }
        }
    }

    let d_star = verify_schedule(&order);
    Schedule { order, d_star, method: ScheduleMethod::Greedy, optimal: false }
}

/// Feasibility DFS: can the row multiset be ordered with same-row spacing
/// `>= d + 1`? Returns a row sequence if so.
fn feasible_order(
    counts: &BTreeMap<usize, usize>,
    d: usize,
    deadline: Instant,
) -> Option<Option<Vec<usize>>> {
    // Outer None = timed out; inner None = proven infeasible.
    let rows: Vec<usize> = counts.keys().copied().collect();
    let n: usize = counts.values().sum();
    let mut rem: Vec<usize> = rows.iter().map(|r| counts[r]).collect();
    let mut last: Vec<Option<usize>> = vec![None; rows.len()];
    let mut seq: Vec<usize> = Vec::with_capacity(n);
    let mut nodes = 0usize;

    fn dfs(
        t: usize,
        n: usize,
        d: usize,
        rows: &[usize],
        rem: &mut [usize],
        last: &mut [Option<usize>],
        seq: &mut Vec<usize>,
        nodes: &mut usize,
        deadline: Instant,
    ) -> Option<bool> {
        if t == n {
            return Some(true);
        }
        *nodes += 1;
        if *nodes % 4096 == 0 && Instant::now() > deadline {
            return None;
        }
        // Prune: every row must still fit its remaining operations.
        for i in 0..rows.len() {
            if rem[i] == 0 {
                continue;
            }
            let earliest = match last[i] {
                Some(p) => t.max(p + d + 1),
                None => t,
            };
            if earliest + (rem[i] - 1) * (d + 1) > n - 1 {
                return Some(false);
            }
        }
        // Candidates, most-constrained (largest remaining count) first.
        let mut cand: Vec<usize> = (0..rows.len())
            .filter(|&i| rem[i] > 0 && last[i].map_or(true, |p| p + d + 1 <= t))
            .collect();
        cand.sort_by_key(|&i| std::cmp::Reverse(rem[i]));
        for i in cand {
            let saved = last[i];
            rem[i] -= 1;
            last[i] = Some(t);
            seq.push(rows[i]);
            match dfs(t + 1, n, d, rows, rem, last, seq, nodes, deadline) {
                Some(true) => return Some(true),
                Some(false) => {}
                None => return None,
            }
            seq.pop();
            rem[i] += 1;
            last[i] = saved;
        }
        Some(false)
    }

    match dfs(0, n, d, &rows, &mut rem, &mut last, &mut seq, &mut nodes, deadline) {
        None => None,
        Some(true) => Some(Some(seq)),
        Some(false) => Some(None),
    }
}

/// Branch-and-bound scheduler: binary search on the spacing `d`, proving each
/// candidate feasible or infeasible by DFS over the row multiset. Falls back
/// to the best schedule found when the time limit expires.
pub fn schedule_bnb(ops: &[(usize, usize)], time_limit: Duration) -> Schedule {
    let n = ops.len();
    let greedy = schedule_greedy(ops);
    let counts: BTreeMap<usize, usize> =
        rows_and_cols(ops).into_iter().map(|(r, c)| (r, c.len())).collect();
    let cmax = counts.values().copied().max().unwrap_or(0);
    if cmax <= 1 {
        // No row repeats: any order is vacuously optimal with d* = N_nz.
        let mut order = ops.to_vec();
        order.sort_unstable();
        return Schedule { order, d_star: n, method: ScheduleMethod::BranchAndBound, optimal: true };
    }

    let deadline = Instant::now() + time_limit;
    let mut lo = greedy.d_star; // known feasible
    let mut best_order = greedy.order;
    let mut hi = (n - 1) / (cmax - 1);
    hi = hi.saturating_sub(1).max(lo);
    let mut timed_out = false;

    while lo < hi {
        let mid = lo + (hi - lo + 1) / 2;
        match feasible_order(&counts, mid, deadline) {
            Some(Some(seq)) => {
                best_order = assign_columns(&seq, ops);
                lo = mid;
            }
            Some(None) => hi = mid - 1,
            None => {
                timed_out = true;
                break;
            }
        }
    }

    let d_star = verify_schedule(&best_order);
    Schedule {
        order: best_order,
        d_star,
        method: ScheduleMethod::BranchAndBound,
        optimal: !timed_out,
    }
}

/// Brute-force optimum over all distinct row permutations. Only viable for
/// tiny operation sets; used as the oracle for the branch-and-bound search.
pub fn schedule_exhaustive(ops: &[(usize, usize)]) -> Schedule {
    assert!(ops.len() <= 10, "exhaustive search is for tiny patterns");
    let counts: BTreeMap<usize, usize> =
        rows_and_cols(ops).into_iter().map(|(r, c)| (r, c.len())).collect();
    let rows: Vec<usize> = counts.keys().copied().collect();
    let mut rem: Vec<usize> = rows.iter().map(|r| counts[r]).collect();
    let n = ops.len();

    let mut best_d = 0usize;
    let mut best_seq: Vec<usize> = Vec::new();
    let mut seq: Vec<usize> = Vec::with_capacity(n);
    let mut last: Vec<Option<usize>> = vec![None; rows.len()];

    fn rec(
        t: usize,
        n: usize,
        rows: &[usize],
        rem: &mut [usize],
        last: &mut [Option<usize>],
        seq: &mut Vec<usize>,
        cur_d: usize,
        best_d: &mut usize,
        best_seq: &mut Vec<usize>,
    ) {
        if t == n {
            if cur_d > *best_d || best_seq.is_empty() {
                *best_d = cur_d;
                *best_seq = seq.clone();
            }
            return;
        }
        for i in 0..rows.len() {
            if rem[i] == 0 {
                continue;
            }
            let d_here = match last[i] {
                Some(p) => (t - p - 1).min(cur_d),
                None => cur_d,
            };
            if d_here < *best_d && !best_seq.is_empty() {
                continue; // cannot beat the incumbent
            }
            let saved = last[i];
            rem[i] -= 1;
            last[i] = Some(t);
            seq.push(rows[i]);
            rec(t + 1, n, rows, rem, last, seq, d_here, best_d, best_seq);
            seq.pop();
            rem[i] += 1;
            last[i] = saved;
        }
    }

    rec(0, n, &rows, &mut rem, &mut last, &mut seq, n, &mut best_d, &mut best_seq);
    let order = assign_columns(&best_seq, ops);
    let d_star = verify_schedule(&order);
    Schedule { order, d_star, method: ScheduleMethod::Exhaustive, optimal: true }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Small worked example, zero-indexed: {a11,a12,a21,a23,a32,a44}.
    fn example_pattern() -> Vec<(usize, usize)> {
        vec![(0, 0), (0, 1), (1, 0), (1, 2), (2, 1), (3, 3)]
    }

    #[test]
    fn verify_counts_min_gap() {
        // rows 0,1,2,3,0,1: both repeats are 4 apart -> d = 3.
        let order = vec![(0, 0), (1, 0), (2, 1), (3, 3), (0, 1), (1, 2)];
        assert_eq!(verify_schedule(&order), 3);
    }

    #[test]
    fn verify_vacuous_is_nnz() {
        let order = vec![(0, 0), (1, 1), (2, 2)];
        assert_eq!(verify_schedule(&order), 3);
    }

    #[test]
    fn example_pattern_optimum_is_three() {
        let ops = example_pattern();
        assert_eq!(schedule_exhaustive(&ops).d_star, 3);
        let bnb = schedule_bnb(&ops, Duration::from_secs(5));
        assert_eq!(bnb.d_star, 3);
        assert!(bnb.optimal);
        assert_eq!(verify_schedule(&bnb.order), 3);
    }

    #[test]
    fn greedy_never_beats_bnb_and_schedules_are_valid_permutations() {
        let patterns: Vec<Vec<(usize, usize)>> = vec![
            example_pattern(),
            vec![(0, 0), (0, 1), (0, 2), (1, 0), (2, 1)],
            vec![(0, 0), (1, 1), (2, 2), (3, 3)],
            vec![(0, 0), (0, 1), (1, 0), (1, 1)],
        ];
        for ops in patterns {
            let g = schedule_greedy(&ops);
            let b = schedule_bnb(&ops, Duration::from_secs(5));
            assert!(g.d_star <= b.d_star);
            for s in [&g, &b] {
                let mut sorted = s.order.clone();
                sorted.sort_unstable();
                let mut expect = ops.clone();
                expect.sort_unstable();
                assert_eq!(sorted, expect);
            }
        }
    }

    #[test]
    fn initiation_interval_rounds_up() {
        assert_eq!(initiation_interval(6, 6), 1);
        assert_eq!(initiation_interval(6, 5), 1);
        assert_eq!(initiation_interval(6, 2), 2);
        assert_eq!(initiation_interval(6, 0), 6);
    }

    #[test]
    fn single_row_forces_full_serialization() {
        let ops = vec![(0, 0), (0, 1), (0, 2)];
        let b = schedule_bnb(&ops, Duration::from_secs(1));
        assert_eq!(b.d_star, 0);
        assert!(b.optimal);
    }
}
