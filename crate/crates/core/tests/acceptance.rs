//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line (run with `--nocapture` to see them on success).

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nmpcsolve::hwmodel::{block_latency, tradeoff_sweep, memory_footprint, HwConfig};
use nmpcsolve::ipm::{ipm_solve, IpmConfig, MinresKktSolver};
use nmpcsolve::kkt::{pattern_from_nlp, BlockPattern, BlockSparseMatrix, PatternOptions};
use nmpcsolve::minres::{minres_solve, IterBudget, MinresConfig};
use nmpcsolve::model::{Crane, OdeModel};
use nmpcsolve::nlp::{check_strict_feasibility, BoundRow, Nlp, SimpleNlp};
use nmpcsolve::ocp::{crane_ocp, terminal_residual};
use nmpcsolve::sched::{initiation_interval, schedule_bnb, schedule_exhaustive, schedule_greedy};
use nmpcsolve::simloop::{closed_loop, SimConfig};
use nmpcsolve::transcription::{build_nlp, make_tableau, stage_residual, NlpProblem, TableauKind};

fn report(id: usize, name: &str, ok: bool, detail: &str) {
    println!(
        "criterion {id:2} ({name}): {} -- {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
}

fn crane_nlp(horizon: usize) -> NlpProblem {
    let x_hat = DVector::from_vec(vec![0.5, 0.0, 0.7, 0.0, -0.2, -0.5]);
    let spec = crane_ocp(horizon, 0.1, x_hat);
    build_nlp(spec, Box::new(Crane::default()), make_tableau(TableauKind::Trapezoidal)).unwrap()
}

fn crane_pattern(horizon: usize) -> Arc<BlockPattern> {
    Arc::new(pattern_from_nlp(&crane_nlp(horizon), PatternOptions::default()).unwrap())
}

#[test]
fn criterion_01_matvec_oracle_equivalence() {
    let start = Instant::now();
    let pattern = crane_pattern(5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;

    for _ in 0..100 {
        let mut val = |k: usize| -> Vec<f64> {
            (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let stage: Vec<Vec<f64>> = (0..pattern.n_stage_blocks)
            .map(|_| val(pattern.coords.len()))
            .collect();
        let term = val(pattern.terminal_coords.len());
        let coup = val(pattern.couplings.len());
        let a = BlockSparseMatrix::from_values(pattern.clone(), stage, term, coup).unwrap();

        let v = DVector::from_fn(a.dim(), |_, _| rng.gen_range(-1.0..1.0));
        let fast = a.matvec(&v).unwrap();
        let slow = a.to_dense() * &v;
        let rel = (&fast - &slow).amax() / slow.amax().max(1e-300);
        worst = worst.max(rel);
    }

    let elapsed = start.elapsed();
    let ok = worst <= 1e-12 && elapsed < Duration::from_secs(5);
    report(
        1,
        "matvec oracle equivalence",
        ok,
        &format!("worst rel error {worst:.2e} over 100 random crane N=5 matrices, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_02_minres_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_res = 0.0f64;
    let mut worst_err = 0.0f64;

    for case in 0..50 {
        let n = rng.gen_range(10..=60);
        let q = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
        // Clustered spectrum of both signs: indefinite, and with few distinct
        // eigenvalues the n-step Krylov termination bound has real headroom
        // (n distinct eigenvalues would make "1e-8 within n iterations" a
        // coin flip in finite precision).
        let n_distinct = rng.gen_range(5..=10);
        let values: Vec<f64> = (0..n_distinct)
            .map(|_| {
                let mag = rng.gen_range(0.5..5.0);
                if rng.gen_bool(0.5) { mag } else { -mag }
            })
            .collect();
        let eigs = DVector::from_fn(n, |_, _| values[rng.gen_range(0..n_distinct)]);
        let a = &q * DMatrix::from_diagonal(&eigs) * q.transpose();
        let a = (&a + a.transpose()) * 0.5; // kill round-off asymmetry
        let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));

        let cfg = MinresConfig { rtol: 1e-8, budget: IterBudget::Dim };
        let (x, stats) = minres_solve(&a, &b, &cfg).unwrap();
        assert!(stats.iterations <= n, "case {case}: {} iters > n = {n}", stats.iterations);

        let relres = (&b - &a * &x).norm() / b.norm();
        let oracle = a.clone().full_piv_lu().solve(&b).unwrap();
        let relerr = (&x - &oracle).norm() / oracle.norm();
        worst_res = worst_res.max(relres);
        worst_err = worst_err.max(relerr);
    }

    let elapsed = start.elapsed();
    let ok = worst_res <= 1e-8 && worst_err <= 1e-6 && elapsed < Duration::from_secs(10);
    report(
        2,
        "MINRES correctness",
        ok,
        &format!("50 systems n<=60: worst relres {worst_res:.2e}, worst error vs LU {worst_err:.2e}, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_03_jacobian_verification() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;

    // Crane continuous-time Jacobians at 20 random (safe-domain) points.
    let crane = Crane::default();
    for _ in 0..20 {
        let x = DVector::from_vec(vec![
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(0.3..1.0),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        ]);
        let u = DVector::from_vec(vec![rng.gen_range(-0.14..0.14), rng.gen_range(-0.14..0.14)]);

        let jx = crane.jac_x(&x, &u).unwrap();
        let ju = crane.jac_u(&x, &u).unwrap();
        let scale = jx.amax().max(ju.amax()).max(1.0);

        for i in 0..6 {
            let h = 1e-6 * x[i].abs().max(1.0);
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let col = (crane.rhs(&xp, &u).unwrap() - crane.rhs(&xm, &u).unwrap()) / (2.0 * h);
            worst = worst.max((col - jx.column(i)).amax() / scale);
        }
        for i in 0..2 {
            let h = 1e-6;
            let (mut up, mut um) = (u.clone(), u.clone());
            up[i] += h;
            um[i] -= h;
            let col = (crane.rhs(&x, &up).unwrap() - crane.rhs(&x, &um).unwrap()) / (2.0 * h);
            worst = worst.max((col - ju.column(i)).amax() / scale);
        }
    }

    // Transcribed NLP Jacobians of f and p at 20 perturbed interior points.
    let nlp = crane_nlp(3);
    let base = nlp.interior_point().unwrap();
    for _ in 0..20 {
        let theta =
            &base + DVector::from_fn(base.len(), |_, _| rng.gen_range(-0.01..0.01));
        let jf = nlp.jac_f(&theta).unwrap();
        let jp = nlp.jac_p(&theta).unwrap();
        let scale = jf.amax().max(jp.amax()).max(1.0);

        for i in 0..theta.len() {
            let h = 1e-6 * theta[i].abs().max(1.0);
            let (mut tp, mut tm) = (theta.clone(), theta.clone());
            tp[i] += h;
            tm[i] -= h;
            let fcol = (nlp.eval_f(&tp).unwrap() - nlp.eval_f(&tm).unwrap()) / (2.0 * h);
            let pcol = (nlp.eval_p(&tp).unwrap() - nlp.eval_p(&tm).unwrap()) / (2.0 * h);
            worst = worst.max((fcol - jf.column(i)).amax() / scale);
            worst = worst.max((pcol - jp.column(i)).amax() / scale);
        }
    }

    report(
        3,
        "Jacobian verification",
        worst <= 1e-5,
        &format!("worst central-FD rel deviation {worst:.2e} (crane + NLP f, p; 20 points each)"),
    );
}

#[test]
fn criterion_04_trapezoidal_exactness() {
    let tableau = make_tableau(TableauKind::Trapezoidal);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;

    for _ in 0..10 {
        let lambda = rng.gen_range(-3.0..0.5);
        let h = rng.gen_range(0.01..0.5);
        let model = nmpcsolve::model::LinearOde::scalar_decay(lambda);
        let x0 = rng.gen_range(0.5..2.0);
        let exact = x0 * (1.0 + h * lambda / 2.0) / (1.0 - h * lambda / 2.0);

        // Exact stage values for x' = lambda x: r1 = f(x0), r2 = f(x1).
        let r = DVector::from_vec(vec![lambda * x0, lambda * exact]);
        let (x_next, defects) = stage_residual(
            &tableau,
            &model,
            &DVector::from_vec(vec![x0]),
            &DVector::zeros(1),
            &r,
            h,
        )
        .unwrap();
        worst = worst.max((x_next[0] - exact).abs() / exact.abs());
        worst = worst.max(defects.amax());
    }

    report(
        4,
        "trapezoidal exactness",
        worst <= 1e-12,
        &format!("worst deviation from (1+h lambda/2)/(1-h lambda/2): {worst:.2e} over 10 pairs"),
    );
}

#[test]
fn criterion_05_ipm_fixed_point_checks() {
    let cfg = IpmConfig::default();
    let solver = MinresKktSolver(cfg.minres);

    // (a) min 0.5 (theta - 3)^2, loose box.
    let nlp_a = SimpleNlp::least_squares(
        1,
        Box::new(|t| DVector::from_vec(vec![t[0] - 3.0])),
        Box::new(|_| DMatrix::from_vec(1, 1, vec![1.0])),
        vec![
            BoundRow { var: 0, sign: 1.0, offset: 1e6 },
            BoundRow { var: 0, sign: -1.0, offset: 1e6 },
        ],
        DVector::zeros(1),
    );
    let pat_a = Arc::new(pattern_from_nlp(&nlp_a, PatternOptions::default()).unwrap());
    let res_a = ipm_solve(&nlp_a, &pat_a, &cfg, &solver, None).unwrap();
    let err_a = (res_a.theta[0] - 3.0).abs();

    // (b) min 0.5 theta^2 s.t. theta >= 1: (theta*, lambda*) = (1, 1).
    let nlp_b = SimpleNlp::least_squares(
        1,
        Box::new(|t| DVector::from_vec(vec![t[0]])),
        Box::new(|_| DMatrix::from_vec(1, 1, vec![1.0])),
        vec![BoundRow { var: 0, sign: -1.0, offset: -1.0 }],
        DVector::from_vec(vec![2.0]),
    );
    let pat_b = Arc::new(pattern_from_nlp(&nlp_b, PatternOptions::default()).unwrap());
    let res_b = ipm_solve(&nlp_b, &pat_b, &cfg, &solver, None).unwrap();
    let err_b = (res_b.theta[0] - 1.0).abs().max((res_b.lambda[0] - 1.0).abs());

    let ok = err_a <= 1e-6 && err_b <= 1e-4 && res_b.log.len() == 15;
    report(
        5,
        "IPM fixed-point checks",
        ok,
        &format!("|theta - 3| = {err_a:.2e}; active-bound pair error {err_b:.2e} in {} iterations", res_b.log.len()),
    );
}

#[test]
fn criterion_06_crane_ocp_solve() {
    let start = Instant::now();
    let nlp = crane_nlp(10);
    let pattern = Arc::new(pattern_from_nlp(&nlp, PatternOptions::default()).unwrap());

    // Hardware setting: 15 IPM iterations, MINRES capped at the system size.
    let minres = MinresConfig { rtol: 1e-10, budget: IterBudget::Dim };
    let cfg = IpmConfig { n_iter: 15, minres, ..Default::default() };
    // assemble_kkt asserts strict feasibility of every iterate before
    // factorization, so a completed solve proves per-iterate feasibility.
    let res = ipm_solve(&nlp, &pattern, &cfg, &MinresKktSolver(minres), None).unwrap();
    check_strict_feasibility(nlp.bound_rows(), &res.theta, &res.lambda).unwrap();

    let elapsed = start.elapsed();
    let ok = res.r_eq_inf <= 1e-3 && res.compl <= 1e-3 && elapsed < Duration::from_secs(60);
    report(
        6,
        "crane OCP solve",
        ok,
        &format!(
            "N=10: r_eq {:.2e}, compl {:.2e}, strictly feasible at all 15 iterates, {elapsed:.2?}",
            res.r_eq_inf, res.compl
        ),
    );
}

#[test]
fn criterion_07_closed_loop() {
    let start = Instant::now();
    let cfg = SimConfig { t_sim: 16.0, ..Default::default() };
    let trace = closed_loop(&cfg).unwrap();

    let settle = trace.settling_time(0.05);
    let max_u = trace.max_input();
    // Double-check the residual at the settling sample directly.
    let settled_ok = settle.map_or(false, |t| {
        t <= 15.0
            && trace
                .rows
                .iter()
                .filter(|r| r.t >= t)
                .all(|r| terminal_residual(&r.x).norm() <= 0.05)
    });

    let elapsed = start.elapsed();
    let ok = settled_ok && max_u <= 0.15 && elapsed < Duration::from_secs(300);
    report(
        7,
        "closed loop",
        ok,
        &format!(
            "||h_T|| <= 0.05 from t = {:.1} s; max |u| = {max_u:.6} <= 0.15; {elapsed:.2?}",
            settle.unwrap_or(f64::NAN)
        ),
    );
}

#[test]
fn criterion_08_scheduling_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0usize;

    // Worked example with optimum d* = 3.
    let example = vec![(0, 0), (0, 1), (1, 0), (1, 2), (2, 1), (3, 3)];
    let example_ok = schedule_bnb(&example, Duration::from_secs(10)).d_star == 3
        && schedule_exhaustive(&example).d_star == 3;

    for _ in 0..50 {
        let k = rng.gen_range(1..=9);
        let mut ops: BTreeSet<(usize, usize)> = BTreeSet::new();
        while ops.len() < k {
            ops.insert((rng.gen_range(0..5), rng.gen_range(0..5)));
        }
        let ops: Vec<(usize, usize)> = ops.into_iter().collect();
        let b = schedule_bnb(&ops, Duration::from_secs(10));
        let e = schedule_exhaustive(&ops);
        if b.d_star != e.d_star || !b.optimal {
            mismatches += 1;
        }
    }

    // Greedy on the crane stage block must fully pipeline the MAC unit.
    let pattern = crane_pattern(5);
    let greedy = schedule_greedy(&pattern.stage_matvec_ops());
    let ii = initiation_interval(6, greedy.d_star);
    let greedy_ok = greedy.d_star >= 6 && ii == 1;

    let ok = example_ok && mismatches == 0 && greedy_ok;
    report(
        8,
        "scheduling optimality",
        ok,
        &format!(
            "B&B = exhaustive on 50 random patterns (+worked example d*=3); greedy crane stage d* = {} -> II = {ii}",
            greedy.d_star
        ),
    );
}

#[test]
fn criterion_09_pipeline_speedup_trend() {
    let hw = HwConfig::default();
    let unsched = block_latency(161, hw.l_add, &hw);
    let sched = block_latency(161, initiation_interval(hw.l_add, 6), &hw);
    let ratio = unsched as f64 / sched as f64;
    report(
        9,
        "pipeline speedup trend",
        (5.0..=6.0).contains(&ratio),
        &format!("161-op block: {unsched} / {sched} cycles = {ratio:.2}x"),
    );
}

#[test]
fn criterion_10_memory_trend() {
    let mem = memory_footprint(&crane_pattern(20));
    let ratio = mem.dense_band as f64 / mem.block_sparse_scheduled as f64;
    report(
        10,
        "memory footprint trend",
        ratio >= 15.0,
        &format!(
            "crane N=20: banded {} words / block-sparse {} words = {ratio:.2}x",
            mem.dense_band, mem.block_sparse_scheduled
        ),
    );
}

#[test]
fn criterion_11_parallelism_saturation() {
    let pattern = crane_pattern(9);
    assert_eq!(pattern.n_blocks(), 10);
    let sweep = tradeoff_sweep(&pattern, 6, &HwConfig::default(), 5..=10);
    let t5 = sweep[0].1.total_cycles;
    let plateau = sweep[..5].iter().all(|(_, r)| r.total_cycles == t5);
    let drops = sweep[5].1.total_cycles < t5;
    report(
        11,
        "parallelism saturation",
        plateau && drops,
        &format!(
            "10 blocks: P=5..9 all take {t5} cycles, P=10 takes {}",
            sweep[5].1.total_cycles
        ),
    );
}

#[test]
fn criterion_12_determinism() {
    let bin = env!("CARGO_BIN_EXE_nmpcsolve");
    let dir = std::env::temp_dir().join(format!("nmpc_acceptance_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg_path = dir.join("cfg.json");
    std::fs::write(
        &cfg_path,
        r#"{
            "problem": {"horizon": 4},
            "ipm": {"exit_tol": 1e-6},
            "sim": {"t_sim": 0.5, "noise_std": 0.001}
        }"#,
    )
    .unwrap();

    let run = |out: &str, seed: u64| -> Vec<u8> {
        let out_dir = dir.join(out);
        let status = std::process::Command::new(bin)
            .args(["simulate", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out_dir)
            .args(["--seed", &seed.to_string()])
            .status()
            .unwrap();
        assert!(status.success(), "simulate exited with {status}");
        std::fs::read(out_dir.join("trace.csv")).unwrap()
    };

    let a = run("a", 7);
    let b = run("b", 7);
    let c = run("c", 8);
    std::fs::remove_dir_all(&dir).ok();

    let ok = a == b && a != c;
    report(
        12,
        "determinism",
        ok,
        &format!(
            "seed 7 twice: byte-identical trace.csv ({} bytes); seed 8 differs: {}",
            a.len(),
            a != c
        ),
    );
}
