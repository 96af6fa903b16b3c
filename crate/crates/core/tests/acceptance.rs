//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use lbp::baselines::rect_lower_bound;
use lbp::lp::solve_lp;
use lbp::mesh::{
    build_relaxation, extract_schedule, fifs, mft_lbp_heuristic, neighbor_search, pmft_lbp, resolve_fixed_k,
    MeshProblem,
};
use lbp::sim::{gen_network, run_experiment, Algorithm, ExperimentConfig, ParamRanges, Topology};
use lbp::star::{solve_star, solve_star_relaxed};
use lbp::{Error, NetworkModel, StarMode, Task};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Pearson correlation; a constant series counts as uncorrelated.
fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

fn quadrant_shapes_up_to(workers: usize) -> Vec<(usize, usize)> {
    let mut shapes = Vec::new();
    for rows in 1..=workers + 1 {
        for cols in 1..=workers + 1 {
            let p = rows * cols;
            if p >= 2 && p - 1 <= workers {
                shapes.push((rows, cols));
            }
        }
    }
    shapes
}

/// Every split of `total` columns over `slots` processors.
fn compositions(total: u64, slots: usize, prefix: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
    if slots == 1 {
        prefix.push(total);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in 0..=total {
        prefix.push(first);
        compositions(total - first, slots - 1, prefix, out);
        prefix.pop();
    }
}

/// Best integer makespan over all load vectors (source fixed at zero).
fn brute_force_optimum(net: &NetworkModel, task: Task) -> f64 {
    let mut all = Vec::new();
    compositions(task.n, net.len() - 1, &mut Vec::new(), &mut all);
    all.into_iter()
        .map(|workers| {
            let mut k = vec![0];
            k.extend(workers);
            resolve_fixed_k(net, task, &k).expect("every composition is feasible").t_f
        })
        .fold(f64::INFINITY, f64::min)
}

fn source_volume_exact(k: &[u64], n: u64) -> u128 {
    k.iter().map(|&ki| 2 * ki as u128 * n as u128).sum()
}

fn criterion_1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let ranges = ParamRanges::default();
    let mut schedules = 0;
    for i in 0..50u64 {
        let children = rng.gen_range(1..=20);
        let n = rng.gen_range(1..=1000);
        let net = gen_network(Topology::Star { children }, i, ranges).map_err(|e| e.to_string())?;
        for mode in StarMode::ALL {
            let sol = match solve_star(&net, Task::new(n), mode) {
                Ok(s) => s,
                Err(Error::InfeasibleMode { .. }) => continue,
                Err(e) => return Err(e.to_string()),
            };
            let k: Vec<u64> = sol.k.iter().map(|&x| x as u64).collect();
            ensure(sol.is_integral(), || format!("star {i} {mode}: non-integral shares"))?;
            let v = source_volume_exact(&k, n);
            ensure(v == 2 * n as u128 * n as u128, || format!("star {i} {mode}: volume {v} for N={n}"))?;
            schedules += 1;
        }
    }
    for i in 0..50u64 {
        let (rows, cols) = [(1, 2), (1, 3), (2, 2), (2, 3), (3, 3)][i as usize % 5];
        let n = rng.gen_range(1..=100);
        let net = gen_network(Topology::MeshQuadrant { rows, cols }, 1000 + i, ranges).map_err(|e| e.to_string())?;
        for out in [pmft_lbp(&net, Task::new(n)), mft_lbp_heuristic(&net, Task::new(n))] {
            let out = out.map_err(|e| e.to_string())?;
            ensure(out.schedule.is_integral(), || format!("mesh {i}: non-integral shares"))?;
            let v = source_volume_exact(&out.k(), n);
            ensure(v == 2 * n as u128 * n as u128, || format!("mesh {i}: volume {v} for N={n}"))?;
            schedules += 1;
        }
    }
    Ok(format!("{schedules} schedules emit exactly 2N^2"))
}

fn criterion_2() -> Check {
    let config = ExperimentConfig {
        network: Topology::Star { children: 16 },
        sizes: (1..=10).map(|i| 100 * i).collect(),
        trials: 10,
        seed: 2,
        algorithms: vec![Algorithm::LbpPccs, Algorithm::RectLowerBound],
        ranges: ParamRanges::default(),
        chunks: 16,
    };
    let report = run_experiment(&config).map_err(|e| e.to_string())?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &n in &config.sizes {
        let volumes = |algo: Algorithm| -> Vec<f64> {
            report.raw_rows().filter(|r| r.algorithm == algo.name() && r.n == n).map(|r| r.comm_volume).collect()
        };
        let lbp = volumes(Algorithm::LbpPccs);
        let bound = volumes(Algorithm::RectLowerBound);
        let ratio = lbp.iter().zip(&bound).map(|(a, b)| a / b).sum::<f64>() / lbp.len() as f64;
        ensure((0.23..=0.30).contains(&ratio), || format!("N={n}: mean ratio {ratio}"))?;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    Ok(format!("mean LBP/lower-bound ratio in [{lo:.4}, {hi:.4}]"))
}

/// Finish time of child `i` as a linear form over the shares plus nothing
/// else; row `i` of the returned matrix holds its coefficients.
fn finish_coefficients(net: &NetworkModel, n: f64, mode: StarMode) -> DMatrix<f64> {
    let p = net.len() - 1;
    let comp = |i: usize| n * n * net.w(i + 1) * net.t_cp();
    let comm = |i: usize| 2.0 * n * net.link(0, i + 1).unwrap().z * net.t_cm();
    DMatrix::from_fn(p, p, |i, j| match mode {
        StarMode::Scss => (if j < i { comm(j) } else { 0.0 }) + if i == j { comp(i) } else { 0.0 },
        StarMode::Sccs => (if j <= i { comm(j) } else { 0.0 }) + if i == j { comp(i) } else { 0.0 },
        StarMode::Pccs => {
            if i == j {
                comm(i) + comp(i)
            } else {
                0.0
            }
        }
        StarMode::Pcss => {
            if i == j {
                comp(i)
            } else {
                0.0
            }
        }
    })
}

/// Solves "all finish times equal T, shares sum to N" densely.
fn dense_star_oracle(net: &NetworkModel, task: Task, mode: StarMode) -> (Vec<f64>, f64) {
    let p = net.len() - 1;
    let f = finish_coefficients(net, task.n as f64, mode);
    let mut m = DMatrix::zeros(p + 1, p + 1);
    let mut b = DVector::zeros(p + 1);
    for i in 0..p {
        for j in 0..p {
            m[(i, j)] = f[(i, j)];
        }
        m[(i, p)] = -1.0;
        m[(p, i)] = 1.0;
    }
    b[p] = task.n as f64;
    let x = m.lu().solve(&b).expect("equal-finish system is nonsingular");
    (x.iter().take(p).copied().collect(), x[p])
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_spread: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    let mut infeasible = 0;
    for i in 0..1000u64 {
        let children = rng.gen_range(1..=20);
        let task = Task::new(rng.gen_range(1..=1000));
        let net =
            gen_network(Topology::Star { children }, 5000 + i, ParamRanges::default()).map_err(|e| e.to_string())?;
        for mode in StarMode::ALL {
            let (k_ref, t_ref) = dense_star_oracle(&net, task, mode);
            let sol = match solve_star_relaxed(&net, task, mode) {
                Ok(s) => s,
                Err(Error::InfeasibleMode { .. }) => {
                    ensure(k_ref.iter().any(|&k| k <= 0.0), || {
                        format!("star {i} {mode}: oracle shares are all positive")
                    })?;
                    infeasible += 1;
                    continue;
                }
                Err(e) => return Err(e.to_string()),
            };
            let max = sol.per_node_finish.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = sol.per_node_finish.iter().copied().fold(f64::INFINITY, f64::min);
            let spread = rel_err(max, min);
            ensure(spread <= 1e-9, || format!("star {i} {mode}: finish spread {spread:e}"))?;
            let mut err = rel_err(sol.t_f, t_ref);
            for (a, b) in sol.k.iter().zip(&k_ref) {
                err = err.max((a - b).abs() / task.n as f64);
            }
            ensure(err <= 1e-9, || format!("star {i} {mode}: closed form off the dense oracle by {err:e}"))?;
            worst_spread = worst_spread.max(spread);
            worst_oracle = worst_oracle.max(err);
        }
    }
    Ok(format!("max finish spread {worst_spread:.1e}, max oracle error {worst_oracle:.1e}, {infeasible} infeasible mode instances agreed"))
}

fn criterion_4() -> Check {
    let relaxed = |net: &NetworkModel, n: u64| -> Result<(Vec<f64>, f64), String> {
        let problem = MeshProblem::new(net, Task::new(n)).map_err(|e| e.to_string())?;
        let sol = solve_lp(&problem.relaxation()).and_then(|s| s.into_optimal()).map_err(|e| e.to_string())?;
        let (schedule, timing) = extract_schedule(&sol, &problem).map_err(|e| e.to_string())?;
        Ok((schedule.k, timing.overall))
    };
    let close = |got: &[f64], want: &[f64], what: &str| {
        ensure(got.iter().zip(want).all(|(a, b)| (a - b).abs() <= 1e-6), || {
            format!("{what}: got {got:?}, want {want:?}")
        })
    };
    let unit = |rows, cols| NetworkModel::homogeneous_quadrant(rows, cols, 1.0, 1.0, 1.0, 1.0).unwrap();

    let (w, z) = (0.7, 0.3);
    let pair = NetworkModel::homogeneous_quadrant(1, 2, w, z, 1.0, 1.0).unwrap();
    let (k, t) = relaxed(&pair, 4)?;
    close(&k, &[0.0, 4.0], "1x2 shares")?;
    close(&[t], &[32.0 * z + 64.0 * w], "1x2 makespan")?;

    let (k, t) = relaxed(&unit(1, 3), 4)?;
    close(&k, &[0.0, 2.4, 1.6], "1x3 shares")?;
    close(&[t], &[70.4], "1x3 makespan")?;

    let (k, t) = relaxed(&unit(2, 2), 4)?;
    close(&k, &[0.0, 10.0 / 7.0, 10.0 / 7.0, 8.0 / 7.0], "2x2 shares")?;
    close(&[t], &[272.0 / 7.0], "2x2 makespan")?;

    let (k, t) = relaxed(&unit(2, 2), 0)?;
    close(&k, &[0.0; 4], "2x2 empty task")?;
    close(&[t], &[0.0], "2x2 empty task makespan")?;
    Ok("1x2, 1x3 and 2x2 fixtures match the hand-derived optima".into())
}

fn criterion_5() -> Check {
    let mut instances = 0;
    let mut worst_pmft: f64 = 0.0;
    let mut worst_search: f64 = 0.0;
    for (rows, cols) in quadrant_shapes_up_to(4) {
        let mut nets = vec![NetworkModel::homogeneous_quadrant(rows, cols, 1.0, 1.0, 1.0, 1.0).unwrap()];
        for seed in 0..3 {
            nets.push(gen_network(Topology::MeshQuadrant { rows, cols }, 700 + seed, ParamRanges::default()).unwrap());
        }
        for net in &nets {
            for n in 1..=8 {
                let task = Task::new(n);
                let opt = brute_force_optimum(net, task);
                let pm = pmft_lbp(net, task).map_err(|e| e.to_string())?;
                let relaxed = pm.relaxed_k.clone().expect("pmft solves the relaxation");
                let start = fifs(net, task, &relaxed).map_err(|e| e.to_string())?;
                let ns = neighbor_search(net, task, &start.k).map_err(|e| e.to_string())?;
                let (rp, rs) = (pm.t_f() / opt, ns.t_f() / opt);
                ensure(rp <= 1.02, || format!("{rows}x{cols} N={n}: pmft {} vs optimum {opt}", pm.t_f()))?;
                ensure(rs <= 1.02, || format!("{rows}x{cols} N={n}: neighbor search {} vs optimum {opt}", ns.t_f()))?;
                worst_pmft = worst_pmft.max(rp);
                worst_search = worst_search.max(rs);
                instances += 1;
            }
        }
    }
    Ok(format!("{instances} instances, worst pmft/opt {worst_pmft:.4}, worst search/opt {worst_search:.4}"))
}

fn criterion_6() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let net = gen_network(Topology::MeshQuadrant { rows: 3, cols: 3 }, 600 + seed, ParamRanges::default()).unwrap();
        for n in [50, 100, 200] {
            let task = Task::new(n);
            let pm = pmft_lbp(&net, task).map_err(|e| e.to_string())?;
            let h = mft_lbp_heuristic(&net, task).map_err(|e| e.to_string())?;
            ensure(h.core_lp_solves == 2, || format!("seed {seed} N={n}: {} core LP solves", h.core_lp_solves))?;
            let ratio = h.t_f() / pm.t_f();
            ensure(ratio <= 1.05, || format!("seed {seed} N={n}: heuristic/pmft {ratio}"))?;
            worst = worst.max(ratio);
        }
    }
    Ok(format!("worst heuristic/pmft makespan {worst:.5}, core always 2 LP solves"))
}

fn criterion_7() -> Check {
    let sizes: Vec<u64> = (1..=10).map(|i| 100 * i).collect();
    let mut summary = Vec::new();
    for (rows, cols) in [(2, 2), (3, 3), (4, 4)] {
        let config = ExperimentConfig {
            network: Topology::MeshQuadrant { rows, cols },
            sizes: sizes.clone(),
            trials: 10,
            seed: 7,
            algorithms: vec![Algorithm::Pmft, Algorithm::Heuristic],
            ranges: ParamRanges::default(),
            chunks: 16,
        };
        let report = run_experiment(&config).map_err(|e| e.to_string())?;
        let per_size = |algo: Algorithm| -> Vec<f64> {
            sizes.iter().map(|&n| report.aggregate(algo, n).and_then(|r| r.lp_iterations).unwrap()).collect()
        };
        let pm = per_size(Algorithm::Pmft);
        let h = per_size(Algorithm::Heuristic);
        let (pm_mean, h_mean) = (pm.iter().sum::<f64>() / pm.len() as f64, h.iter().sum::<f64>() / h.len() as f64);
        ensure(h_mean < pm_mean, || format!("{rows}x{cols}: heuristic {h_mean} vs pmft {pm_mean} mean iterations"))?;
        for algo in [Algorithm::Pmft, Algorithm::Heuristic] {
            let (xs, ys): (Vec<f64>, Vec<f64>) = report
                .raw_rows()
                .filter(|r| r.algorithm == algo.name())
                .map(|r| (r.n as f64, r.lp_iterations.unwrap()))
                .unzip();
            let r = pearson(&xs, &ys);
            ensure(r.abs() < 0.5, || format!("{rows}x{cols} {algo}: iterations correlate with N (r = {r:.3})"))?;
            summary.push(format!("{rows}x{cols} {algo} r={r:.2}"));
        }
        summary.push(format!("{rows}x{cols} mean iterations {h_mean:.1} < {pm_mean:.1}"));
    }
    Ok(summary.join(", "))
}

fn criterion_8() -> Check {
    let n = 200u64;
    let config = ExperimentConfig {
        network: Topology::MeshQuadrant { rows: 3, cols: 3 },
        sizes: vec![n],
        trials: 10,
        seed: 8,
        algorithms: vec![Algorithm::Pmft, Algorithm::Summa, Algorithm::Pipeline, Algorithm::ModifiedPipeline],
        ranges: ParamRanges::default(),
        chunks: 16,
    };
    let report = run_experiment(&config).map_err(|e| e.to_string())?;
    let agg = |a: Algorithm| report.aggregate(a, n).unwrap().clone();
    let (lbp, summa, pipe, mpipe) =
        (agg(Algorithm::Pmft), agg(Algorithm::Summa), agg(Algorithm::Pipeline), agg(Algorithm::ModifiedPipeline));
    let exact = 8 * 2 * n * n;
    for row in report.raw_rows().filter(|r| r.algorithm == Algorithm::Pipeline.name()) {
        ensure(row.comm_volume == exact as f64, || format!("pipeline volume {} != {exact}", row.comm_volume))?;
    }
    let t_lbp = lbp.finish_time.unwrap();
    for b in [&summa, &pipe, &mpipe] {
        ensure(t_lbp <= b.finish_time.unwrap(), || {
            format!("pmft mean makespan {t_lbp} above {} {}", b.algorithm, b.finish_time.unwrap())
        })?;
    }
    ensure(lbp.comm_volume < mpipe.comm_volume, || {
        format!("LBP volume {} not below mpipeline {}", lbp.comm_volume, mpipe.comm_volume)
    })?;
    ensure(mpipe.comm_volume < pipe.comm_volume, || {
        format!(
            "mpipeline volume {} not below pipeline volume {}: both ship one full copy to each of the p-1 workers",
            mpipe.comm_volume, pipe.comm_volume
        )
    })?;
    Ok(format!("volumes lbp {} < mpipe {} < pipe {}", lbp.comm_volume, mpipe.comm_volume, pipe.comm_volume))
}

fn run_property<S: Strategy>(
    cases: u32,
    seed: u64,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config { cases, rng_seed: RngSeed::Fixed(seed), failure_persistence: None, ..Config::default() };
    TestRunner::new(config).run(&strategy, test).map_err(|e| e.to_string())
}

fn small_mesh() -> impl Strategy<Value = (usize, usize, u64, u64)> {
    prop_oneof![Just((1usize, 2usize)), Just((1, 3)), Just((2, 2)), Just((1, 4)), Just((2, 3))]
        .prop_flat_map(|(r, c)| (Just(r), Just(c), 0u64..1_000_000, 0u64..=40))
}

fn criterion_9() -> Check {
    const CASES: u32 = 2500;
    let ranges = ParamRanges::default();

    run_property(CASES, 91, (proptest::collection::vec(0.01f64..100.0, 2..24), 1u64..2000), |(weights, n)| {
        let total: f64 = weights.iter().sum();
        let n2 = (n * n) as f64;
        let areas: Vec<f64> = weights.iter().map(|w| w / total * n2).collect();
        let bound = rect_lower_bound(&areas, n).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(bound > 2.0 * n2, "bound {} vs 2N^2 {}", bound, 2.0 * n2);
        Ok(())
    })
    .map_err(|e| format!("rectangular bound: {e}"))?;

    run_property(CASES, 92, small_mesh(), |(rows, cols, seed, n)| {
        let net = gen_network(Topology::MeshQuadrant { rows, cols }, seed, ranges).unwrap();
        let task = Task::new(n);
        let problem = MeshProblem::new(&net, task).unwrap();
        let sol = solve_lp(&build_relaxation(&net, task).unwrap()).unwrap().into_optimal().unwrap();
        let (schedule, _) = extract_schedule(&sol, &problem).unwrap();
        for i in 1..net.len() {
            let inflow: f64 = schedule.flows.iter().filter(|f| f.to == i).map(|f| f.volume).sum();
            let outflow: f64 = schedule.flows.iter().filter(|f| f.from == i).map(|f| f.volume).sum();
            let residual = inflow - outflow - 2.0 * schedule.k[i] * n as f64;
            prop_assert!(residual.abs() < 1e-6, "node {} residual {}", i, residual);
        }
        Ok(())
    })
    .map_err(|e| format!("flow conservation: {e}"))?;

    run_property(CASES, 93, small_mesh(), |(rows, cols, seed, n)| {
        let net = gen_network(Topology::MeshQuadrant { rows, cols }, seed, ranges).unwrap();
        let out = pmft_lbp(&net, Task::new(n)).unwrap();
        for pair in out.descent.windows(2) {
            prop_assert!(pair[1] < pair[0], "descent {:?}", out.descent);
        }
        Ok(())
    })
    .map_err(|e| format!("phase III descent: {e}"))?;

    run_property(
        CASES,
        94,
        (small_mesh(), proptest::collection::vec(0.0f64..1.0, 5)),
        |((rows, cols, seed, n), noise)| {
            let net = gen_network(Topology::MeshQuadrant { rows, cols }, seed, ranges).unwrap();
            // arbitrary non-negative shares near a valid split, not necessarily summing to N
            let p = net.len();
            let mut relaxed = vec![0.0; p];
            for i in 1..p {
                relaxed[i] = n as f64 / (p - 1) as f64 * (0.5 + noise[i % noise.len()]);
            }
            let r = fifs(&net, Task::new(n), &relaxed).unwrap();
            prop_assert_eq!(r.k.iter().sum::<u64>(), n);
            prop_assert_eq!(r.k[0], 0);
            Ok(())
        },
    )
    .map_err(|e| format!("FIFS normalization: {e}"))?;

    Ok(format!("4 properties x {CASES} cases = {} cases passed", 4 * CASES))
}

type Criterion = (&'static str, Duration, fn() -> Check);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("communication optimality", Duration::from_secs(1), criterion_1),
        ("reduction from the rectangular lower bound", Duration::from_secs(10), criterion_2),
        ("equal finish on stars", Duration::from_secs(10), criterion_3),
        ("mesh LP fixtures", Duration::from_secs(1), criterion_4),
        ("exhaustive oracle at desk scale", Duration::from_secs(120), criterion_5),
        ("heuristic gap", Duration::from_secs(120), criterion_6),
        ("simplex iteration trend", Duration::from_secs(300), criterion_7),
        ("baseline orderings", Duration::from_secs(120), criterion_8),
        ("property suite", Duration::from_secs(60), criterion_9),
    ];
    let mut failed = 0;
    for (idx, (title, limit, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let result = check();
        let elapsed = t0.elapsed();
        let result = result.and_then(|detail| {
            if elapsed <= *limit {
                Ok(detail)
            } else {
                Err(format!("took {elapsed:.2?}, limit {limit:?} ({detail})"))
            }
        });
        match result {
            Ok(detail) => println!("criterion {} PASS  {title} [{elapsed:.2?}]: {detail}", idx + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL  {title} [{elapsed:.2?}]: {detail}", idx + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
