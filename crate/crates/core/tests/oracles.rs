//! Cross-checks against independent brute-force oracles.

use approx::assert_relative_eq;
use lbp::lp::{solve_lp, LinearProgram, LpStatus, Relation};
use lbp::mesh::{build_relaxation, mft_lbp_heuristic, pmft_lbp, resolve_fixed_k};
use lbp::sim::{evaluate_schedule, gen_network, ParamRanges, Topology};
use lbp::star::{solve_star, solve_star_relaxed};
use lbp::{compute_load, lbp_source_volume, per_processor_volume, NetworkModel, StarMode, Task};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct SmallLp {
    /// Rows `a . x (rel) b`, bounds `0 <= x <= upper`.
    rows: Vec<(Vec<f64>, Relation, f64)>,
    objective: Vec<f64>,
    upper: f64,
}

impl SmallLp {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=8);
        let upper = 10.0;
        let anchor: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..upper)).collect();
        let rows = (0..m)
            .map(|_| {
                let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let at: f64 = a.iter().zip(&anchor).map(|(x, y)| x * y).sum();
                match rng.gen_range(0..5) {
                    0 => (a, Relation::Eq, at),
                    1 | 2 => (a, Relation::Ge, at - rng.gen_range(0.0..5.0)),
                    _ => (a, Relation::Le, at + rng.gen_range(0.0..5.0)),
                }
            })
            .collect();
        let objective = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        SmallLp { rows, objective, upper }
    }

    fn n(&self) -> usize {
        self.objective.len()
    }

    fn program(&self) -> LinearProgram {
        let mut lp = LinearProgram::new(self.n());
        for (j, &c) in self.objective.iter().enumerate() {
            lp.set_objective(j, c);
            lp.set_bounds(j, 0.0, self.upper);
        }
        for (a, rel, b) in &self.rows {
            lp.add_constraint(a.iter().copied().enumerate().collect(), *rel, *b);
        }
        lp
    }

    fn feasible(&self, x: &[f64]) -> bool {
        let tol = 1e-7;
        x.iter().all(|&v| v >= -tol && v <= self.upper + tol)
            && self.rows.iter().all(|(a, rel, b)| {
                let lhs: f64 = a.iter().zip(x).map(|(p, q)| p * q).sum();
                match rel {
                    Relation::Le => lhs <= b + tol,
                    Relation::Ge => lhs >= b - tol,
                    Relation::Eq => (lhs - b).abs() <= tol,
                }
            })
    }

    /// Minimum over all vertices of the polytope.
    fn vertex_optimum(&self) -> f64 {
        let n = self.n();
        let mut planes: Vec<(Vec<f64>, f64)> = self.rows.iter().map(|(a, _, b)| (a.clone(), *b)).collect();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            planes.push((e.clone(), 0.0));
            planes.push((e, self.upper));
        }
        let mut best = f64::INFINITY;
        let mut pick = Vec::new();
        subsets(planes.len(), n, 0, &mut pick, &mut |idx| {
            let m = DMatrix::from_fn(n, n, |r, c| planes[idx[r]].0[c]);
            let b = DVector::from_fn(n, |r, _| planes[idx[r]].1);
            if m.determinant().abs() < 1e-9 {
                return;
            }
            if let Some(x) = m.lu().solve(&b) {
                let x: Vec<f64> = x.iter().copied().collect();
                if self.feasible(&x) {
                    let v: f64 = self.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
                    best = best.min(v);
                }
            }
        });
        best
    }
}

fn subsets(total: usize, size: usize, from: usize, pick: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    if pick.len() == size {
        visit(pick);
        return;
    }
    for i in from..total {
        pick.push(i);
        subsets(total, size, i + 1, pick, visit);
        pick.pop();
    }
}

#[test]
fn simplex_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..100 {
        let small = SmallLp::random(&mut rng);
        let sol = solve_lp(&small.program()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal, "case {case}");
        assert!(small.feasible(&sol.values), "case {case}: returned point infeasible");
        let want = small.vertex_optimum();
        assert!(
            (sol.objective_value - want).abs() <= 1e-6 * want.abs().max(1.0),
            "case {case}: {} vs {want}",
            sol.objective_value
        );
    }
}

fn homogeneous(rows: usize, cols: usize) -> NetworkModel {
    NetworkModel::homogeneous_quadrant(rows, cols, 1.0, 1.0, 1.0, 1.0).unwrap()
}

fn all_loads(total: u64, workers: usize) -> Vec<Vec<u64>> {
    fn go(total: u64, slots: usize, prefix: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if slots == 0 {
            if total == 0 {
                out.push(prefix.clone());
            }
            return;
        }
        for first in 0..=total {
            prefix.push(first);
            go(total - first, slots - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(total, workers, &mut vec![0], &mut out);
    out
}

fn brute_force(net: &NetworkModel, task: Task) -> (f64, Vec<Vec<u64>>) {
    let scored: Vec<(f64, Vec<u64>)> = all_loads(task.n, net.len() - 1)
        .into_iter()
        .map(|k| (resolve_fixed_k(net, task, &k).unwrap().t_f, k))
        .collect();
    let best = scored.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let argbest = scored.into_iter().filter(|s| s.0 <= best * (1.0 + 1e-9)).map(|s| s.1).collect();
    (best, argbest)
}

#[test]
fn composition_counts() {
    assert_eq!(all_loads(4, 2).len(), 5);
    assert_eq!(all_loads(6, 3).len(), 28);
}

#[test]
fn pmft_reaches_the_chain_optimum() {
    let net = homogeneous(1, 3);
    let task = Task::new(4);
    let (best, argbest) = brute_force(&net, task);
    let out = pmft_lbp(&net, task).unwrap();
    assert_relative_eq!(out.t_f(), best, max_relative = 1e-9);
    assert!(argbest.contains(&out.k()));
    let h = mft_lbp_heuristic(&net, task).unwrap();
    assert!(h.t_f() <= 1.01 * out.t_f());
}

#[test]
fn symmetric_quadrant_optimum() {
    let net = homogeneous(2, 2);
    let task = Task::new(6);
    let (best, argbest) = brute_force(&net, task);
    let out = pmft_lbp(&net, task).unwrap();
    assert_relative_eq!(out.t_f(), best, max_relative = 1e-9);
    assert!(argbest.contains(&out.k()), "{:?} not among {argbest:?}", out.k());
    let h = mft_lbp_heuristic(&net, task).unwrap();
    assert_eq!(h.k(), out.k());
}

#[test]
fn relaxation_bounds_every_integer_schedule() {
    for (rows, cols) in [(1, 3), (2, 2), (1, 4), (1, 5)] {
        for seed in 0..3 {
            let net = gen_network(Topology::MeshQuadrant { rows, cols }, 40 + seed, ParamRanges::default()).unwrap();
            for n in [1, 3, 6, 8] {
                let task = Task::new(n);
                let relaxed = solve_lp(&build_relaxation(&net, task).unwrap()).unwrap().objective_value;
                let (best, _) = brute_force(&net, task);
                assert!(
                    relaxed <= best * (1.0 + 1e-9),
                    "{rows}x{cols} N={n}: relaxed {relaxed} above integer optimum {best}"
                );
            }
        }
    }
}

#[test]
fn extracted_schedules_reproduce_lp_makespan() {
    for seed in 0..20 {
        let net = gen_network(Topology::MeshQuadrant { rows: 3, cols: 3 }, seed, ParamRanges::default()).unwrap();
        let task = Task::new(150);
        let relaxed = solve_lp(&build_relaxation(&net, task).unwrap()).unwrap().objective_value;
        let out = pmft_lbp(&net, task).unwrap();
        assert_relative_eq!(out.relaxed_t_f.unwrap(), relaxed, max_relative = 1e-6);
        let (timing, volume) = evaluate_schedule(&net, task, &out.schedule).unwrap();
        assert_relative_eq!(timing.overall, out.t_f(), max_relative = 1e-6);
        assert!(volume >= 2.0 * 150.0 * 150.0 * (1.0 - 1e-9));
    }
}

#[test]
fn link_volume_equals_source_volume_only_for_one_hop_loads() {
    let net = homogeneous(1, 3);
    let task = Task::new(4);
    let near = resolve_fixed_k(&net, task, &[0, 4, 0]).unwrap().schedule();
    assert_relative_eq!(near.total_link_volume(), 32.0, max_relative = 1e-9);
    let far = resolve_fixed_k(&net, task, &[0, 2, 2]).unwrap().schedule();
    assert!(far.total_link_volume() > 32.0 + 1e-6);
}

#[test]
fn star_volumes_and_work_are_conserved() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..50 {
        let children = rng.gen_range(1..=16);
        let n = rng.gen_range(1..=500u64);
        let task = Task::new(n);
        let net = gen_network(Topology::Star { children }, seed, ParamRanges::default()).unwrap();
        for mode in StarMode::ALL {
            let Ok(relaxed) = solve_star_relaxed(&net, task, mode) else { continue };
            let sol = solve_star(&net, task, mode).unwrap();
            assert!(sol.t_f >= relaxed.t_f * (1.0 - 1e-9), "{mode}: integer {} below relaxed {}", sol.t_f, relaxed.t_f);
            let k: Vec<u64> = sol.k.iter().map(|&x| x as u64).collect();
            assert_eq!(k.iter().sum::<u64>(), n);
            let vol: f64 = k.iter().map(|&ki| per_processor_volume(task, ki).unwrap()).sum();
            assert_eq!(vol, lbp_source_volume(task));
            let work: f64 = k.iter().map(|&ki| compute_load(task, ki).unwrap()).sum();
            assert_eq!(work, (n * n * n) as f64);
            if mode == StarMode::Pcss {
                let kw: Vec<f64> = relaxed.k.iter().enumerate().map(|(i, k)| k * net.w(i + 1)).collect();
                for x in &kw {
                    assert_relative_eq!(*x, kw[0], max_relative = 1e-9);
                }
            }
        }
    }
}
