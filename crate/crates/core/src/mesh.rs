//! Mesh quadrant scheduling under parallel-communication, consecutive-start
//! semantics.
//!
//! The min-max finish time program is linearized (an explicit makespan
//! variable plus start-time inequalities) and its integrality relaxed, which
//! gives an LP. Integer schedules come from rounding that LP optimum and
//! repairing it with finish-time-guided unit moves:
//!
//! * [`pmft_lbp`]: relax, repair with [`fifs`], then max-to-min unit moves
//!   while they strictly improve the makespan.
//! * [`mft_lbp_heuristic`]: relax, round, one fixed-load LP, a circular
//!   repair pass, and a single improvement test.
//! * [`neighbor_search`]: steepest descent over every single-column move.
//!
//! Any acyclic single-source network works; quadrants are the intended use.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpSolution, Relation};
use crate::model::{Flow, NetworkKind, NetworkModel, Schedule, StarMode, Task, Timing};
use crate::sim::evaluate_flows;
use crate::{argmax_tol, argmin_tol, round_half_up, TIE_RTOL};

/// Variable layout of the mesh program.
#[derive(Debug, Clone)]
pub struct MeshProblem<'a> {
    net: &'a NetworkModel,
    task: Task,
    source: usize,
    /// Per node: `k_i`, `T_s(i)`, `T_f(i)`.
    k: Vec<usize>,
    ts: Vec<usize>,
    tf: Vec<usize>,
    /// `(from, to, variable)` for every link.
    flows: Vec<(usize, usize, usize)>,
    makespan: usize,
    num_vars: usize,
}

impl<'a> MeshProblem<'a> {
    pub fn new(net: &'a NetworkModel, task: Task) -> Result<Self> {
        if net.kind() == NetworkKind::FullMesh {
            return Err(Error::KindMismatch { algorithm: "mesh LP".into(), kind: net.kind().to_string() });
        }
        let source = net.single_source()?;
        net.topological_order()?;
        let p = net.len();
        let k: Vec<usize> = (0..p).collect();
        let ts: Vec<usize> = (p..2 * p).collect();
        let tf: Vec<usize> = (2 * p..3 * p).collect();
        let mut next = 3 * p;
        let flows = net
            .links()
            .iter()
            .map(|l| {
                next += 1;
                (l.from, l.to, next - 1)
            })
            .collect();
        let makespan = next;
        Ok(MeshProblem { net, task, source, k, ts, tf, flows, makespan, num_vars: next + 1 })
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn k_var(&self, i: usize) -> usize {
        self.k[i]
    }

    pub fn start_var(&self, i: usize) -> usize {
        self.ts[i]
    }

    pub fn finish_var(&self, i: usize) -> usize {
        self.tf[i]
    }

    pub fn flow_var(&self, from: usize, to: usize) -> Option<usize> {
        self.flows.iter().find(|f| f.0 == from && f.1 == to).map(|f| f.2)
    }

    pub fn makespan_var(&self) -> usize {
        self.makespan
    }

    fn names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.num_vars];
        for i in 0..self.net.len() {
            names[self.k[i]] = format!("k_{i}");
            names[self.ts[i]] = format!("Ts_{i}");
            names[self.tf[i]] = format!("Tf_{i}");
        }
        for &(a, b, v) in &self.flows {
            names[v] = format!("phi_{a}_{b}");
        }
        names[self.makespan] = "T_f".into();
        names
    }

    /// The program with free `k` (`fixed = None`) or with every `k_i` pinned.
    /// Pinned programs drop the normalization row and the source emits
    /// exactly what the pinned loads consume.
    fn program(&self, fixed: Option<&[u64]>) -> LinearProgram {
        let net = self.net;
        let n = self.task.nf();
        let p = net.len();
        let mut lp = LinearProgram::new(self.num_vars);
        lp.names = self.names();
        lp.set_objective(self.makespan, 1.0);

        lp.add_constraint(vec![(self.ts[self.source], 1.0)], Relation::Eq, 0.0);
        for &(j, i, v) in &self.flows {
            if i == self.source {
                continue;
            }
            let z = net.link(j, i).expect("flow on a link").z;
            lp.add_constraint(vec![(self.ts[i], 1.0), (self.ts[j], -1.0), (v, -z * net.t_cm())], Relation::Ge, 0.0);
        }
        for i in 0..p {
            let mut row = vec![(self.tf[i], 1.0), (self.ts[i], -1.0)];
            let c = n * n * net.w(i) * net.t_cp();
            if c != 0.0 {
                row.push((self.k[i], -c));
            }
            lp.add_constraint(row, Relation::Eq, 0.0);
        }
        let emitted = match fixed {
            None => 2.0 * n * n,
            Some(k) => 2.0 * n * k.iter().sum::<u64>() as f64,
        };
        let out: Vec<(usize, f64)> = self.flows.iter().filter(|f| f.0 == self.source).map(|f| (f.2, 1.0)).collect();
        lp.add_constraint(out, Relation::Eq, emitted);
        for i in (0..p).filter(|&i| i != self.source) {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for &(a, b, v) in &self.flows {
                if b == i {
                    row.push((v, 1.0));
                } else if a == i {
                    row.push((v, -1.0));
                }
            }
            if n != 0.0 {
                row.push((self.k[i], -2.0 * n));
            }
            lp.add_constraint(row, Relation::Eq, 0.0);
        }
        for i in (0..p).filter(|&i| i != self.source) {
            if let Some(d) = net.processors()[i].storage {
                lp.add_constraint(vec![(self.k[i], 2.0 * n)], Relation::Le, d - n * n);
            }
        }
        match fixed {
            None => {
                let row = (0..p).map(|i| (self.k[i], 1.0)).collect();
                lp.add_constraint(row, Relation::Eq, n);
            }
            Some(k) => {
                for i in 0..p {
                    lp.fix(self.k[i], k[i] as f64);
                }
            }
        }
        for i in 0..p {
            lp.add_constraint(vec![(self.makespan, 1.0), (self.tf[i], -1.0)], Relation::Ge, 0.0);
        }
        lp.fix(self.k[self.source], 0.0);
        lp
    }

    pub fn relaxation(&self) -> LinearProgram {
        self.program(None)
    }

    fn flows_from(&self, values: &[f64]) -> Vec<Flow> {
        self.flows.iter().map(|&(from, to, v)| Flow { from, to, volume: values[v].max(0.0) }).collect()
    }
}

/// The relaxed mesh program for `net` and `task`.
pub fn build_relaxation(net: &NetworkModel, task: Task) -> Result<LinearProgram> {
    Ok(MeshProblem::new(net, task)?.relaxation())
}

/// Schedule and timing read back from an optimal LP solution.
pub fn extract_schedule(solution: &LpSolution, problem: &MeshProblem<'_>) -> Result<(Schedule, Timing)> {
    solution.clone().into_optimal()?;
    let v = &solution.values;
    let p = problem.net.len();
    let k: Vec<f64> = (0..p).map(|i| v[problem.k[i]].max(0.0)).collect();
    let start: Vec<f64> = (0..p).map(|i| v[problem.ts[i]]).collect();
    let finish: Vec<f64> = (0..p).map(|i| v[problem.tf[i]]).collect();
    let schedule = Schedule { k, flows: problem.flows_from(v), mode: StarMode::Pccs };
    schedule.validate(problem.net, problem.task, 1e-7)?;
    let mut timing = Timing::new(start, finish);
    timing.overall = v[problem.makespan];
    Ok((schedule, timing))
}

/// Result of re-solving the program with every `k_i` pinned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedSolve {
    pub k: Vec<u64>,
    /// Earliest start/finish times under the chosen flows.
    pub timing: Timing,
    pub flows: Vec<Flow>,
    pub t_f: f64,
    pub iterations: u64,
}

impl FixedSolve {
    pub fn schedule(&self) -> Schedule {
        Schedule { k: self.k.iter().map(|&k| k as f64).collect(), flows: self.flows.clone(), mode: StarMode::Pccs }
    }
}

/// Best routing and timing for a fixed integer load vector. `k_fixed` need
/// not sum to `N`.
pub fn resolve_fixed_k(net: &NetworkModel, task: Task, k_fixed: &[u64]) -> Result<FixedSolve> {
    let problem = MeshProblem::new(net, task)?;
    resolve_with(&problem, k_fixed)
}

fn resolve_with(problem: &MeshProblem<'_>, k_fixed: &[u64]) -> Result<FixedSolve> {
    let net = problem.net;
    if k_fixed.len() != net.len() {
        return Err(Error::InvalidSchedule(format!("{} loads for {} processors", k_fixed.len(), net.len())));
    }
    if k_fixed[problem.source] != 0 {
        return Err(Error::InvalidSchedule("the source cannot take load".into()));
    }
    let sol = solve_lp(&problem.program(Some(k_fixed)))?.into_optimal()?;
    let flows = problem.flows_from(&sol.values);
    let kf: Vec<f64> = k_fixed.iter().map(|&k| k as f64).collect();
    let timing = evaluate_flows(net, problem.task, &kf, &flows)?;
    Ok(FixedSolve { k: k_fixed.to_vec(), t_f: timing.overall, timing, flows, iterations: sol.iterations })
}

/// Phase trace entries, also emitted as `debug` log lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MeshEvent {
    Relaxed { k: Vec<f64>, t_f: f64, iterations: u64 },
    Rounded { k: Vec<u64> },
    Correction { node: usize, delta: i64, k: Vec<u64> },
    Move { from: usize, to: usize, t_f: f64, accepted: bool },
    Resolved { k: Vec<u64>, t_f: f64, iterations: u64 },
}

fn log_event(trace: &mut Vec<MeshEvent>, event: MeshEvent) {
    debug!("{}", serde_json::to_string(&event).unwrap_or_default());
    trace.push(event);
}

/// Integer schedule produced by one of the mesh algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshOutcome {
    pub schedule: Schedule,
    pub timing: Timing,
    /// Relaxed optimum shares, when a relaxation was solved.
    pub relaxed_k: Option<Vec<f64>>,
    /// Relaxed optimum makespan (a lower bound on every integer schedule).
    pub relaxed_t_f: Option<f64>,
    /// Simplex pivots over every LP solve.
    pub lp_iterations: u64,
    pub lp_solves: usize,
    /// LP solves made before any local improvement step.
    pub core_lp_solves: usize,
    /// Makespan of the starting point followed by every accepted move.
    pub descent: Vec<f64>,
    pub trace: Vec<MeshEvent>,
}

impl MeshOutcome {
    pub fn k(&self) -> Vec<u64> {
        self.schedule.k.iter().map(|&k| k as u64).collect()
    }

    pub fn t_f(&self) -> f64 {
        self.timing.overall
    }

    fn from_solve(solve: &FixedSolve) -> Self {
        MeshOutcome {
            schedule: solve.schedule(),
            timing: solve.timing.clone(),
            relaxed_k: None,
            relaxed_t_f: None,
            lp_iterations: 0,
            lp_solves: 0,
            core_lp_solves: 0,
            descent: Vec::new(),
            trace: Vec::new(),
        }
    }
}

struct Counter {
    iterations: u64,
    solves: usize,
}

impl Counter {
    fn new() -> Self {
        Counter { iterations: 0, solves: 0 }
    }

    fn resolve(&mut self, problem: &MeshProblem<'_>, k: &[u64], trace: &mut Vec<MeshEvent>) -> Result<FixedSolve> {
        let s = resolve_with(problem, k)?;
        self.iterations += s.iterations;
        self.solves += 1;
        log_event(trace, MeshEvent::Resolved { k: k.to_vec(), t_f: s.t_f, iterations: s.iterations });
        Ok(s)
    }

    fn relax(&mut self, problem: &MeshProblem<'_>, trace: &mut Vec<MeshEvent>) -> Result<(Schedule, Timing)> {
        let sol = solve_lp(&problem.relaxation())?.into_optimal()?;
        self.iterations += sol.iterations;
        self.solves += 1;
        let (schedule, timing) = extract_schedule(&sol, problem)?;
        log_event(trace, MeshEvent::Relaxed { k: schedule.k.clone(), t_f: timing.overall, iterations: sol.iterations });
        Ok((schedule, timing))
    }
}

fn workers<'a>(problem: &'a MeshProblem<'_>) -> impl Iterator<Item = usize> + 'a {
    (0..problem.net.len()).filter(move |&i| i != problem.source)
}

fn rounded(problem: &MeshProblem<'_>, relaxed_k: &[f64]) -> Vec<u64> {
    relaxed_k.iter().enumerate().map(|(i, &k)| if i == problem.source { 0 } else { round_half_up(k) }).collect()
}

/// Integer column counts summing to `N`, found from a relaxed solution by
/// rounding half-up and then moving one column per LP re-solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FifsResult {
    pub k: Vec<u64>,
    pub lp_iterations: u64,
    pub lp_solves: usize,
    pub trace: Vec<MeshEvent>,
}

pub fn fifs(net: &NetworkModel, task: Task, relaxed_k: &[f64]) -> Result<FifsResult> {
    let problem = MeshProblem::new(net, task)?;
    let mut counter = Counter::new();
    let mut trace = Vec::new();
    let k = fifs_with(&problem, relaxed_k, &mut counter, &mut trace)?;
    Ok(FifsResult { k, lp_iterations: counter.iterations, lp_solves: counter.solves, trace })
}

fn fifs_with(
    problem: &MeshProblem<'_>,
    relaxed_k: &[f64],
    counter: &mut Counter,
    trace: &mut Vec<MeshEvent>,
) -> Result<Vec<u64>> {
    if relaxed_k.len() != problem.net.len() {
        return Err(Error::InvalidSchedule(format!("{} loads for {} processors", relaxed_k.len(), problem.net.len())));
    }
    let mut k = rounded(problem, relaxed_k);
    log_event(trace, MeshEvent::Rounded { k: k.clone() });
    let n = problem.task.n;
    loop {
        let sum: u64 = k.iter().sum();
        if sum == n {
            return Ok(k);
        }
        let solve = counter.resolve(problem, &k, trace)?;
        let finish = &solve.timing.finish;
        let (node, delta) = if sum > n {
            let j = argmax_tol(finish, workers(problem).filter(|&i| k[i] > 0)).expect("positive sum");
            k[j] -= 1;
            (j, -1)
        } else {
            let j = argmin_tol(finish, workers(problem))
                .ok_or_else(|| Error::MalformedNetwork("network has no workers".into()))?;
            k[j] += 1;
            (j, 1)
        };
        log_event(trace, MeshEvent::Correction { node, delta, k: k.clone() });
    }
}

fn improves(candidate: f64, current: f64) -> bool {
    candidate < current - TIE_RTOL * current.abs()
}

/// Unit move from the latest-finishing loaded worker to the earliest-finishing other worker.
fn max_to_min(problem: &MeshProblem<'_>, cur: &FixedSolve) -> Option<(usize, usize)> {
    let finish = &cur.timing.finish;
    let a = argmax_tol(finish, workers(problem).filter(|&i| cur.k[i] > 0))?;
    let b = argmin_tol(finish, workers(problem).filter(|&i| i != a))?;
    Some((a, b))
}

/// Relax, repair with [`fifs`], then repeatedly move one column from the
/// latest-finishing worker to the earliest-finishing one while the makespan
/// strictly drops.
pub fn pmft_lbp(net: &NetworkModel, task: Task) -> Result<MeshOutcome> {
    let problem = MeshProblem::new(net, task)?;
    let mut counter = Counter::new();
    let mut trace = Vec::new();
    let (relaxed, relaxed_timing) = counter.relax(&problem, &mut trace)?;
    let k = fifs_with(&problem, &relaxed.k, &mut counter, &mut trace)?;
    let mut cur = counter.resolve(&problem, &k, &mut trace)?;
    let core_lp_solves = counter.solves;
    let mut descent = vec![cur.t_f];
    while let Some((a, b)) = max_to_min(&problem, &cur) {
        let mut next = cur.k.clone();
        next[a] -= 1;
        next[b] += 1;
        let nb = counter.resolve(&problem, &next, &mut trace)?;
        let accepted = improves(nb.t_f, cur.t_f);
        log_event(&mut trace, MeshEvent::Move { from: a, to: b, t_f: nb.t_f, accepted });
        if !accepted {
            break;
        }
        descent.push(nb.t_f);
        cur = nb;
    }
    Ok(MeshOutcome {
        relaxed_k: Some(relaxed.k),
        relaxed_t_f: Some(relaxed_timing.overall),
        lp_iterations: counter.iterations,
        lp_solves: counter.solves,
        core_lp_solves,
        descent,
        trace,
        ..MeshOutcome::from_solve(&cur)
    })
}

/// Steepest descent over all single-column moves `a -> b`, one LP per
/// neighbor, until no neighbor strictly improves the makespan.
pub fn neighbor_search(net: &NetworkModel, task: Task, k_start: &[u64]) -> Result<MeshOutcome> {
    let problem = MeshProblem::new(net, task)?;
    if k_start.iter().sum::<u64>() != task.n {
        return Err(Error::InvalidSchedule(format!("start point does not sum to {}", task.n)));
    }
    let mut counter = Counter::new();
    let mut trace = Vec::new();
    let mut cur = counter.resolve(&problem, k_start, &mut trace)?;
    let mut descent = vec![cur.t_f];
    loop {
        let mut best: Option<(usize, usize, FixedSolve)> = None;
        for a in workers(&problem).filter(|&a| cur.k[a] > 0) {
            for b in workers(&problem).filter(|&b| b != a) {
                let mut next = cur.k.clone();
                next[a] -= 1;
                next[b] += 1;
                let nb = counter.resolve(&problem, &next, &mut trace)?;
                if best.as_ref().is_none_or(|(_, _, s)| improves(nb.t_f, s.t_f)) {
                    best = Some((a, b, nb));
                }
            }
        }
        match best {
            Some((a, b, nb)) if improves(nb.t_f, cur.t_f) => {
                log_event(&mut trace, MeshEvent::Move { from: a, to: b, t_f: nb.t_f, accepted: true });
                descent.push(nb.t_f);
                cur = nb;
            }
            _ => break,
        }
    }
    Ok(MeshOutcome {
        lp_iterations: counter.iterations,
        lp_solves: counter.solves,
        core_lp_solves: 1,
        descent,
        trace,
        ..MeshOutcome::from_solve(&cur)
    })
}

/// Relax, round, re-solve once with the rounded loads, repair the column
/// sum by walking workers in finish-time order (circularly), then try one
/// max-to-min unit move.
pub fn mft_lbp_heuristic(net: &NetworkModel, task: Task) -> Result<MeshOutcome> {
    let problem = MeshProblem::new(net, task)?;
    let mut counter = Counter::new();
    let mut trace = Vec::new();
    let (relaxed, relaxed_timing) = counter.relax(&problem, &mut trace)?;
    let mut k = rounded(&problem, &relaxed.k);
    log_event(&mut trace, MeshEvent::Rounded { k: k.clone() });
    let first = counter.resolve(&problem, &k, &mut trace)?;
    let core_lp_solves = counter.solves;

    // ascending finish time, ties by index
    let mut remaining: Vec<usize> = workers(&problem).collect();
    let mut arr = Vec::with_capacity(remaining.len());
    while let Some(pos) =
        argmin_tol(&first.timing.finish, remaining.iter().copied()).and_then(|i| remaining.iter().position(|&r| r == i))
    {
        arr.push(remaining.remove(pos));
    }

    let n = task.n;
    let sum: u64 = k.iter().sum();
    let adjusted = sum != n;
    if sum < n && !arr.is_empty() {
        let mut idx = 0;
        let mut sum = sum;
        while sum < n {
            let node = arr[idx];
            k[node] += 1;
            sum += 1;
            log_event(&mut trace, MeshEvent::Correction { node, delta: 1, k: k.clone() });
            idx = (idx + 1) % arr.len();
        }
    } else if sum > n {
        let mut idx = arr.len() - 1;
        let mut sum = sum;
        while sum > n {
            let node = arr[idx];
            if k[node] > 0 {
                k[node] -= 1;
                sum -= 1;
                log_event(&mut trace, MeshEvent::Correction { node, delta: -1, k: k.clone() });
            }
            idx = (idx + arr.len() - 1) % arr.len();
        }
    }

    let mut cur = if adjusted { counter.resolve(&problem, &k, &mut trace)? } else { first };
    let mut descent = vec![cur.t_f];
    if let Some((a, b)) = max_to_min(&problem, &cur) {
        let mut next = cur.k.clone();
        next[a] -= 1;
        next[b] += 1;
        let nb = counter.resolve(&problem, &next, &mut trace)?;
        let accepted = improves(nb.t_f, cur.t_f);
        log_event(&mut trace, MeshEvent::Move { from: a, to: b, t_f: nb.t_f, accepted });
        if accepted {
            descent.push(nb.t_f);
            cur = nb;
        }
    }
    Ok(MeshOutcome {
        relaxed_k: Some(relaxed.k),
        relaxed_t_f: Some(relaxed_timing.overall),
        lp_iterations: counter.iterations,
        lp_solves: counter.solves,
        core_lp_solves,
        descent,
        trace,
        ..MeshOutcome::from_solve(&cur)
    })
}
