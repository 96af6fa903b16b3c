//! Star networks: closed-form equal-finish load shares for the four
//! communication modes, a residual check against the underlying linear
//! system, and integer repair of the real-valued shares.
//!
//! Children are indexed `0..p` here (child `i` is processor `i + 1`) and,
//! for the sequential modes, the source serves them in that order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Flow, NetworkKind, NetworkModel, Schedule, Task, Timing};
use crate::{argmax_tol, argmin_tol, round_half_up};

pub use crate::model::StarMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarSolution {
    pub mode: StarMode,
    /// Column count per child.
    pub k: Vec<f64>,
    pub t_f: f64,
    pub per_node_finish: Vec<f64>,
}

impl StarSolution {
    pub fn is_integral(&self) -> bool {
        self.k.iter().all(|k| k.fract() == 0.0)
    }

    /// Entries leaving the source: `2 k_i N` per child.
    pub fn comm_volume(&self, task: Task) -> f64 {
        self.k.iter().map(|k| 2.0 * k * task.nf()).sum()
    }

    /// Full-network schedule (source at index 0, zero load).
    pub fn to_schedule(&self, task: Task) -> Schedule {
        let mut k = Vec::with_capacity(self.k.len() + 1);
        k.push(0.0);
        k.extend_from_slice(&self.k);
        let flows = self
            .k
            .iter()
            .enumerate()
            .map(|(i, ki)| Flow { from: 0, to: i + 1, volume: 2.0 * ki * task.nf() })
            .collect();
        Schedule { k, flows, mode: self.mode }
    }

    /// Per-processor timing with the source at index 0.
    pub fn timing(&self, net: &NetworkModel, task: Task) -> Timing {
        let n = task.nf();
        let mut start = vec![0.0];
        let mut finish = vec![0.0];
        for (i, (&k, &f)) in self.k.iter().zip(&self.per_node_finish).enumerate() {
            finish.push(f);
            start.push(f - k * n * n * net.w(i + 1) * net.t_cp());
        }
        Timing::new(start, finish)
    }
}

/// Per-child computation and communication coefficients:
/// `k_i N^2 w_i T_cp` and `2 k_i N z_i T_cm` per unit `k_i`.
struct Coeffs {
    comp: Vec<f64>,
    comm: Vec<f64>,
}

fn coefficients(net: &NetworkModel, task: Task) -> Result<Coeffs> {
    if net.kind() != NetworkKind::Star {
        return Err(Error::KindMismatch { algorithm: "star scheduler".into(), kind: net.kind().to_string() });
    }
    let p = net.len() - 1;
    if p == 0 {
        return Err(Error::MalformedNetwork("star has no children".into()));
    }
    let n = task.nf();
    let mut comp = Vec::with_capacity(p);
    let mut comm = Vec::with_capacity(p);
    for child in 1..=p {
        let z = net.link(0, child).expect("validated star").z;
        comp.push(n * n * net.w(child) * net.t_cp());
        comm.push(2.0 * n * z * net.t_cm());
    }
    Ok(Coeffs { comp, comm })
}

/// Finish time of every child for the given column counts under `mode`.
pub fn star_finish_times(net: &NetworkModel, task: Task, mode: StarMode, k: &[f64]) -> Result<Vec<f64>> {
    let c = coefficients(net, task)?;
    if k.len() != c.comp.len() {
        return Err(Error::InvalidSchedule(format!("{} shares for {} children", k.len(), c.comp.len())));
    }
    let mut finish = Vec::with_capacity(k.len());
    let mut sent = 0.0;
    for i in 0..k.len() {
        let comp = k[i] * c.comp[i];
        let comm = k[i] * c.comm[i];
        let f = match mode {
            StarMode::Scss => sent + comp,
            StarMode::Sccs => sent + comm + comp,
            StarMode::Pccs => comm + comp,
            StarMode::Pcss => comp,
        };
        sent += comm;
        finish.push(f);
    }
    Ok(finish)
}

/// Real-valued shares at which every child finishes at the same time.
pub fn solve_star_relaxed(net: &NetworkModel, task: Task, mode: StarMode) -> Result<StarSolution> {
    let c = coefficients(net, task)?;
    let p = c.comp.len();
    let n = task.nf();
    let (tcp, tcm) = (net.t_cp(), net.t_cm());
    let w = |i: usize| net.w(i + 1);
    let z = |i: usize| net.link(0, i + 1).expect("validated star").z;

    // ratio[j] = k_j / k_{j-1}
    let mut ratios = Vec::with_capacity(p.saturating_sub(1));
    for j in 1..p {
        let (num, den, culprit) = match mode {
            StarMode::Scss => (n * w(j - 1) * tcp - 2.0 * z(j - 1) * tcm, n * w(j) * tcp, j - 1),
            StarMode::Sccs => (n * w(j - 1) * tcp, n * w(j) * tcp + 2.0 * z(j) * tcm, j),
            StarMode::Pccs => (n * w(j - 1) * tcp + 2.0 * z(j - 1) * tcm, n * w(j) * tcp + 2.0 * z(j) * tcm, j),
            StarMode::Pcss => (w(j - 1), w(j), j),
        };
        let r = num / den;
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::InfeasibleMode { mode, processor: culprit + 1 });
        }
        ratios.push(r);
    }

    let mut prods = Vec::with_capacity(p);
    prods.push(1.0);
    for r in &ratios {
        let last = *prods.last().unwrap();
        prods.push(last * r);
    }
    let denom: f64 = prods.iter().sum();
    let k1 = n / denom;
    let k: Vec<f64> = prods.iter().map(|q| q * k1).collect();

    let t_f = match mode {
        StarMode::Scss | StarMode::Pcss => k1 * c.comp[0],
        StarMode::Sccs | StarMode::Pccs => k1 * c.comp[0] + k1 * c.comm[0],
    };
    let per_node_finish = star_finish_times(net, task, mode, &k)?;
    Ok(StarSolution { mode, k, t_f, per_node_finish })
}

/// The mode's `p x p` linear system: `p - 1` pairwise timing equations
/// followed by the normalization row. Returned as `(rows, rhs)`.
pub fn star_system(net: &NetworkModel, task: Task, mode: StarMode) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let c = coefficients(net, task)?;
    let p = c.comp.len();
    let mut rows = Vec::with_capacity(p);
    let mut rhs = Vec::with_capacity(p);
    for i in 1..p {
        let mut row = vec![0.0; p];
        let (prev, cur) = match mode {
            StarMode::Scss => (c.comp[i - 1] - c.comm[i - 1], c.comp[i]),
            StarMode::Sccs => (c.comp[i - 1], c.comp[i] + c.comm[i]),
            StarMode::Pccs => (c.comp[i - 1] + c.comm[i - 1], c.comp[i] + c.comm[i]),
            StarMode::Pcss => (c.comp[i - 1], c.comp[i]),
        };
        row[i - 1] = prev;
        row[i] = -cur;
        rows.push(row);
        rhs.push(0.0);
    }
    rows.push(vec![1.0; p]);
    rhs.push(task.nf());
    Ok((rows, rhs))
}

/// Largest absolute residual of `solution` in the mode's linear system.
pub fn verify_star_oracle(net: &NetworkModel, task: Task, mode: StarMode, solution: &StarSolution) -> Result<f64> {
    let (rows, rhs) = star_system(net, task, mode)?;
    if solution.k.len() != rows.len() {
        return Err(Error::InvalidSchedule(format!("{} shares for {} children", solution.k.len(), rows.len())));
    }
    Ok(rows
        .iter()
        .zip(&rhs)
        .map(|(row, b)| {
            let lhs: f64 = row.iter().zip(&solution.k).map(|(a, k)| a * k).sum();
            (lhs - b).abs()
        })
        .fold(0.0, f64::max))
}

/// Integer shares near a relaxed solution: round half-up, then move one
/// column at a time (to the earliest finisher when short, away from the
/// latest finisher when over) until the shares sum to `N`.
pub fn adjust_integer(net: &NetworkModel, task: Task, mode: StarMode, relaxed: &StarSolution) -> Result<StarSolution> {
    let mut k: Vec<u64> = relaxed.k.iter().map(|&x| round_half_up(x)).collect();
    let p = k.len();
    loop {
        let kf: Vec<f64> = k.iter().map(|&x| x as f64).collect();
        let finish = star_finish_times(net, task, mode, &kf)?;
        let sum: u64 = k.iter().sum();
        if sum == task.n {
            let t_f = finish.iter().copied().fold(0.0, f64::max);
            return Ok(StarSolution { mode, k: kf, t_f, per_node_finish: finish });
        }
        if sum < task.n {
            let i = argmin_tol(&finish, 0..p).expect("star has children");
            k[i] += 1;
        } else {
            let i = argmax_tol(&finish, (0..p).filter(|&i| k[i] > 0)).expect("positive sum");
            k[i] -= 1;
        }
    }
}

/// Relaxed solve followed by integer repair.
pub fn solve_star(net: &NetworkModel, task: Task, mode: StarMode) -> Result<StarSolution> {
    let relaxed = solve_star_relaxed(net, task, mode)?;
    adjust_integer(net, task, mode, &relaxed)
}
