//! Schedule evaluation, random network generation and experiment sweeps.

use std::fmt;
use std::io::Write;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{even_col_schedule, pipeline_schedule, rect_lower_bound, summa_cost};
use crate::error::{Error, Result};
use crate::mesh::{mft_lbp_heuristic, pmft_lbp};
use crate::model::{
    full_mesh_edges, quadrant_edges, Flow, NetworkKind, NetworkModel, Schedule, StarMode, Task, Timing,
};
use crate::star::solve_star;

/// Absolute tolerance on flow conservation, per unit of `2 N^2`.
const CONSERVATION_RTOL: f64 = 1e-9;

/// Earliest start/finish times implied by loads `k` and link `flows`:
/// a node starts once every inbound link has delivered, and computes its
/// layer after that.
pub fn evaluate_flows(net: &NetworkModel, task: Task, k: &[f64], flows: &[Flow]) -> Result<Timing> {
    let p = net.len();
    if k.len() != p {
        return Err(Error::InvalidSchedule(format!("{} loads for {} processors", k.len(), p)));
    }
    let order =
        net.topological_order().map_err(|_| Error::InvalidSchedule("flows run over a cyclic network".into()))?;
    let mut flow_on = vec![0.0; net.links().len()];
    let mut inflow = vec![0.0; p];
    let mut outflow = vec![0.0; p];
    for f in flows {
        let Some(idx) = net.links().iter().position(|l| l.from == f.from && l.to == f.to) else {
            return Err(Error::InvalidSchedule(format!("flow on missing link {}->{}", f.from, f.to)));
        };
        flow_on[idx] += f.volume;
        inflow[f.to] += f.volume;
        outflow[f.from] += f.volume;
    }
    let n = task.nf();
    let tol = 1e-6 + CONSERVATION_RTOL * 2.0 * n * n;
    for i in (0..p).filter(|&i| !net.is_source(i)) {
        let residual = inflow[i] - outflow[i] - 2.0 * k[i] * n;
        if residual.abs() > tol {
            return Err(Error::InvalidSchedule(format!("flow conservation at {i} off by {residual}")));
        }
    }

    let mut start = vec![0.0; p];
    let mut finish = vec![0.0; p];
    for i in order {
        let mut t: f64 = 0.0;
        for (idx, link) in net.links().iter().enumerate() {
            if link.to == i {
                t = t.max(start[link.from] + flow_on[idx] * link.z * net.t_cm());
            }
        }
        start[i] = t;
        finish[i] = t + k[i] * n * n * net.w(i) * net.t_cp();
    }
    Ok(Timing::new(start, finish))
}

/// Timing and total link volume of a mesh (or star PCCS) schedule.
pub fn evaluate_schedule(net: &NetworkModel, task: Task, schedule: &Schedule) -> Result<(Timing, f64)> {
    let timing = evaluate_flows(net, task, &schedule.k, &schedule.flows)?;
    Ok((timing, schedule.total_link_volume()))
}

/// Network shape to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    Star { children: usize },
    MeshQuadrant { rows: usize, cols: usize },
    FullMesh { rows: usize, cols: usize },
}

impl Topology {
    pub fn kind(&self) -> NetworkKind {
        match self {
            Topology::Star { .. } => NetworkKind::Star,
            Topology::MeshQuadrant { .. } => NetworkKind::MeshQuadrant,
            Topology::FullMesh { .. } => NetworkKind::FullMesh,
        }
    }

    /// `"16"` for a star, `"3x3"` for meshes.
    pub fn dims_label(&self) -> String {
        match *self {
            Topology::Star { children } => children.to_string(),
            Topology::MeshQuadrant { rows, cols } | Topology::FullMesh { rows, cols } => format!("{rows}x{cols}"),
        }
    }
}

/// Ranges of `w T_cp` and `z T_cm`; draws are uniform and `T_cp = T_cm = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub w: (f64, f64),
    pub z: (f64, f64),
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges { w: (0.0005, 0.0008), z: (0.0002, 0.0005) }
    }
}

impl ParamRanges {
    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("w", self.w), ("z", self.z)] {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} range ({lo}, {hi}) must satisfy 0 < lo < hi")));
            }
        }
        Ok(())
    }
}

/// Random heterogeneous network. Processor speeds are drawn first (in id
/// order), then link speeds (in canonical link order).
pub fn gen_network(topology: Topology, seed: u64, ranges: ParamRanges) -> Result<NetworkModel> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_dist = Uniform::new(ranges.w.0, ranges.w.1);
    let z_dist = Uniform::new(ranges.z.0, ranges.z.1);
    match topology {
        Topology::Star { children } => {
            if children == 0 {
                return Err(Error::InvalidConfig("a star needs at least one child".into()));
            }
            let w: Vec<f64> = (0..children).map(|_| w_dist.sample(&mut rng)).collect();
            let z: Vec<f64> = (0..children).map(|_| z_dist.sample(&mut rng)).collect();
            let pairs: Vec<(f64, f64)> = w.into_iter().zip(z).collect();
            NetworkModel::star(&pairs, 1.0, 1.0)
        }
        Topology::MeshQuadrant { rows, cols } | Topology::FullMesh { rows, cols } => {
            if rows == 0 || cols == 0 || (rows * cols < 2 && topology.kind() == NetworkKind::MeshQuadrant) {
                return Err(Error::InvalidConfig(format!("invalid mesh dims {rows}x{cols}")));
            }
            let w: Vec<f64> = (0..rows * cols).map(|_| w_dist.sample(&mut rng)).collect();
            if topology.kind() == NetworkKind::MeshQuadrant {
                let z: Vec<f64> = (0..quadrant_edges(rows, cols).len()).map(|_| z_dist.sample(&mut rng)).collect();
                NetworkModel::mesh_quadrant(rows, cols, &w, &z, 1.0, 1.0)
            } else {
                let z: Vec<f64> = (0..full_mesh_edges(rows, cols).len()).map(|_| z_dist.sample(&mut rng)).collect();
                NetworkModel::full_mesh(rows, cols, &w, &z, 1.0, 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "lbp-scss")]
    LbpScss,
    #[serde(rename = "lbp-sccs")]
    LbpSccs,
    #[serde(rename = "lbp-pccs")]
    LbpPccs,
    #[serde(rename = "lbp-pcss")]
    LbpPcss,
    #[serde(rename = "even-col")]
    EvenCol,
    /// Rectangular lower bound for the areas of the LBP-PCCS shares.
    #[serde(rename = "rect-lower-bound")]
    RectLowerBound,
    #[serde(rename = "pmft")]
    Pmft,
    #[serde(rename = "heuristic")]
    Heuristic,
    #[serde(rename = "summa")]
    Summa,
    #[serde(rename = "pipeline")]
    Pipeline,
    #[serde(rename = "mpipeline")]
    ModifiedPipeline,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::LbpScss => "lbp-scss",
            Algorithm::LbpSccs => "lbp-sccs",
            Algorithm::LbpPccs => "lbp-pccs",
            Algorithm::LbpPcss => "lbp-pcss",
            Algorithm::EvenCol => "even-col",
            Algorithm::RectLowerBound => "rect-lower-bound",
            Algorithm::Pmft => "pmft",
            Algorithm::Heuristic => "heuristic",
            Algorithm::Summa => "summa",
            Algorithm::Pipeline => "pipeline",
            Algorithm::ModifiedPipeline => "mpipeline",
        }
    }

    fn star_mode(&self) -> Option<StarMode> {
        match self {
            Algorithm::LbpScss => Some(StarMode::Scss),
            Algorithm::LbpSccs => Some(StarMode::Sccs),
            Algorithm::LbpPccs => Some(StarMode::Pccs),
            Algorithm::LbpPcss => Some(StarMode::Pcss),
            _ => None,
        }
    }

    /// Network kind the algorithm accepts in an experiment.
    pub fn network_kind(&self) -> NetworkKind {
        match self {
            Algorithm::LbpScss
            | Algorithm::LbpSccs
            | Algorithm::LbpPccs
            | Algorithm::LbpPcss
            | Algorithm::EvenCol
            | Algorithm::RectLowerBound => NetworkKind::Star,
            _ => NetworkKind::MeshQuadrant,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidConfig(format!("unknown algorithm `{s}`")))
    }
}

fn default_trials() -> usize {
    10
}

fn default_chunks() -> u64 {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Star or mesh quadrant. SUMMA runs on a full mesh of the same dims.
    pub network: Topology,
    pub sizes: Vec<u64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub ranges: ParamRanges,
    /// Chunk count for the modified pipeline.
    #[serde(default = "default_chunks")]
    pub chunks: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.sizes.is_empty() || self.algorithms.is_empty() {
            return Err(Error::InvalidConfig("need at least one size and one algorithm".into()));
        }
        if self.network.kind() == NetworkKind::FullMesh {
            return Err(Error::InvalidConfig("experiments run on a star or a mesh quadrant".into()));
        }
        self.ranges.validate()?;
        if let Topology::MeshQuadrant { rows, cols } = self.network {
            if rows != cols && self.algorithms.contains(&Algorithm::Summa) {
                return Err(Error::InvalidConfig(format!("summa needs a square mesh, got {rows}x{cols}")));
            }
        }
        for algo in &self.algorithms {
            if algo.network_kind() != self.network.kind() {
                return Err(Error::KindMismatch { algorithm: algo.to_string(), kind: self.network.kind().to_string() });
            }
        }
        Ok(())
    }
}

/// Outcome of one algorithm on one network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub comm_volume: f64,
    pub finish_time: Option<f64>,
    pub lp_iterations: Option<u64>,
}

/// Runs `algorithm` for `task` on the trial networks drawn from `seed`.
pub fn run_algorithm(
    algorithm: Algorithm,
    topology: Topology,
    seed: u64,
    ranges: ParamRanges,
    chunks: u64,
    task: Task,
) -> Result<Metrics> {
    if algorithm.network_kind() != topology.kind() {
        return Err(Error::KindMismatch { algorithm: algorithm.to_string(), kind: topology.kind().to_string() });
    }
    let net = gen_network(topology, seed, ranges)?;
    if let Some(mode) = algorithm.star_mode() {
        let s = solve_star(&net, task, mode)?;
        return Ok(Metrics { comm_volume: s.comm_volume(task), finish_time: Some(s.t_f), lp_iterations: None });
    }
    Ok(match algorithm {
        Algorithm::EvenCol => {
            let r = even_col_schedule(&net, task)?;
            Metrics { comm_volume: r.volume, finish_time: Some(r.t_f), lp_iterations: None }
        }
        Algorithm::RectLowerBound => {
            let s = solve_star(&net, task, StarMode::Pccs)?;
            let areas: Vec<f64> = s.k.iter().map(|k| k * task.nf()).collect();
            Metrics { comm_volume: rect_lower_bound(&areas, task.n)?, finish_time: None, lp_iterations: None }
        }
        Algorithm::Pmft | Algorithm::Heuristic => {
            let out = if algorithm == Algorithm::Pmft { pmft_lbp(&net, task)? } else { mft_lbp_heuristic(&net, task)? };
            Metrics {
                comm_volume: out.schedule.total_link_volume(),
                finish_time: Some(out.t_f()),
                lp_iterations: Some(out.lp_iterations),
            }
        }
        Algorithm::Summa => {
            let Topology::MeshQuadrant { rows, cols } = topology else { unreachable!() };
            let full = gen_network(Topology::FullMesh { rows, cols }, seed, ranges)?;
            let c = summa_cost(&full, task)?;
            Metrics { comm_volume: c.volume, finish_time: Some(c.t_f), lp_iterations: None }
        }
        Algorithm::Pipeline | Algorithm::ModifiedPipeline => {
            let c = if algorithm == Algorithm::Pipeline { 1 } else { chunks };
            let r = pipeline_schedule(&net, task, c)?;
            Metrics { comm_volume: r.volume, finish_time: Some(r.t_f), lp_iterations: None }
        }
        _ => unreachable!("star modes handled above"),
    })
}

/// One CSV line: a single trial (`agg = 0`) or the mean over trials (`agg = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub algorithm: String,
    pub kind: String,
    pub dims: String,
    #[serde(rename = "N")]
    pub n: u64,
    pub trial: Option<usize>,
    pub comm_volume: f64,
    pub finish_time: Option<f64>,
    pub lp_iterations: Option<f64>,
    pub agg: u8,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn raw_rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.agg == 0)
    }

    pub fn aggregates(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.agg == 1)
    }

    /// The mean row for `algorithm` at size `n`.
    pub fn aggregate(&self, algorithm: Algorithm, n: u64) -> Option<&ReportRow> {
        self.aggregates().find(|r| r.algorithm == algorithm.name() && r.n == n)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    sum / count as f64
}

/// Runs every algorithm on every size over `trials` networks (trial `t`
/// uses seed `seed + t`, shared across sizes and algorithms).
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let jobs: Vec<(Algorithm, u64, usize)> = config
        .algorithms
        .iter()
        .flat_map(|&a| config.sizes.iter().flat_map(move |&n| (0..config.trials).map(move |t| (a, n, t))))
        .collect();
    let run = |&(algo, n, trial): &(Algorithm, u64, usize)| {
        let seed = config.seed.wrapping_add(trial as u64);
        run_algorithm(algo, config.network, seed, config.ranges, config.chunks, Task::new(n))
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<Metrics>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<Metrics>> = jobs.iter().map(run).collect();

    let mut rows = Vec::with_capacity(jobs.len() + jobs.len() / config.trials);
    let mut group: Vec<ReportRow> = Vec::with_capacity(config.trials);
    for (&(algo, n, trial), result) in jobs.iter().zip(results) {
        let m = result?;
        let topology = if algo == Algorithm::Summa {
            match config.network {
                Topology::MeshQuadrant { rows, cols } => Topology::FullMesh { rows, cols },
                t => t,
            }
        } else {
            config.network
        };
        group.push(ReportRow {
            algorithm: algo.name().into(),
            kind: topology.kind().to_string(),
            dims: topology.dims_label(),
            n,
            trial: Some(trial),
            comm_volume: m.comm_volume,
            finish_time: m.finish_time,
            lp_iterations: m.lp_iterations.map(|i| i as f64),
            agg: 0,
        });
        if group.len() == config.trials {
            let first = &group[0];
            let agg = ReportRow {
                algorithm: first.algorithm.clone(),
                kind: first.kind.clone(),
                dims: first.dims.clone(),
                n,
                trial: None,
                comm_volume: mean(group.iter().map(|r| r.comm_volume)),
                finish_time: first.finish_time.map(|_| mean(group.iter().filter_map(|r| r.finish_time))),
                lp_iterations: first.lp_iterations.map(|_| mean(group.iter().filter_map(|r| r.lp_iterations))),
                agg: 1,
            };
            rows.append(&mut group);
            rows.push(agg);
        }
    }
    Ok(ExperimentReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluate_chain() {
        let net = NetworkModel::homogeneous_quadrant(1, 3, 1.0, 1.0, 1.0, 1.0).unwrap();
        let task = Task::new(4);
        let schedule = Schedule {
            k: vec![0.0, 0.0, 4.0],
            flows: vec![Flow { from: 0, to: 1, volume: 32.0 }, Flow { from: 1, to: 2, volume: 32.0 }],
            mode: StarMode::Pccs,
        };
        let (t, vol) = evaluate_schedule(&net, task, &schedule).unwrap();
        assert_eq!(vol, 64.0);
        assert_eq!(t.start, vec![0.0, 32.0, 64.0]);
        assert_eq!(t.overall, 128.0);
        assert_eq!(t.finish[1], 32.0);
    }

    #[test]
    fn evaluate_zero_task() {
        let net = NetworkModel::homogeneous_quadrant(2, 2, 1.0, 1.0, 1.0, 1.0).unwrap();
        let schedule = Schedule { k: vec![0.0; 4], flows: Vec::new(), mode: StarMode::Pccs };
        let (t, vol) = evaluate_schedule(&net, Task::new(0), &schedule).unwrap();
        assert_eq!(vol, 0.0);
        assert!(t.start.iter().chain(&t.finish).all(|&x| x == 0.0));
    }

    #[test]
    fn evaluate_rejects_broken_conservation() {
        let net = NetworkModel::homogeneous_quadrant(1, 3, 1.0, 1.0, 1.0, 1.0).unwrap();
        let schedule = Schedule {
            k: vec![0.0, 2.0, 2.0],
            flows: vec![Flow { from: 0, to: 1, volume: 32.0 }, Flow { from: 1, to: 2, volume: 10.0 }],
            mode: StarMode::Pccs,
        };
        assert!(evaluate_schedule(&net, Task::new(4), &schedule).is_err());
    }

    #[test]
    fn evaluate_rejects_cyclic_network() {
        let net = NetworkModel::full_mesh(1, 2, &[1.0, 1.0], &[1.0, 1.0], 1.0, 1.0).unwrap();
        let schedule = Schedule { k: vec![0.0, 1.0], flows: Vec::new(), mode: StarMode::Pccs };
        assert!(matches!(evaluate_schedule(&net, Task::new(1), &schedule), Err(Error::InvalidSchedule(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let t = Topology::MeshQuadrant { rows: 3, cols: 3 };
        let a = gen_network(t, 42, ParamRanges::default()).unwrap();
        let b = gen_network(t, 42, ParamRanges::default()).unwrap();
        let c = gen_network(t, 43, ParamRanges::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn star_generation_shape() {
        let net = gen_network(Topology::Star { children: 16 }, 1, ParamRanges::default()).unwrap();
        assert_eq!(net.len(), 17);
        assert_eq!(net.links().len(), 16);
        assert!(gen_network(Topology::Star { children: 0 }, 1, ParamRanges::default()).is_err());
        let bad = ParamRanges { w: (0.2, 0.1), ..ParamRanges::default() };
        assert!(gen_network(Topology::Star { children: 2 }, 1, bad).is_err());
    }

    #[test]
    fn uniform_draw_statistics() {
        let ranges = ParamRanges::default();
        let net = gen_network(Topology::Star { children: 10_000 }, 7, ranges).unwrap();
        let ws: Vec<f64> = (1..net.len()).map(|i| net.w(i)).collect();
        let zs: Vec<f64> = net.links().iter().map(|l| l.z).collect();
        for (xs, (lo, hi)) in [(ws, ranges.w), (zs, ranges.z)] {
            assert!(xs.iter().all(|&x| x >= lo && x < hi));
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let mid = (lo + hi) / 2.0;
            assert!((m - mid).abs() < 0.02 * mid, "mean {m} vs midpoint {mid}");
        }
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in [Algorithm::LbpPccs, Algorithm::RectLowerBound, Algorithm::ModifiedPipeline] {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("nope".parse::<Algorithm>().is_err());
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let config = ExperimentConfig {
            network: Topology::MeshQuadrant { rows: 2, cols: 2 },
            sizes: vec![10],
            trials: 1,
            seed: 0,
            algorithms: vec![Algorithm::LbpPccs],
            ranges: ParamRanges::default(),
            chunks: 16,
        };
        assert!(matches!(run_experiment(&config), Err(Error::KindMismatch { .. })));
    }

    #[test]
    fn single_trial_row_matches_direct_solve() {
        let config = ExperimentConfig {
            network: Topology::Star { children: 1 },
            sizes: vec![50],
            trials: 1,
            seed: 3,
            algorithms: vec![Algorithm::LbpPccs],
            ranges: ParamRanges::default(),
            chunks: 16,
        };
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.rows.len(), 2);
        let net = gen_network(config.network, 3, config.ranges).unwrap();
        let direct = solve_star(&net, Task::new(50), StarMode::Pccs).unwrap();
        let raw = report.raw_rows().next().unwrap();
        assert_eq!(raw.finish_time, Some(direct.t_f));
        assert_eq!(raw.comm_volume, 5000.0);
        assert_eq!(report.aggregate(Algorithm::LbpPccs, 50).unwrap().finish_time, Some(direct.t_f));
    }
}
