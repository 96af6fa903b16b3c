//! WebAssembly bindings for the browser demo. Every export returns a JSON
//! string; errors surface as thrown JS exceptions carrying the message.

use lbp::baselines::rect_lower_bound;
use lbp::mesh::{mft_lbp_heuristic, pmft_lbp};
use lbp::sim::{gen_network, run_algorithm, Algorithm, ParamRanges, Topology};
use lbp::star::solve_star as solve;
use lbp::{Error, StarMode, Task};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_PROCESSORS: usize = 64;
const MAX_N: u64 = 5000;

#[derive(Debug, Serialize)]
struct StarView {
    k: Vec<f64>,
    finish: Vec<f64>,
    w: Vec<f64>,
    z: Vec<f64>,
    t_f: f64,
    comm_volume: f64,
    rect_lower_bound: f64,
}

#[derive(Debug, Serialize)]
struct FlowView {
    from: usize,
    to: usize,
    volume: f64,
}

#[derive(Debug, Serialize)]
struct MeshView {
    rows: usize,
    cols: usize,
    k: Vec<f64>,
    start: Vec<f64>,
    finish: Vec<f64>,
    flows: Vec<FlowView>,
    t_f: f64,
    relaxed_t_f: Option<f64>,
    link_volume: f64,
    lp_iterations: u64,
}

#[derive(Debug, Serialize)]
struct VolumeRow {
    algorithm: &'static str,
    comm_volume: f64,
    finish_time: Option<f64>,
}

fn check_size(processors: usize, n: u64) -> Result<(), Error> {
    if processors == 0 || processors > MAX_PROCESSORS {
        return Err(Error::InvalidConfig(format!("demo supports 1..={MAX_PROCESSORS} processors")));
    }
    if n > MAX_N {
        return Err(Error::InvalidConfig(format!("demo supports N up to {MAX_N}")));
    }
    Ok(())
}

pub fn star_view(children: usize, n: u64, mode: &str, seed: u64) -> Result<String, Error> {
    check_size(children, n)?;
    let mode: StarMode = mode.parse()?;
    let net = gen_network(Topology::Star { children }, seed, ParamRanges::default())?;
    let task = Task::new(n);
    let sol = solve(&net, task, mode)?;
    let areas: Vec<f64> = sol.k.iter().map(|k| k * n as f64).collect();
    let view = StarView {
        w: (1..net.len()).map(|i| net.w(i)).collect(),
        z: net.links().iter().map(|l| l.z).collect(),
        comm_volume: sol.comm_volume(task),
        rect_lower_bound: rect_lower_bound(&areas, n)?,
        k: sol.k,
        finish: sol.per_node_finish,
        t_f: sol.t_f,
    };
    Ok(serde_json::to_string(&view)?)
}

pub fn mesh_view(rows: usize, cols: usize, n: u64, seed: u64, heuristic: bool) -> Result<String, Error> {
    check_size(rows * cols, n)?;
    let net = gen_network(Topology::MeshQuadrant { rows, cols }, seed, ParamRanges::default())?;
    let task = Task::new(n);
    let out = if heuristic { mft_lbp_heuristic(&net, task)? } else { pmft_lbp(&net, task)? };
    let view = MeshView {
        rows,
        cols,
        t_f: out.t_f(),
        relaxed_t_f: out.relaxed_t_f,
        link_volume: out.schedule.total_link_volume(),
        lp_iterations: out.lp_iterations,
        flows: out.schedule.flows.iter().map(|f| FlowView { from: f.from, to: f.to, volume: f.volume }).collect(),
        k: out.schedule.k,
        start: out.timing.start,
        finish: out.timing.finish,
    };
    Ok(serde_json::to_string(&view)?)
}

pub fn volume_table(rows: usize, cols: usize, n: u64, seed: u64, chunks: u64) -> Result<String, Error> {
    check_size(rows * cols, n)?;
    let topology = Topology::MeshQuadrant { rows, cols };
    let mut algorithms = vec![Algorithm::Pmft, Algorithm::Heuristic];
    if rows == cols {
        algorithms.push(Algorithm::Summa);
    }
    algorithms.extend([Algorithm::Pipeline, Algorithm::ModifiedPipeline]);
    let table = algorithms
        .into_iter()
        .map(|a| {
            let m = run_algorithm(a, topology, seed, ParamRanges::default(), chunks.max(1), Task::new(n))?;
            Ok(VolumeRow { algorithm: a.name(), comm_volume: m.comm_volume, finish_time: m.finish_time })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(serde_json::to_string(&table)?)
}

fn js_err(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Integer star schedule with per-child parameters and the rectangular bound.
#[wasm_bindgen]
pub fn solve_star(children: usize, n: u32, mode: &str, seed: u32) -> Result<String, JsError> {
    star_view(children, n.into(), mode, seed.into()).map_err(js_err)
}

/// Mesh quadrant schedule with per-node timing and link flows.
#[wasm_bindgen]
pub fn schedule_mesh(rows: usize, cols: usize, n: u32, seed: u32, heuristic: bool) -> Result<String, JsError> {
    mesh_view(rows, cols, n.into(), seed.into(), heuristic).map_err(js_err)
}

/// Volume and finish time of every mesh algorithm on one drawn network.
#[wasm_bindgen]
pub fn compare_volumes(rows: usize, cols: usize, n: u32, seed: u32, chunks: u32) -> Result<String, JsError> {
    volume_table(rows, cols, n.into(), seed.into(), chunks.into()).map_err(js_err)
}
