//! Comparison schemes: rectangular partitions (exact volume and the
//! perimeter lower bound), Even-Col on a star, a SUMMA cost model on a full
//! mesh, and (chunked) Pipeline broadcast on a quadrant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NetworkKind, NetworkModel, Task};

const AREA_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub height: f64,
    pub width: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        self.height * self.width
    }
}

/// A tiling of the `N x N` result matrix into rectangles, one per processor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectPartition {
    pub rects: Vec<Rect>,
}

impl RectPartition {
    pub fn new(rects: Vec<Rect>, n: u64) -> Result<Self> {
        let part = RectPartition { rects };
        part.validate(n)?;
        Ok(part)
    }

    pub fn validate(&self, n: u64) -> Result<()> {
        let nf = n as f64;
        for (i, r) in self.rects.iter().enumerate() {
            if !(r.height > 0.0 && r.width > 0.0) || r.height > nf || r.width > nf {
                return Err(Error::InvalidPartition(format!(
                    "rectangle {i} is {}x{} in a {n}x{n} square",
                    r.height, r.width
                )));
            }
        }
        let total: f64 = self.rects.iter().map(Rect::area).sum();
        check_tiling(total, n)
    }
}

fn check_tiling(total: f64, n: u64) -> Result<()> {
    let target = (n as f64).powi(2);
    if (total - target).abs() > AREA_RTOL * target.max(1.0) {
        return Err(Error::InvalidPartition(format!("areas sum to {total}, expected {target}")));
    }
    Ok(())
}

/// `sum (h_i + w_i) N`: each processor fetches `h_i` rows of `A` and `w_i`
/// columns of `B`.
pub fn rect_comm_volume(partition: &RectPartition, n: u64) -> Result<f64> {
    partition.validate(n)?;
    Ok(partition.rects.iter().map(|r| (r.height + r.width) * n as f64).sum())
}

/// `2 N sum sqrt(s_i)`, the best any rectangular tiling with these areas can do.
pub fn rect_lower_bound(areas: &[f64], n: u64) -> Result<f64> {
    if areas.iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::InvalidPartition("areas must be non-negative".into()));
    }
    check_tiling(areas.iter().sum(), n)?;
    Ok(2.0 * n as f64 * areas.iter().map(|s| s.sqrt()).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvenColResult {
    /// Result columns per child.
    pub columns: Vec<u64>,
    pub volume: f64,
    pub t_f: f64,
}

/// Equal column strips of the result: every busy child gets all of `A` and
/// its strip of `B`, over parallel links, computing after full receipt.
pub fn even_col_schedule(net: &NetworkModel, task: Task) -> Result<EvenColResult> {
    if net.kind() != NetworkKind::Star {
        return Err(Error::KindMismatch { algorithm: "even-col".into(), kind: net.kind().to_string() });
    }
    let p = net.len() as u64 - 1;
    if p == 0 {
        return Err(Error::MalformedNetwork("star has no children".into()));
    }
    let n = task.n;
    let nf = task.nf();
    let columns: Vec<u64> = (0..p).map(|i| n / p + u64::from(i < n % p)).collect();
    let mut volume = 0.0;
    let mut t_f: f64 = 0.0;
    for (i, &c) in columns.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let child = i + 1;
        let z = net.link(0, child).expect("validated star").z;
        let received = nf * nf + nf * c as f64;
        volume += received;
        t_f = t_f.max(received * z * net.t_cm() + c as f64 * nf * nf * net.w(child) * net.t_cp());
    }
    Ok(EvenColResult { columns, volume, t_f })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaCost {
    pub volume: f64,
    pub t_f: f64,
}

/// Near-equal block sizes, larger blocks first.
fn block_sizes(n: u64, q: usize) -> Vec<f64> {
    let q64 = q as u64;
    (0..q64).map(|i| (n / q64 + u64::from(i < n % q64)) as f64).collect()
}

/// SUMMA on a `q x q` full mesh with `A`, `B` and `C` block-distributed.
/// In step `s` the pivot block column of `A` is relayed along every row and
/// the pivot block row of `B` along every column, whole blocks per hop; then
/// every processor updates its `C` block. Steps are synchronous.
pub fn summa_cost(net: &NetworkModel, task: Task) -> Result<SummaCost> {
    if net.kind() != NetworkKind::FullMesh {
        return Err(Error::KindMismatch { algorithm: "summa".into(), kind: net.kind().to_string() });
    }
    let (rows, cols) = net.dims().expect("validated full mesh");
    if rows != cols {
        return Err(Error::MalformedNetwork(format!("SUMMA needs a square mesh, got {rows}x{cols}")));
    }
    let q = rows;
    let sizes = block_sizes(task.n, q);
    let id = |r: usize, c: usize| r * q + c;
    let hop = |a: usize, b: usize| net.link(a, b).expect("grid neighbor").z * net.t_cm();

    let mut volume = 0.0;
    let mut t_f = 0.0;
    for s in 0..q {
        let mut comm: f64 = 0.0;
        for line in 0..q {
            // A block (line, s) along row `line`
            let a_block = sizes[line] * sizes[s];
            let (mut right, mut left) = (0.0, 0.0);
            for c in s..q - 1 {
                right += a_block * hop(id(line, c), id(line, c + 1));
            }
            for c in (1..=s).rev() {
                left += a_block * hop(id(line, c), id(line, c - 1));
            }
            comm = comm.max(right).max(left);
            volume += a_block * (q - 1) as f64;

            // B block (s, line) along column `line`
            let b_block = sizes[s] * sizes[line];
            let (mut down, mut up) = (0.0, 0.0);
            for r in s..q - 1 {
                down += b_block * hop(id(r, line), id(r + 1, line));
            }
            for r in (1..=s).rev() {
                up += b_block * hop(id(r, line), id(r - 1, line));
            }
            comm = comm.max(down).max(up);
            volume += b_block * (q - 1) as f64;
        }
        let mut comp: f64 = 0.0;
        for r in 0..q {
            for c in 0..q {
                comp = comp.max(sizes[r] * sizes[c] * sizes[s] * net.w(id(r, c)) * net.t_cp());
            }
        }
        t_f += comm + comp;
    }
    Ok(SummaCost { volume, t_f })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub volume: f64,
    pub t_f: f64,
    /// Column count per processor (source first, always 0).
    pub k: Vec<u64>,
    /// Arrival of the last chunk at each processor.
    pub start: Vec<f64>,
    /// Upstream neighbor each processor keeps its copy from.
    pub parent: Vec<Option<usize>>,
}

/// Every worker receives one full copy of `A` and `B` from whichever
/// in-neighbor completes delivery first, split into `chunks` equal pieces
/// forwarded store-and-forward (one chunk in flight per link). Workers take
/// columns in proportion to their speed and compute once their copy is complete.
pub fn pipeline_schedule(net: &NetworkModel, task: Task, chunks: u64) -> Result<PipelineResult> {
    if net.kind() != NetworkKind::MeshQuadrant {
        return Err(Error::KindMismatch { algorithm: "pipeline".into(), kind: net.kind().to_string() });
    }
    let copy = 2.0 * task.nf() * task.nf();
    if chunks == 0 || (chunks as f64) > copy.max(1.0) {
        return Err(Error::InvalidConfig(format!("chunk count {chunks} must be in 1..={copy}")));
    }
    let chunk = copy / chunks as f64;
    let c = chunks as usize;
    let source = net.single_source()?;
    let p = net.len();

    let mut arrivals: Vec<Vec<f64>> = vec![Vec::new(); p];
    let mut parent = vec![None; p];
    arrivals[source] = vec![0.0; c];
    for i in net.topological_order()? {
        if i == source {
            continue;
        }
        let mut best: Option<(usize, Vec<f64>)> = None;
        let mut inbound: Vec<_> = net.inbound(i).collect();
        inbound.sort_by_key(|l| l.from);
        for link in inbound {
            let up = &arrivals[link.from];
            let per_chunk = chunk * link.z * net.t_cm();
            let mut arr = Vec::with_capacity(c);
            let mut prev: f64 = 0.0;
            for &ready in up {
                prev = prev.max(ready) + per_chunk;
                arr.push(prev);
            }
            if best.as_ref().is_none_or(|(_, b)| arr[c - 1] < b[c - 1]) {
                best = Some((link.from, arr));
            }
        }
        let (from, arr) = best.expect("reachable worker has an inbound link");
        parent[i] = Some(from);
        arrivals[i] = arr;
    }
    let start: Vec<f64> = arrivals.iter().map(|a| a[c - 1]).collect();

    let workers: Vec<usize> = (0..p).filter(|&i| i != source).collect();
    let speeds: Vec<f64> = workers.iter().map(|&i| 1.0 / net.w(i)).collect();
    let shares = largest_remainder(&speeds, task.n);
    let mut k = vec![0; p];
    for (&i, &s) in workers.iter().zip(&shares) {
        k[i] = s;
    }
    let nf = task.nf();
    let t_f = workers.iter().map(|&i| start[i] + k[i] as f64 * nf * nf * net.w(i) * net.t_cp()).fold(0.0, f64::max);
    Ok(PipelineResult { volume: copy * workers.len() as f64, t_f, k, start, parent })
}

/// Integer apportionment of `total` proportional to `weights`, remainders
/// going to the largest fractional parts (ties to the lowest index).
pub fn largest_remainder(weights: &[f64], total: u64) -> Vec<u64> {
    if weights.is_empty() {
        return Vec::new();
    }
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        out[i] += 1;
    }
    out
}
