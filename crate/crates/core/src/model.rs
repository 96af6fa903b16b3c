//! Shared domain types: tasks, processors, links, networks, schedules and
//! timings, plus the exact communication and computation volume formulas
//! of the layer based partition.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiplication of two `n x n` matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Task {
    pub n: u64,
}

impl Task {
    pub fn new(n: u64) -> Self {
        Task { n }
    }

    pub(crate) fn nf(&self) -> f64 {
        self.n as f64
    }

    fn check_columns(&self, k: u64) -> Result<()> {
        if k > self.n {
            return Err(Error::OutOfRange { k, n: self.n });
        }
        Ok(())
    }
}

/// Entries the source has to emit under LBP: every entry of `A` and `B` exactly once.
pub fn lbp_source_volume(task: Task) -> f64 {
    2.0 * task.nf() * task.nf()
}

/// Entries one processor receives for a layer of `k` columns: `k` columns of
/// `A` plus `k` rows of `B`.
pub fn per_processor_volume(task: Task, k: u64) -> Result<f64> {
    task.check_columns(k)?;
    Ok(2.0 * k as f64 * task.nf())
}

/// Scalar multiplications needed for a layer of `k` columns.
pub fn compute_load(task: Task, k: u64) -> Result<f64> {
    task.check_columns(k)?;
    Ok(k as f64 * task.nf() * task.nf())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Processor {
    pub id: usize,
    /// Inverse computing speed.
    pub w: f64,
    /// Storage capacity in matrix entries; `None` is unbounded.
    #[serde(default)]
    pub storage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub from: usize,
    pub to: usize,
    /// Inverse link speed.
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Star,
    MeshQuadrant,
    FullMesh,
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetworkKind::Star => "star",
            NetworkKind::MeshQuadrant => "mesh_quadrant",
            NetworkKind::FullMesh => "full_mesh",
        })
    }
}

/// Communication / compute-start mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StarMode {
    /// Sequential communication, simultaneous start.
    Scss,
    /// Sequential communication, consecutive start.
    Sccs,
    /// Parallel communication, consecutive start.
    Pccs,
    /// Parallel communication, simultaneous start.
    Pcss,
}

impl StarMode {
    pub const ALL: [StarMode; 4] = [StarMode::Scss, StarMode::Sccs, StarMode::Pccs, StarMode::Pcss];
}

impl fmt::Display for StarMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StarMode::Scss => "SCSS",
            StarMode::Sccs => "SCCS",
            StarMode::Pccs => "PCCS",
            StarMode::Pcss => "PCSS",
        })
    }
}

impl std::str::FromStr for StarMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scss" => Ok(StarMode::Scss),
            "sccs" => Ok(StarMode::Sccs),
            "pccs" => Ok(StarMode::Pccs),
            "pcss" => Ok(StarMode::Pcss),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

/// On-disk shape of a network.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkDoc {
    kind: NetworkKind,
    #[serde(default)]
    dims: Option<(usize, usize)>,
    t_cp: f64,
    t_cm: f64,
    processors: Vec<Processor>,
    links: Vec<Link>,
    sources: Vec<usize>,
}

/// A validated processor network. Processor ids are dense and 0-based; the
/// source of star and quadrant networks is id 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkDoc", into = "NetworkDoc")]
pub struct NetworkModel {
    kind: NetworkKind,
    dims: Option<(usize, usize)>,
    t_cp: f64,
    t_cm: f64,
    processors: Vec<Processor>,
    links: Vec<Link>,
    sources: Vec<usize>,
    // link indices per node
    inbound: Vec<Vec<usize>>,
    outbound: Vec<Vec<usize>>,
    edge_lookup: HashMap<(usize, usize), usize>,
}

impl From<NetworkModel> for NetworkDoc {
    fn from(net: NetworkModel) -> Self {
        NetworkDoc {
            kind: net.kind,
            dims: net.dims,
            t_cp: net.t_cp,
            t_cm: net.t_cm,
            processors: net.processors,
            links: net.links,
            sources: net.sources,
        }
    }
}

impl TryFrom<NetworkDoc> for NetworkModel {
    type Error = Error;

    fn try_from(doc: NetworkDoc) -> Result<Self> {
        NetworkModel::new(doc.kind, doc.dims, doc.t_cp, doc.t_cm, doc.processors, doc.links, doc.sources)
    }
}

/// Directed right/down edges of a `rows x cols` quadrant, row-major ids.
pub fn quadrant_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let id = r * cols + c;
            if c + 1 < cols {
                edges.push((id, id + 1));
            }
            if r + 1 < rows {
                edges.push((id, id + cols));
            }
        }
    }
    edges
}

/// Both directions of every grid-neighbor pair of a `rows x cols` mesh.
pub fn full_mesh_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for (a, b) in quadrant_edges(rows, cols) {
        edges.push((a, b));
        edges.push((b, a));
    }
    edges
}

impl NetworkModel {
    pub fn new(
        kind: NetworkKind,
        dims: Option<(usize, usize)>,
        t_cp: f64,
        t_cm: f64,
        processors: Vec<Processor>,
        links: Vec<Link>,
        sources: Vec<usize>,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::MalformedNetwork(msg));
        if !(t_cp > 0.0 && t_cp.is_finite()) || !(t_cm > 0.0 && t_cm.is_finite()) {
            return bad("t_cp and t_cm must be positive".into());
        }
        let p = processors.len();
        if p == 0 {
            return bad("network has no processors".into());
        }
        for (i, proc_) in processors.iter().enumerate() {
            if proc_.id != i {
                return bad(format!("processor ids must be dense and ordered, found {} at {i}", proc_.id));
            }
            if !(proc_.w > 0.0 && proc_.w.is_finite()) {
                return bad(format!("processor {i} has non-positive w"));
            }
            if let Some(d) = proc_.storage {
                if !(d > 0.0) {
                    return bad(format!("processor {i} has non-positive storage"));
                }
            }
        }
        let mut inbound = vec![Vec::new(); p];
        let mut outbound = vec![Vec::new(); p];
        let mut edge_lookup = HashMap::new();
        for (idx, link) in links.iter().enumerate() {
            if link.from >= p || link.to >= p {
                return bad(format!("link {}->{} references a missing processor", link.from, link.to));
            }
            if link.from == link.to {
                return bad(format!("self loop on {}", link.from));
            }
            if !(link.z > 0.0 && link.z.is_finite()) {
                return bad(format!("link {}->{} has non-positive z", link.from, link.to));
            }
            if edge_lookup.insert((link.from, link.to), idx).is_some() {
                return bad(format!("duplicate link {}->{}", link.from, link.to));
            }
            outbound[link.from].push(idx);
            inbound[link.to].push(idx);
        }
        for &s in &sources {
            if s >= p {
                return bad(format!("source {s} is not a processor"));
            }
        }

        let mut edge_set: Vec<(usize, usize)> = links.iter().map(|l| (l.from, l.to)).collect();
        edge_set.sort_unstable();
        match kind {
            NetworkKind::Star => {
                if sources != [0] {
                    return bad("a star has exactly one source, processor 0".into());
                }
                let expected: Vec<_> = (1..p).map(|c| (0, c)).collect();
                if edge_set != expected {
                    return bad("star links must connect the source to every child and nothing else".into());
                }
            }
            NetworkKind::MeshQuadrant => {
                let Some((rows, cols)) = dims else {
                    return bad("mesh quadrant needs dims".into());
                };
                if rows * cols != p || rows == 0 || cols == 0 {
                    return bad(format!("dims {rows}x{cols} do not match {p} processors"));
                }
                if sources != [0] {
                    return bad("a mesh quadrant has exactly one source at (0,0)".into());
                }
                let mut expected = quadrant_edges(rows, cols);
                expected.sort_unstable();
                if edge_set != expected {
                    return bad("quadrant links must be exactly the right/down grid edges".into());
                }
            }
            NetworkKind::FullMesh => {
                let Some((rows, cols)) = dims else {
                    return bad("full mesh needs dims".into());
                };
                if rows * cols != p || rows == 0 || cols == 0 {
                    return bad(format!("dims {rows}x{cols} do not match {p} processors"));
                }
                let mut expected = full_mesh_edges(rows, cols);
                expected.sort_unstable();
                if edge_set != expected {
                    return bad("full mesh links must be both directions of every grid edge".into());
                }
            }
        }

        let net = NetworkModel { kind, dims, t_cp, t_cm, processors, links, sources, inbound, outbound, edge_lookup };
        if !net.sources.is_empty() {
            let seen = net.reachable_from_sources();
            if let Some(i) = seen.iter().position(|s| !s) {
                return bad(format!("processor {i} is unreachable from the sources"));
            }
        }
        Ok(net)
    }

    /// Star with source 0 and one child per `(w, z)` pair. The source's own
    /// `w` is never used and is set to 1.
    pub fn star(children: &[(f64, f64)], t_cp: f64, t_cm: f64) -> Result<Self> {
        let mut processors = vec![Processor { id: 0, w: 1.0, storage: None }];
        let mut links = Vec::with_capacity(children.len());
        for (i, &(w, z)) in children.iter().enumerate() {
            processors.push(Processor { id: i + 1, w, storage: None });
            links.push(Link { from: 0, to: i + 1, z });
        }
        Self::new(NetworkKind::Star, None, t_cp, t_cm, processors, links, vec![0])
    }

    /// Quadrant mesh with per-node `w` (row-major, source first) and per-link
    /// `z` in [`quadrant_edges`] order.
    pub fn mesh_quadrant(rows: usize, cols: usize, w: &[f64], z: &[f64], t_cp: f64, t_cm: f64) -> Result<Self> {
        let edges = quadrant_edges(rows, cols);
        Self::grid(NetworkKind::MeshQuadrant, rows, cols, &edges, w, z, t_cp, t_cm, vec![0])
    }

    /// Quadrant mesh with identical processors and links.
    pub fn homogeneous_quadrant(rows: usize, cols: usize, w: f64, z: f64, t_cp: f64, t_cm: f64) -> Result<Self> {
        let p = rows * cols;
        let e = quadrant_edges(rows, cols).len();
        Self::mesh_quadrant(rows, cols, &vec![w; p], &vec![z; e], t_cp, t_cm)
    }

    /// Full mesh with per-link `z` in [`full_mesh_edges`] order. Data is
    /// block-distributed, so there is no source.
    pub fn full_mesh(rows: usize, cols: usize, w: &[f64], z: &[f64], t_cp: f64, t_cm: f64) -> Result<Self> {
        let edges = full_mesh_edges(rows, cols);
        Self::grid(NetworkKind::FullMesh, rows, cols, &edges, w, z, t_cp, t_cm, Vec::new())
    }

    #[allow(clippy::too_many_arguments)]
    fn grid(
        kind: NetworkKind,
        rows: usize,
        cols: usize,
        edges: &[(usize, usize)],
        w: &[f64],
        z: &[f64],
        t_cp: f64,
        t_cm: f64,
        sources: Vec<usize>,
    ) -> Result<Self> {
        if w.len() != rows * cols {
            return Err(Error::MalformedNetwork(format!("expected {} processor speeds, got {}", rows * cols, w.len())));
        }
        if z.len() != edges.len() {
            return Err(Error::MalformedNetwork(format!("expected {} link speeds, got {}", edges.len(), z.len())));
        }
        let processors = w.iter().enumerate().map(|(id, &w)| Processor { id, w, storage: None }).collect();
        let links = edges.iter().zip(z).map(|(&(from, to), &z)| Link { from, to, z }).collect();
        Self::new(kind, Some((rows, cols)), t_cp, t_cm, processors, links, sources)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn kind(&self) -> NetworkKind {
        self.kind
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.dims
    }

    pub fn t_cp(&self) -> f64 {
        self.t_cp
    }

    pub fn t_cm(&self) -> f64 {
        self.t_cm
    }

    pub fn processors(&self) -> &[Processor] {
        &self.processors
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    /// Number of processors including the source.
    pub fn len(&self) -> usize {
        self.processors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.processors.is_empty()
    }

    pub fn is_source(&self, i: usize) -> bool {
        self.sources.contains(&i)
    }

    pub fn w(&self, i: usize) -> f64 {
        self.processors[i].w
    }

    /// `tau(i, j)`.
    pub fn adjacent(&self, from: usize, to: usize) -> bool {
        self.edge_lookup.contains_key(&(from, to))
    }

    pub fn link(&self, from: usize, to: usize) -> Option<&Link> {
        self.edge_lookup.get(&(from, to)).map(|&i| &self.links[i])
    }

    pub fn inbound(&self, i: usize) -> impl Iterator<Item = &Link> + '_ {
        self.inbound[i].iter().map(move |&l| &self.links[l])
    }

    pub fn outbound(&self, i: usize) -> impl Iterator<Item = &Link> + '_ {
        self.outbound[i].iter().map(move |&l| &self.links[l])
    }

    /// Processors in an order where every link points forward. Fails on cycles.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let p = self.len();
        let mut indeg: Vec<usize> = (0..p).map(|i| self.inbound[i].len()).collect();
        let mut queue: VecDeque<usize> = (0..p).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(p);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for l in self.outbound(i) {
                indeg[l.to] -= 1;
                if indeg[l.to] == 0 {
                    queue.push_back(l.to);
                }
            }
        }
        if order.len() != p {
            return Err(Error::MalformedNetwork("network links contain a cycle".into()));
        }
        Ok(order)
    }

    fn reachable_from_sources(&self) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut stack: Vec<usize> = self.sources.clone();
        for &s in &self.sources {
            seen[s] = true;
        }
        while let Some(i) = stack.pop() {
            for l in self.outbound(i) {
                if !seen[l.to] {
                    seen[l.to] = true;
                    stack.push(l.to);
                }
            }
        }
        seen
    }

    /// The single source of a star or quadrant network.
    pub(crate) fn single_source(&self) -> Result<usize> {
        match self.sources.as_slice() {
            [s] => Ok(*s),
            _ => Err(Error::MalformedNetwork(format!("expected a single source, found {}", self.sources.len()))),
        }
    }

    /// Copy of this network with the storage bound of processor `i` replaced.
    pub fn with_storage(mut self, i: usize, storage: Option<f64>) -> Result<Self> {
        if i >= self.len() {
            return Err(Error::MalformedNetwork(format!("no processor {i}")));
        }
        if let Some(d) = storage {
            if !(d > 0.0) {
                return Err(Error::MalformedNetwork(format!("processor {i} has non-positive storage")));
            }
        }
        self.processors[i].storage = storage;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub from: usize,
    pub to: usize,
    pub volume: f64,
}

/// Per-processor column counts plus the per-link flows that deliver them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Column count per processor, indexed by processor id. Real during
    /// relaxation, integral once final.
    pub k: Vec<f64>,
    pub flows: Vec<Flow>,
    pub mode: StarMode,
}

impl Schedule {
    pub fn total_columns(&self) -> f64 {
        self.k.iter().sum()
    }

    pub fn is_integral(&self) -> bool {
        self.k.iter().all(|k| k.fract() == 0.0 && *k >= 0.0)
    }

    pub fn flow(&self, from: usize, to: usize) -> f64 {
        self.flows.iter().filter(|f| f.from == from && f.to == to).map(|f| f.volume).sum()
    }

    pub fn total_link_volume(&self) -> f64 {
        self.flows.iter().map(|f| f.volume).sum()
    }

    /// Checks `sum k = N`, zero load on sources, non-negative loads, and
    /// that flows only use existing links. `tol` is relative to `N`.
    pub fn validate(&self, net: &NetworkModel, task: Task, tol: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSchedule(msg));
        if self.k.len() != net.len() {
            return bad(format!("{} column counts for {} processors", self.k.len(), net.len()));
        }
        if let Some(i) = self.k.iter().position(|k| !(*k >= -tol * task.nf().max(1.0))) {
            return bad(format!("processor {i} has negative load {}", self.k[i]));
        }
        for &s in net.sources() {
            if self.k[s].abs() > tol * task.nf().max(1.0) {
                return bad(format!("source {s} carries load {}", self.k[s]));
            }
        }
        let sum = self.total_columns();
        if (sum - task.nf()).abs() > tol * task.nf().max(1.0) {
            return bad(format!("column counts sum to {sum}, expected {}", task.n));
        }
        for f in &self.flows {
            if !net.adjacent(f.from, f.to) {
                return bad(format!("flow on missing link {}->{}", f.from, f.to));
            }
            if f.volume < -tol * lbp_source_volume(task).max(1.0) {
                return bad(format!("negative flow on {}->{}", f.from, f.to));
            }
        }
        Ok(())
    }
}

/// Start and finish time of every processor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub start: Vec<f64>,
    pub finish: Vec<f64>,
    pub overall: f64,
}

impl Timing {
    pub fn new(start: Vec<f64>, finish: Vec<f64>) -> Self {
        let overall = finish.iter().copied().fold(0.0, f64::max);
        Timing { start, finish, overall }
    }
}
