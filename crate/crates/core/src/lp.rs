//! Dense two-phase tableau simplex with Bland's rule.
//!
//! Programs are stated as minimization over variables with arbitrary
//! `[lower, upper]` bounds. Before pivoting the program is rewritten in
//! standard form: fixed variables are substituted out, finite lower bounds
//! are shifted to zero, variables with only an upper bound are mirrored, and
//! free variables are split into a difference of two non-negatives.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entries smaller than this are treated as zero when choosing pivots.
pub const PIVOT_TOL: f64 = 1e-9;
/// Allowed constraint violation of a returned optimum (scaled by row magnitude).
pub const FEAS_TOL: f64 = 1e-7;
const REDUCED_COST_TOL: f64 = 1e-9;
const REINVERT_EVERY: usize = 32;
const SUSPECT_PIVOT: f64 = 1e-6;
const TINY_PIVOT: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    /// Sparse `(variable, coefficient)` pairs.
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl LinearConstraint {
    fn lhs(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    fn scale(&self, x: &[f64]) -> f64 {
        let terms: f64 = self.coeffs.iter().map(|&(j, a)| (a * x[j]).abs()).sum();
        terms.max(self.rhs.abs()).max(1.0)
    }

    fn violation(&self, x: &[f64]) -> f64 {
        let d = self.lhs(x) - self.rhs;
        match self.relation {
            Relation::Le => d.max(0.0),
            Relation::Ge => (-d).max(0.0),
            Relation::Eq => d.abs(),
        }
    }
}

/// Minimize `objective . x` subject to linear constraints and bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub constraints: Vec<LinearConstraint>,
    /// Per-variable `(lower, upper)`; defaults to `(0, inf)`.
    pub bounds: Vec<(f64, f64)>,
    /// Optional variable names used by [`LinearProgram::to_lp_text`].
    #[serde(default)]
    pub names: Vec<String>,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        LinearProgram {
            num_vars,
            objective: vec![0.0; num_vars],
            constraints: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); num_vars],
            names: Vec::new(),
        }
    }

    pub fn set_objective(&mut self, var: usize, coeff: f64) {
        self.objective[var] = coeff;
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(LinearConstraint { coeffs, relation, rhs });
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.bounds[var] = (lower, upper);
    }

    pub fn fix(&mut self, var: usize, value: f64) {
        self.bounds[var] = (value, value);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidProgram(m));
        if self.objective.len() != self.num_vars || self.bounds.len() != self.num_vars {
            return bad("objective and bounds must have one entry per variable".into());
        }
        if !self.names.is_empty() && self.names.len() != self.num_vars {
            return bad("names must be empty or one per variable".into());
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return bad(format!("variable {j} has bounds [{lo}, {hi}]"));
            }
        }
        for (r, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() {
                return bad(format!("constraint {r} has non-finite rhs"));
            }
            for &(j, a) in &c.coeffs {
                if j >= self.num_vars {
                    return bad(format!("constraint {r} references variable {j} of {}", self.num_vars));
                }
                if !a.is_finite() {
                    return bad(format!("constraint {r} has a non-finite coefficient"));
                }
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return bad("objective has a non-finite coefficient".into());
        }
        Ok(())
    }

    fn name(&self, j: usize) -> String {
        self.names.get(j).cloned().unwrap_or_else(|| format!("x{j}"))
    }

    /// Human-readable dump in CPLEX LP style.
    pub fn to_lp_text(&self) -> String {
        let mut out = String::new();
        let term = |out: &mut String, first: bool, a: f64, name: &str| {
            let sign = match (first, a < 0.0) {
                (true, false) => "",
                (true, true) => "- ",
                (false, false) => "+ ",
                (false, true) => "- ",
            };
            let _ = write!(out, "{sign}{} {name}", a.abs());
        };
        out.push_str("Minimize\n obj:");
        let mut first = true;
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                out.push(' ');
                term(&mut out, first, c, &self.name(j));
                first = false;
            }
        }
        if first {
            out.push_str(" 0");
        }
        out.push_str("\nSubject To\n");
        for (r, c) in self.constraints.iter().enumerate() {
            let _ = write!(out, " c{r}:");
            let mut first = true;
            for &(j, a) in &c.coeffs {
                out.push(' ');
                term(&mut out, first, a, &self.name(j));
                first = false;
            }
            if first {
                out.push_str(" 0");
            }
            let rel = match c.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            let _ = writeln!(out, " {rel} {}", c.rhs);
        }
        out.push_str("Bounds\n");
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            let name = self.name(j);
            if lo == hi {
                let _ = writeln!(out, " {name} = {lo}");
            } else if lo == 0.0 && hi == f64::INFINITY {
                continue;
            } else if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
                let _ = writeln!(out, " {name} free");
            } else {
                let lo_s = if lo == f64::NEG_INFINITY { "-inf".to_string() } else { lo.to_string() };
                let hi_s = if hi == f64::INFINITY { "+inf".to_string() } else { hi.to_string() };
                let _ = writeln!(out, " {lo_s} <= {name} <= {hi_s}");
            }
        }
        out.push_str("End\n");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub values: Vec<f64>,
    pub objective_value: f64,
    /// Simplex pivots across both phases.
    pub iterations: u64,
}

impl LpSolution {
    /// `Ok(self)` when optimal, otherwise the matching error.
    pub fn into_optimal(self) -> Result<Self> {
        match self.status {
            LpStatus::Optimal => Ok(self),
            LpStatus::Infeasible => Err(Error::LpInfeasible),
            LpStatus::Unbounded => Err(Error::LpUnbounded),
        }
    }
}

/// How an original variable maps onto standard-form columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    Fixed(f64),
    /// `x = lower + col`
    Shifted {
        lower: f64,
        col: usize,
    },
    /// `x = upper - col`
    Mirrored {
        upper: f64,
        col: usize,
    },
    /// `x = pos - neg`
    Split {
        pos: usize,
        neg: usize,
    },
}

struct Tableau {
    /// `rows x (cols + 1)`; last column is the right-hand side.
    a: Vec<f64>,
    rows: usize,
    cols: usize,
    basis: Vec<usize>,
    iterations: u64,
    max_iterations: u64,
    /// Initial tableau rows, for reinversion.
    original: Vec<f64>,
    /// Original index of each current row.
    row_ids: Vec<usize>,
}

impl Tableau {
    fn width(&self) -> usize {
        self.cols + 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.width() + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize, cost: &mut [f64]) -> Result<()> {
        let w = self.width();
        let piv = self.a[pr * w + pc];
        if piv.abs() < TINY_PIVOT {
            return Err(Error::NumericalFailure(format!("pivot {piv:e} below tolerance")));
        }
        for c in 0..w {
            self.a[pr * w + c] /= piv;
        }
        self.a[pr * w + pc] = 1.0;
        let pivot_row: Vec<f64> = self.a[pr * w..(pr + 1) * w].to_vec();
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.a[r * w + pc];
            if f != 0.0 {
                let row = &mut self.a[r * w..(r + 1) * w];
                for (x, p) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * p;
                }
                row[pc] = 0.0;
            }
        }
        let f = cost[pc];
        if f != 0.0 {
            for (x, p) in cost.iter_mut().zip(&pivot_row) {
                *x -= f * p;
            }
            cost[pc] = 0.0;
        }
        self.basis[pr] = pc;
        self.iterations += 1;
        if self.iterations > self.max_iterations {
            return Err(Error::NumericalFailure(format!("no convergence after {} pivots", self.iterations)));
        }
        Ok(())
    }

    /// Rebuilds the rows for the current basis from the initial tableau
    /// (Gauss-Jordan with partial pivoting) and recomputes the reduced
    /// costs of `raw_cost`. Leaves everything untouched if the basis looks
    /// singular.
    fn reinvert(&mut self, raw_cost: &[f64], cost: &mut [f64]) {
        let w = self.width();
        let m = self.rows;
        let mut a: Vec<f64> =
            self.row_ids.iter().flat_map(|&r| self.original[r * w..(r + 1) * w].iter().copied()).collect();
        let mut assigned = vec![false; m];
        let mut basis = vec![0; m];
        for &c in &self.basis {
            let Some(pr) =
                (0..m).filter(|&r| !assigned[r]).max_by(|&x, &y| a[x * w + c].abs().total_cmp(&a[y * w + c].abs()))
            else {
                return;
            };
            let piv = a[pr * w + c];
            if piv.abs() < TINY_PIVOT {
                return;
            }
            for x in &mut a[pr * w..(pr + 1) * w] {
                *x /= piv;
            }
            let pivot_row: Vec<f64> = a[pr * w..(pr + 1) * w].to_vec();
            for r in (0..m).filter(|&r| r != pr) {
                let f = a[r * w + c];
                if f != 0.0 {
                    for (x, p) in a[r * w..(r + 1) * w].iter_mut().zip(&pivot_row) {
                        *x -= f * p;
                    }
                    a[r * w + c] = 0.0;
                }
            }
            assigned[pr] = true;
            basis[pr] = c;
        }
        self.a = a;
        self.basis = basis;
        cost.copy_from_slice(raw_cost);
        for r in 0..m {
            let cb = raw_cost[self.basis[r]];
            if cb != 0.0 {
                for c in 0..w {
                    cost[c] -= cb * self.at(r, c);
                }
            }
        }
    }

    /// Runs simplex iterations on the reduced-cost row `cost` (whose last
    /// entry is minus the objective value) of the objective `raw_cost` over
    /// columns `allowed`. Returns `false` when unbounded.
    fn optimize(&mut self, raw_cost: &[f64], cost: &mut [f64], allowed: &[bool]) -> Result<bool> {
        let mut since_reinversion = 0;
        loop {
            if since_reinversion == REINVERT_EVERY {
                self.reinvert(raw_cost, cost);
                since_reinversion = 0;
            }
            since_reinversion += 1;
            // Bland: lowest-index improving column
            let Some(pc) = (0..self.cols).find(|&c| allowed[c] && cost[c] < -REDUCED_COST_TOL) else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / a;
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bratio)) => {
                            let tie = (ratio - bratio).abs() <= 1e-12 * bratio.abs().max(1.0);
                            if ratio < bratio && !tie || tie && self.basis[r] < self.basis[br] {
                                Some((r, ratio))
                            } else {
                                Some((br, bratio))
                            }
                        }
                    };
                }
            }
            let Some((pr, _)) = best else {
                return Ok(false);
            };
            if self.at(pr, pc) < SUSPECT_PIVOT && since_reinversion > 1 {
                // small pivots amplify accumulated round-off; redo the step on fresh rows
                self.reinvert(raw_cost, cost);
                since_reinversion = 1;
                continue;
            }
            self.pivot(pr, pc, cost)?;
        }
    }
}

/// Solves `lp` to optimality, or reports it infeasible or unbounded.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;

    // Standard-form columns.
    let mut maps = Vec::with_capacity(lp.num_vars);
    let mut ncols = 0usize;
    let mut upper_rows: Vec<(usize, f64)> = Vec::new();
    for &(lo, hi) in &lp.bounds {
        let m = if lo == hi {
            VarMap::Fixed(lo)
        } else if lo.is_finite() {
            let col = ncols;
            ncols += 1;
            if hi.is_finite() {
                upper_rows.push((col, hi - lo));
            }
            VarMap::Shifted { lower: lo, col }
        } else if hi.is_finite() {
            let col = ncols;
            ncols += 1;
            VarMap::Mirrored { upper: hi, col }
        } else {
            let (pos, neg) = (ncols, ncols + 1);
            ncols += 2;
            VarMap::Split { pos, neg }
        };
        maps.push(m);
    }

    // Rows over standard columns: (dense coeffs, relation, rhs).
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    let transform = |coeffs: &[(usize, f64)], rhs: f64| -> (Vec<f64>, f64) {
        let mut dense = vec![0.0; ncols];
        let mut b = rhs;
        for &(j, a) in coeffs {
            match maps[j] {
                VarMap::Fixed(v) => b -= a * v,
                VarMap::Shifted { lower, col } => {
                    b -= a * lower;
                    dense[col] += a;
                }
                VarMap::Mirrored { upper, col } => {
                    b -= a * upper;
                    dense[col] -= a;
                }
                VarMap::Split { pos, neg } => {
                    dense[pos] += a;
                    dense[neg] -= a;
                }
            }
        }
        (dense, b)
    };
    for c in &lp.constraints {
        let (dense, b) = transform(&c.coeffs, c.rhs);
        if dense.iter().all(|&a| a == 0.0) {
            let ok = match c.relation {
                Relation::Le => 0.0 <= b + FEAS_TOL * b.abs().max(1.0),
                Relation::Ge => 0.0 >= b - FEAS_TOL * b.abs().max(1.0),
                Relation::Eq => b.abs() <= FEAS_TOL * b.abs().max(1.0),
            };
            if !ok {
                return Ok(infeasible(lp.num_vars, 0));
            }
            continue;
        }
        rows.push((dense, c.relation, b));
    }
    for (col, ub) in upper_rows {
        let mut dense = vec![0.0; ncols];
        dense[col] = 1.0;
        rows.push((dense, Relation::Le, ub));
    }
    let obj_dense = {
        let pairs: Vec<(usize, f64)> = lp.objective.iter().copied().enumerate().collect();
        transform(&pairs, 0.0).0
    };

    // Normalize to non-negative rhs.
    for (dense, rel, b) in rows.iter_mut() {
        if *b < 0.0 {
            dense.iter_mut().for_each(|a| *a = -*a);
            *b = -*b;
            *rel = match *rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    // Geometric equilibration: row r is multiplied by row_scale[r] and
    // structural column c is measured in units of col_scale[c].
    let mut row_scale = vec![1.0; rows.len()];
    let mut col_scale = vec![1.0; ncols];
    for _ in 0..4 {
        for (r, (dense, _, _)) in rows.iter().enumerate() {
            if let Some(f) = geometric_factor(dense.iter().enumerate().map(|(c, a)| a * row_scale[r] * col_scale[c])) {
                row_scale[r] *= f;
            }
        }
        for (c, cs) in col_scale.iter_mut().enumerate() {
            if let Some(f) = geometric_factor(rows.iter().enumerate().map(|(r, row)| row.0[c] * row_scale[r] * *cs)) {
                *cs *= f;
            }
        }
    }
    for (r, (dense, _, b)) in rows.iter_mut().enumerate() {
        for (c, a) in dense.iter_mut().enumerate() {
            *a *= row_scale[r] * col_scale[c];
        }
        *b *= row_scale[r];
    }
    let obj_dense: Vec<f64> = obj_dense.iter().zip(&col_scale).map(|(c, s)| c * s).collect();

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let total = ncols + n_slack + n_art;
    let art_start = ncols + n_slack;
    let width = total + 1;
    let mut tab = Tableau {
        a: vec![0.0; m * width],
        rows: m,
        cols: total,
        basis: vec![0; m],
        iterations: 0,
        max_iterations: 50_000 + 200 * (m as u64 + total as u64),
        original: Vec::new(),
        row_ids: (0..m).collect(),
    };
    let (mut s, mut art) = (ncols, art_start);
    for (r, (dense, rel, b)) in rows.iter().enumerate() {
        let base = r * width;
        tab.a[base..base + ncols].copy_from_slice(dense);
        tab.a[base + total] = *b;
        match rel {
            Relation::Le => {
                tab.a[base + s] = 1.0;
                tab.basis[r] = s;
                s += 1;
            }
            Relation::Ge => {
                tab.a[base + s] = -1.0;
                s += 1;
                tab.a[base + art] = 1.0;
                tab.basis[r] = art;
                art += 1;
            }
            Relation::Eq => {
                tab.a[base + art] = 1.0;
                tab.basis[r] = art;
                art += 1;
            }
        }
    }

    tab.original = tab.a.clone();

    // Phase 1: minimize the sum of artificials.
    let mut allowed = vec![true; total];
    if n_art > 0 {
        let mut raw = vec![0.0; width];
        for c in art_start..total {
            raw[c] = 1.0;
        }
        let mut cost = vec![0.0; width];
        tab.reinvert(&raw, &mut cost);
        tab.optimize(&raw, &mut cost, &allowed)?;
        tab.reinvert(&raw, &mut cost);
        let infeasibility = -cost[total];
        let scale = rows.iter().map(|r| r.2).fold(1.0, f64::max);
        if infeasibility > FEAS_TOL * scale {
            return Ok(infeasible(lp.num_vars, tab.iterations));
        }
        // Drive remaining artificials out of the basis, dropping redundant rows.
        let mut r = 0;
        while r < tab.rows {
            if tab.basis[r] >= art_start {
                let col = (0..art_start)
                    .filter(|&c| tab.at(r, c).abs() > PIVOT_TOL)
                    .max_by(|&x, &y| tab.at(r, x).abs().total_cmp(&tab.at(r, y).abs()));
                match col {
                    Some(c) => {
                        let mut dummy = vec![0.0; width];
                        tab.pivot(r, c, &mut dummy)?;
                    }
                    None => {
                        tab.a.drain(r * width..(r + 1) * width);
                        tab.basis.remove(r);
                        tab.row_ids.remove(r);
                        tab.rows -= 1;
                        continue;
                    }
                }
            }
            r += 1;
        }
        for a in allowed.iter_mut().skip(art_start) {
            *a = false;
        }
    }

    // Phase 2.
    let mut raw = vec![0.0; width];
    raw[..ncols].copy_from_slice(&obj_dense);
    let mut cost = vec![0.0; width];
    tab.reinvert(&raw, &mut cost);
    if !tab.optimize(&raw, &mut cost, &allowed)? {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            values: vec![0.0; lp.num_vars],
            objective_value: f64::NEG_INFINITY,
            iterations: tab.iterations,
        });
    }

    // Shed the round-off accumulated since the last reinversion.
    tab.reinvert(&raw, &mut cost);
    let mut std_vals = vec![0.0; total];
    for r in 0..tab.rows {
        std_vals[tab.basis[r]] = tab.rhs(r).max(0.0);
    }
    for (v, s) in std_vals.iter_mut().zip(&col_scale) {
        *v *= s;
    }
    let values: Vec<f64> = maps
        .iter()
        .map(|m| match *m {
            VarMap::Fixed(v) => v,
            VarMap::Shifted { lower, col } => lower + std_vals[col],
            VarMap::Mirrored { upper, col } => upper - std_vals[col],
            VarMap::Split { pos, neg } => std_vals[pos] - std_vals[neg],
        })
        .collect();
    let objective_value: f64 = lp.objective.iter().zip(&values).map(|(c, x)| c * x).sum();

    for (r, c) in lp.constraints.iter().enumerate() {
        let v = c.violation(&values);
        if v > FEAS_TOL * c.scale(&values) {
            return Err(Error::NumericalFailure(format!("constraint {r} violated by {v:e} at the returned optimum")));
        }
    }
    Ok(LpSolution { status: LpStatus::Optimal, values, objective_value, iterations: tab.iterations })
}

/// Factor bringing the nonzero magnitudes of a row or column to a geometric mean of one.
fn geometric_factor(entries: impl Iterator<Item = f64>) -> Option<f64> {
    let (lo, hi) =
        entries.map(f64::abs).filter(|&a| a > 0.0).fold((f64::INFINITY, 0.0f64), |(lo, hi), a| (lo.min(a), hi.max(a)));
    (hi > 0.0).then(|| 1.0 / (lo * hi).sqrt())
}

fn infeasible(num_vars: usize, iterations: u64) -> LpSolution {
    LpSolution { status: LpStatus::Infeasible, values: vec![0.0; num_vars], objective_value: f64::NAN, iterations }
}
