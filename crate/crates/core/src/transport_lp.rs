//! Exact linear programs over transport polytopes with box-constrained
//! marginals and a fixed total mass.
//!
//! The polytope is encoded as a flow network `S → R_i → C_j → T` where the
//! source and sink arcs carry the marginal bounds, and solved by a two-phase
//! bounded-variable network simplex with Bland's pivoting rule.

use nalgebra::{DMatrix, DVector};

use crate::coupling::{Coupling, FamilyBounds};
use crate::distortion::Neumaier;
use crate::error::{Error, Result};
use crate::exponent::Exponent;
use crate::mmspace::TOL_MASS;

/// Primal feasibility tolerance, relative to `max(1, total)`.
pub const TOL_PRIMAL: f64 = 1e-10;
/// Bound on the relative complementary-slackness residual of a returned vertex.
pub const TOL_CERTIFY: f64 = 1e-9;

/// A linear objective over a box-constrained transport polytope.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOracleSpec {
    pub cost: DMatrix<f64>,
    pub row_lower: DVector<f64>,
    pub row_upper: DVector<f64>,
    pub col_lower: DVector<f64>,
    pub col_upper: DVector<f64>,
    pub total: f64,
    /// Cells allowed to carry mass (column-major); `None` allows every cell.
    pub allowed: Option<Vec<bool>>,
}

impl LinearOracleSpec {
    pub fn new(cost: DMatrix<f64>, bounds: &FamilyBounds) -> Self {
        LinearOracleSpec {
            cost,
            row_lower: bounds.row_lower.clone(),
            row_upper: bounds.row_upper.clone(),
            col_lower: bounds.col_lower.clone(),
            col_upper: bounds.col_upper.clone(),
            total: bounds.total,
            allowed: None,
        }
    }

    pub fn with_allowed(mut self, allowed: Vec<bool>) -> Self {
        self.allowed = Some(allowed);
        self
    }

    fn bounds(&self) -> FamilyBounds {
        FamilyBounds {
            row_lower: self.row_lower.clone(),
            row_upper: self.row_upper.clone(),
            col_lower: self.col_lower.clone(),
            col_upper: self.col_upper.clone(),
            total: self.total,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub coupling: Coupling,
    pub objective: f64,
    /// Relative complementary-slackness residual of the final basis.
    pub cs_residual: f64,
    pub pivots: usize,
}

/// Minimizes `⟨cost, π⟩` over the polytope; returns an optimal vertex.
pub fn lmo(spec: &LinearOracleSpec) -> Result<Coupling> {
    Ok(solve_lp(spec)?.coupling)
}

pub fn solve_lp(spec: &LinearOracleSpec) -> Result<LpSolution> {
    let mut s = TransportSimplex::new(&spec.bounds(), spec.allowed.as_deref())?;
    s.solve(&spec.cost)
}

/// Whether the polytope (restricted to `allowed`) is nonempty.
pub fn is_feasible(bounds: &FamilyBounds, allowed: Option<&[bool]>) -> Result<bool> {
    match TransportSimplex::new(bounds, allowed) {
        Ok(_) => Ok(true),
        Err(Error::Infeasible(_)) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Exact `W_p(μ, ν)` for measures of equal mass on one finite metric.
pub fn wasserstein_p(mu: &DVector<f64>, nu: &DVector<f64>, d: &DMatrix<f64>, p: Exponent) -> Result<f64> {
    let n = mu.len();
    if nu.len() != n || d.nrows() != n || d.ncols() != n {
        return Err(Error::Dimension(format!(
            "wasserstein_p: measures of length {} and {} on a {}x{} metric",
            n,
            nu.len(),
            d.nrows(),
            d.ncols()
        )));
    }
    let q = p.value().ok_or_else(|| Error::Unsupported("wasserstein_p needs finite p".into()))?;
    let (a, b) = (mu.sum(), nu.sum());
    if (a - b).abs() > TOL_MASS {
        return Err(Error::Parameter(format!("measures have different masses {a} and {b}")));
    }
    if mu.iter().chain(nu.iter()).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Parameter("measures must be finite and nonnegative".into()));
    }
    let cost = d.map(|v| v.powf(q));
    let bounds = FamilyBounds {
        row_lower: mu.clone(),
        row_upper: mu.clone(),
        col_lower: nu.clone(),
        col_upper: nu.clone(),
        total: a,
    };
    let sol = TransportSimplex::new(&bounds, None)?.solve(&cost)?;
    Ok(sol.objective.max(0.0).powf(1.0 / q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Tree,
    Lower,
    Upper,
}

/// A network simplex instance for one polytope.
///
/// Phase 1 runs at construction; [`TransportSimplex::solve`] then runs
/// phase 2 for a cost matrix starting from the current basis, so repeated
/// solves with changing costs warm-start from the previous optimum.
#[derive(Debug, Clone)]
pub struct TransportSimplex {
    n: usize,
    m: usize,
    total: f64,
    cells: Vec<(usize, usize)>,
    from: Vec<usize>,
    to: Vec<usize>,
    #[cfg_attr(not(test), allow(dead_code))]
    lower: Vec<f64>,
    cap: Vec<f64>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    state: Vec<State>,
    n_real: usize,
    root: usize,
    tree: Vec<usize>,
    parent: Vec<usize>,
    parent_arc: Vec<usize>,
    depth: Vec<usize>,
    pot: Vec<f64>,
    adj: Vec<Vec<usize>>,
}

const NONE: usize = usize::MAX;

fn aggregate_check(side: &str, lo: &DVector<f64>, hi: &DVector<f64>, total: f64, tol: f64) -> Result<()> {
    for i in 0..lo.len() {
        if lo[i].is_nan() || lo[i] < 0.0 || hi[i].is_nan() {
            return Err(Error::Parameter(format!("{side} bounds at atom {i} are invalid")));
        }
        if lo[i] > hi[i] + tol {
            return Err(Error::Infeasible(format!(
                "{side}_lower[{i}] = {} exceeds {side}_upper[{i}] = {}",
                lo[i], hi[i]
            )));
        }
    }
    let sl: f64 = lo.sum();
    if sl > total + tol {
        return Err(Error::Infeasible(format!(
            "sum of {side}_lower = {sl} exceeds total = {total}"
        )));
    }
    let su: f64 = hi.iter().map(|v| v.min(total)).sum();
    if su < total - tol {
        return Err(Error::Infeasible(format!(
            "sum of {side}_upper = {su} is below total = {total}"
        )));
    }
    Ok(())
}

impl TransportSimplex {
    pub fn new(bounds: &FamilyBounds, allowed: Option<&[bool]>) -> Result<Self> {
        let n = bounds.row_lower.len();
        let m = bounds.col_lower.len();
        if bounds.row_upper.len() != n || bounds.col_upper.len() != m {
            return Err(Error::Dimension("bound vectors have inconsistent lengths".into()));
        }
        if let Some(a) = allowed {
            if a.len() != n * m {
                return Err(Error::Dimension(format!("allowed mask has {} cells, expected {}", a.len(), n * m)));
            }
        }
        let total = bounds.total;
        if !(total.is_finite() && total >= 0.0) {
            return Err(Error::Parameter(format!("total mass must be finite and >= 0, got {total}")));
        }
        let tol = TOL_PRIMAL * total.max(1.0);
        aggregate_check("row", &bounds.row_lower, &bounds.row_upper, total, tol)?;
        aggregate_check("col", &bounds.col_lower, &bounds.col_upper, total, tol)?;

        let s_node = 0;
        let t_node = n + m + 1;
        let root = n + m + 2;
        let n_nodes = n + m + 3;
        let mut from = Vec::new();
        let mut to = Vec::new();
        let mut lower = Vec::new();
        let mut cap = Vec::new();
        let mut cells = Vec::new();
        for i in 0..n {
            let lo = bounds.row_lower[i].min(total);
            from.push(s_node);
            to.push(1 + i);
            lower.push(lo);
            cap.push((bounds.row_upper[i].min(total) - lo).max(0.0));
        }
        for j in 0..m {
            for i in 0..n {
                if allowed.is_some_and(|a| !a[i + n * j]) {
                    continue;
                }
                cells.push((i, j));
                from.push(1 + i);
                to.push(1 + n + j);
                lower.push(0.0);
                cap.push(total);
            }
        }
        for j in 0..m {
            let lo = bounds.col_lower[j].min(total);
            from.push(1 + n + j);
            to.push(t_node);
            lower.push(lo);
            cap.push((bounds.col_upper[j].min(total) - lo).max(0.0));
        }
        let n_real = from.len();

        let mut supply = vec![0.0; n_nodes];
        supply[s_node] += total;
        supply[t_node] -= total;
        for a in 0..n_real {
            supply[from[a]] -= lower[a];
            supply[to[a]] += lower[a];
        }
        let big = 2.0 * supply.iter().map(|v| v.abs()).sum::<f64>() + 1.0;
        let mut flow = vec![0.0; n_real];
        let mut state = vec![State::Lower; n_real];
        let mut tree = Vec::with_capacity(n_nodes - 1);
        for (v, &b) in supply.iter().enumerate().take(n_nodes - 1) {
            if b >= 0.0 {
                from.push(v);
                to.push(root);
                flow.push(b);
            } else {
                from.push(root);
                to.push(v);
                flow.push(-b);
            }
            lower.push(0.0);
            cap.push(big);
            state.push(State::Tree);
            tree.push(from.len() - 1);
        }
        let n_arcs = from.len();
        let mut s = TransportSimplex {
            n,
            m,
            total,
            cells,
            from,
            to,
            lower,
            cap,
            cost: vec![0.0; n_arcs],
            flow,
            state,
            n_real,
            root,
            tree,
            parent: vec![NONE; n_nodes],
            parent_arc: vec![NONE; n_nodes],
            depth: vec![0; n_nodes],
            pot: vec![0.0; n_nodes],
            adj: vec![Vec::new(); n_nodes],
        };

        for a in n_real..n_arcs {
            s.cost[a] = 1.0;
        }
        s.rebuild_tree();
        s.run(tol_dual(1.0));
        let infeas: f64 = s.flow[n_real..].iter().sum();
        if infeas > tol {
            return Err(Error::Infeasible(format!(
                "no coupling satisfies the bounds on the allowed cells (residual {infeas:e})"
            )));
        }
        for a in n_real..n_arcs {
            s.flow[a] = 0.0;
            s.cap[a] = 0.0;
            s.cost[a] = 0.0;
        }
        Ok(s)
    }

    /// Phase 2 for `cost`, from the current basis.
    pub fn solve(&mut self, cost: &DMatrix<f64>) -> Result<LpSolution> {
        if cost.shape() != (self.n, self.m) {
            return Err(Error::Dimension(format!(
                "cost is {}x{}, expected {}x{}",
                cost.nrows(),
                cost.ncols(),
                self.n,
                self.m
            )));
        }
        if cost.iter().any(|c| !c.is_finite()) {
            return Err(Error::Parameter("cost matrix has non-finite entries".into()));
        }
        let cmax = cost.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        let off = self.n;
        for (k, &(i, j)) in self.cells.iter().enumerate() {
            self.cost[off + k] = cost[(i, j)];
        }
        self.rebuild_tree();
        let pivots = self.run(tol_dual(cmax));

        let mut mat = DMatrix::zeros(self.n, self.m);
        let mut obj = Neumaier::default();
        for (k, &(i, j)) in self.cells.iter().enumerate() {
            let f = self.flow[off + k].max(0.0);
            mat[(i, j)] = f;
            obj.add(f * cost[(i, j)]);
        }
        let mut res = 0.0;
        for a in 0..self.n_real {
            let rc = self.reduced_cost(a);
            res += rc.max(0.0) * self.flow[a] + (-rc).max(0.0) * (self.cap[a] - self.flow[a]);
        }
        let scale = cmax * self.total;
        let cs_residual = if scale > 0.0 { res / scale } else { 0.0 };
        Ok(LpSolution {
            coupling: Coupling::from_nonnegative(mat),
            objective: obj.value(),
            cs_residual,
            pivots,
        })
    }

    #[inline]
    fn reduced_cost(&self, a: usize) -> f64 {
        self.cost[a] + self.pot[self.from[a]] - self.pot[self.to[a]]
    }

    fn rebuild_tree(&mut self) {
        for l in &mut self.adj {
            l.clear();
        }
        for &a in &self.tree {
            self.adj[self.from[a]].push(a);
            self.adj[self.to[a]].push(a);
        }
        self.parent.fill(NONE);
        self.parent_arc.fill(NONE);
        let root = self.root;
        self.depth[root] = 0;
        self.pot[root] = 0.0;
        self.parent[root] = root;
        let mut queue = vec![root];
        let mut head = 0;
        while head < queue.len() {
            let u = queue[head];
            head += 1;
            for k in 0..self.adj[u].len() {
                let a = self.adj[u][k];
                let (w, pw) = if self.from[a] == u {
                    (self.to[a], self.pot[u] + self.cost[a])
                } else {
                    (self.from[a], self.pot[u] - self.cost[a])
                };
                if self.parent[w] != NONE {
                    continue;
                }
                self.parent[w] = u;
                self.parent_arc[w] = a;
                self.depth[w] = self.depth[u] + 1;
                self.pot[w] = pw;
                queue.push(w);
            }
        }
        debug_assert_eq!(queue.len(), self.parent.len());
    }

    /// Pivots until no arc prices out; returns the pivot count.
    fn run(&mut self, tol: f64) -> usize {
        let mut pivots = 0;
        let flow_tol = 1e-14 * self.total.max(1.0);
        let mut path: Vec<(usize, bool)> = Vec::new();
        loop {
            let mut entering = NONE;
            for a in 0..self.from.len() {
                if self.state[a] == State::Tree || self.cap[a] <= 0.0 {
                    continue;
                }
                let rc = self.reduced_cost(a);
                if (self.state[a] == State::Lower && rc < -tol) || (self.state[a] == State::Upper && rc > tol) {
                    entering = a;
                    break;
                }
            }
            if entering == NONE {
                return pivots;
            }
            pivots += 1;
            let e = entering;
            let forward = self.state[e] == State::Lower;
            // Flow runs s → t on the entering arc and returns t → lca → s.
            let (s, t) = if forward { (self.from[e], self.to[e]) } else { (self.to[e], self.from[e]) };

            path.clear();
            let (mut a, mut b) = (t, s);
            while a != b {
                if self.depth[a] >= self.depth[b] {
                    let arc = self.parent_arc[a];
                    // Traversed a → parent(a).
                    path.push((arc, self.from[arc] == a));
                    a = self.parent[a];
                } else {
                    let arc = self.parent_arc[b];
                    // Traversed parent(b) → b.
                    path.push((arc, self.to[arc] == b));
                    b = self.parent[b];
                }
            }

            let residual = |arc: usize, inc: bool| {
                let r = if inc { self.cap[arc] - self.flow[arc] } else { self.flow[arc] };
                r.max(0.0)
            };
            let theta = path.iter().fold(self.cap[e], |th, &(arc, inc)| th.min(residual(arc, inc)));
            // Bland: the smallest index among the blocking arcs leaves.
            let (mut leaving, mut leaving_inc) = (NONE, forward);
            if self.cap[e] <= theta + flow_tol {
                leaving = e;
            }
            for &(arc, inc) in &path {
                if residual(arc, inc) <= theta + flow_tol && arc < leaving {
                    leaving = arc;
                    leaving_inc = inc;
                }
            }

            if theta > 0.0 {
                if forward {
                    self.flow[e] += theta;
                } else {
                    self.flow[e] -= theta;
                }
                for &(arc, inc) in &path {
                    if inc {
                        self.flow[arc] += theta;
                    } else {
                        self.flow[arc] -= theta;
                    }
                    self.flow[arc] = snap(self.flow[arc], self.cap[arc], flow_tol);
                }
                self.flow[e] = snap(self.flow[e], self.cap[e], flow_tol);
            }

            if leaving == e {
                if forward {
                    self.state[e] = State::Upper;
                    self.flow[e] = self.cap[e];
                } else {
                    self.state[e] = State::Lower;
                    self.flow[e] = 0.0;
                }
                continue;
            }
            if leaving_inc {
                self.state[leaving] = State::Upper;
                self.flow[leaving] = self.cap[leaving];
            } else {
                self.state[leaving] = State::Lower;
                self.flow[leaving] = 0.0;
            }
            self.state[e] = State::Tree;
            let slot = self.tree.iter().position(|&x| x == leaving).expect("leaving arc is in the tree");
            self.tree[slot] = e;
            self.rebuild_tree();
        }
    }

    /// Flow on each original arc including lower bounds (used in tests).
    #[cfg(test)]
    fn real_flows(&self) -> Vec<f64> {
        (0..self.n_real).map(|a| self.flow[a] + self.lower[a]).collect()
    }
}

/// Clamps to `[0, cap]`, rounding values within `tol` of a bound onto it.
#[inline]
fn snap(f: f64, cap: f64, tol: f64) -> f64 {
    if f <= tol {
        0.0
    } else if f >= cap - tol {
        cap
    } else {
        f
    }
}

fn tol_dual(cmax: f64) -> f64 {
    1e-12 * cmax.max(f64::MIN_POSITIVE)
}
