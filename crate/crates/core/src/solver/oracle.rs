//! Brute-force global search for tiny instances.
//!
//! Deliberately shares no numerical code with the Frank-Wolfe path: the
//! objective is a literal double sum over cell pairs of a tabulated
//! `|d_X − d_Y|^p`, and feasibility is checked directly against the box
//! constraints.



use crate::coupling::{FamilyBounds, RelaxParams};
use crate::error::{Error, Result};
use crate::exponent::Exponent;
use crate::mmspace::MmSpace;

/// Largest `n·m` accepted.
pub const MAX_CELLS: usize = 9;
/// Budget of lattice points per search.
const POINT_CAP: f64 = 2.0e5;
/// Lattice points handed to local polishing.
const POLISH_BEST: usize = 16;
const FEAS_TOL: f64 = 1e-9;

/// Minimum of `dis_p` over a lattice in the polytope of `params`, polished by
/// a feasible pattern search. Always an upper bound on the true minimum.
pub fn brute_force_oracle(
    x: &MmSpace,
    y: &MmSpace,
    params: &RelaxParams,
    p: Exponent,
    resolution: usize,
) -> Result<f64> {
    let (n, m) = (x.len(), y.len());
    if n * m > MAX_CELLS {
        return Err(Error::Parameter(format!("oracle needs n*m <= {MAX_CELLS}, got {n}x{m} = {}", n * m)));
    }
    if resolution == 0 {
        return Err(Error::Parameter("resolution must be >= 1".into()));
    }
    if !matches!(params, RelaxParams::Mass { .. }) {
        x.require_probability()?;
        y.require_probability()?;
    }
    let b = params.bounds(x.weights(), y.weights())?;
    if b.total == 0.0 {
        return Ok(0.0);
    }
    let prob = Problem::new(x, y, &b, p);

    let mut res = resolution;
    let mut best = Vec::new();
    for _ in 0..8 {
        best = prob.lattice(res);
        if !best.is_empty() {
            break;
        }
        res *= 2;
    }
    // The product of the scaled weights is feasible for every family.
    let a = x.weights() * (b.total / x.total_mass());
    let c = y.weights() * (b.total / y.total_mass());
    let product: Vec<f64> = (0..n * m).map(|k| a[k % n] * c[k / n] / b.total).collect();
    if prob.feasible(&product) {
        let v = prob.objective(&product);
        best.push((v, product));
    }
    if best.is_empty() {
        return Err(Error::Infeasible("no feasible point found".into()));
    }

    let step0 = b.total / res as f64;
    let mut winner = f64::INFINITY;
    for (v, pt) in best {
        let v = if p.is_infinite() { v } else { prob.polish(pt, v, step0) };
        winner = winner.min(v);
    }
    Ok(match p {
        Exponent::Finite(q) => winner.max(0.0).powf(1.0 / q),
        Exponent::Infinity => winner,
    })
}

struct Problem<'a> {
    n: usize,
    m: usize,
    /// `|d_X − d_Y|^p` per pair of cells, row-major; plain `|d_X − d_Y|` at `p = ∞`.
    gap: Vec<f64>,
    b: &'a FamilyBounds,
    p: Exponent,
    rows_fixed: bool,
    cols_fixed: bool,
}

impl<'a> Problem<'a> {
    fn new(x: &'a MmSpace, y: &'a MmSpace, b: &'a FamilyBounds, p: Exponent) -> Self {
        let fixed = |lo: &nalgebra::DVector<f64>, hi: &nalgebra::DVector<f64>| lo.iter().zip(hi.iter()).all(|(l, h)| l == h);
        let (n, k) = (x.len(), x.len() * y.len());
        let (dx, dy) = (x.dist(), y.dist());
        let gap = (0..k * k)
            .map(|ac| {
                let (a, c) = (ac / k, ac % k);
                let g = (dx[(a % n, c % n)] - dy[(a / n, c / n)]).abs();
                match p {
                    Exponent::Finite(q) => g.powf(q),
                    Exponent::Infinity => g,
                }
            })
            .collect();
        Problem {
            n,
            m: y.len(),
            gap,
            b,
            p,
            rows_fixed: fixed(&b.row_lower, &b.row_upper),
            cols_fixed: fixed(&b.col_lower, &b.col_upper),
        }
    }

    /// `dis_p^p` for finite `p`, `dis_∞` otherwise. Cells are column-major.
    fn objective(&self, v: &[f64]) -> f64 {
        let k = v.len();
        let mut s = 0.0f64;
        for a in 0..k {
            let row = &self.gap[a * k..(a + 1) * k];
            for c in 0..k {
                match self.p {
                    Exponent::Finite(_) => s += row[c] * v[a] * v[c],
                    Exponent::Infinity => {
                        if v[a] > 1e-12 && v[c] > 1e-12 {
                            s = s.max(row[c]);
                        }
                    }
                }
            }
        }
        s
    }

    fn feasible(&self, v: &[f64]) -> bool {
        let (n, m, b) = (self.n, self.m, self.b);
        if v.iter().any(|&t| t < -FEAS_TOL) {
            return false;
        }
        for i in 0..n {
            let r: f64 = (0..m).map(|j| v[i + n * j]).sum();
            if r > b.row_upper[i] + FEAS_TOL || r < b.row_lower[i] - FEAS_TOL {
                return false;
            }
        }
        for j in 0..m {
            let c: f64 = (0..n).map(|i| v[i + n * j]).sum();
            if c > b.col_upper[j] + FEAS_TOL || c < b.col_lower[j] - FEAS_TOL {
                return false;
            }
        }
        (v.iter().sum::<f64>() - b.total).abs() <= FEAS_TOL
    }

    /// Cells that are gridded; the rest follow from the equality constraints.
    fn free_cells(&self) -> Vec<usize> {
        let (n, m) = (self.n, self.m);
        (0..n * m)
            .filter(|&a| {
                let (i, j) = (a % n, a / n);
                match (self.rows_fixed, self.cols_fixed) {
                    (true, true) => i + 1 < n && j + 1 < m,
                    (true, false) => j + 1 < m,
                    (false, true) => i + 1 < n,
                    (false, false) => a + 1 < n * m,
                }
            })
            .collect()
    }

    /// Fills the dependent cells from the free ones.
    fn complete(&self, v: &mut [f64]) {
        let (n, m, b) = (self.n, self.m, self.b);
        match (self.rows_fixed, self.cols_fixed) {
            (true, true) => {
                for i in 0..n - 1 {
                    let s: f64 = (0..m - 1).map(|j| v[i + n * j]).sum();
                    v[i + n * (m - 1)] = b.row_lower[i] - s;
                }
                for j in 0..m - 1 {
                    let s: f64 = (0..n - 1).map(|i| v[i + n * j]).sum();
                    v[n - 1 + n * j] = b.col_lower[j] - s;
                }
                let s: f64 = v[..n * m - 1].iter().sum();
                v[n * m - 1] = b.total - s;
            }
            (true, false) => {
                for i in 0..n {
                    let s: f64 = (0..m - 1).map(|j| v[i + n * j]).sum();
                    v[i + n * (m - 1)] = b.row_lower[i] - s;
                }
            }
            (false, true) => {
                for j in 0..m {
                    let s: f64 = (0..n - 1).map(|i| v[i + n * j]).sum();
                    v[n - 1 + n * j] = b.col_lower[j] - s;
                }
            }
            (false, false) => {
                let s: f64 = v[..n * m - 1].iter().sum();
                v[n * m - 1] = b.total - s;
            }
        }
    }

    /// The best lattice points as `(objective, cells)`, best first.
    fn lattice(&self, resolution: usize) -> Vec<(f64, Vec<f64>)> {
        let free = self.free_cells();
        let k = free.len();
        let mut res = resolution;
        while res > 1 && binomial(res + k, k) > POINT_CAP {
            res -= 1;
        }
        let n = self.n;
        let steps: Vec<f64> = free
            .iter()
            .map(|&a| {
                let hi = self.b.row_upper[a % n].min(self.b.col_upper[a / n]).min(self.b.total);
                hi / res as f64
            })
            .collect();
        let mut v = vec![0.0; self.n * self.m];
        let mut leaf = v.clone();
        let mut keep: Vec<(f64, Vec<f64>)> = Vec::new();
        self.walk(&free, &steps, res, 0, &mut v, &mut leaf, &mut keep);
        keep.sort_by(|a, b| a.0.total_cmp(&b.0));
        keep
    }

    #[allow(clippy::too_many_arguments)]
    fn walk(
        &self,
        free: &[usize],
        steps: &[f64],
        res: usize,
        depth: usize,
        v: &mut Vec<f64>,
        leaf: &mut [f64],
        keep: &mut Vec<(f64, Vec<f64>)>,
    ) {
        if depth == free.len() {
            leaf.copy_from_slice(v);
            self.complete(leaf);
            if self.feasible(leaf) {
                let f = self.objective(leaf);
                keep.push((f, leaf.to_vec()));
                if keep.len() > 4 * POLISH_BEST {
                    keep.sort_by(|a, b| a.0.total_cmp(&b.0));
                    keep.truncate(POLISH_BEST);
                }
            }
            return;
        }
        let a = free[depth];
        let (i, j) = (a % self.n, a / self.n);
        for k in 0..=res {
            v[a] = k as f64 * steps[depth];
            if !self.partial_ok(v, free, depth, i, j) {
                break;
            }
            self.walk(free, steps, res, depth + 1, v, leaf, keep);
        }
        v[a] = 0.0;
    }

    /// Sums over assigned free cells never exceed the upper bounds.
    fn partial_ok(&self, v: &[f64], free: &[usize], depth: usize, i: usize, j: usize) -> bool {
        let n = self.n;
        let assigned = &free[..=depth];
        let row: f64 = assigned.iter().filter(|&&a| a % n == i).map(|&a| v[a]).sum();
        let col: f64 = assigned.iter().filter(|&&a| a / n == j).map(|&a| v[a]).sum();
        let tot: f64 = assigned.iter().map(|&a| v[a]).sum();
        row <= self.b.row_upper[i] + FEAS_TOL && col <= self.b.col_upper[j] + FEAS_TOL && tot <= self.b.total + FEAS_TOL
    }

    /// Pattern search over two-cell transfers and all sums of two transfers,
    /// which include the 2×2 cycles.
    fn polish(&self, mut v: Vec<f64>, mut f: f64, step0: f64) -> f64 {
        let k = self.n * self.m;
        let mut transfers: Vec<Vec<i32>> = Vec::new();
        for a in 0..k {
            for c in 0..k {
                if a != c {
                    let mut d = vec![0; k];
                    d[a] = -1;
                    d[c] = 1;
                    transfers.push(d);
                }
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for (x, t1) in transfers.iter().enumerate() {
            seen.insert(t1.clone());
            for t2 in &transfers[x + 1..] {
                let d: Vec<i32> = t1.iter().zip(t2).map(|(a, b)| a + b).collect();
                if d.iter().any(|&c| c != 0) {
                    seen.insert(d);
                }
            }
        }
        let moves: Vec<Vec<(usize, f64)>> = seen
            .into_iter()
            .map(|d| d.iter().enumerate().filter(|(_, &c)| c != 0).map(|(a, &c)| (a, c as f64)).collect())
            .collect();
        let mut t = step0;
        while t >= 1e-12 {
            let mut improved = true;
            while improved {
                improved = false;
                for mv in &moves {
                    let mut w = v.clone();
                    for &(a, s) in mv {
                        w[a] += s * t;
                    }
                    if !self.feasible(&w) {
                        continue;
                    }
                    let fw = self.objective(&w);
                    if fw < f {
                        v = w;
                        f = fw;
                        improved = true;
                    }
                }
            }
            t *= 0.5;
        }
        f
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r *= (n - i) as f64 / (i + 1) as f64;
    }
    r
}
