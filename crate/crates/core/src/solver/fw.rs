//! Frank-Wolfe with exact line search, followed by active-set refinement.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::coupling::FamilyBounds;
use crate::distortion::{inner, Kernel};
use crate::error::Result;
use crate::transport_lp::TransportSimplex;

use super::SolveConfig;

/// Refinement is skipped on faces with more free cells than this.
const MAX_FREE: usize = 400;
/// Rounds of alternating Frank-Wolfe and refinement.
const MAX_ROUNDS: usize = 30;
/// `Qπ` is recomputed from scratch at this period to shed drift.
const RESYNC: usize = 25;
/// Sparse direction as `(cell, coefficient)` pairs.
type Direction = Vec<(usize, f64)>;
/// Escape moves are only searched on problems with at most this many cells.
const ESCAPE_CELLS: usize = 1024;
/// Escapes per run.
const MAX_ESCAPES: usize = 64;

pub(crate) struct Engine<'a> {
    kernel: &'a Kernel,
    bounds: &'a FamilyBounds,
    simplex: TransportSimplex,
    max_iters: usize,
    fw_tol: f64,
    /// Absolute objective scale, `max coefficient · total²`.
    f_scale: f64,
    n: usize,
    m: usize,
}

pub(crate) struct Run {
    pub pi: DMatrix<f64>,
    pub f: f64,
    pub iters: usize,
    pub gap: f64,
}

impl<'a> Engine<'a> {
    pub fn new(kernel: &'a Kernel, bounds: &'a FamilyBounds, cfg: &SolveConfig) -> Result<Self> {
        let simplex = TransportSimplex::new(bounds, None)?;
        let (n, m) = (kernel.n(), kernel.m());
        let mut cmax = 0.0f64;
        for j in 0..m {
            for i in 0..n {
                for j2 in 0..m {
                    for i2 in 0..n {
                        cmax = cmax.max(kernel.coefficient(i, j, i2, j2));
                    }
                }
            }
        }
        Ok(Engine {
            kernel,
            bounds,
            simplex,
            max_iters: cfg.max_iters,
            fw_tol: cfg.fw_tol,
            f_scale: cmax.max(f64::MIN_POSITIVE) * bounds.total * bounds.total,
            n,
            m,
        })
    }

    /// A vertex minimizing `⟨cost, π⟩`.
    pub fn vertex(&self, cost: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut s = self.simplex.clone();
        Ok(s.solve(cost)?.coupling.into_matrix())
    }

    pub fn run(&self, start: DMatrix<f64>) -> Result<Run> {
        let mut simplex = self.simplex.clone();
        let mut pi = start;
        let mut f = self.kernel.energy(&pi);
        let mut iters = 0;
        let mut gap = f64::INFINITY;
        for _ in 0..MAX_ESCAPES {
            for _ in 0..MAX_ROUNDS {
                let (it, g) = self.frank_wolfe(&mut simplex, &mut pi, &mut f, iters)?;
                iters += it;
                gap = g;
                let moved = self.refine(&mut pi, &mut f);
                if !moved && gap <= self.stop_tol(f) {
                    break;
                }
                if !moved && iters >= self.max_iters {
                    break;
                }
            }
            match self.escape(&pi, f) {
                Some((next, f_next)) => {
                    pi = next;
                    f = f_next;
                }
                None => break,
            }
        }
        Ok(Run { pi, f, iters, gap })
    }

    /// The best finite step along a two-cell transfer or a 2×2 cycle.
    ///
    /// Along any direction the objective is an exact quadratic, so a step to
    /// the boundary can cross a ridge that first- and second-order moves at
    /// the current point cannot see.
    fn escape(&self, pi: &DMatrix<f64>, f: f64) -> Option<(DMatrix<f64>, f64)> {
        let (n, m) = (self.n, self.m);
        let k = n * m;
        if k > ESCAPE_CELLS {
            return None;
        }
        let b = self.bounds;
        let rows: Vec<f64> = (0..n).map(|i| pi.row(i).sum()).collect();
        let cols: Vec<f64> = (0..m).map(|j| pi.column(j).sum()).collect();
        let grad = self.kernel.apply(pi) * 2.0;
        let coef = |a: usize, c: usize| self.kernel.coefficient(a % n, a / n, c % n, c / n);
        let threshold = 1e-13 * f + 1e-15 * self.f_scale;

        // (decrease, step, direction)
        let mut best: Option<(f64, f64, Direction)> = None;
        let mut consider = |d: &[(usize, f64)]| {
            let mut t_max = f64::INFINITY;
            let mut drow = [(0usize, 0.0f64); 4];
            let mut dcol = [(0usize, 0.0f64); 4];
            let (mut nr, mut nc) = (0, 0);
            for &(a, s) in d {
                if s < 0.0 {
                    t_max = t_max.min(pi[a] / -s);
                }
                let (i, j) = (a % n, a / n);
                match drow[..nr].iter_mut().find(|e| e.0 == i) {
                    Some(e) => e.1 += s,
                    None => {
                        drow[nr] = (i, s);
                        nr += 1;
                    }
                }
                match dcol[..nc].iter_mut().find(|e| e.0 == j) {
                    Some(e) => e.1 += s,
                    None => {
                        dcol[nc] = (j, s);
                        nc += 1;
                    }
                }
            }
            for &(i, s) in &drow[..nr] {
                if s > 0.0 {
                    t_max = t_max.min((b.row_upper[i] - rows[i]) / s);
                } else if s < 0.0 {
                    t_max = t_max.min((rows[i] - b.row_lower[i]) / -s);
                }
            }
            for &(j, s) in &dcol[..nc] {
                if s > 0.0 {
                    t_max = t_max.min((b.col_upper[j] - cols[j]) / s);
                } else if s < 0.0 {
                    t_max = t_max.min((cols[j] - b.col_lower[j]) / -s);
                }
            }
            if !(t_max > 0.0 && t_max.is_finite()) {
                return;
            }
            let slope: f64 = d.iter().map(|&(a, s)| grad[a] * s).sum();
            let curv: f64 = d.iter().map(|&(a, s)| d.iter().map(|&(c, u)| s * u * coef(a, c)).sum::<f64>()).sum();
            let t = if curv > 0.0 { (-slope / (2.0 * curv)).clamp(0.0, t_max) } else { t_max };
            let delta = t * slope + t * t * curv;
            if delta < -threshold && best.as_ref().is_none_or(|(bd, _, _)| delta < *bd) {
                best = Some((delta, t, d.to_vec()));
            }
        };
        for a in (0..k).filter(|&a| pi[a] > 0.0) {
            for c in (0..k).filter(|&c| c != a) {
                consider(&[(a, -1.0), (c, 1.0)]);
            }
        }
        for i in 0..n {
            for i2 in 0..n {
                if i == i2 {
                    continue;
                }
                for j in 0..m {
                    for j2 in 0..m {
                        if j == j2 {
                            continue;
                        }
                        let (minus1, minus2) = (i + n * j2, i2 + n * j);
                        if pi[minus1] > 0.0 && pi[minus2] > 0.0 {
                            consider(&[(i + n * j, 1.0), (i2 + n * j2, 1.0), (minus1, -1.0), (minus2, -1.0)]);
                        }
                    }
                }
            }
        }
        let (_, t, d) = best?;
        let mut next = pi.clone();
        for &(a, s) in &d {
            next[a] += t * s;
            if s < 0.0 && next[a] <= 1e-14 * b.total {
                next[a] = 0.0;
            }
        }
        clamp_nonneg(&mut next);
        let f_next = self.kernel.energy(&next);
        (f_next < f).then_some((next, f_next))
    }

    fn stop_tol(&self, f: f64) -> f64 {
        self.fw_tol * f + 1e-15 * self.f_scale
    }

    /// Returns iterations used and the last Frank-Wolfe gap.
    fn frank_wolfe(
        &self,
        simplex: &mut TransportSimplex,
        pi: &mut DMatrix<f64>,
        f: &mut f64,
        used: usize,
    ) -> Result<(usize, f64)> {
        let mut q_pi = self.kernel.apply(pi);
        let mut gap = f64::INFINITY;
        let mut it = 0;
        // At least one gap evaluation, even when the budget is spent.
        let budget = self.max_iters.saturating_sub(used).max(1);
        while it < budget {
            if it > 0 && it % RESYNC == 0 {
                q_pi = self.kernel.apply(pi);
            }
            let grad = &q_pi * 2.0;
            let s = simplex.solve(&grad)?.coupling.into_matrix();
            let d = &s - &*pi;
            let slope = inner(&grad, &d);
            gap = -slope;
            if gap <= self.stop_tol(*f) {
                break;
            }
            it += 1;
            let q_s = self.kernel.apply(&s);
            let q_d = &q_s - &q_pi;
            let curv = inner(&d, &q_d);
            let gamma = if curv > 0.0 { (-slope / (2.0 * curv)).clamp(0.0, 1.0) } else { 1.0 };
            if gamma == 0.0 {
                break;
            }
            *pi += &d * gamma;
            clamp_nonneg(pi);
            q_pi += q_d * gamma;
            *f = self.kernel.energy(pi);
        }
        Ok((it, gap))
    }

    /// Newton or negative-curvature steps on the face of the current point.
    /// Returns whether the point moved.
    fn refine(&self, pi: &mut DMatrix<f64>, f: &mut f64) -> bool {
        let mut moved = false;
        for _ in 0..(2 * self.n * self.m + 10) {
            match self.refine_step(pi, *f) {
                Some((next, f_next)) => {
                    *pi = next;
                    *f = f_next;
                    moved = true;
                }
                None => break,
            }
        }
        moved
    }

    fn refine_step(&self, pi: &DMatrix<f64>, f: f64) -> Option<(DMatrix<f64>, f64)> {
        let (n, m) = (self.n, self.m);
        let b = self.bounds;
        let t = b.total;
        let tight = 1e-12 * t.max(1e-300);
        let free: Vec<usize> = (0..n * m).filter(|&a| pi[a] > 0.0).collect();
        let k = free.len();
        if k == 0 || k > MAX_FREE {
            return None;
        }
        let rows: Vec<f64> = (0..n).map(|i| pi.row(i).sum()).collect();
        let cols: Vec<f64> = (0..m).map(|j| pi.column(j).sum()).collect();
        let row_tight: Vec<bool> = (0..n)
            .map(|i| rows[i] >= b.row_upper[i] - tight || rows[i] <= b.row_lower[i] + tight)
            .collect();
        let col_tight: Vec<bool> = (0..m)
            .map(|j| cols[j] >= b.col_upper[j] - tight || cols[j] <= b.col_lower[j] + tight)
            .collect();

        // Normal equations AᵀA of the active constraints; their kernel is the face.
        let mut ata = DMatrix::<f64>::zeros(k, k);
        for (u, &a) in free.iter().enumerate() {
            for (v, &c) in free.iter().enumerate() {
                let (i1, j1) = (a % n, a / n);
                let (i2, j2) = (c % n, c / n);
                let mut s = 1.0;
                if i1 == i2 && row_tight[i1] {
                    s += 1.0;
                }
                if j1 == j2 && col_tight[j1] {
                    s += 1.0;
                }
                ata[(u, v)] = s;
            }
        }
        let eig = SymmetricEigen::new(ata);
        let emax = eig.eigenvalues.amax().max(1.0);
        let null: Vec<usize> = (0..k).filter(|&r| eig.eigenvalues[r] <= 1e-9 * emax).collect();
        if null.is_empty() {
            return None;
        }
        let z = DMatrix::from_fn(k, null.len(), |r, c| eig.eigenvectors[(r, null[c])]);

        let q_pi = self.kernel.apply(pi);
        let g = DVector::from_fn(k, |u, _| 2.0 * q_pi[free[u]]);
        let h = DMatrix::from_fn(k, k, |u, v| {
            let (a, c) = (free[u], free[v]);
            2.0 * self.kernel.coefficient(a % n, a / n, c % n, c / n)
        });
        let gr = z.transpose() * &g;
        let hr = z.transpose() * &h * &z;
        let he = SymmetricEigen::new(hr);
        let hmax = he.eigenvalues.amax().max(f64::MIN_POSITIVE);
        let lam_min = he.eigenvalues.min();
        let curv_tol = 1e-10 * hmax;

        let (d_red, newton) = if lam_min > curv_tol {
            let coeffs = he.eigenvectors.transpose() * &gr;
            let scaled = DVector::from_fn(coeffs.len(), |r, _| -coeffs[r] / he.eigenvalues[r]);
            (&he.eigenvectors * scaled, true)
        } else if lam_min < -curv_tol {
            let r = he.eigenvalues.imin();
            let v = he.eigenvectors.column(r).clone_owned();
            let v = if v.dot(&gr) > 0.0 { -v } else { v };
            (v, false)
        } else {
            (-gr.clone(), false)
        };
        let d = &z * d_red;
        let dnorm = d.amax();
        if dnorm.is_nan() || dnorm <= 1e-15 * t {
            return None;
        }

        // Ratio test against the inactive constraints.
        let mut alpha_max = f64::INFINITY;
        let mut blocker: Option<usize> = None;
        for (u, &a) in free.iter().enumerate() {
            if d[u] < 0.0 {
                let r = pi[a] / -d[u];
                if r < alpha_max {
                    alpha_max = r;
                    blocker = Some(a);
                }
            }
        }
        let mut drow = vec![0.0; n];
        let mut dcol = vec![0.0; m];
        for (u, &a) in free.iter().enumerate() {
            drow[a % n] += d[u];
            dcol[a / n] += d[u];
        }
        for i in 0..n {
            if row_tight[i] {
                continue;
            }
            if drow[i] > 0.0 {
                alpha_max = alpha_max.min((b.row_upper[i] - rows[i]) / drow[i]);
            } else if drow[i] < 0.0 {
                alpha_max = alpha_max.min((rows[i] - b.row_lower[i]) / -drow[i]);
            }
        }
        for j in 0..m {
            if col_tight[j] {
                continue;
            }
            if dcol[j] > 0.0 {
                alpha_max = alpha_max.min((b.col_upper[j] - cols[j]) / dcol[j]);
            } else if dcol[j] < 0.0 {
                alpha_max = alpha_max.min((cols[j] - b.col_lower[j]) / -dcol[j]);
            }
        }
        let alpha_max = alpha_max.max(0.0);

        let slope = g.dot(&d);
        let curv = 0.5 * d.dot(&(&h * &d));
        let alpha = if newton {
            alpha_max.min(1.0)
        } else if curv > 0.0 {
            (-slope / (2.0 * curv)).clamp(0.0, alpha_max)
        } else {
            alpha_max
        };
        if !alpha.is_finite() || alpha <= 0.0 {
            return None;
        }
        let mut next = pi.clone();
        for (u, &a) in free.iter().enumerate() {
            next[a] += alpha * d[u];
        }
        if alpha == alpha_max {
            if let Some(a) = blocker {
                if next[a] <= 1e-13 * t {
                    next[a] = 0.0;
                }
            }
        }
        clamp_nonneg(&mut next);
        let f_next = self.kernel.energy(&next);
        if f_next < f || (f_next <= f + 1e-15 * self.f_scale && support_shrank(pi, &next)) {
            Some((next, f_next))
        } else {
            None
        }
    }
}

fn support_shrank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let ca = a.iter().filter(|v| **v > 0.0).count();
    let cb = b.iter().filter(|v| **v > 0.0).count();
    cb < ca
}

fn clamp_nonneg(m: &mut DMatrix<f64>) {
    for v in m.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}
