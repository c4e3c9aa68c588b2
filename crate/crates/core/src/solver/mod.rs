//! Solvers for `GW_p`, `PGW_{ε,p}`, `sPGW_{ε,p}` and `mPGW_{δ,p}`.
//!
//! Every problem is `min dis_p(π)` over one of the coupling polytopes of
//! [`crate::coupling`]. For finite `p` the objective `dis_p^p` is a
//! (non-convex) quadratic form, minimized by multi-start Frank-Wolfe with
//! exact line search followed by an active-set refinement on the final face.
//! For `p = ∞` either a large-`p` surrogate is used or, on tiny instances,
//! support patterns are enumerated exactly.

mod fw;
mod init;
mod oracle;
mod pinf;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{check_membership, check_membership_tol, Coupling, FamilyBounds, RelaxParams};
use crate::distortion::{dis_inf, Kernel};
use crate::error::{Error, Result};
use crate::exponent::Exponent;
use crate::mmspace::MmSpace;

pub use oracle::brute_force_oracle;

/// Starting point of the first restart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InitStrategy {
    Product,
    RandomVertex,
    DiagonalGreedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PInfStrategy {
    /// Optimize `dis_128` and report `dis_∞` of the result.
    LargeP,
    /// Exact search over support patterns; needs `n·m ≤ 9`.
    Enumerate,
}

/// Exponent used by [`PInfStrategy::LargeP`].
pub const LARGE_P: f64 = 128.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub fw_tol: f64,
    pub seed: u64,
    pub init: InitStrategy,
    pub p_inf_strategy: PInfStrategy,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            restarts: 16,
            max_iters: 500,
            fw_tol: 1e-8,
            seed: 0,
            init: InitStrategy::Product,
            p_inf_strategy: PInfStrategy::LargeP,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Parameter("restarts must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Parameter("max_iters must be >= 1".into()));
        }
        if !(self.fw_tol > 0.0 && self.fw_tol.is_finite()) {
            return Err(Error::Parameter(format!("fw_tol must be positive, got {}", self.fw_tol)));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn with_p_inf(mut self, s: PInfStrategy) -> Self {
        self.p_inf_strategy = s;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    /// `dis_p` of `coupling`.
    pub value: f64,
    pub coupling: Coupling,
    pub p: Exponent,
    pub params: RelaxParams,
    /// Frank-Wolfe iterations of the winning restart.
    pub iterations: usize,
    pub restarts_used: usize,
    pub best_restart: usize,
    /// Largest constraint violation of `coupling` (0 when strictly inside).
    #[serde(with = "crate::serde_ext::ext_f64")]
    pub feasibility_residual: f64,
    /// Final Frank-Wolfe gap of the winning restart (0 for exact paths).
    #[serde(with = "crate::serde_ext::ext_f64")]
    pub fw_gap: f64,
    /// The value is attained by a feasible coupling, hence an upper bound on
    /// the true infimum. Global optimality is never claimed.
    pub is_upper_bound: bool,
}

/// `GW_p(X, Y)`.
pub fn solve_gw(x: &MmSpace, y: &MmSpace, p: Exponent, cfg: &SolveConfig) -> Result<SolveResult> {
    solve(x, y, &RelaxParams::Exact, p, cfg, &[])
}

/// `PGW_{ε,p}(X, Y)` over `C_ε`.
pub fn solve_pgw(x: &MmSpace, y: &MmSpace, eps: (f64, f64), p: Exponent, cfg: &SolveConfig) -> Result<SolveResult> {
    solve(x, y, &RelaxParams::relaxed(eps.0, eps.1), p, cfg, &[])
}

/// `sPGW_{ε,p}(X, Y)` over `S_ε`.
pub fn solve_spgw(x: &MmSpace, y: &MmSpace, eps: (f64, f64), p: Exponent, cfg: &SolveConfig) -> Result<SolveResult> {
    solve(x, y, &RelaxParams::symmetric(eps.0, eps.1), p, cfg, &[])
}

/// `mPGW_{δ,p}(X̃, Ỹ)` over `C̃_δ`; the weights need not be normalized.
pub fn solve_mpgw(x: &MmSpace, y: &MmSpace, delta: f64, p: Exponent, cfg: &SolveConfig) -> Result<SolveResult> {
    solve(x, y, &RelaxParams::mass(delta), p, cfg, &[])
}

/// The general entry point. `warm` couplings are run as additional restarts
/// after the configured ones; each must lie in the polytope.
pub fn solve(
    x: &MmSpace,
    y: &MmSpace,
    params: &RelaxParams,
    p: Exponent,
    cfg: &SolveConfig,
    warm: &[Coupling],
) -> Result<SolveResult> {
    cfg.validate()?;
    params.validate()?;
    let (mu_x, mu_y) = (x.weights().clone(), y.weights().clone());
    if let RelaxParams::Mass { delta } = *params {
        let cap = mu_x.sum().min(mu_y.sum());
        if delta > cap * (1.0 + 1e-12) {
            return Err(Error::Parameter(format!("delta = {delta} must lie in [0, min(m_X, m_Y)] = [0, {cap}]")));
        }
    } else {
        x.require_probability()?;
        y.require_probability()?;
    }
    let canon = canonical(params, &mu_x, &mu_y);
    let bounds = canon.bounds(&mu_x, &mu_y)?;

    for (k, w) in warm.iter().enumerate() {
        let r = check_membership(w, &mu_x, &mu_y, &canon)?;
        if !r.ok {
            return Err(Error::Parameter(format!("warm start {k} is not in the {} polytope: {r}", canon.family_name())));
        }
    }

    if bounds.total == 0.0 {
        let c = Coupling::zeros(x.len(), y.len());
        return Ok(finish(x, y, params, &canon, p, c, 0, 0, 0, 0.0));
    }

    match p {
        Exponent::Finite(q) => {
            let kernel = Kernel::new(x, y, q)?;
            let best = multistart(x, y, &kernel, &bounds, p, cfg, warm)?;
            let restarts_used = init::count(cfg, x.len(), y.len()) + warm.len();
            Ok(finish(x, y, params, &canon, p, best.pi, best.iters, restarts_used, best.index, best.gap))
        }
        Exponent::Infinity => match cfg.p_inf_strategy {
            PInfStrategy::Enumerate => {
                let c = pinf::enumerate(x, y, &bounds)?;
                Ok(finish(x, y, params, &canon, p, c, 0, 1, 0, 0.0))
            }
            PInfStrategy::LargeP => {
                let scale = max_gap(x, y);
                let kernel = Kernel::with_scale(x, y, LARGE_P, if scale > 0.0 { scale } else { 1.0 })?;
                let best = multistart(x, y, &kernel, &bounds, p, cfg, warm)?;
                let restarts_used = init::count(cfg, x.len(), y.len()) + warm.len();
                Ok(finish(x, y, params, &canon, p, best.pi, best.iters, restarts_used, best.index, best.gap))
            }
        },
    }
}

/// Symmetric and relaxed families with `ε = 0`, and the mass family at full
/// mass, describe the exact polytope; solving them as such makes the special
/// cases agree with `GW_p` to the last bit.
fn canonical(params: &RelaxParams, mu_x: &DVector<f64>, mu_y: &DVector<f64>) -> RelaxParams {
    match *params {
        RelaxParams::Relaxed { eps1, eps2 } | RelaxParams::Symmetric { eps1, eps2 }
            if eps1 == 0.0 && eps2 == 0.0 && (mu_x.sum() - 1.0).abs() <= 1e-12 && (mu_y.sum() - 1.0).abs() <= 1e-12 =>
        {
            RelaxParams::Exact
        }
        RelaxParams::Mass { delta } => {
            let (a, b) = (mu_x.sum(), mu_y.sum());
            let tol = 1e-12 * a.max(b);
            if (delta - a).abs() <= tol && (delta - b).abs() <= tol && (a - b).abs() <= tol {
                RelaxParams::Exact
            } else {
                *params
            }
        }
        other => other,
    }
}

fn max_gap(x: &MmSpace, y: &MmSpace) -> f64 {
    let (ax, bx) = (x.dist().min(), x.dist().max());
    let (ay, by) = (y.dist().min(), y.dist().max());
    (bx - ay).abs().max((by - ax).abs())
}

#[allow(clippy::too_many_arguments)]
fn finish(
    x: &MmSpace,
    y: &MmSpace,
    params: &RelaxParams,
    canon: &RelaxParams,
    p: Exponent,
    coupling: Coupling,
    iterations: usize,
    restarts_used: usize,
    best_restart: usize,
    fw_gap: f64,
) -> SolveResult {
    let value = evaluate(x, y, &coupling, p);
    let feasibility_residual = check_membership_tol(&coupling, x.weights(), y.weights(), canon, 0.0)
        .map(|r| r.worst())
        .unwrap_or(f64::INFINITY);
    SolveResult {
        value,
        coupling,
        p,
        params: *params,
        iterations,
        restarts_used,
        best_restart,
        feasibility_residual,
        fw_gap,
        is_upper_bound: true,
    }
}

/// `dis_p` of a coupling, computed with the unit-scale kernel.
pub(crate) fn evaluate(x: &MmSpace, y: &MmSpace, c: &Coupling, p: Exponent) -> f64 {
    match p {
        Exponent::Infinity => dis_inf(x, y, c).expect("dimensions checked"),
        Exponent::Finite(q) => Kernel::new(x, y, q).expect("finite p").energy(c.matrix()).powf(1.0 / q),
    }
}

struct Outcome {
    pi: Coupling,
    /// Objective used for ranking restarts.
    score: f64,
    iters: usize,
    gap: f64,
    index: usize,
}

fn multistart(
    x: &MmSpace,
    y: &MmSpace,
    kernel: &Kernel,
    bounds: &FamilyBounds,
    p: Exponent,
    cfg: &SolveConfig,
    warm: &[Coupling],
) -> Result<Outcome> {
    let engine = fw::Engine::new(kernel, bounds, cfg)?;
    let starts = init::count(cfg, x.len(), y.len());
    let outcomes: Vec<Result<Outcome>> = (0..starts + warm.len())
        .into_par_iter()
        .map(|r| {
            let start = if r < starts {
                init::start(r, x, y, bounds, p, cfg, &engine)?
            } else {
                warm[r - starts].matrix().clone()
            };
            let run = engine.run(start)?;
            let pi = Coupling::from_nonnegative(run.pi);
            let score = match p {
                Exponent::Infinity => dis_inf(x, y, &pi)?,
                Exponent::Finite(_) => run.f,
            };
            Ok(Outcome { pi, score, iters: run.iters, gap: run.gap, index: r })
        })
        .collect();
    let mut best: Option<Outcome> = None;
    for o in outcomes {
        let o = o?;
        // Ties keep the lower index since outcomes arrive in index order.
        if best.as_ref().is_none_or(|b| o.score < b.score) {
            best = Some(o);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests;
