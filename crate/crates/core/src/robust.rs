//! The robust partial metric `PGW_p^k` and its mass-constrained twin.
//!
//! `PGW_p^k(X, Y) = inf { t = ε/(1+ε) : PGW_{ε,p}(X, Y) ≤ kε }`. The set of
//! admissible `t` is an up-set, so the infimum is located by bisection on
//! `t ∈ [0, 1)`.

use serde::{Deserialize, Serialize};

use crate::coupling::{Coupling, RelaxParams};
use crate::error::{Error, Result};
use crate::exponent::Exponent;
use crate::mmspace::MmSpace;
use crate::serde_ext::ext_f64;
use crate::solver::{solve, SolveConfig, SolveResult};

/// Largest `t` tried before giving up.
const T_CEIL: f64 = 1.0 - 1e-12;
/// Re-bisection rounds after a failed endpoint turns out to pass.
const MAX_REVERIFY: usize = 4;
/// Restart multiplier for endpoint re-verification.
const REVERIFY_FACTOR: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustConfig {
    pub solver: SolveConfig,
    pub bracket_tol: f64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig { solver: SolveConfig::default(), bracket_tol: 1e-4 }
    }
}

impl RobustConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(self.bracket_tol > 0.0 && self.bracket_tol < 1.0) {
            return Err(Error::Parameter(format!("bracket_tol must lie in (0, 1), got {}", self.bracket_tol)));
        }
        Ok(())
    }

    pub fn with_solver(mut self, solver: SolveConfig) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_bracket_tol(mut self, tol: f64) -> Self {
        self.bracket_tol = tol;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustResult {
    /// The upper end of the bracket: the smallest `t` certified to satisfy
    /// the condition.
    pub value: f64,
    pub bracket: (f64, f64),
    /// Solver value at the upper end of the bracket.
    pub pgw_at_crossing: f64,
    pub coupling: Coupling,
    pub evaluations: usize,
    pub k: f64,
    pub p: Exponent,
    #[serde(with = "ext_f64")]
    pub bracket_tol: f64,
}

/// `ε ↦ δ = ε/(1+ε)`, with `∞ ↦ 1`.
pub fn convert_params(eps: f64) -> Result<f64> {
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::Parameter(format!("eps must be >= 0, got {eps}")));
    }
    if eps.is_infinite() {
        return Ok(1.0);
    }
    Ok(eps / (1.0 + eps))
}

/// `δ ↦ ε = δ/(1−δ)`, with `1 ↦ ∞`.
pub fn convert_params_inv(delta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Parameter(format!("delta must lie in [0, 1], got {delta}")));
    }
    if delta == 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(delta / (1.0 - delta))
}

/// `PGW_p^k(X, Y)`.
pub fn robust_pgw(x: &MmSpace, y: &MmSpace, k: f64, p: Exponent, cfg: &RobustConfig) -> Result<RobustResult> {
    check_inputs(x, y, k, cfg)?;
    let problem = Problem {
        x,
        y,
        k,
        p,
        params: |t| {
            let e = t_to_eps(t);
            RelaxParams::relaxed(e, e)
        },
        threshold: |t| k * t_to_eps(t),
        // Couplings stay feasible as `ε` grows.
        carry: |c: &Coupling, _from, _to| Some(c.clone()),
    };
    problem.run(cfg)
}

/// `mPGW_p^k(X, Y) = inf { δ : mPGW_{1−δ,p}(X, Y) ≤ kδ }`.
pub fn robust_mpgw(x: &MmSpace, y: &MmSpace, k: f64, p: Exponent, cfg: &RobustConfig) -> Result<RobustResult> {
    check_inputs(x, y, k, cfg)?;
    let problem = Problem {
        x,
        y,
        k,
        p,
        params: |d| RelaxParams::mass(1.0 - d),
        threshold: |d| k * d,
        // Shrinking the mass keeps the marginals under the weights.
        carry: |c: &Coupling, from: f64, to: f64| c.scale((1.0 - to) / (1.0 - from)).ok(),
    };
    problem.run(cfg)
}

fn check_inputs(x: &MmSpace, y: &MmSpace, k: f64, cfg: &RobustConfig) -> Result<()> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Parameter(format!("k must be positive and finite, got {k}")));
    }
    cfg.validate()?;
    x.require_probability()?;
    y.require_probability()
}

fn t_to_eps(t: f64) -> f64 {
    t / (1.0 - t)
}

struct Problem<'a, P, T, C> {
    x: &'a MmSpace,
    y: &'a MmSpace,
    k: f64,
    p: Exponent,
    params: P,
    threshold: T,
    carry: C,
}

struct Eval {
    t: f64,
    ok: bool,
    res: SolveResult,
}

impl<P, T, C> Problem<'_, P, T, C>
where
    P: Fn(f64) -> RelaxParams,
    T: Fn(f64) -> f64,
    C: Fn(&Coupling, f64, f64) -> Option<Coupling>,
{
    fn eval(&self, t: f64, cfg: &SolveConfig, warm: Option<&Eval>) -> Result<Eval> {
        let warm: Vec<Coupling> = warm.and_then(|w| (self.carry)(&w.res.coupling, w.t, t)).into_iter().collect();
        let params = (self.params)(t);
        let res = match solve(self.x, self.y, &params, self.p, cfg, &warm) {
            // A carried coupling can fall just outside the polytope by roundoff.
            Err(Error::Parameter(_)) if !warm.is_empty() => solve(self.x, self.y, &params, self.p, cfg, &[])?,
            r => r?,
        };
        let ok = res.value <= (self.threshold)(t) + cfg.fw_tol;
        Ok(Eval { t, ok, res })
    }

    fn run(&self, cfg: &RobustConfig) -> Result<RobustResult> {
        let scfg = &cfg.solver;
        let strong = scfg.clone().with_restarts(scfg.restarts * REVERIFY_FACTOR);
        let mut evaluations = 0;

        let zero = self.eval(0.0, &strong, None)?;
        evaluations += 1;
        if zero.ok {
            return Ok(self.result(0.0, zero, evaluations, cfg.bracket_tol));
        }

        // At this `t` every atom may carry all the mass, so a Dirac coupling
        // of zero distortion is admissible.
        let wmin = self.x.weights().min().min(self.y.weights().min());
        let mut t_hi = (1.0 - wmin).clamp(0.0, T_CEIL);
        let mut hi = loop {
            let e = self.eval(t_hi, scfg, Some(&zero))?;
            evaluations += 1;
            if e.ok {
                break e;
            }
            if t_hi >= T_CEIL {
                return Err(Error::NoCrossing(format!(
                    "condition never met on [0, {T_CEIL}] (k = {}, last value {} at t = {t_hi})",
                    self.k, e.res.value
                )));
            }
            t_hi = (1.0 - (1.0 - t_hi) / 10.0).min(T_CEIL);
        };

        // Failed evaluations, increasing in `t`.
        let mut fails = vec![zero];
        for round in 0..=MAX_REVERIFY {
            while hi.t - fails.last().expect("nonempty").t > cfg.bracket_tol {
                let lo = fails.last().expect("nonempty");
                let mid = 0.5 * (lo.t + hi.t);
                let e = self.eval(mid, scfg, Some(lo))?;
                evaluations += 1;
                if e.ok {
                    hi = e;
                } else {
                    fails.push(e);
                }
            }
            if round == MAX_REVERIFY || fails.len() == 1 {
                break;
            }
            let lo = fails.pop().expect("nonempty");
            let prev = fails.last().expect("nonempty");
            let again = self.eval(lo.t, &strong, Some(prev))?;
            evaluations += 1;
            if again.ok {
                hi = again;
            } else {
                fails.push(again);
                break;
            }
        }
        let lo_t = fails.last().expect("nonempty").t;
        Ok(self.result(lo_t, hi, evaluations, cfg.bracket_tol))
    }

    fn result(&self, lo: f64, hi: Eval, evaluations: usize, bracket_tol: f64) -> RobustResult {
        RobustResult {
            value: hi.t,
            bracket: (lo, hi.t),
            pgw_at_crossing: hi.res.value,
            coupling: hi.res.coupling,
            evaluations,
            k: self.k,
            p: self.p,
            bracket_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CurveFamily {
    Relaxed,
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    #[serde(with = "ext_f64")]
    pub eps: f64,
    pub value: f64,
}

/// An increase of the value between consecutive grid points beyond the noise
/// slack. The reported point has been re-solved from the previous coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityWarning {
    #[serde(with = "ext_f64")]
    pub eps_prev: f64,
    #[serde(with = "ext_f64")]
    pub eps: f64,
    pub value_prev: f64,
    pub value_cold: f64,
    pub value_repaired: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub family: CurveFamily,
    pub points: Vec<CurvePoint>,
    pub warnings: Vec<MonotonicityWarning>,
}

/// `ε ↦ PGW_{(ε,ε),p}(X, Y)` on an ascending grid.
pub fn pgw_curve(x: &MmSpace, y: &MmSpace, p: Exponent, grid: &[f64], cfg: &SolveConfig) -> Result<Curve> {
    curve(x, y, p, grid, CurveFamily::Relaxed, cfg)
}

pub fn curve(
    x: &MmSpace,
    y: &MmSpace,
    p: Exponent,
    grid: &[f64],
    family: CurveFamily,
    cfg: &SolveConfig,
) -> Result<Curve> {
    if let Some(e) = grid.iter().find(|e| e.is_nan() || **e < 0.0) {
        return Err(Error::Parameter(format!("grid values must be >= 0, got {e}")));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Parameter("grid must be sorted ascending".into()));
    }
    let params = |e: f64| match family {
        CurveFamily::Relaxed => RelaxParams::relaxed(e, e),
        CurveFamily::Symmetric => RelaxParams::symmetric(e, e),
    };
    let slack = 2.0 * cfg.fw_tol;
    let mut points = Vec::with_capacity(grid.len());
    let mut warnings = Vec::new();
    let mut prev: Option<(f64, SolveResult)> = None;
    for &e in grid {
        let mut r = solve(x, y, &params(e), p, cfg, &[])?;
        if let Some((e0, r0)) = &prev {
            // The symmetric lower bounds loosen with `ε` too, so the previous
            // coupling stays admissible in both families.
            if r.value > r0.value + slack {
                let fixed = solve(x, y, &params(e), p, cfg, std::slice::from_ref(&r0.coupling))?;
                warnings.push(MonotonicityWarning {
                    eps_prev: *e0,
                    eps: e,
                    value_prev: r0.value,
                    value_cold: r.value,
                    value_repaired: fixed.value,
                });
                r = fixed;
            }
        }
        points.push(CurvePoint { eps: e, value: r.value });
        prev = Some((e, r));
    }
    Ok(Curve { family, points, warnings })
}
