use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use pgw_core::io::{self, Format, SpaceFile};
use pgw_core::robust::{self, CurveFamily};
use pgw_core::solver::{self, brute_force_oracle};
use pgw_core::verify::{self, CheckStatus, VerifyConfig};
use pgw_core::{Error, MmSpace, RelaxParams, RobustConfig, SolveConfig};
use serde_json::{json, Value};

use crate::args::{
    Command, ComputeArgs, Distance, Family, OracleArgs, RobustArgs, SolverArgs, Spaces, SweepArgs, VerifyArgs,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_IO: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_NO_CROSSING: u8 = 4;
pub const EXIT_CHECK_FAIL: u8 = 5;
pub const EXIT_INCONCLUSIVE: u8 = 6;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Parameter(_) | Error::Unsupported(_) => EXIT_USAGE,
            Error::Dimension(_) | Error::Validation(_) | Error::Infeasible(_) | Error::Format(_) => EXIT_VALIDATION,
            Error::NoCrossing(_) => EXIT_NO_CROSSING,
            Error::Io(_) => EXIT_IO,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

type Outcome = Result<u8, Failure>;

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Compute(a) => compute(a),
        Command::Robust(a) => robust(a),
        Command::Verify(a) => verify(a),
        Command::Sweep(a) => sweep(a),
        Command::Oracle(a) => oracle(a),
    }
}

fn load(spaces: &Spaces) -> Result<(MmSpace, MmSpace), Failure> {
    let file = |path: &Path, weights: &Option<std::path::PathBuf>| {
        let mut f = SpaceFile::new(path);
        if let (Some(m), Format::Csv) = (spaces.metric, f.format) {
            f = f.with_metric(m);
        }
        if let Some(w) = weights {
            f = f.with_weights(w);
        }
        f
    };
    let x = io::load_space(&file(&spaces.space_x, &spaces.weights_x), spaces.normalize)?;
    let y = io::load_space(&file(&spaces.space_y, &spaces.weights_y), spaces.normalize)?;
    Ok((x, y))
}

fn solver_config(a: &SolverArgs) -> SolveConfig {
    SolveConfig::default().with_restarts(a.restarts).with_seed(a.seed)
}

/// `eps2` falls back to `eps1`; `delta` excludes both.
fn relax_params(family: Family, eps1: Option<f64>, eps2: Option<f64>, delta: Option<f64>) -> Result<RelaxParams, Failure> {
    let eps = || match (eps1, eps2) {
        (Some(e1), e2) => Ok((e1, e2.unwrap_or(e1))),
        (None, _) => Err(usage("--eps1 is required for this distance")),
    };
    let no_eps = |what: &str| match (eps1, eps2) {
        (None, None) => Ok(()),
        _ => Err(usage(format!("--eps1/--eps2 do not apply to {what}"))),
    };
    let no_delta = |what: &str| match delta {
        None => Ok(()),
        Some(_) => Err(usage(format!("--delta does not apply to {what}"))),
    };
    match family {
        Family::Exact => {
            no_eps("the exact family")?;
            no_delta("the exact family")?;
            Ok(RelaxParams::Exact)
        }
        Family::Relaxed => {
            no_delta("the relaxed family")?;
            let (e1, e2) = eps()?;
            Ok(RelaxParams::relaxed(e1, e2))
        }
        Family::Symmetric => {
            no_delta("the symmetric family")?;
            let (e1, e2) = eps()?;
            Ok(RelaxParams::symmetric(e1, e2))
        }
        Family::Mass => {
            no_eps("the mass family")?;
            let d = delta.ok_or_else(|| usage("--delta is required for this distance"))?;
            Ok(RelaxParams::mass(d))
        }
    }
}

fn compute(a: ComputeArgs) -> Outcome {
    let family = match a.distance {
        Distance::Gw => Family::Exact,
        Distance::Pgw => Family::Relaxed,
        Distance::Spgw => Family::Symmetric,
        Distance::Mpgw => Family::Mass,
    };
    let params = relax_params(family, a.eps1, a.eps2, a.delta)?;
    let (x, y) = load(&a.spaces)?;
    let cfg = solver_config(&a.solver);
    let r = solver::solve(&x, &y, &params, a.p, &cfg, &[])?;
    println!("{}", r.value);
    eprintln!(
        "{} p={} value={} iterations={} restarts={} fw_gap={:e} residual={:e}",
        params.family_name(),
        a.p,
        r.value,
        r.iterations,
        r.restarts_used,
        r.fw_gap,
        r.feasibility_residual
    );
    if let Some(out) = &a.out {
        io::save_result(&r, out)?;
    }
    Ok(EXIT_OK)
}

fn robust(a: RobustArgs) -> Outcome {
    if !(a.k > 0.0 && a.k.is_finite()) {
        return Err(usage(format!("--k must be positive and finite, got {}", a.k)));
    }
    let (x, y) = load(&a.spaces)?;
    let cfg = RobustConfig::default().with_solver(solver_config(&a.solver)).with_bracket_tol(a.bracket_tol);
    let r = robust::robust_pgw(&x, &y, a.k, a.p, &cfg)?;
    println!("{}", r.value);
    println!("{} {}", r.bracket.0, r.bracket.1);
    eprintln!(
        "k={} p={} value={} bracket=[{}, {}] pgw_at_crossing={} evaluations={}",
        a.k, a.p, r.value, r.bracket.0, r.bracket.1, r.pgw_at_crossing, r.evaluations
    );
    if let Some(out) = &a.out {
        io::save_result(&r, out)?;
    }
    Ok(EXIT_OK)
}

fn verify(a: VerifyArgs) -> Outcome {
    let reports = verify::run_suite(a.suite, a.seed, &VerifyConfig::default())?;
    for r in &reports {
        eprintln!("{:<36} {:?} slack={:e}", r.name, r.status, r.measured_slack);
    }
    let text = io::to_json(&reports)?;
    println!("{text}");
    if let Some(out) = &a.out {
        io::save_result(&reports, out)?;
    }
    let any = |s: CheckStatus| reports.iter().any(|r| r.status == s);
    Ok(if any(CheckStatus::Fail) {
        EXIT_CHECK_FAIL
    } else if any(CheckStatus::Inconclusive) {
        EXIT_INCONCLUSIVE
    } else {
        EXIT_OK
    })
}

/// JSON number, or the string "inf" for an infinite value.
fn ext(v: f64) -> Value {
    if v.is_infinite() && v > 0.0 {
        Value::from("inf")
    } else {
        json!(v)
    }
}

fn sweep(a: SweepArgs) -> Outcome {
    let (x, y) = load(&a.spaces)?;
    let cfg = solver_config(&a.solver);
    let grid = &a.eps_grid.0;
    let relaxed = robust::curve(&x, &y, a.p, grid, CurveFamily::Relaxed, &cfg)?;
    let symmetric = robust::curve(&x, &y, a.p, grid, CurveFamily::Symmetric, &cfg)?;
    let mut lines = String::new();
    for (r, s) in relaxed.points.iter().zip(&symmetric.points) {
        writeln!(lines, "{}", json!({ "eps": ext(r.eps), "pgw": r.value, "spgw": s.value })).unwrap();
    }
    for c in [&relaxed, &symmetric] {
        for w in &c.warnings {
            let family = match c.family {
                CurveFamily::Relaxed => "pgw",
                CurveFamily::Symmetric => "spgw",
            };
            eprintln!("warning: {family} increased from eps={} to eps={}; re-solved warm", w.eps_prev, w.eps);
            let body = json!({
                "family": family,
                "eps_prev": ext(w.eps_prev),
                "eps": ext(w.eps),
                "value_prev": w.value_prev,
                "value_cold": w.value_cold,
                "value_repaired": w.value_repaired,
            });
            writeln!(lines, "{}", json!({ "warning": body })).unwrap();
        }
    }
    print!("{lines}");
    if let Some(out) = &a.out {
        fs::write(out, &lines).map_err(Error::from)?;
    }
    Ok(EXIT_OK)
}

fn oracle(a: OracleArgs) -> Outcome {
    let params = relax_params(a.family, a.eps1, a.eps2, a.delta)?;
    let (x, y) = load(&a.spaces)?;
    let v = brute_force_oracle(&x, &y, &params, a.p, a.resolution)?;
    println!("{v}");
    eprintln!("{} p={} resolution={} value={v}", params.family_name(), a.p, a.resolution);
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_consistency() {
        assert_eq!(relax_params(Family::Exact, None, None, None).unwrap(), RelaxParams::Exact);
        assert_eq!(relax_params(Family::Relaxed, Some(0.5), None, None).unwrap(), RelaxParams::relaxed(0.5, 0.5));
        assert_eq!(
            relax_params(Family::Symmetric, Some(0.0), Some(0.25), None).unwrap(),
            RelaxParams::symmetric(0.0, 0.25)
        );
        assert_eq!(relax_params(Family::Mass, None, None, Some(0.5)).unwrap(), RelaxParams::mass(0.5));
        for bad in [
            relax_params(Family::Relaxed, None, Some(0.5), None),
            relax_params(Family::Exact, Some(0.5), None, None),
            relax_params(Family::Mass, None, None, None),
            relax_params(Family::Mass, Some(1.0), None, Some(0.5)),
            relax_params(Family::Symmetric, Some(1.0), None, Some(0.5)),
        ] {
            assert_eq!(bad.unwrap_err().code, EXIT_USAGE);
        }
    }

    #[test]
    fn error_classes_map_to_distinct_codes() {
        let code = |e: Error| Failure::from(e).code;
        assert_eq!(code(Error::Parameter(String::new())), EXIT_USAGE);
        assert_eq!(code(Error::Format(String::new())), EXIT_VALIDATION);
        assert_eq!(code(Error::NoCrossing(String::new())), EXIT_NO_CROSSING);
        assert_eq!(code(Error::Io(std::io::Error::other("x"))), EXIT_IO);
    }

    #[test]
    fn infinite_values_encode_as_string() {
        assert_eq!(ext(f64::INFINITY), Value::from("inf"));
        assert_eq!(ext(0.5), json!(0.5));
    }
}
