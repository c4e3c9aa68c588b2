//! Starting couplings for the restarts.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coupling::FamilyBounds;
use crate::error::Result;
use crate::exponent::Exponent;
use crate::mmspace::MmSpace;

use super::fw::Engine;
use super::{InitStrategy, SolveConfig};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
/// Anchored starts are added when `n·m` is at most this.
const ANCHOR_CAP: usize = 64;

/// Number of starts: the configured restarts plus, with more than one
/// restart on small problems, one anchored start per cell.
pub(crate) fn count(cfg: &SolveConfig, n: usize, m: usize) -> usize {
    cfg.restarts + anchors(cfg, n, m)
}

fn anchors(cfg: &SolveConfig, n: usize, m: usize) -> usize {
    if cfg.restarts > 1 && n * m <= ANCHOR_CAP {
        n * m
    } else {
        0
    }
}

/// Restart 0 follows `cfg.init`, restart 1 is the greedy diagonal, the rest
/// of the configured restarts are random vertices and the anchored starts
/// come last.
///
/// The start anchored at cell `c` is the vertex minimizing the gradient at
/// a unit mass on `c`: it places mass where the distances agree with `c`.
pub(crate) fn start(
    restart: usize,
    x: &MmSpace,
    y: &MmSpace,
    bounds: &FamilyBounds,
    p: Exponent,
    cfg: &SolveConfig,
    engine: &Engine<'_>,
) -> Result<DMatrix<f64>> {
    if restart >= cfg.restarts {
        let c = restart - cfg.restarts;
        let (n, m) = (x.len(), y.len());
        let (i0, j0) = (c % n, c / n);
        let q = p.value().unwrap_or(super::LARGE_P);
        let cost = DMatrix::from_fn(n, m, |i, j| (x.dist()[(i, i0)] - y.dist()[(j, j0)]).abs().powf(q));
        return engine.vertex(&cost);
    }
    let strategy = match restart {
        0 => cfg.init,
        1 if cfg.init != InitStrategy::DiagonalGreedy => InitStrategy::DiagonalGreedy,
        1 => InitStrategy::Product,
        _ => InitStrategy::RandomVertex,
    };
    let (a, b) = targets(x, y, bounds);
    Ok(match strategy {
        InitStrategy::Product => &a * b.transpose() / bounds.total,
        InitStrategy::DiagonalGreedy => greedy_diagonal(x, y, &a, &b, p),
        InitStrategy::RandomVertex => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add((restart as u64).wrapping_mul(GOLDEN)));
            let cost = DMatrix::from_fn(x.len(), y.len(), |_, _| rng.random::<f64>());
            engine.vertex(&cost)?
        }
    })
}

/// Marginal targets of total mass `T`: the weights rescaled to `T`.
///
/// They lie inside every family's box, so products and greedy plans built
/// from them are feasible without projection.
fn targets(x: &MmSpace, y: &MmSpace, bounds: &FamilyBounds) -> (DVector<f64>, DVector<f64>) {
    let t = bounds.total;
    let a = x.weights() * (t / x.total_mass());
    let b = y.weights() * (t / y.total_mass());
    (a, b)
}

/// North-west corner rule after ordering both sides by eccentricity.
fn greedy_diagonal(x: &MmSpace, y: &MmSpace, a: &DVector<f64>, b: &DVector<f64>, p: Exponent) -> DMatrix<f64> {
    let order = |s: &MmSpace| {
        let e = s.eccentricity(p);
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&i, &j| e[i].total_cmp(&e[j]));
        idx
    };
    let (ox, oy) = (order(x), order(y));
    let mut ra: Vec<f64> = ox.iter().map(|&i| a[i]).collect();
    let mut rb: Vec<f64> = oy.iter().map(|&j| b[j]).collect();
    let mut pi = DMatrix::zeros(x.len(), y.len());
    let (mut u, mut v) = (0, 0);
    while u < ra.len() && v < rb.len() {
        let t = ra[u].min(rb[v]);
        pi[(ox[u], oy[v])] += t;
        ra[u] -= t;
        rb[v] -= t;
        if ra[u] <= rb[v] {
            u += 1;
        } else {
            v += 1;
        }
    }
    pi
}
