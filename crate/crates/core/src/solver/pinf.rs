//! Exact `p = ∞` minimization on tiny instances.
//!
//! `dis_∞(π) ≤ τ` holds exactly when every pair of cells in the support of
//! `π` has distance gap at most `τ`, i.e. the support is a clique of the
//! graph "gap ≤ τ". The optimum is therefore the smallest gap value `τ` for
//! which some maximal clique supports a feasible coupling.

use crate::coupling::{Coupling, FamilyBounds};
use crate::error::{Error, Result};
use crate::mmspace::MmSpace;
use crate::transport_lp::TransportSimplex;

/// Largest `n·m` handled by enumeration.
pub const MAX_CELLS: usize = 9;

pub(crate) fn enumerate(x: &MmSpace, y: &MmSpace, bounds: &FamilyBounds) -> Result<Coupling> {
    let (n, m) = (x.len(), y.len());
    let k = n * m;
    if k > MAX_CELLS {
        return Err(Error::Unsupported(format!(
            "support enumeration needs n*m <= {MAX_CELLS}, got {n}x{m}; use the large-p strategy"
        )));
    }
    let gap = |a: usize, b: usize| (x.dist()[(a % n, b % n)] - y.dist()[(a / n, b / n)]).abs();
    let mut taus: Vec<f64> = (0..k).flat_map(|a| (0..k).map(move |b| (a, b))).map(|(a, b)| gap(a, b)).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();

    for &tau in &taus {
        let adj: Vec<u32> = (0..k)
            .map(|a| (0..k).filter(|&b| gap(a, b) <= tau).fold(0u32, |acc, b| acc | (1 << b)))
            .collect();
        for mask in maximal_cliques(&adj, k) {
            let allowed: Vec<bool> = (0..k).map(|a| mask & (1 << a) != 0).collect();
            match TransportSimplex::new(bounds, Some(&allowed)) {
                Ok(mut s) => {
                    let zero = nalgebra::DMatrix::zeros(n, m);
                    return Ok(s.solve(&zero)?.coupling);
                }
                Err(Error::Infeasible(_)) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    Err(Error::Infeasible("the coupling polytope is empty".into()))
}

/// All maximal cliques as bit masks, in increasing mask order.
fn maximal_cliques(adj: &[u32], k: usize) -> Vec<u32> {
    let is_clique = |mask: u32| (0..k).filter(|&a| mask & (1 << a) != 0).all(|a| adj[a] & mask == mask);
    let mut out = Vec::new();
    for mask in 1u32..(1 << k) {
        if !is_clique(mask) {
            continue;
        }
        let maximal = (0..k).filter(|&a| mask & (1 << a) == 0).all(|a| adj[a] & mask != mask);
        if maximal {
            out.push(mask);
        }
    }
    out
}
