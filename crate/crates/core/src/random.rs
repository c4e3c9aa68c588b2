//! Random finite mm-spaces for tests and the verification harness.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;

use crate::mmspace::MmSpace;

/// Symmetric i.i.d. uniform(0.1, 1) distances repaired into a metric by
/// shortest paths.
pub fn random_metric<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = rng.random_range(0.1..1.0);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[(i, k)] + d[(k, j)];
                if via < d[(i, j)] {
                    d[(i, j)] = via;
                }
            }
        }
    }
    d
}

/// A flat Dirichlet sample (normalized standard exponentials).
pub fn random_weights<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    let w = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(Exp1));
    let t = w.sum();
    w / t
}

/// A random fully supported probability space on `n` atoms.
pub fn random_space<R: Rng + ?Sized>(rng: &mut R, n: usize) -> MmSpace {
    let d = random_metric(rng, n);
    let w = random_weights(rng, n);
    MmSpace::new(d, w).expect("shortest-path closure yields a metric")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spaces_are_valid_and_reproducible() {
        for n in 1..7 {
            let mut a = ChaCha8Rng::seed_from_u64(n as u64);
            let mut b = ChaCha8Rng::seed_from_u64(n as u64);
            let s = random_space(&mut a, n);
            assert!(s.is_probability(), "{}", s.validate(true));
            assert_eq!(s, random_space(&mut b, n));
        }
    }
}
