//! The `p`-distortion `dis_p(π) = ‖d_X − d_Y‖_{L^p(π⊗π)}`.
//!
//! For finite `p` the `p`-th power is the quadratic form `⟨π, Qπ⟩` with
//! `Q[(i,j),(i',j')] = |d_X(i,i') − d_Y(j,j')|^p`. [`Kernel`] evaluates
//! `Qπ`; everything else is built on it.

use nalgebra::DMatrix;

use crate::coupling::Coupling;
use crate::error::{Error, Result};
use crate::exponent::Exponent;
use crate::mmspace::MmSpace;

/// Entries at or below this are outside the support for `p = ∞`.
pub const TOL_SUPPORT: f64 = 1e-12;

/// Largest `(nm)²` for which the coefficient tensor is stored.
const TENSOR_LIMIT: usize = 1 << 22;
/// Largest squared support size for term-by-term energy evaluation.
const ENERGY_DIRECT_LIMIT: usize = 1 << 24;

/// Neumaier's compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    c: f64,
}

impl Neumaier {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.sum + self.c
    }
}

#[derive(Debug, Clone)]
enum Mode {
    /// `p = 2`, unit scale: factored form.
    Square { dx2: DMatrix<f64>, dy2: DMatrix<f64> },
    /// Row-major `nm × nm` coefficient table, cells indexed column-major.
    Tensor(Vec<f64>),
    Direct,
}

/// Evaluator for `π ↦ Qπ` with `Q` built from two distance matrices.
///
/// Coefficients are `(|d_X − d_Y| / scale)^p`; `scale` is 1 except for the
/// large-`p` surrogate, where it keeps the powers representable.
#[derive(Debug, Clone)]
pub struct Kernel {
    dx: DMatrix<f64>,
    dy: DMatrix<f64>,
    p: f64,
    scale: f64,
    mode: Mode,
}

impl Kernel {
    pub fn new(x: &MmSpace, y: &MmSpace, p: f64) -> Result<Self> {
        Self::with_scale(x, y, p, 1.0)
    }

    pub fn with_scale(x: &MmSpace, y: &MmSpace, p: f64, scale: f64) -> Result<Self> {
        if !(p.is_finite() && p >= 1.0) {
            return Err(Error::Unsupported(format!(
                "the quadratic kernel needs finite p >= 1, got {p}"
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Parameter(format!("kernel scale must be positive, got {scale}")));
        }
        let dx = x.dist().clone();
        let dy = y.dist().clone();
        let (n, m) = (dx.nrows(), dy.nrows());
        let nm = n * m;
        let mode = if p == 2.0 && scale == 1.0 {
            Mode::Square { dx2: dx.map(|v| v * v), dy2: dy.map(|v| v * v) }
        } else if nm * nm <= TENSOR_LIMIT {
            let mut t = vec![0.0; nm * nm];
            for j in 0..m {
                for i in 0..n {
                    let a = i + n * j;
                    for j2 in 0..m {
                        for i2 in 0..n {
                            let b = i2 + n * j2;
                            t[a * nm + b] = coef(dx[(i, i2)], dy[(j, j2)], p, scale);
                        }
                    }
                }
            }
            Mode::Tensor(t)
        } else {
            Mode::Direct
        };
        Ok(Kernel { dx, dy, p, scale, mode })
    }

    pub fn n(&self) -> usize {
        self.dx.nrows()
    }

    pub fn m(&self) -> usize {
        self.dy.nrows()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// `Q[(i,j),(i2,j2)]`.
    #[inline]
    pub fn coefficient(&self, i: usize, j: usize, i2: usize, j2: usize) -> f64 {
        match &self.mode {
            Mode::Tensor(t) => {
                let n = self.n();
                let nm = n * self.m();
                t[(i + n * j) * nm + i2 + n * j2]
            }
            _ => coef(self.dx[(i, i2)], self.dy[(j, j2)], self.p, self.scale),
        }
    }

    /// `Qπ` as an `n × m` matrix.
    pub fn apply(&self, pi: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        debug_assert_eq!(pi.shape(), (n, m));
        match &self.mode {
            Mode::Square { dx2, dy2 } => {
                let rows = DMatrix::from_fn(n, 1, |i, _| pi.row(i).sum());
                let cols = DMatrix::from_fn(m, 1, |j, _| pi.column(j).sum());
                let a = dx2 * rows;
                let b = dy2 * cols;
                let cross = &self.dx * pi * &self.dy;
                DMatrix::from_fn(n, m, |i, j| a[i] + b[j] - 2.0 * cross[(i, j)])
            }
            Mode::Tensor(t) => {
                let nm = n * m;
                let v = pi.as_slice();
                let mut out = DMatrix::zeros(n, m);
                for (a, o) in out.as_mut_slice().iter_mut().enumerate() {
                    let row = &t[a * nm..(a + 1) * nm];
                    let mut acc = Neumaier::default();
                    for (q, x) in row.iter().zip(v) {
                        if *x != 0.0 {
                            acc.add(q * x);
                        }
                    }
                    *o = acc.value();
                }
                out
            }
            Mode::Direct => {
                let support: Vec<(usize, usize, f64)> = (0..m)
                    .flat_map(|j| (0..n).map(move |i| (i, j)))
                    .filter_map(|(i, j)| {
                        let v = pi[(i, j)];
                        (v != 0.0).then_some((i, j, v))
                    })
                    .collect();
                DMatrix::from_fn(n, m, |i, j| {
                    let mut acc = Neumaier::default();
                    for &(i2, j2, v) in &support {
                        acc.add(coef(self.dx[(i, i2)], self.dy[(j, j2)], self.p, self.scale) * v);
                    }
                    acc.value()
                })
            }
        }
    }

    /// `⟨π, Qπ⟩`, clamped at zero.
    ///
    /// Summed term by term over the support when that is affordable: the
    /// factored `p = 2` contraction cancels catastrophically near zero.
    pub fn energy(&self, pi: &DMatrix<f64>) -> f64 {
        let n = self.n();
        let support: Vec<(usize, usize, f64)> = pi
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(a, v)| (a % n, a / n, *v))
            .collect();
        if support.len() * support.len() > ENERGY_DIRECT_LIMIT {
            return inner(pi, &self.apply(pi)).max(0.0);
        }
        let mut acc = Neumaier::default();
        for &(i, j, v) in &support {
            for &(i2, j2, w) in &support {
                acc.add(self.coefficient(i, j, i2, j2) * v * w);
            }
        }
        acc.value().max(0.0)
    }
}

#[inline]
fn coef(a: f64, b: f64, p: f64, scale: f64) -> f64 {
    let g = (a - b).abs() / scale;
    if p == 1.0 {
        g
    } else if p == 2.0 {
        g * g
    } else {
        g.powf(p)
    }
}

/// Frobenius inner product with compensated summation.
pub fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut acc = Neumaier::default();
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        acc.add(x * y);
    }
    acc.value()
}

fn check_dims(x: &MmSpace, y: &MmSpace, c: &Coupling) -> Result<()> {
    if c.nrows() != x.len() || c.ncols() != y.len() {
        return Err(Error::Dimension(format!(
            "coupling is {}x{} but the spaces have {} and {} atoms",
            c.nrows(),
            c.ncols(),
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

/// `max |d_X(i,i') − d_Y(j,j')|` over pairs of cells in the support of `π`.
pub fn dis_inf(x: &MmSpace, y: &MmSpace, c: &Coupling) -> Result<f64> {
    check_dims(x, y, c)?;
    let s = c.support(TOL_SUPPORT);
    let (dx, dy) = (x.dist(), y.dist());
    let mut best = 0.0f64;
    for (a, &(i, j)) in s.iter().enumerate() {
        for &(i2, j2) in &s[a..] {
            best = best.max((dx[(i, i2)] - dy[(j, j2)]).abs());
        }
    }
    Ok(best)
}

/// `dis_p(π)^p` for finite `p`.
pub fn dis_p_pow(x: &MmSpace, y: &MmSpace, c: &Coupling, p: f64) -> Result<f64> {
    check_dims(x, y, c)?;
    Ok(Kernel::new(x, y, p)?.energy(c.matrix()))
}

pub fn dis_p(x: &MmSpace, y: &MmSpace, c: &Coupling, p: Exponent) -> Result<f64> {
    match p {
        Exponent::Infinity => dis_inf(x, y, c),
        Exponent::Finite(q) => Ok(dis_p_pow(x, y, c, q)?.powf(1.0 / q)),
    }
}

/// Gradient of `π ↦ dis_p(π)^p`, which is `2Qπ`.
pub fn dis_p_gradient(x: &MmSpace, y: &MmSpace, c: &Coupling, p: Exponent) -> Result<DMatrix<f64>> {
    check_dims(x, y, c)?;
    let q = p.value().ok_or_else(|| {
        Error::Unsupported("dis_p has no gradient at p = inf; use the dedicated p = inf solver".into())
    })?;
    Ok(Kernel::new(x, y, q)?.apply(c.matrix()) * 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Literal quadruple sum, independent of [`Kernel`].
    fn naive_pow(x: &MmSpace, y: &MmSpace, pi: &DMatrix<f64>, p: f64) -> f64 {
        let (n, m) = (x.len(), y.len());
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..m {
                for i2 in 0..n {
                    for j2 in 0..m {
                        s += (x.dist()[(i, i2)] - y.dist()[(j, j2)]).abs().powf(p)
                            * pi[(i, j)]
                            * pi[(i2, j2)];
                    }
                }
            }
        }
        s
    }

    fn random_space(rng: &mut ChaCha8Rng, n: usize) -> MmSpace {
        crate::random::random_space(rng, n)
    }

    fn random_coupling(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Coupling {
        let mat = DMatrix::from_fn(n, m, |_, _| rng.random::<f64>());
        let t = mat.sum();
        Coupling::new(mat / t).unwrap()
    }

    fn two_point() -> MmSpace {
        MmSpace::simplex(2).unwrap()
    }

    #[test]
    fn identity_coupling_has_zero_distortion() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_space(&mut rng, 4);
        let c = Coupling::diagonal(x.weights());
        for p in [Exponent::ONE, Exponent::TWO, Exponent::Finite(3.5), Exponent::Infinity] {
            assert!(dis_p(&x, &x, &c, p).unwrap() < 1e-12);
        }
    }

    #[test]
    fn half_diagonal_between_two_point_spaces() {
        let y = two_point();
        let c = Coupling::diagonal(&DVector::from_vec(vec![0.5, 0.5]));
        assert_eq!(dis_p(&y, &y, &c, Exponent::TWO).unwrap(), 0.0);
    }

    #[test]
    fn product_of_two_point_spaces_p1() {
        let y = two_point();
        let c = Coupling::product(y.weights(), y.weights());
        assert_relative_eq!(dis_p(&y, &y, &c, Exponent::ONE).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let y = two_point();
        let c = Coupling::zeros(3, 2);
        assert!(matches!(dis_p(&y, &y, &c, Exponent::TWO), Err(Error::Dimension(_))));
    }

    #[test]
    fn gradient_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_space(&mut rng, 3);
        let y = random_space(&mut rng, 4);
        let g = dis_p_gradient(&x, &y, &Coupling::zeros(3, 4), Exponent::TWO).unwrap();
        assert_eq!(g.max().abs().max(g.min().abs()), 0.0);
        let pt = MmSpace::point();
        let g = dis_p_gradient(&pt, &pt, &Coupling::dirac(1, 1, 0, 0, 1.0), Exponent::ONE).unwrap();
        assert_eq!(g[(0, 0)], 0.0);
        assert!(matches!(
            dis_p_gradient(&x, &y, &Coupling::zeros(3, 4), Exponent::Infinity),
            Err(Error::Unsupported(_))
        ));
    }

    /// Central differences with step 1e-6 against the analytic gradient.
    fn fd_check(seed: u64, p: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (rng.random_range(1..5), rng.random_range(1..5));
        let x = random_space(&mut rng, n);
        let y = random_space(&mut rng, m);
        let c = random_coupling(&mut rng, n, m);
        let g = dis_p_gradient(&x, &y, &c, Exponent::Finite(p)).unwrap();
        let h = 1e-6;
        let scale = g.abs().max().max(1e-12);
        for i in 0..n {
            for j in 0..m {
                let mut up = c.matrix().clone();
                let mut dn = c.matrix().clone();
                up[(i, j)] += h;
                dn[(i, j)] -= h;
                let fd = (naive_pow(&x, &y, &up, p) - naive_pow(&x, &y, &dn, p)) / (2.0 * h);
                assert!(
                    (fd - g[(i, j)]).abs() <= 1e-6 * scale,
                    "seed {seed} p {p} cell ({i},{j}): fd {fd} vs {}",
                    g[(i, j)]
                );
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            fd_check(seed, 2.0);
            fd_check(seed + 100, 1.0);
            fd_check(seed + 200, 3.0);
        }
    }

    #[test]
    fn direct_path_matches_tensor_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_space(&mut rng, 5);
        let y = random_space(&mut rng, 4);
        let c = random_coupling(&mut rng, 5, 4);
        let kt = Kernel::new(&x, &y, 1.5).unwrap();
        let mut kd = kt.clone();
        kd.mode = Mode::Direct;
        let a = kt.apply(c.matrix());
        let b = kd.apply(c.matrix());
        assert_relative_eq!(a, b, epsilon = 1e-14);
    }

    #[test]
    fn large_p_tends_to_sup() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let x = random_space(&mut rng, 3);
            let y = random_space(&mut rng, 3);
            let c = random_coupling(&mut rng, 3, 3);
            let inf = dis_p(&x, &y, &c, Exponent::Infinity).unwrap();
            let v128 = dis_p(&x, &y, &c, Exponent::Finite(128.0)).unwrap();
            assert!((v128 - inf).abs() <= 0.05 * inf, "{v128} vs {inf}");
        }
    }

    fn instance() -> impl Strategy<Value = (MmSpace, MmSpace, Coupling)> {
        (1usize..5, 1usize..5, any::<u64>()).prop_map(|(n, m, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_space(&mut rng, n);
            let y = random_space(&mut rng, m);
            let c = random_coupling(&mut rng, n, m);
            (x, y, c)
        })
    }

    proptest! {
        #[test]
        fn kernel_matches_naive_sum((x, y, c) in instance(), p in 1.0f64..4.0) {
            let a = dis_p_pow(&x, &y, &c, p).unwrap();
            let b = naive_pow(&x, &y, c.matrix(), p);
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b));
        }

        #[test]
        fn monotone_in_p((x, y, c) in instance(), p in 1.0f64..3.0, dq in 0.0f64..3.0) {
            let a = dis_p(&x, &y, &c, Exponent::Finite(p)).unwrap();
            let b = dis_p(&x, &y, &c, Exponent::Finite(p + dq)).unwrap();
            let i = dis_p(&x, &y, &c, Exponent::Infinity).unwrap();
            prop_assert!(a <= b + 1e-12);
            prop_assert!(b <= i + 1e-12);
        }

        #[test]
        fn homogeneous_of_degree_two_over_p((x, y, c) in instance(), p in 1.0f64..4.0, s in 0.01f64..3.0) {
            let p = Exponent::Finite(p);
            let a = dis_p(&x, &y, &c.scale(s).unwrap(), p).unwrap();
            let b = s.powf(2.0 * p.reciprocal()) * dis_p(&x, &y, &c, p).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b));
        }
    }
}
