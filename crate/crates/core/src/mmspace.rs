use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponent::Exponent;

/// Absolute tolerance for symmetry, diagonal and triangle-inequality checks.
pub const TOL_METRIC: f64 = 1e-9;
/// Absolute tolerance on `|Σ μ − 1|` for probability spaces.
pub const TOL_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    NonFiniteDistance,
    NegativeDistance,
    NonzeroDiagonal,
    Asymmetric,
    TriangleInequality,
    NonFiniteWeight,
    NegativeWeight,
    ZeroWeight,
    ZeroTotalMass,
    MassNotOne,
    NegativeEntry,
    NonFiniteEntry,
    MarginalX,
    MarginalY,
    RowUpper,
    RowLower,
    ColUpper,
    ColLower,
    TotalMass,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        match s.as_ref().and_then(|v| v.as_str()) {
            Some(s) => f.write_str(s),
            None => write!(f, "{self:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub indices: Vec<usize>,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn from_violations(violations: Vec<Violation>) -> Self {
        ValidationReport { ok: violations.is_empty(), violations }
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    pub fn get(&self, code: ViolationCode) -> Option<&Violation> {
        self.violations.iter().find(|v| v.code == code)
    }

    /// Largest violation magnitude, 0 for a clean report.
    pub fn worst(&self) -> f64 {
        self.violations.iter().map(|v| v.magnitude).fold(0.0, f64::max)
    }

    pub fn into_result(self) -> Result<()> {
        if self.ok {
            Ok(())
        } else {
            Err(Error::Validation(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return f.write_str("ok");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{} at {:?} (magnitude {:e})", v.code, v.indices, v.magnitude)?;
        }
        Ok(())
    }
}

/// Keeps the worst offender seen for one violation code.
struct Worst {
    code: ViolationCode,
    best: Option<(Vec<usize>, f64)>,
}

impl Worst {
    fn new(code: ViolationCode) -> Self {
        Worst { code, best: None }
    }

    fn offer(&mut self, indices: &[usize], magnitude: f64) {
        let replace = match &self.best {
            None => true,
            Some((_, m)) => magnitude > *m || (magnitude.is_nan() && !m.is_nan()),
        };
        if replace {
            self.best = Some((indices.to_vec(), magnitude));
        }
    }

    fn push_into(self, out: &mut Vec<Violation>) {
        if let Some((indices, magnitude)) = self.best {
            out.push(Violation { code: self.code, indices, magnitude });
        }
    }
}

/// Validates raw parts without constructing a space.
///
/// Shape problems are structural errors; everything else is reported.
pub fn validate_parts(
    dist: &DMatrix<f64>,
    weights: &DVector<f64>,
    require_probability: bool,
) -> Result<ValidationReport> {
    let n = weights.len();
    if dist.nrows() != dist.ncols() {
        return Err(Error::Dimension(format!(
            "distance matrix is {}x{}, expected square",
            dist.nrows(),
            dist.ncols()
        )));
    }
    if dist.nrows() != n {
        return Err(Error::Dimension(format!(
            "distance matrix has {} rows but there are {} weights",
            dist.nrows(),
            n
        )));
    }
    if n == 0 {
        return Err(Error::Dimension("space must have at least one atom".into()));
    }

    let mut out = Vec::new();
    let mut non_finite = Worst::new(ViolationCode::NonFiniteDistance);
    let mut negative = Worst::new(ViolationCode::NegativeDistance);
    let mut diagonal = Worst::new(ViolationCode::NonzeroDiagonal);
    let mut asym = Worst::new(ViolationCode::Asymmetric);
    let mut triangle = Worst::new(ViolationCode::TriangleInequality);

    for i in 0..n {
        for j in 0..n {
            let d = dist[(i, j)];
            if !d.is_finite() {
                non_finite.offer(&[i, j], f64::INFINITY);
                continue;
            }
            if d < 0.0 {
                negative.offer(&[i, j], -d);
            }
            if i == j && d != 0.0 {
                diagonal.offer(&[i, i], d.abs());
            }
            if j > i {
                let gap = (d - dist[(j, i)]).abs();
                if gap > TOL_METRIC {
                    asym.offer(&[i, j], gap);
                }
            }
        }
    }
    let finite = non_finite.best.is_none();
    if finite {
        for i in 0..n {
            for k in 0..n {
                let dik = dist[(i, k)];
                for j in 0..n {
                    let excess = dist[(i, j)] - dik - dist[(k, j)];
                    if excess > TOL_METRIC {
                        triangle.offer(&[i, j, k], excess);
                    }
                }
            }
        }
    }
    non_finite.push_into(&mut out);
    negative.push_into(&mut out);
    diagonal.push_into(&mut out);
    asym.push_into(&mut out);
    triangle.push_into(&mut out);

    let mut w_non_finite = Worst::new(ViolationCode::NonFiniteWeight);
    let mut w_negative = Worst::new(ViolationCode::NegativeWeight);
    let mut w_zero = Worst::new(ViolationCode::ZeroWeight);
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() {
            w_non_finite.offer(&[i], f64::INFINITY);
        } else if w < 0.0 {
            w_negative.offer(&[i], -w);
        } else if w == 0.0 && require_probability {
            w_zero.offer(&[i], 0.0);
        }
    }
    let weights_finite = w_non_finite.best.is_none();
    w_non_finite.push_into(&mut out);
    w_negative.push_into(&mut out);
    w_zero.push_into(&mut out);

    if weights_finite {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            out.push(Violation {
                code: ViolationCode::ZeroTotalMass,
                indices: vec![],
                magnitude: -total,
            });
        } else if require_probability && (total - 1.0).abs() > TOL_MASS {
            out.push(Violation {
                code: ViolationCode::MassNotOne,
                indices: vec![],
                magnitude: (total - 1.0).abs(),
            });
        }
    }
    Ok(ValidationReport::from_violations(out))
}

/// A finite metric measure space: a distance matrix and nonnegative weights.
///
/// Construction validates the metric part and nonnegativity of the weights;
/// whether the weights form a probability measure is a separate question
/// answered by [`MmSpace::is_probability`].
#[derive(Debug, Clone, PartialEq)]
pub struct MmSpace {
    dist: DMatrix<f64>,
    weights: DVector<f64>,
    labels: Option<Vec<String>>,
}

impl MmSpace {
    /// A general mm-space (weights need not sum to one, zeros allowed).
    pub fn new(dist: DMatrix<f64>, weights: DVector<f64>) -> Result<Self> {
        validate_parts(&dist, &weights, false)?.into_result()?;
        Ok(MmSpace { dist, weights, labels: None })
    }

    /// A fully supported probability space.
    pub fn probability(dist: DMatrix<f64>, weights: DVector<f64>) -> Result<Self> {
        validate_parts(&dist, &weights, true)?.into_result()?;
        Ok(MmSpace { dist, weights, labels: None })
    }

    pub fn from_rows(dist: &[Vec<f64>], weights: &[f64]) -> Result<Self> {
        let n = dist.len();
        if dist.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("distance rows have unequal lengths".into()));
        }
        let m = DMatrix::from_fn(n, n, |i, j| dist[i][j]);
        MmSpace::new(m, DVector::from_column_slice(weights))
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} labels for {} atoms",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// The single-point space with unit mass.
    pub fn point() -> Self {
        MmSpace {
            dist: DMatrix::zeros(1, 1),
            weights: DVector::from_element(1, 1.0),
            labels: None,
        }
    }

    /// Δ_n: `n` points at mutual distance one with uniform weights.
    pub fn simplex(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("simplex space needs n >= 1".into()));
        }
        let dist = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 });
        Ok(MmSpace { dist, weights: DVector::from_element(n, 1.0 / n as f64), labels: None })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dist(&self) -> &DMatrix<f64> {
        &self.dist
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.sum()
    }

    pub fn diameter(&self) -> f64 {
        self.dist.max()
    }

    pub fn validate(&self, require_probability: bool) -> ValidationReport {
        validate_parts(&self.dist, &self.weights, require_probability)
            .expect("shape checked at construction")
    }

    pub fn is_probability(&self) -> bool {
        self.validate(true).ok
    }

    pub fn require_probability(&self) -> Result<()> {
        self.validate(true).into_result()
    }

    /// Same metric, new weights.
    pub fn with_weights(&self, weights: DVector<f64>) -> Result<Self> {
        let mut s = MmSpace::new(self.dist.clone(), weights)?;
        s.labels = self.labels.clone();
        Ok(s)
    }

    /// Weights divided by their total.
    pub fn normalized(&self) -> Self {
        let t = self.total_mass();
        MmSpace { dist: self.dist.clone(), weights: &self.weights / t, labels: self.labels.clone() }
    }

    /// The subspace on atoms with positive weight.
    pub fn restrict_to_support(&self) -> Self {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.weights[i] > 0.0).collect();
        self.subspace(&keep)
    }

    /// The subspace on the given atoms, in the given order.
    pub fn subspace(&self, idx: &[usize]) -> Self {
        let k = idx.len();
        MmSpace {
            dist: DMatrix::from_fn(k, k, |a, b| self.dist[(idx[a], idx[b])]),
            weights: DVector::from_fn(k, |a, _| self.weights[idx[a]]),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i].clone()).collect()),
        }
    }

    /// Atom `i` of the result is atom `perm[i]` of `self`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let n = self.len();
        if perm.len() != n {
            return Err(Error::Parameter(format!(
                "permutation has length {}, space has {} atoms",
                perm.len(),
                n
            )));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(Error::Parameter("permutation is not a bijection".into()));
            }
            seen[p] = true;
        }
        Ok(self.subspace(perm))
    }

    /// `‖d(x_i, ·)‖_{L^p(μ)}` for every atom.
    pub fn eccentricity(&self, p: Exponent) -> DVector<f64> {
        let n = self.len();
        DVector::from_fn(n, |i, _| match p {
            Exponent::Infinity => (0..n)
                .filter(|&j| self.weights[j] > 0.0)
                .map(|j| self.dist[(i, j)])
                .fold(0.0, f64::max),
            Exponent::Finite(q) => {
                // Summing in sorted order makes the result independent of atom order.
                let mut terms: Vec<f64> =
                    (0..n).map(|j| self.dist[(i, j)].powf(q) * self.weights[j]).collect();
                terms.sort_by(f64::total_cmp);
                terms.iter().sum::<f64>().powf(1.0 / q)
            }
        })
    }

    pub fn circumradius(&self, p: Exponent) -> f64 {
        self.eccentricity(p).min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn three_point() -> MmSpace {
        MmSpace::from_rows(
            &[vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.5], vec![2.0, 1.5, 0.0]],
            &[0.2, 0.3, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn simplex_two_is_valid_probability_space() {
        let d2 = MmSpace::simplex(2).unwrap();
        assert!(d2.validate(true).ok);
        assert_eq!(d2.dist()[(0, 1)], 1.0);
        assert_eq!(d2.weights().as_slice(), &[0.5, 0.5]);
        assert!(MmSpace::simplex(0).is_err());
        assert_eq!(MmSpace::simplex(1).unwrap(), MmSpace::point());
    }

    #[test]
    fn negative_distance_reported() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, -0.1, -0.1, 0.0]);
        let w = DVector::from_vec(vec![0.5, 0.5]);
        let r = validate_parts(&d, &w, true).unwrap();
        assert!(!r.ok);
        assert_relative_eq!(r.get(ViolationCode::NegativeDistance).unwrap().magnitude, 0.1);
    }

    #[test]
    fn mass_not_one_reported_with_magnitude() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let w = DVector::from_vec(vec![0.5, 0.6]);
        let r = validate_parts(&d, &w, true).unwrap();
        assert_relative_eq!(r.get(ViolationCode::MassNotOne).unwrap().magnitude, 0.1, epsilon = 1e-12);
        assert!(validate_parts(&d, &w, false).unwrap().ok);
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let d = DMatrix::zeros(2, 2);
        let w = DVector::from_vec(vec![1.0]);
        assert!(matches!(validate_parts(&d, &w, false), Err(Error::Dimension(_))));
    }

    #[test]
    fn triangle_violation_names_worst_triple() {
        let d = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 5.0, 1.0, 0.0, 1.0, 5.0, 1.0, 0.0]);
        let w = DVector::from_element(3, 1.0 / 3.0);
        let r = validate_parts(&d, &w, true).unwrap();
        let v = r.get(ViolationCode::TriangleInequality).unwrap();
        assert_relative_eq!(v.magnitude, 3.0);
        assert_eq!(v.indices[2], 1);
    }

    #[test]
    fn zero_weight_only_rejected_for_probability() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let w = DVector::from_vec(vec![1.0, 0.0]);
        assert!(validate_parts(&d, &w, false).unwrap().ok);
        assert!(validate_parts(&d, &w, true).unwrap().has(ViolationCode::ZeroWeight));
    }

    #[test]
    fn eccentricity_examples() {
        let pt = MmSpace::point();
        assert_eq!(pt.eccentricity(Exponent::TWO)[0], 0.0);
        assert_eq!(pt.circumradius(Exponent::Infinity), 0.0);

        let d2 = MmSpace::simplex(2).unwrap();
        let e = d2.eccentricity(Exponent::ONE);
        assert_relative_eq!(e[0], 0.5);
        assert_relative_eq!(e[1], 0.5);
        assert_relative_eq!(d2.circumradius(Exponent::ONE), 0.5);

        let d3 = MmSpace::simplex(3).unwrap();
        for v in d3.eccentricity(Exponent::TWO).iter() {
            assert_relative_eq!(*v, (2.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        }
        for n in 2..6 {
            assert_eq!(MmSpace::simplex(n).unwrap().circumradius(Exponent::Infinity), 1.0);
        }
    }

    #[test]
    fn relabel_cyclic_shift() {
        let s = three_point();
        let r = s.relabel(&[1, 2, 0]).unwrap();
        assert_eq!(r.weights().as_slice(), &[0.3, 0.5, 0.2]);
        assert_eq!(r.dist()[(0, 1)], 1.5);
        assert_eq!(r.dist()[(0, 2)], 1.0);
        assert_eq!(r.dist()[(1, 2)], 2.0);
        assert!(s.relabel(&[0, 0, 1]).is_err());
        assert!(s.relabel(&[0, 1]).is_err());
        assert_eq!(s.relabel(&[0, 1, 2]).unwrap(), s);
        let d2 = MmSpace::simplex(2).unwrap();
        assert_eq!(d2.relabel(&[1, 0]).unwrap(), d2);
    }

    fn arb_space() -> impl Strategy<Value = MmSpace> {
        (1usize..6).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.1f64..1.0, n * n),
                proptest::collection::vec(0.05f64..1.0, n),
                Just(n),
            )
                .prop_map(|(raw, w, n)| {
                    let mut d = DMatrix::from_fn(n, n, |i, j| {
                        if i == j {
                            0.0
                        } else {
                            raw[i.min(j) * n + i.max(j)]
                        }
                    });
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
                    let t: f64 = w.iter().sum();
                    let w = DVector::from_iterator(n, w.into_iter().map(|x| x / t));
                    MmSpace::new(d, w).unwrap()
                })
        })
    }

    fn arb_space_and_perm() -> impl Strategy<Value = (MmSpace, Vec<usize>)> {
        arb_space().prop_flat_map(|s| {
            let n = s.len();
            (Just(s), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
        })
    }

    proptest! {
        #[test]
        fn relabel_preserves_validity((s, perm) in arb_space_and_perm()) {
            let r = s.relabel(&perm).unwrap();
            prop_assert_eq!(r.validate(false).ok, s.validate(false).ok);
        }

        #[test]
        fn eccentricity_is_equivariant((s, perm) in arb_space_and_perm(), q in 1.0f64..4.0) {
            let p = Exponent::Finite(q);
            let e = s.eccentricity(p);
            let er = s.relabel(&perm).unwrap().eccentricity(p);
            for (i, &pi) in perm.iter().enumerate() {
                prop_assert_eq!(er[i], e[pi]);
            }
        }

        #[test]
        fn circumradius_is_relabel_invariant((s, perm) in arb_space_and_perm()) {
            let r = s.relabel(&perm).unwrap();
            prop_assert_eq!(r.circumradius(Exponent::Infinity), s.circumradius(Exponent::Infinity));
            prop_assert_eq!(r.circumradius(Exponent::ONE), s.circumradius(Exponent::ONE));
            prop_assert_eq!(r.circumradius(Exponent::TWO), s.circumradius(Exponent::TWO));
        }

        #[test]
        fn eccentricity_monotone_in_p(s in arb_space(), p in 1.0f64..3.0, dq in 0.0f64..3.0) {
            let ep = s.eccentricity(Exponent::Finite(p));
            let eq = s.eccentricity(Exponent::Finite(p + dq));
            let ei = s.eccentricity(Exponent::Infinity);
            for i in 0..s.len() {
                prop_assert!(ep[i] <= eq[i] + 1e-12);
                prop_assert!(eq[i] <= ei[i] + 1e-12);
            }
        }
    }
}
