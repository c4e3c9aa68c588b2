use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mmspace::{ValidationReport, Violation, ViolationCode};

/// Absolute tolerance per constraint in membership tests.
pub const TOL_FEAS: f64 = 1e-9;

/// A nonnegative matrix on `X × Y` with its marginals and total mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    matrix: DMatrix<f64>,
    total: f64,
    marg_x: DVector<f64>,
    marg_y: DVector<f64>,
}

impl Coupling {
    /// Wraps a matrix. Tiny negative entries from floating-point noise
    /// (above `-TOL_FEAS`) are clamped to zero; anything below is rejected.
    pub fn new(mut matrix: DMatrix<f64>) -> Result<Self> {
        let mut worst: Option<(usize, usize, f64)> = None;
        for j in 0..matrix.ncols() {
            for i in 0..matrix.nrows() {
                let v = matrix[(i, j)];
                if !v.is_finite() {
                    return Err(Error::Validation(ValidationReport::from_violations(vec![
                        Violation {
                            code: ViolationCode::NonFiniteEntry,
                            indices: vec![i, j],
                            magnitude: f64::INFINITY,
                        },
                    ])));
                }
                if v < 0.0 {
                    if v < -TOL_FEAS && worst.is_none_or(|w| -v > w.2) {
                        worst = Some((i, j, -v));
                    }
                    matrix[(i, j)] = 0.0;
                }
            }
        }
        if let Some((i, j, m)) = worst {
            return Err(Error::Validation(ValidationReport::from_violations(vec![Violation {
                code: ViolationCode::NegativeEntry,
                indices: vec![i, j],
                magnitude: m,
            }])));
        }
        Ok(Self::from_nonnegative(matrix))
    }

    pub(crate) fn from_nonnegative(matrix: DMatrix<f64>) -> Self {
        let marg_x = DVector::from_fn(matrix.nrows(), |i, _| matrix.row(i).sum());
        let marg_y = DVector::from_fn(matrix.ncols(), |j, _| matrix.column(j).sum());
        let total = marg_x.sum();
        Coupling { matrix, total, marg_x, marg_y }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self::from_nonnegative(DMatrix::zeros(n, m))
    }

    /// The product coupling `a ⊗ b`.
    pub fn product(a: &DVector<f64>, b: &DVector<f64>) -> Self {
        Self::from_nonnegative(a * b.transpose())
    }

    /// Point mass `mass` at cell `(i, j)`.
    pub fn dirac(n: usize, m: usize, i: usize, j: usize, mass: f64) -> Self {
        let mut p = DMatrix::zeros(n, m);
        p[(i, j)] = mass;
        Self::from_nonnegative(p)
    }

    /// The identity coupling of a space with itself.
    pub fn diagonal(weights: &DVector<f64>) -> Self {
        Self::from_nonnegative(DMatrix::from_diagonal(weights))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn marg_x(&self) -> &DVector<f64> {
        &self.marg_x
    }

    pub fn marg_y(&self) -> &DVector<f64> {
        &self.marg_y
    }

    pub fn marginals(&self) -> (DVector<f64>, DVector<f64>) {
        (self.marg_x.clone(), self.marg_y.clone())
    }

    pub fn transpose(&self) -> Coupling {
        Coupling {
            matrix: self.matrix.transpose(),
            total: self.total,
            marg_x: self.marg_y.clone(),
            marg_y: self.marg_x.clone(),
        }
    }

    pub fn scale(&self, s: f64) -> Result<Coupling> {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::Parameter(format!("scale factor must be finite and >= 0, got {s}")));
        }
        Ok(Coupling {
            matrix: &self.matrix * s,
            total: self.total * s,
            marg_x: &self.marg_x * s,
            marg_y: &self.marg_y * s,
        })
    }

    /// Entries above `tol`, as `(i, j)` pairs in column-major order.
    pub fn support(&self, tol: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.ncols() {
            for i in 0..self.nrows() {
                if self.matrix[(i, j)] > tol {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Composes `π1 ∈ X×Y` and `π2 ∈ Y×Z` through `Y`:
    /// `π(x,z) = Σ_y π1(x,y) π2(y,z) μ_Y(y) / (π1_Y(y) π2_X(y))`.
    ///
    /// Atoms where either inner marginal vanishes are skipped.
    pub fn glue(pi1: &Coupling, pi2: &Coupling, mu_y: &DVector<f64>) -> Result<Coupling> {
        let m = pi1.ncols();
        if pi2.nrows() != m || mu_y.len() != m {
            return Err(Error::Dimension(format!(
                "cannot glue {}x{} with {}x{} through {} atoms",
                pi1.nrows(),
                m,
                pi2.nrows(),
                pi2.ncols(),
                mu_y.len()
            )));
        }
        let w = DVector::from_fn(m, |y, _| {
            let a = pi1.marg_y[y];
            let b = pi2.marg_x[y];
            if a > 0.0 && b > 0.0 {
                mu_y[y] / (a * b)
            } else {
                0.0
            }
        });
        let mat = &pi1.matrix * DMatrix::from_diagonal(&w) * &pi2.matrix;
        Coupling::new(mat)
    }
}

#[derive(Serialize, Deserialize)]
struct CouplingRepr {
    matrix: Vec<Vec<f64>>,
}

impl Serialize for Coupling {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows = (0..self.nrows())
            .map(|i| self.matrix.row(i).iter().copied().collect())
            .collect();
        CouplingRepr { matrix: rows }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Coupling {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = CouplingRepr::deserialize(d)?;
        let n = r.matrix.len();
        let m = r.matrix.first().map_or(0, Vec::len);
        if r.matrix.iter().any(|row| row.len() != m) {
            return Err(D::Error::custom("coupling rows have unequal lengths"));
        }
        let mat = DMatrix::from_fn(n, m, |i, j| r.matrix[i][j]);
        Coupling::new(mat).map_err(D::Error::custom)
    }
}

/// Which coupling polytope a problem is posed over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RelaxParams {
    /// Marginals equal to the targets.
    Exact,
    /// `C_ε`: `π_X ≤ (1+ε1)μ_X`, `π_Y ≤ (1+ε2)μ_Y`, `|π| = 1`.
    Relaxed {
        #[serde(with = "crate::serde_ext::ext_f64")]
        eps1: f64,
        #[serde(with = "crate::serde_ext::ext_f64")]
        eps2: f64,
    },
    /// `S_ε`: additionally `μ/(1+ε) ≤ π-marginal` per atom.
    Symmetric {
        #[serde(with = "crate::serde_ext::ext_f64")]
        eps1: f64,
        #[serde(with = "crate::serde_ext::ext_f64")]
        eps2: f64,
    },
    /// `C̃_δ`: `π̃_X ≤ μ̃_X`, `π̃_Y ≤ μ̃_Y`, `|π̃| = δ`.
    Mass { delta: f64 },
}

/// Box and total-mass constraints of a coupling polytope.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyBounds {
    pub row_lower: DVector<f64>,
    pub row_upper: DVector<f64>,
    pub col_lower: DVector<f64>,
    pub col_upper: DVector<f64>,
    pub total: f64,
}

fn check_eps(name: &str, e: f64) -> Result<()> {
    if e.is_nan() || e < 0.0 {
        return Err(Error::Parameter(format!("{name} must be >= 0 (inf allowed), got {e}")));
    }
    Ok(())
}

fn upper(mu: &DVector<f64>, eps: f64) -> DVector<f64> {
    if eps.is_infinite() {
        DVector::from_element(mu.len(), f64::INFINITY)
    } else {
        mu * (1.0 + eps)
    }
}

fn lower(mu: &DVector<f64>, eps: f64) -> DVector<f64> {
    if eps.is_infinite() {
        DVector::zeros(mu.len())
    } else {
        mu / (1.0 + eps)
    }
}

impl RelaxParams {
    pub fn relaxed(eps1: f64, eps2: f64) -> Self {
        RelaxParams::Relaxed { eps1, eps2 }
    }

    pub fn symmetric(eps1: f64, eps2: f64) -> Self {
        RelaxParams::Symmetric { eps1, eps2 }
    }

    pub fn mass(delta: f64) -> Self {
        RelaxParams::Mass { delta }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RelaxParams::Exact => Ok(()),
            RelaxParams::Relaxed { eps1, eps2 } | RelaxParams::Symmetric { eps1, eps2 } => {
                check_eps("eps1", eps1)?;
                check_eps("eps2", eps2)
            }
            RelaxParams::Mass { delta } => {
                if !(delta.is_finite() && delta >= 0.0) {
                    return Err(Error::Parameter(format!("delta must be finite and >= 0, got {delta}")));
                }
                Ok(())
            }
        }
    }

    /// Parameters of the mirrored problem on `Y × X`.
    pub fn swapped(&self) -> Self {
        match *self {
            RelaxParams::Relaxed { eps1, eps2 } => RelaxParams::Relaxed { eps1: eps2, eps2: eps1 },
            RelaxParams::Symmetric { eps1, eps2 } => RelaxParams::Symmetric { eps1: eps2, eps2: eps1 },
            other => other,
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            RelaxParams::Exact => "EXACT",
            RelaxParams::Relaxed { .. } => "RELAXED",
            RelaxParams::Symmetric { .. } => "SYMMETRIC",
            RelaxParams::Mass { .. } => "MASS",
        }
    }

    /// The constraint box for target measures `mu_x`, `mu_y`.
    pub fn bounds(&self, mu_x: &DVector<f64>, mu_y: &DVector<f64>) -> Result<FamilyBounds> {
        self.validate()?;
        let b = match *self {
            RelaxParams::Exact => FamilyBounds {
                row_lower: mu_x.clone(),
                row_upper: mu_x.clone(),
                col_lower: mu_y.clone(),
                col_upper: mu_y.clone(),
                total: mu_x.sum(),
            },
            RelaxParams::Relaxed { eps1, eps2 } => FamilyBounds {
                row_lower: DVector::zeros(mu_x.len()),
                row_upper: upper(mu_x, eps1),
                col_lower: DVector::zeros(mu_y.len()),
                col_upper: upper(mu_y, eps2),
                total: 1.0,
            },
            RelaxParams::Symmetric { eps1, eps2 } => FamilyBounds {
                row_lower: lower(mu_x, eps1),
                row_upper: upper(mu_x, eps1),
                col_lower: lower(mu_y, eps2),
                col_upper: upper(mu_y, eps2),
                total: 1.0,
            },
            RelaxParams::Mass { delta } => {
                let cap = mu_x.sum().min(mu_y.sum());
                if delta > cap * (1.0 + 1e-12) {
                    return Err(Error::Parameter(format!(
                        "delta = {delta} exceeds min(m_X, m_Y) = {cap}"
                    )));
                }
                FamilyBounds {
                    row_lower: DVector::zeros(mu_x.len()),
                    row_upper: mu_x.clone(),
                    col_lower: DVector::zeros(mu_y.len()),
                    col_upper: mu_y.clone(),
                    total: delta.min(cap),
                }
            }
        };
        Ok(b)
    }
}

/// Tests `c` against the polytope of `params` with tolerance [`TOL_FEAS`].
pub fn check_membership(
    c: &Coupling,
    mu_x: &DVector<f64>,
    mu_y: &DVector<f64>,
    params: &RelaxParams,
) -> Result<ValidationReport> {
    check_membership_tol(c, mu_x, mu_y, params, TOL_FEAS)
}

pub fn check_membership_tol(
    c: &Coupling,
    mu_x: &DVector<f64>,
    mu_y: &DVector<f64>,
    params: &RelaxParams,
    tol: f64,
) -> Result<ValidationReport> {
    if c.nrows() != mu_x.len() || c.ncols() != mu_y.len() {
        return Err(Error::Dimension(format!(
            "coupling is {}x{} but measures have {} and {} atoms",
            c.nrows(),
            c.ncols(),
            mu_x.len(),
            mu_y.len()
        )));
    }
    let b = params.bounds(mu_x, mu_y)?;
    let mut out = Vec::new();
    let exact = matches!(params, RelaxParams::Exact);
    let mut side = |marg: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>, x_side: bool| {
        for i in 0..marg.len() {
            let v = marg[i];
            if exact {
                let gap = (v - lo[i]).abs();
                if gap > tol {
                    let code = if x_side { ViolationCode::MarginalX } else { ViolationCode::MarginalY };
                    out.push(Violation { code, indices: vec![i], magnitude: gap });
                }
                continue;
            }
            if v > hi[i] + tol {
                let code = if x_side { ViolationCode::RowUpper } else { ViolationCode::ColUpper };
                out.push(Violation { code, indices: vec![i], magnitude: v - hi[i] });
            }
            if v < lo[i] - tol {
                let code = if x_side { ViolationCode::RowLower } else { ViolationCode::ColLower };
                out.push(Violation { code, indices: vec![i], magnitude: lo[i] - v });
            }
        }
    };
    side(c.marg_x(), &b.row_lower, &b.row_upper, true);
    side(c.marg_y(), &b.col_lower, &b.col_upper, false);
    if !exact && (c.total() - b.total).abs() > tol {
        out.push(Violation {
            code: ViolationCode::TotalMass,
            indices: vec![],
            magnitude: (c.total() - b.total).abs(),
        });
    }
    Ok(ValidationReport::from_violations(out))
}
