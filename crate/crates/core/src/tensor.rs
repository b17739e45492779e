//! Point-dependent antisymmetric rank-2 tensors and rank-3 arrays.
//!
//! A field carries its components `T(x)` and the exact partials `∂_k T(x)`.
//! Contravariant fields are bracket tensors `J^{ij}`; covariant fields are
//! 2-forms `Ω_{ij}` with `Ω = ½ Ω_{ij} dx^i ∧ dx^j`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::{ExprField, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variance {
    Contravariant,
    Covariant,
}

impl Variance {
    pub fn flipped(self) -> Variance {
        match self {
            Variance::Contravariant => Variance::Covariant,
            Variance::Covariant => Variance::Contravariant,
        }
    }

    pub(crate) fn require(self, expected: Variance) -> Result<()> {
        if self == expected {
            Ok(())
        } else {
            Err(Error::WrongVariance {
                expected: match expected {
                    Variance::Contravariant => "contravariant",
                    Variance::Covariant => "covariant",
                },
            })
        }
    }
}

pub trait AntisymTensorField {
    fn dim(&self) -> usize;
    fn variance(&self) -> Variance;
    /// Exactly antisymmetric `m×m` components at `x`.
    fn components(&self, x: &[f64]) -> Result<DMatrix<f64>>;
    /// `∂ T / ∂ x^k` at `x`.
    fn partial(&self, x: &[f64], k: usize) -> Result<DMatrix<f64>>;

    fn partials(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        (0..self.dim()).map(|k| self.partial(x, k)).collect()
    }
}

macro_rules! forward_tensor {
    ($($ty:ty),*) => {$(
        impl<T: AntisymTensorField + ?Sized> AntisymTensorField for $ty {
            fn dim(&self) -> usize {
                (**self).dim()
            }
            fn variance(&self) -> Variance {
                (**self).variance()
            }
            fn components(&self, x: &[f64]) -> Result<DMatrix<f64>> {
                (**self).components(x)
            }
            fn partial(&self, x: &[f64], k: usize) -> Result<DMatrix<f64>> {
                (**self).partial(x, k)
            }
            fn partials(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
                (**self).partials(x)
            }
        }
    )*};
}

forward_tensor!(&T, Arc<T>, Box<T>);

/// Which part of a split bracket tensor `J = ω + K` a field represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    /// `J = ω + K`.
    Full,
    /// The constant canonical tensor `ω`.
    Canonical,
    /// The remainder `K = J − ω`.
    Almost,
}

/// `½ (A − Aᵀ)`.
pub fn antisymmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a - a.transpose()) * 0.5
}

/// Canonical Poisson tensor `[[0, I], [−I, 0]]` in `(q, p)` ordering.
pub fn canonical_poisson(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

/// Canonical 2-form `dp ∧ dq`, the inverse of [`canonical_poisson`].
pub fn canonical_form(n: usize) -> DMatrix<f64> {
    -canonical_poisson(n)
}

/// Inverse of an antisymmetric matrix with the relative determinant test
/// `|det T| > 1e-12 · (max |T_ij|)^m`.
pub fn invert_antisymmetric(t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = t.nrows();
    if m % 2 == 1 {
        return Err(Error::OddDimension(m));
    }
    let scale = t.amax();
    let det = t.clone().lu().determinant();
    let threshold = 1e-12 * scale.powi(m as i32);
    if !(det.abs() > threshold) {
        return Err(Error::Degenerate {
            det: det.abs(),
            threshold,
        });
    }
    let inv = t
        .clone()
        .try_inverse()
        .ok_or(Error::Degenerate { det: det.abs(), threshold })?;
    Ok(antisymmetrize(&inv))
}

/// Dense `m×m×m` array indexed `[a][b][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank3 {
    dim: usize,
    data: Vec<f64>,
}

impl Rank3 {
    pub fn zeros(dim: usize) -> Rank3 {
        Rank3 {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Rank3 {
        let mut r = Rank3::zeros(dim);
        for a in 0..dim {
            for b in 0..dim {
                for c in 0..dim {
                    r.data[(a * dim + b) * dim + c] = f(a, b, c);
                }
            }
        }
        r
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.dim + b) * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, c: usize, v: f64) {
        self.data[(a * self.dim + b) * self.dim + c] = v;
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest deviation from total antisymmetry over all index pairs.
    pub fn antisymmetry_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    let v = self.get(a, b, c);
                    worst = worst
                        .max((v + self.get(b, a, c)).abs())
                        .max((v + self.get(a, c, b)).abs())
                        .max((v + self.get(c, b, a)).abs());
                }
            }
        }
        worst
    }

    pub fn zip_with(&self, other: &Rank3, f: impl Fn(f64, f64) -> f64) -> Rank3 {
        assert_eq!(self.dim, other.dim);
        Rank3 {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }
}

/// Constant-coefficient tensor field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantTensor {
    variance: Variance,
    matrix: DMatrix<f64>,
}

impl ConstantTensor {
    pub fn new(variance: Variance, matrix: DMatrix<f64>) -> Result<ConstantTensor> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        Ok(ConstantTensor {
            variance,
            matrix: antisymmetrize(&matrix),
        })
    }

    pub fn canonical_poisson(n: usize) -> ConstantTensor {
        ConstantTensor {
            variance: Variance::Contravariant,
            matrix: canonical_poisson(n),
        }
    }

    pub fn canonical_form(n: usize) -> ConstantTensor {
        ConstantTensor {
            variance: Variance::Covariant,
            matrix: canonical_form(n),
        }
    }

    pub fn zero(variance: Variance, dim: usize) -> ConstantTensor {
        ConstantTensor {
            variance,
            matrix: DMatrix::zeros(dim, dim),
        }
    }
}

impl AntisymTensorField for ConstantTensor {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn variance(&self) -> Variance {
        self.variance
    }
    fn components(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Error::check_dim(self.dim(), x.len())?;
        Ok(self.matrix.clone())
    }
    fn partial(&self, x: &[f64], _k: usize) -> Result<DMatrix<f64>> {
        Error::check_dim(self.dim(), x.len())?;
        Ok(DMatrix::zeros(self.dim(), self.dim()))
    }
}

/// Tensor field whose strictly-upper entries are expressions; the lower
/// triangle is the reflection, so antisymmetry holds exactly.
#[derive(Debug, Clone)]
pub struct ExprTensorField {
    variance: Variance,
    dim: usize,
    // (i, j, entry) for i < j, zero entries omitted
    upper: Vec<(usize, usize, ExprField)>,
}

impl ExprTensorField {
    pub fn new<S: AsRef<str>>(
        variance: Variance,
        vars: &[S],
        mut entry: impl FnMut(usize, usize) -> Expr,
    ) -> Result<ExprTensorField> {
        let dim = vars.len();
        let mut upper = Vec::new();
        for i in 0..dim {
            for j in i + 1..dim {
                let e = entry(i, j);
                if !e.is_zero() {
                    upper.push((i, j, ExprField::new(e, vars)?));
                }
            }
        }
        Ok(ExprTensorField { variance, dim, upper })
    }
}

impl AntisymTensorField for ExprTensorField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn variance(&self) -> Variance {
        self.variance
    }
    fn components(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Error::check_dim(self.dim, x.len())?;
        let mut t = DMatrix::zeros(self.dim, self.dim);
        for (i, j, f) in &self.upper {
            let v = f.value(x)?;
            t[(*i, *j)] = v;
            t[(*j, *i)] = -v;
        }
        Ok(t)
    }
    fn partial(&self, x: &[f64], k: usize) -> Result<DMatrix<f64>> {
        Error::check_dim(self.dim, x.len())?;
        let mut t = DMatrix::zeros(self.dim, self.dim);
        for (i, j, f) in &self.upper {
            let v = f.partial(x, k)?;
            t[(*i, *j)] = v;
            t[(*j, *i)] = -v;
        }
        Ok(t)
    }
}

fn same_shape(a: &dyn AntisymTensorField, b: &dyn AntisymTensorField) -> Result<()> {
    Error::check_dim(a.dim(), b.dim())?;
    b.variance().require(a.variance())
}

/// Pointwise sum `A + B`.
#[derive(Debug, Clone)]
pub struct TensorSum<A, B> {
    a: A,
    b: B,
}

impl<A: AntisymTensorField, B: AntisymTensorField> TensorSum<A, B> {
    pub fn new(a: A, b: B) -> Result<Self> {
        same_shape(&a, &b)?;
        Ok(TensorSum { a, b })
    }
}

impl<A: AntisymTensorField, B: AntisymTensorField> AntisymTensorField for TensorSum<A, B> {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn variance(&self) -> Variance {
        self.a.variance()
    }
    fn components(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.a.components(x)? + self.b.components(x)?)
    }
    fn partial(&self, x: &[f64], k: usize) -> Result<DMatrix<f64>> {
        Ok(self.a.partial(x, k)? + self.b.partial(x, k)?)
    }
}

/// Pointwise difference `A − B`.
#[derive(Debug, Clone)]
pub struct TensorDifference<A, B> {
    a: A,
    b: B,
}

impl<A: AntisymTensorField, B: AntisymTensorField> TensorDifference<A, B> {
    pub fn new(a: A, b: B) -> Result<Self> {
        same_shape(&a, &b)?;
        Ok(TensorDifference { a, b })
    }
}

impl<A: AntisymTensorField, B: AntisymTensorField> AntisymTensorField for TensorDifference<A, B> {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn variance(&self) -> Variance {
        self.a.variance()
    }
    fn components(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.a.components(x)? - self.b.components(x)?)
    }
    fn partial(&self, x: &[f64], k: usize) -> Result<DMatrix<f64>> {
        Ok(self.a.partial(x, k)? - self.b.partial(x, k)?)
    }
}

/// Matrix inverse of a nondegenerate field, with flipped variance.
///
/// Partials use `∂_k T⁻¹_{ij} = T⁻¹_{jn} ∂_k T^{nl} T⁻¹_{li}`, which is
/// `−T⁻¹ ∂_k T T⁻¹` rewritten with antisymmetry.
#[derive(Debug, Clone)]
pub struct InverseTensor<T> {
    inner: T,
}

impl<T: AntisymTensorField> InverseTensor<T> {
    pub fn new(inner: T) -> Result<Self> {
        if inner.dim() % 2 == 1 {
            return Err(Error::OddDimension(inner.dim()));
        }
        Ok(InverseTensor { inner })
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }
}

pub(crate) fn inverse_partial(inv: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
    let m = inv.nrows();
    // (inv · d · inv)ᵀ, entry (i, j) = inv_{jn} d_{nl} inv_{li}
    let prod = inv * d * inv;
    DMatrix::from_fn(m, m, |i, j| prod[(j, i)])
}

impl<T: AntisymTensorField> AntisymTensorField for InverseTensor<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn variance(&self) -> Variance {
        self.inner.variance().flipped()
    }
    fn components(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        invert_antisymmetric(&self.inner.components(x)?)
    }
    fn partial(&self, x: &[f64], k: usize) -> Result<DMatrix<f64>> {
        let inv = self.components(x)?;
        Ok(inverse_partial(&inv, &self.inner.partial(x, k)?))
    }
    fn partials(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let inv = self.components(x)?;
        self.inner
            .partials(x)?
            .iter()
            .map(|d| Ok(inverse_partial(&inv, d)))
            .collect()
    }
}
