//! Pointwise algebra of almost Poisson structures.
//!
//! Conventions used throughout the crate:
//!
//! * `[f, g] = J^{ij} ∂_i f ∂_j g`: the first index of `J` pairs with `f`.
//! * Hamiltonian vector fields are `X_g^i = J^{ij} ∂_j g`, so in canonical
//!   coordinates `q̇ = ∂H/∂p`, `ṗ = −∂H/∂q`. This corresponds to
//!   `i_X Ω = −dH` with `Ω = J⁻¹`.
//! * Rank-3 residuals are stored as `entries[k][i][j]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::field::{PhasePoint, ScalarField};
use crate::tensor::{
    inverse_partial, invert_antisymmetric, AntisymTensorField, Rank3, TensorDifference, Variance,
};

/// Jacobiizer or symplecticizer values at a point.
pub type Rank3Residual = Rank3;

/// Components of a vector field at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldValue(pub DVector<f64>);

impl VectorFieldValue {
    pub fn components(&self) -> &DVector<f64> {
        &self.0
    }

    /// Directional derivative `X(f) = ∂_i f X^i`.
    pub fn apply(&self, grad_f: &DVector<f64>) -> f64 {
        grad_f.dot(&self.0)
    }
}

fn check_point(t: &dyn AntisymTensorField, x: &PhasePoint) -> Result<()> {
    Error::check_dim(t.dim(), x.dim())
}

/// `[f, g](x) = J^{ij}(x) ∂_i f ∂_j g`.
pub fn bracket(
    j: &dyn AntisymTensorField,
    f: &dyn ScalarField,
    g: &dyn ScalarField,
    x: &PhasePoint,
) -> Result<f64> {
    j.variance().require(Variance::Contravariant)?;
    check_point(j, x)?;
    let jm = j.components(x.as_slice())?;
    let df = f.gradient(x.as_slice())?;
    let dg = g.gradient(x.as_slice())?;
    Error::check_dim(jm.nrows(), df.len())?;
    Error::check_dim(jm.nrows(), dg.len())?;
    Ok(df.dot(&(&jm * &dg)))
}

// t[k][i][j] = Σ_l a^{lk} ∂_l b^{ij}
fn contract_first(a: &DMatrix<f64>, db: &[DMatrix<f64>]) -> Rank3 {
    let m = a.nrows();
    let mut t = Rank3::zeros(m);
    for (l, dbl) in db.iter().enumerate() {
        for k in 0..m {
            let alk = a[(l, k)];
            if alk == 0.0 {
                continue;
            }
            for i in 0..m {
                for jj in 0..m {
                    let v = t.get(k, i, jj) + alk * dbl[(i, jj)];
                    t.set(k, i, jj, v);
                }
            }
        }
    }
    t
}

// out[k][i][j] = t[k][i][j] + t[i][j][k] + t[j][k][i]
fn cyclic_sum(t: &Rank3) -> Rank3 {
    Rank3::from_fn(t.dim(), |k, i, j| t.get(k, i, j) + t.get(i, j, k) + t.get(j, k, i))
}

/// Jacobiizer from explicit components and partials.
pub fn jacobiizer_from(j: &DMatrix<f64>, dj: &[DMatrix<f64>]) -> Rank3Residual {
    cyclic_sum(&contract_first(j, dj))
}

/// Symplecticizer `∂_k Ω_{ij} + ∂_i Ω_{jk} + ∂_j Ω_{ki}` from explicit partials.
pub fn symplecticizer_from(d_omega: &[DMatrix<f64>]) -> Rank3Residual {
    let m = d_omega.len();
    let d = Rank3::from_fn(m, |k, i, j| d_omega[k][(i, j)]);
    cyclic_sum(&d)
}

/// `J^{kij} = J^{lk} ∂_l J^{ij} + J^{li} ∂_l J^{jk} + J^{lj} ∂_l J^{ki}`;
/// vanishes everywhere iff `J` is Poisson.
pub fn jacobiizer(j: &dyn AntisymTensorField, x: &PhasePoint) -> Result<Rank3Residual> {
    j.variance().require(Variance::Contravariant)?;
    check_point(j, x)?;
    let jm = j.components(x.as_slice())?;
    let dj = j.partials(x.as_slice())?;
    Ok(jacobiizer_from(&jm, &dj))
}

/// `Ω_{kij} = ∂_k Ω_{ij} + ∂_i Ω_{jk} + ∂_j Ω_{ki}`; vanishes iff `dΩ = 0`.
pub fn symplecticizer(omega: &dyn AntisymTensorField, x: &PhasePoint) -> Result<Rank3Residual> {
    omega.variance().require(Variance::Covariant)?;
    check_point(omega, x)?;
    Ok(symplecticizer_from(&omega.partials(x.as_slice())?))
}

/// Matrix inverse of `T(x)`; conceptually flips the variance.
pub fn invert(t: &dyn AntisymTensorField, x: &PhasePoint) -> Result<DMatrix<f64>> {
    check_point(t, x)?;
    invert_antisymmetric(&t.components(x.as_slice())?)
}

// out[m][n][p] = Σ t[k][i][j] a[k][m] a[i][n] a[j][p]
fn contract_all(t: &Rank3, a: &DMatrix<f64>) -> Rank3 {
    let d = t.dim();
    let step1 = Rank3::from_fn(d, |m, i, j| (0..d).map(|k| t.get(k, i, j) * a[(k, m)]).sum());
    let step2 = Rank3::from_fn(d, |m, n, j| (0..d).map(|i| step1.get(m, i, j) * a[(i, n)]).sum());
    Rank3::from_fn(d, |m, n, p| (0..d).map(|j| step2.get(m, n, j) * a[(j, p)]).sum())
}

/// Largest entry of `Ω_{kij} J^{km} J^{in} J^{jp} − J^{mnp}` with `Ω = J⁻¹`.
///
/// The `Ω` partials come from `∂_k Ω_{ij} = Ω_{jn} ∂_k J^{nl} Ω_{li}` while
/// `J^{mnp}` uses the partials of `J` directly, so the two sides are computed
/// independently. The identity holds for every nondegenerate field.
pub fn theorem23_residual(j: &dyn AntisymTensorField, x: &PhasePoint) -> Result<f64> {
    j.variance().require(Variance::Contravariant)?;
    check_point(j, x)?;
    let jm = j.components(x.as_slice())?;
    let dj = j.partials(x.as_slice())?;
    let omega = invert_antisymmetric(&jm)?;
    let d_omega: Vec<_> = dj.iter().map(|d| inverse_partial(&omega, d)).collect();
    let lhs = contract_all(&symplecticizer_from(&d_omega), &jm);
    let rhs = jacobiizer_from(&jm, &dj);
    Ok(lhs.zip_with(&rhs, |a, b| a - b).max_abs())
}

/// Converse direction: largest entry of `J^{mnp} Ω_{mk} Ω_{ni} Ω_{pj} − Ω_{kij}`
/// for a covariant `Ω`, with `J = Ω⁻¹` and `∂_k J^{ij} = J^{jn} ∂_k Ω_{nl} J^{li}`.
pub fn theorem23_converse_residual(omega: &dyn AntisymTensorField, x: &PhasePoint) -> Result<f64> {
    omega.variance().require(Variance::Covariant)?;
    check_point(omega, x)?;
    let om = omega.components(x.as_slice())?;
    let d_omega = omega.partials(x.as_slice())?;
    let jm = invert_antisymmetric(&om)?;
    let dj: Vec<_> = d_omega.iter().map(|d| inverse_partial(&jm, d)).collect();
    let lhs = contract_all(&jacobiizer_from(&jm, &dj), &om);
    let rhs = symplecticizer_from(&d_omega);
    Ok(lhs.zip_with(&rhs, |a, b| a - b).max_abs())
}

/// `K = J − ω`, so that `J = ω + K`.
pub fn decompose<A, B>(j: A, omega: B) -> Result<TensorDifference<A, B>>
where
    A: AntisymTensorField,
    B: AntisymTensorField,
{
    TensorDifference::new(j, omega)
}

/// Cross terms of the Jacobiizer of `ω + K`:
/// `ω^{lk} ∂_l K^{ij} + K^{lk} ∂_l ω^{ij}` summed cyclically over `(k, i, j)`.
/// When `ω` and `K` are both Poisson, `ω + K` is Poisson iff this vanishes.
pub fn coupling_residual(
    omega: &dyn AntisymTensorField,
    k: &dyn AntisymTensorField,
    x: &PhasePoint,
) -> Result<Rank3Residual> {
    omega.variance().require(Variance::Contravariant)?;
    k.variance().require(Variance::Contravariant)?;
    Error::check_dim(omega.dim(), k.dim())?;
    check_point(omega, x)?;
    let (om, dom) = (omega.components(x.as_slice())?, omega.partials(x.as_slice())?);
    let (km, dk) = (k.components(x.as_slice())?, k.partials(x.as_slice())?);
    let mut t = contract_first(&om, &dk);
    let s = contract_first(&km, &dom);
    t = t.zip_with(&s, |a, b| a + b);
    Ok(cyclic_sum(&t))
}

/// `X_g^i = J^{ij} ∂_j g`.
pub fn ham_vector_field(
    j: &dyn AntisymTensorField,
    g: &dyn ScalarField,
    x: &PhasePoint,
) -> Result<VectorFieldValue> {
    j.variance().require(Variance::Contravariant)?;
    check_point(j, x)?;
    let jm = j.components(x.as_slice())?;
    let dg = g.gradient(x.as_slice())?;
    Error::check_dim(jm.nrows(), dg.len())?;
    Ok(VectorFieldValue(jm * dg))
}
