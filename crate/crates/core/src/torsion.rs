//! Affine spaces with metric and torsion.
//!
//! Conventions:
//!
//! * Rank-3 arrays are `S[μ][ν][σ] = S_{μν}^σ` and `Γ[μ][ν][σ] = Γ^μ_{νσ}`.
//! * The Lagrangian is `L = g_{μν} q̇^μ q̇^ν − V` without a factor ½, so
//!   `p = 2 g q̇` and `H = ¼ g^{μν} p_μ p_ν + V`.
//! * The bracket tensor on `T*M` is `J = [[0, I], [−I, −2 S^σ p_σ]]`, which
//!   gives `ṗ_μ = −∂H/∂q^μ − 2 S_{μν}^σ p_σ ∂H/∂p_ν` through `X^i = J^{ij} ∂_j H`.
//!   The momentum bracket is therefore `⟦p_μ, p_ν⟧ = −2 S_{μν}^σ p_σ`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::{Chart, ExprField, ScalarField};
use crate::tensor::{canonical_poisson, AntisymTensorField, Part, Rank3, Variance};

/// Metric, torsion and potential on a chart.
pub trait AffineGeometry {
    fn dim(&self) -> usize;
    fn check_chart(&self, q: &[f64]) -> Result<()>;
    fn metric(&self, q: &[f64]) -> Result<DMatrix<f64>>;
    /// `∂g/∂q^l` for each `l`.
    fn metric_partials(&self, q: &[f64]) -> Result<Vec<DMatrix<f64>>>;
    /// `S[μ][ν][σ] = S_{μν}^σ`, antisymmetric in `μ, ν`.
    fn torsion(&self, q: &[f64]) -> Result<Rank3>;
    fn torsion_partials(&self, q: &[f64]) -> Result<Vec<Rank3>>;
    fn potential(&self, q: &[f64]) -> Result<f64>;
    fn potential_gradient(&self, q: &[f64]) -> Result<DVector<f64>>;
}

/// One torsion component `S_{μν}^σ`; `S_{νμ}^σ` is implied.
#[derive(Debug, Clone, PartialEq)]
pub struct TorsionEntry {
    pub mu: usize,
    pub nu: usize,
    pub sigma: usize,
    pub value: Expr,
}

/// Affine space given by expression-valued metric, torsion and potential.
#[derive(Debug, Clone)]
pub struct AffineSpace {
    chart: Chart,
    // row-major n×n
    metric: Vec<ExprField>,
    // (μ, ν, σ) with μ < ν
    torsion: Vec<(usize, usize, usize, ExprField)>,
    potential: ExprField,
}

impl AffineSpace {
    pub fn new(
        names: Vec<String>,
        metric: Vec<Vec<Expr>>,
        torsion: Vec<TorsionEntry>,
        potential: Expr,
    ) -> Result<AffineSpace> {
        let n = names.len();
        if n == 0 {
            return Err(Error::InvalidParameter("an affine space needs coordinates".into()));
        }
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(Error::InvalidParameter(format!("duplicate coordinate name `{a}`")));
            }
        }
        if metric.len() != n || metric.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidParameter(format!("metric must be {n}×{n}")));
        }
        let mut mf = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                if metric[i][j] != metric[j][i] {
                    return Err(Error::InvalidParameter(format!(
                        "metric is not symmetric at ({i}, {j})"
                    )));
                }
                mf.push(ExprField::new(metric[i][j].clone(), &names)?);
            }
        }
        let mut tf: Vec<(usize, usize, usize, ExprField)> = Vec::new();
        for e in torsion {
            if e.mu >= n || e.nu >= n || e.sigma >= n {
                return Err(Error::InvalidParameter(format!(
                    "torsion index ({}, {}, {}) out of range",
                    e.mu, e.nu, e.sigma
                )));
            }
            if e.mu == e.nu {
                if e.value.is_zero() {
                    continue;
                }
                return Err(Error::InvalidParameter(format!(
                    "torsion S_{{{0}{0}}}^{1} must vanish by antisymmetry",
                    e.mu, e.sigma
                )));
            }
            let (mu, nu, value) =
                if e.mu < e.nu { (e.mu, e.nu, e.value) } else { (e.nu, e.mu, -e.value) };
            if tf.iter().any(|t| (t.0, t.1, t.2) == (mu, nu, e.sigma)) {
                return Err(Error::InvalidParameter(format!(
                    "torsion component ({mu}, {nu}, {}) given twice",
                    e.sigma
                )));
            }
            if !value.is_zero() {
                tf.push((mu, nu, e.sigma, ExprField::new(value, &names)?));
            }
        }
        let potential = ExprField::new(potential, &names)?;
        Ok(AffineSpace {
            chart: Chart::new(&names),
            metric: mf,
            torsion: tf,
            potential,
        })
    }

    pub fn with_bound(mut self, name: &str, lo: f64, hi: f64) -> Result<AffineSpace> {
        self.chart = self.chart.with_bound(name, lo, hi)?;
        Ok(self)
    }

    pub fn names(&self) -> &[String] {
        self.chart.names()
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn has_torsion(&self) -> bool {
        !self.torsion.is_empty()
    }

    /// The same space with the torsion removed.
    pub fn without_torsion(&self) -> AffineSpace {
        AffineSpace {
            torsion: Vec::new(),
            ..self.clone()
        }
    }
}

impl AffineGeometry for AffineSpace {
    fn dim(&self) -> usize {
        self.chart.names().len()
    }

    fn check_chart(&self, q: &[f64]) -> Result<()> {
        self.chart.check(q)
    }

    fn metric(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        self.check_chart(q)?;
        let n = self.dim();
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] = self.metric[i * n + j].value(q)?;
            }
        }
        Ok(g)
    }

    fn metric_partials(&self, q: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        self.check_chart(q)?;
        let n = self.dim();
        (0..n)
            .map(|l| {
                let mut d = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        d[(i, j)] = self.metric[i * n + j].partial(q, l)?;
                    }
                }
                Ok(d)
            })
            .collect()
    }

    fn torsion(&self, q: &[f64]) -> Result<Rank3> {
        self.check_chart(q)?;
        let mut s = Rank3::zeros(self.dim());
        for (mu, nu, sigma, f) in &self.torsion {
            let v = f.value(q)?;
            s.set(*mu, *nu, *sigma, v);
            s.set(*nu, *mu, *sigma, -v);
        }
        Ok(s)
    }

    fn torsion_partials(&self, q: &[f64]) -> Result<Vec<Rank3>> {
        self.check_chart(q)?;
        (0..self.dim())
            .map(|l| {
                let mut s = Rank3::zeros(self.dim());
                for (mu, nu, sigma, f) in &self.torsion {
                    let v = f.partial(q, l)?;
                    s.set(*mu, *nu, *sigma, v);
                    s.set(*nu, *mu, *sigma, -v);
                }
                Ok(s)
            })
            .collect()
    }

    fn potential(&self, q: &[f64]) -> Result<f64> {
        self.check_chart(q)?;
        self.potential.value(q)
    }

    fn potential_gradient(&self, q: &[f64]) -> Result<DVector<f64>> {
        self.check_chart(q)?;
        self.potential.gradient(q)
    }
}

fn metric_inverse(space: &dyn AffineGeometry, q: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let g = space.metric(q)?;
    let chol = Cholesky::new(g.clone()).ok_or(Error::NotPositiveDefinite("metric"))?;
    let inv = chol.inverse();
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("metric"));
    }
    Ok((g, inv))
}

/// `Γ̄^μ_{νσ} = ½ g^{μλ} (∂_σ g_{νλ} + ∂_ν g_{σλ} − ∂_λ g_{νσ})`.
pub fn christoffel(space: &dyn AffineGeometry, q: &[f64]) -> Result<Rank3> {
    let (_, ginv) = metric_inverse(space, q)?;
    let dg = space.metric_partials(q)?;
    let n = space.dim();
    // lowered[λ][ν][σ]
    let lowered =
        Rank3::from_fn(n, |l, nu, s| dg[s][(nu, l)] + dg[nu][(s, l)] - dg[l][(nu, s)]);
    Ok(Rank3::from_fn(n, |mu, nu, s| {
        0.5 * (0..n).map(|l| ginv[(mu, l)] * lowered.get(l, nu, s)).sum::<f64>()
    }))
}

/// Metric-compatible connection with torsion `S`:
/// `Γ^λ_{νρ} = Γ̄^λ_{νρ} + S_{νρ}^λ + g^{λμ} (S_{μν}^σ g_{σρ} + S_{μρ}^σ g_{σν})`.
///
/// Its antisymmetric part `½ (Γ^λ_{νρ} − Γ^λ_{ρν})` is exactly `S_{νρ}^λ`,
/// and its autoparallels coincide with the Hamiltonian flow of
/// [`hamiltonian_rhs`].
pub fn full_connection(space: &dyn AffineGeometry, q: &[f64]) -> Result<Rank3> {
    let (g, ginv) = metric_inverse(space, q)?;
    let bar = christoffel(space, q)?;
    let s = space.torsion(q)?;
    let n = space.dim();
    // t[μ][ν][ρ] = S_{μν}^σ g_{σρ}
    let t = Rank3::from_fn(n, |mu, nu, rho| (0..n).map(|sg| s.get(mu, nu, sg) * g[(sg, rho)]).sum());
    Ok(Rank3::from_fn(n, |l, nu, rho| {
        let sym: f64 = (0..n).map(|mu| ginv[(l, mu)] * (t.get(mu, nu, rho) + t.get(mu, rho, nu))).sum();
        bar.get(l, nu, rho) + s.get(nu, rho, l) + sym
    }))
}

fn quadratic(conn: &Rank3, v: &DVector<f64>) -> DVector<f64> {
    let n = v.len();
    DVector::from_fn(n, |mu, _| {
        let mut acc = 0.0;
        for nu in 0..n {
            for s in 0..n {
                acc += conn.get(mu, nu, s) * v[nu] * v[s];
            }
        }
        acc
    })
}

fn potential_acceleration(space: &dyn AffineGeometry, q: &[f64], ginv: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(ginv * space.potential_gradient(q)? * -0.5)
}

/// `q̈^μ = −Γ^μ_{νσ} q̇^ν q̇^σ − ½ g^{μν} ∂_ν V`.
pub fn autoparallel_rhs(space: &dyn AffineGeometry, q: &[f64], v: &[f64]) -> Result<DVector<f64>> {
    Error::check_dim(space.dim(), v.len())?;
    let (_, ginv) = metric_inverse(space, q)?;
    let conn = full_connection(space, q)?;
    Ok(-quadratic(&conn, &DVector::from_column_slice(v)) + potential_acceleration(space, q, &ginv)?)
}

/// `q̈^μ = −Γ̄^μ_{νσ} q̇^ν q̇^σ − ½ g^{μν} ∂_ν V`.
pub fn geodesic_rhs(space: &dyn AffineGeometry, q: &[f64], v: &[f64]) -> Result<DVector<f64>> {
    Error::check_dim(space.dim(), v.len())?;
    let (_, ginv) = metric_inverse(space, q)?;
    let conn = christoffel(space, q)?;
    Ok(-quadratic(&conn, &DVector::from_column_slice(v)) + potential_acceleration(space, q, &ginv)?)
}

fn split_state(space: &dyn AffineGeometry, x: &[f64]) -> Result<(usize, Vec<f64>, Vec<f64>)> {
    let n = space.dim();
    Error::check_dim(2 * n, x.len())?;
    Ok((n, x[..n].to_vec(), x[n..].to_vec()))
}

/// First-order form of [`autoparallel_rhs`] on `(q, q̇)`.
pub fn autoparallel_vector_field(space: &dyn AffineGeometry, x: &[f64]) -> Result<DVector<f64>> {
    let (n, q, v) = split_state(space, x)?;
    let a = autoparallel_rhs(space, &q, &v)?;
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from_slice(&v);
    out.rows_mut(n, n).copy_from(&a);
    Ok(out)
}

/// First-order form of [`geodesic_rhs`] on `(q, q̇)`.
pub fn geodesic_vector_field(space: &dyn AffineGeometry, x: &[f64]) -> Result<DVector<f64>> {
    let (n, q, v) = split_state(space, x)?;
    let a = geodesic_rhs(space, &q, &v)?;
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from_slice(&v);
    out.rows_mut(n, n).copy_from(&a);
    Ok(out)
}

/// `p = 2 g q̇`.
pub fn legendre(space: &dyn AffineGeometry, q: &[f64], v: &[f64]) -> Result<DVector<f64>> {
    Error::check_dim(space.dim(), v.len())?;
    Ok(space.metric(q)? * DVector::from_column_slice(v) * 2.0)
}

/// `q̇ = ½ g⁻¹ p`.
pub fn legendre_inverse(space: &dyn AffineGeometry, q: &[f64], p: &[f64]) -> Result<DVector<f64>> {
    Error::check_dim(space.dim(), p.len())?;
    let (_, ginv) = metric_inverse(space, q)?;
    Ok(ginv * DVector::from_column_slice(p) * 0.5)
}

/// `H = ¼ g^{μν} p_μ p_ν + V`.
pub fn hamiltonian(space: &dyn AffineGeometry, q: &[f64], p: &[f64]) -> Result<f64> {
    Error::check_dim(space.dim(), p.len())?;
    let (_, ginv) = metric_inverse(space, q)?;
    let p = DVector::from_column_slice(p);
    Ok(0.25 * p.dot(&(ginv * &p)) + space.potential(q)?)
}

/// `(∂H/∂q, ∂H/∂p)`.
pub fn hamiltonian_gradient(
    space: &dyn AffineGeometry,
    q: &[f64],
    p: &[f64],
) -> Result<(DVector<f64>, DVector<f64>)> {
    Error::check_dim(space.dim(), p.len())?;
    let (_, ginv) = metric_inverse(space, q)?;
    let dg = space.metric_partials(q)?;
    let dv = space.potential_gradient(q)?;
    let w = &ginv * DVector::from_column_slice(p);
    let dq = DVector::from_fn(space.dim(), |l, _| -0.25 * w.dot(&(&dg[l] * &w)) + dv[l]);
    Ok((dq, w * 0.5))
}

/// `H` as a scalar field on `(q, p)`.
pub fn hamiltonian_field(space: &dyn AffineGeometry) -> TorsionHamiltonian<'_> {
    TorsionHamiltonian { space }
}

/// `−2 S_{μν}^σ c_σ`.
fn contract_torsion(s: &Rank3, c: &[f64]) -> DMatrix<f64> {
    let n = s.dim();
    DMatrix::from_fn(n, n, |mu, nu| -2.0 * (0..n).map(|sg| s.get(mu, nu, sg) * c[sg]).sum::<f64>())
}

fn phase_rhs(space: &dyn AffineGeometry, x: &[f64], part: Part) -> Result<DVector<f64>> {
    let (n, q, p) = split_state(space, x)?;
    let (dq, dp) = hamiltonian_gradient(space, &q, &p)?;
    let mut out = DVector::zeros(2 * n);
    if part != Part::Almost {
        out.rows_mut(0, n).copy_from(&dp);
        out.rows_mut(n, n).copy_from(&(-dq));
    }
    if part != Part::Canonical {
        let k = contract_torsion(&space.torsion(&q)?, &p);
        let mut tail = out.rows_mut(n, n);
        tail += k * dp;
    }
    Ok(out)
}

/// `(q̇, ṗ)` with `q̇ = ∂H/∂p`, `ṗ_μ = −∂H/∂q^μ − 2 S_{μν}^σ p_σ ∂H/∂p_ν`.
pub fn hamiltonian_rhs(
    space: &dyn AffineGeometry,
    q: &[f64],
    p: &[f64],
) -> Result<(DVector<f64>, DVector<f64>)> {
    let x: Vec<f64> = q.iter().chain(p).copied().collect();
    let out = phase_rhs(space, &x, Part::Full)?;
    let n = space.dim();
    Ok((out.rows(0, n).into_owned(), out.rows(n, n).into_owned()))
}

/// Full Hamiltonian vector field on the stacked state `(q, p)`.
pub fn vector_field(space: &dyn AffineGeometry, x: &[f64]) -> Result<DVector<f64>> {
    phase_rhs(space, x, Part::Full)
}

/// Canonical part of [`vector_field`].
pub fn canonical_vector_field(space: &dyn AffineGeometry, x: &[f64]) -> Result<DVector<f64>> {
    phase_rhs(space, x, Part::Canonical)
}

/// Torsion part `(0, −2 S p ∂H/∂p)` of [`vector_field`].
pub fn almost_vector_field(space: &dyn AffineGeometry, x: &[f64]) -> Result<DVector<f64>> {
    phase_rhs(space, x, Part::Almost)
}

/// `⟦p_μ, p_ν⟧ = −2 S_{μν}^σ p_σ`.
pub fn momentum_bracket(
    space: &dyn AffineGeometry,
    q: &[f64],
    p: &[f64],
    mu: usize,
    nu: usize,
) -> Result<f64> {
    Error::check_dim(space.dim(), p.len())?;
    if mu >= space.dim() || nu >= space.dim() {
        return Err(Error::InvalidParameter(format!("momentum index out of range 0..{}", space.dim())));
    }
    Ok(contract_torsion(&space.torsion(q)?, p)[(mu, nu)])
}

/// Canonical and torsion parts of `[f, h]` at `(q, p)`:
/// `{f, h} = ∂_q f ∂_p h − ∂_p f ∂_q h` and `⟦f, h⟧ = −2 S_{μν}^σ p_σ ∂f/∂p_μ ∂h/∂p_ν`.
pub fn torsion_bracket(
    space: &dyn AffineGeometry,
    q: &[f64],
    p: &[f64],
    f: &dyn ScalarField,
    h: &dyn ScalarField,
) -> Result<(f64, f64)> {
    let n = space.dim();
    Error::check_dim(n, q.len())?;
    Error::check_dim(n, p.len())?;
    let x: Vec<f64> = q.iter().chain(p).copied().collect();
    let df = f.gradient(&x)?;
    let dh = h.gradient(&x)?;
    Error::check_dim(2 * n, df.len())?;
    Error::check_dim(2 * n, dh.len())?;
    let (fq, fp) = (df.rows(0, n), df.rows(n, n));
    let (hq, hp) = (dh.rows(0, n), dh.rows(n, n));
    let canonical = fq.dot(&hp) - fp.dot(&hq);
    let k = contract_torsion(&space.torsion(q)?, p);
    let almost = fp.dot(&(k * hp));
    Ok((canonical, almost))
}

/// `C^σ[ν][ρ][λ] = S_{μν}^σ S_{ρλ}^μ + S_{μρ}^σ S_{λν}^μ + S_{μλ}^σ S_{νρ}^μ`,
/// indexed by `σ`. All vanish iff `S` are structure constants of a Lie algebra.
pub fn structure_constants(space: &dyn AffineGeometry, q: &[f64]) -> Result<Vec<Rank3>> {
    let s = space.torsion(q)?;
    let n = s.dim();
    Ok((0..n)
        .map(|sg| {
            Rank3::from_fn(n, |nu, rho, l| {
                (0..n)
                    .map(|mu| {
                        s.get(mu, nu, sg) * s.get(rho, l, mu)
                            + s.get(mu, rho, sg) * s.get(l, nu, mu)
                            + s.get(mu, l, sg) * s.get(nu, rho, mu)
                    })
                    .sum()
            })
        })
        .collect())
}

/// Largest entry of [`structure_constants`].
pub fn structure_constant_condition(space: &dyn AffineGeometry, q: &[f64]) -> Result<f64> {
    Ok(structure_constants(space, q)?.iter().map(Rank3::max_abs).fold(0.0, f64::max))
}

/// `H` on `(q, p)`.
#[derive(Clone, Copy)]
pub struct TorsionHamiltonian<'a> {
    space: &'a dyn AffineGeometry,
}

impl ScalarField for TorsionHamiltonian<'_> {
    fn dim(&self) -> usize {
        2 * self.space.dim()
    }
    fn value(&self, x: &[f64]) -> Result<f64> {
        let (_, q, p) = split_state(self.space, x)?;
        hamiltonian(self.space, &q, &p)
    }
    fn gradient(&self, x: &[f64]) -> Result<DVector<f64>> {
        let (n, q, p) = split_state(self.space, x)?;
        let (dq, dp) = hamiltonian_gradient(self.space, &q, &p)?;
        let mut g = DVector::zeros(2 * n);
        g.rows_mut(0, n).copy_from(&dq);
        g.rows_mut(n, n).copy_from(&dp);
        Ok(g)
    }
}

fn embed(n: usize, block: &DMatrix<f64>, at: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((at, at), (n, n)).copy_from(block);
    m
}

fn block_partials(space: &dyn AffineGeometry, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let (n, q, p) = split_state(space, x)?;
    let s = space.torsion(&q)?;
    let ds = space.torsion_partials(&q)?;
    let mut out: Vec<DMatrix<f64>> = ds.iter().map(|d| contract_torsion(d, &p)).collect();
    for l in 0..n {
        out.push(DMatrix::from_fn(n, n, |mu, nu| -2.0 * s.get(mu, nu, l)));
    }
    Ok(out)
}

/// `J = [[0, I], [−I, −2 S^σ p_σ]]` or one of its parts.
#[derive(Clone, Copy)]
pub struct TorsionTensor<'a> {
    space: &'a dyn AffineGeometry,
    part: Part,
}

impl<'a> TorsionTensor<'a> {
    pub fn new(space: &'a dyn AffineGeometry, part: Part) -> TorsionTensor<'a> {
        TorsionTensor { space, part }
    }
}

impl AntisymTensorField for TorsionTensor<'_> {
    fn dim(&self) -> usize {
        2 * self.space.dim()
    }
    fn variance(&self) -> Variance {
        Variance::Contravariant
    }
    fn components(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let (n, q, p) = split_state(self.space, x)?;
        let s = self.space.torsion(&q)?;
        Ok(match self.part {
            Part::Canonical => canonical_poisson(n),
            Part::Almost => embed(n, &contract_torsion(&s, &p), n),
            Part::Full => canonical_poisson(n) + embed(n, &contract_torsion(&s, &p), n),
        })
    }
    fn partial(&self, x: &[f64], k: usize) -> Result<DMatrix<f64>> {
        let mut all = self.partials(x)?;
        if k >= all.len() {
            return Err(Error::DimensionMismatch { expected: all.len(), found: k });
        }
        Ok(all.swap_remove(k))
    }
    fn partials(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let n = self.space.dim();
        if self.part == Part::Canonical {
            let (_, q, _) = split_state(self.space, x)?;
            self.space.check_chart(&q)?;
            return Ok(vec![DMatrix::zeros(2 * n, 2 * n); 2 * n]);
        }
        Ok(block_partials(self.space, x)?.iter().map(|d| embed(n, d, n)).collect())
    }
}

/// `Ω = dp_μ ∧ dq^μ − S_{μν}^σ p_σ dq^μ ∧ dq^ν`, the inverse of [`TorsionTensor`].
#[derive(Clone, Copy)]
pub struct TorsionForm<'a> {
    space: &'a dyn AffineGeometry,
}

impl<'a> TorsionForm<'a> {
    pub fn new(space: &'a dyn AffineGeometry) -> TorsionForm<'a> {
        TorsionForm { space }
    }
}

impl AntisymTensorField for TorsionForm<'_> {
    fn dim(&self) -> usize {
        2 * self.space.dim()
    }
    fn variance(&self) -> Variance {
        Variance::Covariant
    }
    fn components(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let (n, q, p) = split_state(self.space, x)?;
        let s = self.space.torsion(&q)?;
        Ok(embed(n, &contract_torsion(&s, &p), 0) - canonical_poisson(n))
    }
    fn partial(&self, x: &[f64], k: usize) -> Result<DMatrix<f64>> {
        let mut all = self.partials(x)?;
        if k >= all.len() {
            return Err(Error::DimensionMismatch { expected: all.len(), found: k });
        }
        Ok(all.swap_remove(k))
    }
    fn partials(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let n = self.space.dim();
        Ok(block_partials(self.space, x)?.iter().map(|d| embed(n, d, 0)).collect())
    }
}
