//! Chaplygin nonholonomic systems reduced to the base phase space.
//!
//! Coordinates split into `k` base coordinates `q^μ` followed by `g`
//! constrained coordinates `q^α`, tied by `q̇^α = B_μ^α(q) q̇^μ`. The
//! Lagrangian is mechanical, `L = ½ q̇ᵀ G(q) q̇ − V(q)`, and every coefficient
//! depends on the base coordinates only. Reduced phase points are
//! `x = (q^1..q^k, p_1..p_k)`.
//!
//! With `E = [I; Bᵀ]` the reduced mass matrix is `𝒢 = Eᵀ G E`, the reduced
//! Hamiltonian `𝓗 = ½ pᵀ 𝒢⁻¹ p + V` and the equations of motion
//!
//! ```text
//! q̇^μ = ∂𝓗/∂p_μ,   ṗ_μ = −∂𝓗/∂q^μ + R_{μν}^α p_α ∂𝓗/∂p_ν
//! ```
//!
//! where `R_{μν}^α = ∂_ν B_μ^α − ∂_μ B_ν^α` and `p_α = ∂L/∂q̇^α` is the
//! constrained momentum evaluated on the constraint distribution.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::{Chart, ExprField, ScalarField};
use crate::tensor::{canonical_poisson, AntisymTensorField, Part, Rank3, Variance};
use crate::torsion::AffineGeometry;

/// A Chaplygin system with mechanical Lagrangian.
#[derive(Debug, Clone)]
pub struct ChaplyginSystem {
    names: Vec<String>,
    base: usize,
    chart: Chart,
    // row-major k×g
    b: Vec<ExprField>,
    // row-major n×n
    mass: Vec<ExprField>,
    potential: ExprField,
}

/// Curvature `R_{μν}^α` at a point, stored per constrained index `α` as a
/// `k×k` antisymmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Curvature {
    per_alpha: Vec<DMatrix<f64>>,
}

impl Curvature {
    /// `R_{μν}^α`.
    pub fn get(&self, mu: usize, nu: usize, alpha: usize) -> f64 {
        self.per_alpha[alpha][(mu, nu)]
    }

    pub fn component(&self, alpha: usize) -> &DMatrix<f64> {
        &self.per_alpha[alpha]
    }

    pub fn constrained_dim(&self) -> usize {
        self.per_alpha.len()
    }

    /// `Σ_α R_{μν}^α c_α`.
    pub fn contract(&self, c: &DVector<f64>) -> DMatrix<f64> {
        let k = self.per_alpha.first().map_or(0, |r| r.nrows());
        let mut out = DMatrix::zeros(k, k);
        for (r, &ca) in self.per_alpha.iter().zip(c.iter()) {
            out += r * ca;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.per_alpha.iter().map(|r| r.amax()).fold(0.0, f64::max)
    }
}

/// Everything the reduction needs at one base point.
#[derive(Debug, Clone)]
pub struct Frame {
    /// `B`, `k×g`.
    pub b: DMatrix<f64>,
    /// `∂B/∂q^l` for each base coordinate `l`.
    pub db: Vec<DMatrix<f64>>,
    /// Full mass matrix `G`, `n×n`.
    pub mass: DMatrix<f64>,
    pub dmass: Vec<DMatrix<f64>>,
    pub potential: f64,
    pub dpotential: DVector<f64>,
    /// Velocity lift `E = [I; Bᵀ]`, `n×k`.
    pub lift: DMatrix<f64>,
    pub dlift: Vec<DMatrix<f64>>,
    /// Reduced mass matrix `𝒢 = Eᵀ G E`.
    pub reduced: DMatrix<f64>,
    pub reduced_inv: DMatrix<f64>,
    pub dreduced: Vec<DMatrix<f64>>,
    /// `M` with `p_α = M_{αμ} p_μ`, `g×k`.
    pub momentum_map: DMatrix<f64>,
    pub dmomentum_map: Vec<DMatrix<f64>>,
    pub curvature: Curvature,
    chol: Cholesky<f64, Dyn>,
}

impl Frame {
    /// `𝒢⁻¹ p`.
    pub fn velocity(&self, p: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(p)
    }
}

/// Residuals of the three conditions for the reduced 2-form to be closed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymplecticResiduals {
    /// Cyclic `R ∂p_α/∂q` terms.
    pub a: f64,
    /// `R_{μν}^α ∂p_α/∂p_σ`.
    pub b: f64,
    /// Cyclic `∂R` terms; vanishes identically.
    pub c: f64,
}

/// The tensors behind [`SymplecticResiduals`].
#[derive(Debug, Clone)]
pub struct SymplecticTensors {
    /// `a[μ][ν][σ] = R_{νσ}^α ∂_μ p_α + R_{σμ}^α ∂_ν p_α + R_{μν}^α ∂_σ p_α`.
    pub a: Rank3,
    /// `b[μ][ν][σ] = R_{μν}^α ∂p_α/∂p_σ`.
    pub b: Rank3,
    /// `c[α][μ][ν][σ] = ∂_μ R_{νσ}^α + ∂_ν R_{σμ}^α + ∂_σ R_{μν}^α`.
    pub c: Vec<Rank3>,
}

impl SymplecticTensors {
    pub fn residuals(&self) -> SymplecticResiduals {
        SymplecticResiduals {
            a: self.a.max_abs(),
            b: self.b.max_abs(),
            c: self.c.iter().map(Rank3::max_abs).fold(0.0, f64::max),
        }
    }
}

fn invalid(msg: String) -> Error {
    Error::InvalidParameter(msg)
}

impl ChaplyginSystem {
    /// `names` lists the base coordinates first, then the `constrained` ones.
    /// `b[μ][α]` and `mass[i][j]` are expressions over the base coordinates;
    /// `mass` must be structurally symmetric.
    pub fn new(
        names: Vec<String>,
        constrained: usize,
        b: Vec<Vec<Expr>>,
        mass: Vec<Vec<Expr>>,
        potential: Expr,
    ) -> Result<ChaplyginSystem> {
        let n = names.len();
        if constrained >= n {
            return Err(invalid(format!(
                "{constrained} constrained coordinates leave no base among {n}"
            )));
        }
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(invalid(format!("duplicate coordinate name `{a}`")));
            }
        }
        let base = n - constrained;
        let base_names = &names[..base];
        let field = |e: &Expr, what: String| -> Result<ExprField> {
            if let Some(v) = e.variables().into_iter().find(|v| !base_names.contains(v)) {
                return Err(invalid(format!(
                    "{what} depends on `{v}`, which is not a base coordinate"
                )));
            }
            ExprField::new(e.clone(), base_names)
        };

        if b.len() != base || b.iter().any(|row| row.len() != constrained) {
            return Err(invalid(format!("B must be {base}×{constrained}")));
        }
        let mut bf = Vec::with_capacity(base * constrained);
        for (mu, row) in b.iter().enumerate() {
            for (alpha, e) in row.iter().enumerate() {
                bf.push(field(e, format!("B[{mu}][{alpha}]"))?.with_second_derivatives()?);
            }
        }

        if mass.len() != n || mass.iter().any(|row| row.len() != n) {
            return Err(invalid(format!("mass matrix must be {n}×{n}")));
        }
        let mut mf = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                if mass[i][j] != mass[j][i] {
                    return Err(invalid(format!(
                        "mass matrix is not symmetric at ({i}, {j})"
                    )));
                }
                mf.push(field(&mass[i][j], format!("mass[{i}][{j}]"))?);
            }
        }
        let potential = field(&potential, "potential".into())?;

        Ok(ChaplyginSystem {
            chart: Chart::new(base_names),
            names,
            base,
            b: bf,
            mass: mf,
            potential,
        })
    }

    /// Restricts base coordinate `name` to `[lo, hi]`.
    pub fn with_bound(mut self, name: &str, lo: f64, hi: f64) -> Result<ChaplyginSystem> {
        self.chart = self.chart.with_bound(name, lo, hi)?;
        Ok(self)
    }

    /// Total coordinate count `n`.
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Base dimension `k = n − g`.
    pub fn base_dim(&self) -> usize {
        self.base
    }

    /// Number of constraints `g`.
    pub fn constrained_dim(&self) -> usize {
        self.names.len() - self.base
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn base_names(&self) -> &[String] {
        &self.names[..self.base]
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn b_entry(&self, mu: usize, alpha: usize) -> &Expr {
        self.b[mu * self.constrained_dim() + alpha].expr()
    }

    pub fn mass_entry(&self, i: usize, j: usize) -> &Expr {
        self.mass[i * self.dim() + j].expr()
    }

    pub fn potential_expr(&self) -> &Expr {
        self.potential.expr()
    }

    fn b_field(&self, mu: usize, alpha: usize) -> &ExprField {
        &self.b[mu * self.constrained_dim() + alpha]
    }

    fn check_base(&self, q: &[f64]) -> Result<()> {
        self.chart.check(q)
    }

    fn b_parts(&self, q: &[f64]) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
        let (k, g) = (self.base, self.constrained_dim());
        let mut b = DMatrix::zeros(k, g);
        let mut db = vec![DMatrix::zeros(k, g); k];
        for mu in 0..k {
            for alpha in 0..g {
                let f = self.b_field(mu, alpha);
                b[(mu, alpha)] = f.value(q)?;
                for (l, d) in db.iter_mut().enumerate() {
                    d[(mu, alpha)] = f.partial(q, l)?;
                }
            }
        }
        Ok((b, db))
    }

    fn curvature_from(&self, db: &[DMatrix<f64>]) -> Curvature {
        let (k, g) = (self.base, self.constrained_dim());
        let per_alpha = (0..g)
            .map(|alpha| {
                DMatrix::from_fn(k, k, |mu, nu| db[nu][(mu, alpha)] - db[mu][(nu, alpha)])
            })
            .collect();
        Curvature { per_alpha }
    }

    /// `R_{μν}^α = ∂B_μ^α/∂q^ν − ∂B_ν^α/∂q^μ`.
    pub fn curvature(&self, q: &[f64]) -> Result<Curvature> {
        self.check_base(q)?;
        let (_, db) = self.b_parts(q)?;
        Ok(self.curvature_from(&db))
    }

    /// `∂R/∂q^l` for every base coordinate `l`.
    pub fn curvature_partials(&self, q: &[f64]) -> Result<Vec<Curvature>> {
        self.check_base(q)?;
        let (k, g) = (self.base, self.constrained_dim());
        (0..k)
            .map(|l| {
                let per_alpha = (0..g)
                    .map(|alpha| {
                        let mut r = DMatrix::zeros(k, k);
                        for mu in 0..k {
                            for nu in 0..k {
                                r[(mu, nu)] = self.b_field(mu, alpha).second_partial(q, l, nu)?
                                    - self.b_field(nu, alpha).second_partial(q, l, mu)?;
                            }
                        }
                        Ok(r)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Curvature { per_alpha })
            })
            .collect()
    }

    /// Evaluates the reduction data at base point `q`.
    pub fn frame(&self, q: &[f64]) -> Result<Frame> {
        self.check_base(q)?;
        let (n, k, g) = (self.dim(), self.base, self.constrained_dim());
        let (b, db) = self.b_parts(q)?;

        let mut mass = DMatrix::zeros(n, n);
        let mut dmass = vec![DMatrix::zeros(n, n); k];
        for i in 0..n {
            for j in 0..n {
                let f = &self.mass[i * n + j];
                mass[(i, j)] = f.value(q)?;
                for (l, d) in dmass.iter_mut().enumerate() {
                    d[(i, j)] = f.partial(q, l)?;
                }
            }
        }
        if Cholesky::new(mass.clone()).is_none() {
            return Err(Error::NotPositiveDefinite("mass matrix"));
        }

        let mut lift = DMatrix::zeros(n, k);
        for mu in 0..k {
            lift[(mu, mu)] = 1.0;
            for alpha in 0..g {
                lift[(k + alpha, mu)] = b[(mu, alpha)];
            }
        }
        let dlift: Vec<DMatrix<f64>> = db
            .iter()
            .map(|d| {
                let mut e = DMatrix::zeros(n, k);
                for mu in 0..k {
                    for alpha in 0..g {
                        e[(k + alpha, mu)] = d[(mu, alpha)];
                    }
                }
                e
            })
            .collect();

        let ge = &mass * &lift;
        let reduced = lift.transpose() * &ge;
        let chol = Cholesky::new(reduced.clone())
            .ok_or(Error::NotPositiveDefinite("reduced mass matrix"))?;
        let reduced_inv = chol.inverse();
        if reduced_inv.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("reduced mass matrix"));
        }
        let dreduced: Vec<DMatrix<f64>> = (0..k)
            .map(|l| {
                let t = dlift[l].transpose() * &ge;
                &t + t.transpose() + lift.transpose() * &dmass[l] * &lift
            })
            .collect();

        let full_map = &ge * &reduced_inv;
        let momentum_map = full_map.rows(k, g).into_owned();
        let dmomentum_map = (0..k)
            .map(|l| {
                let d = (&dmass[l] * &lift + &mass * &dlift[l]) * &reduced_inv
                    - &full_map * &dreduced[l] * &reduced_inv;
                d.rows(k, g).into_owned()
            })
            .collect();

        let curvature = self.curvature_from(&db);
        Ok(Frame {
            b,
            db,
            mass,
            dmass,
            potential: self.potential.value(q)?,
            dpotential: self.potential.gradient(q)?,
            lift,
            dlift,
            reduced,
            reduced_inv,
            dreduced,
            momentum_map,
            dmomentum_map,
            curvature,
            chol,
        })
    }

    fn split<'x>(&self, x: &'x [f64]) -> Result<(&'x [f64], DVector<f64>)> {
        Error::check_dim(2 * self.base, x.len())?;
        let (q, p) = x.split_at(self.base);
        Ok((q, DVector::from_column_slice(p)))
    }

    fn check_velocity(&self, v: &[f64]) -> Result<DVector<f64>> {
        Error::check_dim(self.base, v.len())?;
        Ok(DVector::from_column_slice(v))
    }

    /// `𝒢(q)`.
    pub fn reduced_metric(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.frame(q)?.reduced)
    }

    /// `𝓛 = ½ vᵀ 𝒢 v − V`.
    pub fn reduced_lagrangian(&self, q: &[f64], v: &[f64]) -> Result<f64> {
        let v = self.check_velocity(v)?;
        let f = self.frame(q)?;
        Ok(0.5 * v.dot(&(&f.reduced * &v)) - f.potential)
    }

    /// `p = 𝒢 v`.
    pub fn legendre(&self, q: &[f64], v: &[f64]) -> Result<DVector<f64>> {
        let v = self.check_velocity(v)?;
        Ok(self.frame(q)?.reduced * v)
    }

    /// `v = 𝒢⁻¹ p`.
    pub fn legendre_inverse(&self, q: &[f64], p: &[f64]) -> Result<DVector<f64>> {
        let p = self.check_velocity(p)?;
        Ok(self.frame(q)?.velocity(&p))
    }

    /// `𝓗 = ½ pᵀ 𝒢⁻¹ p + V`.
    pub fn hamiltonian(&self, q: &[f64], p: &[f64]) -> Result<f64> {
        let p = self.check_velocity(p)?;
        let f = self.frame(q)?;
        Ok(0.5 * p.dot(&f.velocity(&p)) + f.potential)
    }

    fn hamiltonian_gradient_in(&self, f: &Frame, p: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let v = f.velocity(p);
        let dq = DVector::from_fn(self.base, |l, _| {
            -0.5 * v.dot(&(&f.dreduced[l] * &v)) + f.dpotential[l]
        });
        (dq, v)
    }

    /// `(∂𝓗/∂q, ∂𝓗/∂p)`.
    pub fn hamiltonian_gradient(
        &self,
        q: &[f64],
        p: &[f64],
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let p = self.check_velocity(p)?;
        let f = self.frame(q)?;
        Ok(self.hamiltonian_gradient_in(&f, &p))
    }

    /// `𝓗` as a scalar field on the reduced phase space.
    pub fn hamiltonian_field(&self) -> ReducedHamiltonian<'_> {
        ReducedHamiltonian { sys: self }
    }

    /// `p_α = ∂L/∂q̇^α` at the velocity `v = 𝒢⁻¹ p`, lifted by the constraints.
    pub fn restricted_momentum(&self, q: &[f64], p: &[f64]) -> Result<DVector<f64>> {
        let p = self.check_velocity(p)?;
        Ok(self.frame(q)?.momentum_map * p)
    }

    /// `K_{μν} = R_{μν}^α p_α`.
    pub fn almost_block(&self, q: &[f64], p: &[f64]) -> Result<DMatrix<f64>> {
        let p = self.check_velocity(p)?;
        let f = self.frame(q)?;
        Ok(f.curvature.contract(&(&f.momentum_map * p)))
    }

    /// `J = [[0, I], [−I, K]]` at `(q, p)`.
    pub fn almost_poisson_tensor(&self, q: &[f64], p: &[f64]) -> Result<DMatrix<f64>> {
        let k = self.almost_block(q, p)?;
        let mut j = canonical_poisson(self.base);
        j.view_mut((self.base, self.base), (self.base, self.base)).copy_from(&k);
        Ok(j)
    }

    /// The bracket tensor, or one of its parts, as a field on `(q, p)`.
    pub fn tensor_field(&self, part: Part) -> ChaplyginTensor<'_> {
        ChaplyginTensor { sys: self, part }
    }

    /// The 2-form `Ω = [[K, −I], [I, 0]]`, the inverse of the bracket tensor.
    pub fn form_field(&self) -> ChaplyginForm<'_> {
        ChaplyginForm { sys: self }
    }

    /// `(q̇, ṗ)` of the almost Hamiltonian vector field of `𝓗`.
    pub fn dynamics_rhs(&self, q: &[f64], p: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        let p = self.check_velocity(p)?;
        let f = self.frame(q)?;
        let (dq, v) = self.hamiltonian_gradient_in(&f, &p);
        let k = f.curvature.contract(&(&f.momentum_map * &p));
        let pdot = -dq + k * &v;
        Ok((v, pdot))
    }

    fn phase_rhs(&self, x: &[f64], part: Part) -> Result<DVector<f64>> {
        let (q, p) = self.split(x)?;
        let f = self.frame(q)?;
        let (dq, v) = self.hamiltonian_gradient_in(&f, &p);
        let kb = self.base;
        let mut out = DVector::zeros(2 * kb);
        if part != Part::Almost {
            out.rows_mut(0, kb).copy_from(&v);
            out.rows_mut(kb, kb).copy_from(&(-dq));
        }
        if part != Part::Canonical {
            let k = f.curvature.contract(&(&f.momentum_map * &p));
            let kv = k * &v;
            let mut tail = out.rows_mut(kb, kb);
            tail += kv;
        }
        Ok(out)
    }

    /// Full vector field on the stacked state `(q, p)`.
    pub fn vector_field(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.phase_rhs(x, Part::Full)
    }

    /// Canonical part `(∂𝓗/∂p, −∂𝓗/∂q)`.
    pub fn canonical_vector_field(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.phase_rhs(x, Part::Canonical)
    }

    /// Almost part `(0, K ∂𝓗/∂p)`.
    pub fn almost_vector_field(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.phase_rhs(x, Part::Almost)
    }

    /// `⟦p_μ, p_ν⟧ = R_{μν}^α p_α`.
    pub fn momentum_bracket(&self, q: &[f64], p: &[f64], mu: usize, nu: usize) -> Result<f64> {
        if mu >= self.base || nu >= self.base {
            return Err(invalid(format!("momentum index out of range 0..{}", self.base)));
        }
        Ok(self.almost_block(q, p)?[(mu, nu)])
    }

    /// `T[ν][σ][λ] = Σ (R_{μν}^α R_{σλ}^β + R_{μσ}^α R_{λν}^β + R_{μλ}^α R_{νσ}^β) p_α ∂p_β/∂p_μ`.
    /// It vanishes iff the momentum bracket satisfies the Jacobi identity.
    pub fn lie_poisson_tensor(&self, q: &[f64], p: &[f64]) -> Result<Rank3> {
        let p = self.check_velocity(p)?;
        let f = self.frame(q)?;
        let pa = &f.momentum_map * &p;
        // K = R·p_α and W[μ]_{σλ} = Σ_β R_{σλ}^β M_{βμ}
        let k = f.curvature.contract(&pa);
        let w: Vec<DMatrix<f64>> = (0..self.base)
            .map(|mu| f.curvature.contract(&f.momentum_map.column(mu).into_owned()))
            .collect();
        Ok(Rank3::from_fn(self.base, |nu, s, l| {
            (0..self.base)
                .map(|mu| {
                    k[(mu, nu)] * w[mu][(s, l)]
                        + k[(mu, s)] * w[mu][(l, nu)]
                        + k[(mu, l)] * w[mu][(nu, s)]
                })
                .sum()
        }))
    }

    /// Largest entry of [`lie_poisson_tensor`](Self::lie_poisson_tensor).
    pub fn lie_poisson_condition(&self, q: &[f64], p: &[f64]) -> Result<f64> {
        Ok(self.lie_poisson_tensor(q, p)?.max_abs())
    }

    /// Closedness conditions of the reduced 2-form, split by type.
    pub fn symplectic_tensors(&self, q: &[f64], p: &[f64]) -> Result<SymplecticTensors> {
        let p = self.check_velocity(p)?;
        let f = self.frame(q)?;
        let dr = self.curvature_partials(q)?;
        let kb = self.base;
        let r = &f.curvature;
        // dpa[μ] = ∂p_α/∂q^μ
        let dpa: Vec<DVector<f64>> = f.dmomentum_map.iter().map(|d| d * &p).collect();
        let rd: Vec<DMatrix<f64>> = dpa.iter().map(|d| r.contract(d)).collect();
        let a = Rank3::from_fn(kb, |mu, nu, s| {
            rd[mu][(nu, s)] + rd[nu][(s, mu)] + rd[s][(mu, nu)]
        });
        let w: Vec<DMatrix<f64>> = (0..kb)
            .map(|s| r.contract(&f.momentum_map.column(s).into_owned()))
            .collect();
        let b = Rank3::from_fn(kb, |mu, nu, s| w[s][(mu, nu)]);
        let c = (0..r.constrained_dim())
            .map(|alpha| {
                Rank3::from_fn(kb, |mu, nu, s| {
                    dr[mu].get(nu, s, alpha) + dr[nu].get(s, mu, alpha) + dr[s].get(mu, nu, alpha)
                })
            })
            .collect();
        Ok(SymplecticTensors { a, b, c })
    }

    pub fn symplectic_condition(&self, q: &[f64], p: &[f64]) -> Result<SymplecticResiduals> {
        Ok(self.symplectic_tensors(q, p)?.residuals())
    }

    /// Residual of Chaplygin's equations
    /// `d/dt ∂𝓛/∂v^μ − ∂𝓛/∂q^μ + R_{νμ}^α v^ν p_α` at position `q`,
    /// base velocity `v` and base acceleration `a`.
    pub fn chaplygin_equation_residual(
        &self,
        q: &[f64],
        v: &[f64],
        a: &[f64],
    ) -> Result<DVector<f64>> {
        let v = self.check_velocity(v)?;
        let a = self.check_velocity(a)?;
        let f = self.frame(q)?;
        let kb = self.base;
        let mut dg_dt = DMatrix::zeros(kb, kb);
        for (l, d) in f.dreduced.iter().enumerate() {
            dg_dt += d * v[l];
        }
        let pdot = &f.reduced * &a + dg_dt * &v;
        let dl_dq =
            DVector::from_fn(kb, |mu, _| 0.5 * v.dot(&(&f.dreduced[mu] * &v)) - f.dpotential[mu]);
        let pa = &f.momentum_map * (&f.reduced * &v);
        let force = f.curvature.contract(&pa).transpose() * &v;
        Ok(pdot - dl_dq + force)
    }

    /// `S_{μν}^ρ = ½ g^{ρσ} g_{ij} ε_σ^i (∂_μ ε_ν^j − ∂_ν ε_μ^j)`, stored as
    /// `S[μ][ν][ρ]`. In terms of the reduction data this is
    /// `½ M_{αρ} R_{νμ}^α`.
    pub fn induced_torsion(&self, q: &[f64]) -> Result<Rank3> {
        let f = self.frame(q)?;
        Ok(torsion_from(&f.momentum_map, &f.curvature))
    }

    /// Configuration space as an affine space with metric `𝒢/2` and the
    /// induced torsion; its autoparallels solve Chaplygin's equations.
    pub fn induced_affine_space(&self) -> InducedAffineSpace<'_> {
        InducedAffineSpace { sys: self }
    }

    /// `q̇ = E v`.
    pub fn lift_velocity(&self, q: &[f64], v: &[f64]) -> Result<DVector<f64>> {
        let v = self.check_velocity(v)?;
        self.check_base(q)?;
        let (b, _) = self.b_parts(q)?;
        let mut out = DVector::zeros(self.dim());
        out.rows_mut(0, self.base).copy_from(&v);
        let tail = b.transpose() * v;
        out.rows_mut(self.base, self.constrained_dim()).copy_from(&tail);
        Ok(out)
    }
}

fn torsion_from(m: &DMatrix<f64>, r: &Curvature) -> Rank3 {
    let kb = m.ncols();
    Rank3::from_fn(kb, |mu, nu, rho| {
        0.5 * (0..r.constrained_dim()).map(|a| m[(a, rho)] * r.get(nu, mu, a)).sum::<f64>()
    })
}

/// `𝓗` on `(q, p)`.
#[derive(Debug, Clone, Copy)]
pub struct ReducedHamiltonian<'a> {
    sys: &'a ChaplyginSystem,
}

impl ScalarField for ReducedHamiltonian<'_> {
    fn dim(&self) -> usize {
        2 * self.sys.base
    }
    fn value(&self, x: &[f64]) -> Result<f64> {
        let (q, p) = self.sys.split(x)?;
        self.sys.hamiltonian(q, p.as_slice())
    }
    fn gradient(&self, x: &[f64]) -> Result<DVector<f64>> {
        let (q, p) = self.sys.split(x)?;
        let (dq, dp) = self.sys.hamiltonian_gradient(q, p.as_slice())?;
        let mut g = DVector::zeros(x.len());
        g.rows_mut(0, self.sys.base).copy_from(&dq);
        g.rows_mut(self.sys.base, self.sys.base).copy_from(&dp);
        Ok(g)
    }
}

/// Partials of the `K` block on the full phase space.
fn block_partials(sys: &ChaplyginSystem, x: &[f64]) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let (q, p) = sys.split(x)?;
    let f = sys.frame(q)?;
    let dr = sys.curvature_partials(q)?;
    let pa = &f.momentum_map * &p;
    let k = f.curvature.contract(&pa);
    let kb = sys.base;
    let mut parts = Vec::with_capacity(2 * kb);
    for l in 0..kb {
        parts.push(dr[l].contract(&pa) + f.curvature.contract(&(&f.dmomentum_map[l] * &p)));
    }
    for l in 0..kb {
        parts.push(f.curvature.contract(&f.momentum_map.column(l).into_owned()));
    }
    Ok((k, parts))
}

fn embed_block(kb: usize, block: &DMatrix<f64>, at: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * kb, 2 * kb);
    m.view_mut((at, at), (kb, kb)).copy_from(block);
    m
}

/// `J = [[0, I], [−I, K]]` or one of its parts.
#[derive(Debug, Clone, Copy)]
pub struct ChaplyginTensor<'a> {
    sys: &'a ChaplyginSystem,
    part: Part,
}

impl AntisymTensorField for ChaplyginTensor<'_> {
    fn dim(&self) -> usize {
        2 * self.sys.base
    }
    fn variance(&self) -> Variance {
        Variance::Contravariant
    }
    fn components(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let (q, p) = self.sys.split(x)?;
        let kb = self.sys.base;
        match self.part {
            Part::Canonical => {
                self.sys.check_base(q)?;
                Ok(canonical_poisson(kb))
            }
            Part::Almost => Ok(embed_block(kb, &self.sys.almost_block(q, p.as_slice())?, kb)),
            Part::Full => self.sys.almost_poisson_tensor(q, p.as_slice()),
        }
    }
    fn partial(&self, x: &[f64], k: usize) -> Result<DMatrix<f64>> {
        let mut all = self.partials(x)?;
        if k >= all.len() {
            return Err(Error::DimensionMismatch { expected: all.len(), found: k });
        }
        Ok(all.swap_remove(k))
    }
    fn partials(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let kb = self.sys.base;
        if self.part == Part::Canonical {
            let (q, _) = self.sys.split(x)?;
            self.sys.check_base(q)?;
            return Ok(vec![DMatrix::zeros(2 * kb, 2 * kb); 2 * kb]);
        }
        let (_, parts) = block_partials(self.sys, x)?;
        Ok(parts.iter().map(|d| embed_block(kb, d, kb)).collect())
    }
}

/// `Ω = [[K, −I], [I, 0]]`, i.e. `dp_μ ∧ dq^μ + ½ K_{μν} dq^μ ∧ dq^ν`.
#[derive(Debug, Clone, Copy)]
pub struct ChaplyginForm<'a> {
    sys: &'a ChaplyginSystem,
}

impl AntisymTensorField for ChaplyginForm<'_> {
    fn dim(&self) -> usize {
        2 * self.sys.base
    }
    fn variance(&self) -> Variance {
        Variance::Covariant
    }
    fn components(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let (q, p) = self.sys.split(x)?;
        let kb = self.sys.base;
        let mut om = -canonical_poisson(kb);
        om.view_mut((0, 0), (kb, kb)).copy_from(&self.sys.almost_block(q, p.as_slice())?);
        Ok(om)
    }
    fn partial(&self, x: &[f64], k: usize) -> Result<DMatrix<f64>> {
        let mut all = self.partials(x)?;
        if k >= all.len() {
            return Err(Error::DimensionMismatch { expected: all.len(), found: k });
        }
        Ok(all.swap_remove(k))
    }
    fn partials(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let (_, parts) = block_partials(self.sys, x)?;
        Ok(parts.iter().map(|d| embed_block(self.sys.base, d, 0)).collect())
    }
}

/// See [`ChaplyginSystem::induced_affine_space`].
#[derive(Debug, Clone, Copy)]
pub struct InducedAffineSpace<'a> {
    sys: &'a ChaplyginSystem,
}

impl AffineGeometry for InducedAffineSpace<'_> {
    fn dim(&self) -> usize {
        self.sys.base
    }
    fn check_chart(&self, q: &[f64]) -> Result<()> {
        self.sys.check_base(q)
    }
    fn metric(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.sys.frame(q)?.reduced * 0.5)
    }
    fn metric_partials(&self, q: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        Ok(self.sys.frame(q)?.dreduced.into_iter().map(|d| d * 0.5).collect())
    }
    fn torsion(&self, q: &[f64]) -> Result<Rank3> {
        self.sys.induced_torsion(q)
    }
    fn torsion_partials(&self, q: &[f64]) -> Result<Vec<Rank3>> {
        let f = self.sys.frame(q)?;
        let dr = self.sys.curvature_partials(q)?;
        Ok((0..self.sys.base)
            .map(|l| {
                let a = torsion_from(&f.dmomentum_map[l], &f.curvature);
                let b = torsion_from(&f.momentum_map, &dr[l]);
                a.zip_with(&b, |x, y| x + y)
            })
            .collect())
    }
    fn potential(&self, q: &[f64]) -> Result<f64> {
        self.sys.check_base(q)?;
        self.sys.potential.value(q)
    }
    fn potential_gradient(&self, q: &[f64]) -> Result<DVector<f64>> {
        self.sys.check_base(q)?;
        self.sys.potential.gradient(q)
    }
}
