//! Fixed-step integrators and the Lagrange-multiplier oracle for Chaplygin
//! systems.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::chaplygin::ChaplyginSystem;
use crate::error::{Error, Result};

/// Time-stamped states with optional per-state energies and diagnostics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Empty, or one value per state.
    pub energies: Vec<f64>,
    /// Each column holds one value per state.
    pub diagnostics: BTreeMap<String, Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }

    /// Fills `energies` by evaluating `f` on every state.
    pub fn record_energy(&mut self, f: impl Fn(&DVector<f64>) -> Result<f64>) -> Result<()> {
        self.energies = self.states.iter().map(f).collect::<Result<_>>()?;
        Ok(())
    }

    /// Adds a diagnostic column evaluated on every state.
    pub fn record(
        &mut self,
        name: &str,
        f: impl Fn(&DVector<f64>) -> Result<f64>,
    ) -> Result<()> {
        let col = self.states.iter().map(f).collect::<Result<_>>()?;
        self.diagnostics.insert(name.to_string(), col);
        Ok(())
    }

    /// `max |E(t) − E(0)| / |E(0)|`.
    pub fn relative_energy_drift(&self) -> Option<f64> {
        let e0 = *self.energies.first()?;
        Some(self.energies.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0.abs())
    }

    /// `max_t max_i |a_i(t) − b_i(t)|` over states mapped by `fa`, `fb`;
    /// the trajectories must share their time grid.
    pub fn max_deviation(
        &self,
        other: &Trajectory,
        fa: impl Fn(&DVector<f64>) -> Result<DVector<f64>>,
        fb: impl Fn(&DVector<f64>) -> Result<DVector<f64>>,
    ) -> Result<f64> {
        Error::check_dim(self.len(), other.len())?;
        let mut worst: f64 = 0.0;
        for (a, b) in self.states.iter().zip(&other.states) {
            worst = worst.max((fa(a)? - fb(b)?).amax());
        }
        Ok(worst)
    }
}

/// Step sizes from `t0` to `t1`: full steps of `h` and, if needed, one
/// shortened final step that lands exactly on `t1`.
fn time_grid(t0: f64, t1: f64, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {h}")));
    }
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidParameter(format!("need t1 > t0, got [{t0}, {t1}]")));
    }
    let ratio = (t1 - t0) / h;
    let full = (ratio + 1e-9).floor() as usize;
    let mut times: Vec<f64> = (0..=full).map(|k| t0 + k as f64 * h).collect();
    if ratio - full as f64 > 1e-9 {
        times.push(t1);
    } else {
        *times.last_mut().unwrap() = t1;
    }
    Ok(times)
}

fn check_finite(x: &DVector<f64>) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("state component {i}"))),
        None => Ok(()),
    }
}

/// One classical Runge–Kutta step.
pub fn rk4_step(
    rhs: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    x: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    let k1 = rhs(x)?;
    let k2 = rhs(&(x + &k1 * (h / 2.0)))?;
    let k3 = rhs(&(x + &k2 * (h / 2.0)))?;
    let k4 = rhs(&(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Strang composition: half step of `canonical`, full step of `almost`, half
/// step of `canonical`, each sub-flow advanced by one RK4 step.
pub fn split_step(
    canonical: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    almost: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    x: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    let y = rk4_step(canonical, x, h / 2.0)?;
    let y = rk4_step(almost, &y, h)?;
    rk4_step(canonical, &y, h / 2.0)
}

fn march(
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    h: f64,
    step: &dyn Fn(&DVector<f64>, f64) -> Result<DVector<f64>>,
) -> Result<Trajectory> {
    let times = time_grid(t0, t1, h)?;
    check_finite(x0).map_err(|e| Error::Integration { time: t0, source: Box::new(e) })?;
    let mut states = Vec::with_capacity(times.len());
    states.push(x0.clone());
    for w in times.windows(2) {
        let x = states.last().unwrap();
        let next = step(x, w[1] - w[0])
            .and_then(|y| check_finite(&y).map(|_| y))
            .map_err(|e| Error::Integration { time: w[0], source: Box::new(e) })?;
        states.push(next);
    }
    Ok(Trajectory {
        times,
        states,
        ..Trajectory::default()
    })
}

/// Fixed-step RK4 from `t0` to `t1`. Errors carry the last good time.
pub fn rk4(
    rhs: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    h: f64,
) -> Result<Trajectory> {
    march(x0, t0, t1, h, &|x, dt| rk4_step(rhs, x, dt))
}

/// Fixed-step integration by repeated [`split_step`].
pub fn split(
    canonical: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    almost: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    h: f64,
) -> Result<Trajectory> {
    march(x0, t0, t1, h, &|x, dt| split_step(canonical, almost, x, dt))
}

/// Constraint matrix `A = [−Bᵀ | I]`, so the constraints read `A q̇ = 0`.
fn constraint_matrix(b: &DMatrix<f64>) -> DMatrix<f64> {
    let (k, g) = b.shape();
    let mut a = DMatrix::zeros(g, k + g);
    a.view_mut((0, 0), (g, k)).copy_from(&(-b.transpose()));
    a.view_mut((0, k), (g, g)).fill_with_identity();
    a
}

fn split_full(sys: &ChaplyginSystem, x: &DVector<f64>) -> Result<(Vec<f64>, DVector<f64>)> {
    let n = sys.dim();
    Error::check_dim(2 * n, x.len())?;
    let q = x.rows(0, n);
    Ok((q.rows(0, sys.base_dim()).iter().copied().collect(), x.rows(n, n).into_owned()))
}

/// `|A q̇|_∞` for a full state `(q, q̇)`.
pub fn constraint_violation(sys: &ChaplyginSystem, x: &DVector<f64>) -> Result<f64> {
    let (qb, qdot) = split_full(sys, x)?;
    let f = sys.frame(&qb)?;
    Ok((constraint_matrix(&f.b) * qdot).amax())
}

/// Full-coordinate vector field of the Lagrange–d'Alembert equations
/// `G q̈ = F + Aᵀ λ` with `A q̈ = −Ȧ q̇`, on the state `(q, q̇)` of length `2n`.
/// Multipliers are eliminated by solving the saddle-point system at every
/// state.
pub fn oracle_vector_field(sys: &ChaplyginSystem, x: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, k, g) = (sys.dim(), sys.base_dim(), sys.constrained_dim());
    let (qb, qdot) = split_full(sys, x)?;
    let f = sys.frame(&qb)?;
    // Ġ = Σ_l q̇^l ∂_l G, and ∂L/∂q^l = ½ q̇ᵀ ∂_l G q̇ − ∂_l V for base l only
    let mut gdot = DMatrix::zeros(n, n);
    for l in 0..k {
        gdot += &f.dmass[l] * qdot[l];
    }
    let mut force = -(gdot * &qdot);
    for l in 0..k {
        force[l] += 0.5 * qdot.dot(&(&f.dmass[l] * &qdot)) - f.dpotential[l];
    }
    let a = constraint_matrix(&f.b);
    let mut bdot = DMatrix::zeros(k, g);
    for l in 0..k {
        bdot += &f.db[l] * qdot[l];
    }
    let adot_qdot = constraint_matrix(&bdot) * &qdot;
    // the identity block of A has zero derivative
    let adot_qdot = adot_qdot - qdot.rows(k, g);

    let mut kkt = DMatrix::zeros(n + g, n + g);
    kkt.view_mut((0, 0), (n, n)).copy_from(&f.mass);
    kkt.view_mut((0, n), (n, g)).copy_from(&(-a.transpose()));
    kkt.view_mut((n, 0), (g, n)).copy_from(&a);
    let mut rhs = DVector::zeros(n + g);
    rhs.rows_mut(0, n).copy_from(&force);
    rhs.rows_mut(n, g).copy_from(&(-adot_qdot));
    let sol = kkt.lu().solve(&rhs).ok_or(Error::Singular("multiplier system"))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("multiplier system"));
    }
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&qdot);
    out.rows_mut(n, n).copy_from(&sol.rows(0, n));
    Ok(out)
}

/// Integrates the full constrained equations with RK4. The initial state
/// `(q, q̇)` must satisfy the constraints to `1e-12`.
pub fn multiplier_oracle(
    sys: &ChaplyginSystem,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    h: f64,
) -> Result<Trajectory> {
    let violation = constraint_violation(sys, x0)?;
    if violation > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "initial velocities violate the constraints by {violation:e}"
        )));
    }
    let mut traj = rk4(&|x| oracle_vector_field(sys, x), x0, t0, t1, h)?;
    traj.record("constraint_violation", |x| constraint_violation(sys, x))?;
    Ok(traj)
}

/// Full state `(q, E v)` for reduced coordinates `q` (base part `qb` plus
/// constrained values `qa`) and reduced momenta `p`.
pub fn oracle_initial_state(
    sys: &ChaplyginSystem,
    qb: &[f64],
    qa: &[f64],
    p: &[f64],
) -> Result<DVector<f64>> {
    Error::check_dim(sys.constrained_dim(), qa.len())?;
    let v = sys.legendre_inverse(qb, p)?;
    let qdot = sys.lift_velocity(qb, v.as_slice())?;
    let n = sys.dim();
    let mut x = DVector::zeros(2 * n);
    x.rows_mut(0, qb.len()).copy_from_slice(qb);
    x.rows_mut(qb.len(), qa.len()).copy_from_slice(qa);
    x.rows_mut(n, n).copy_from(&qdot);
    Ok(x)
}

/// Projects a full oracle state to `(q^μ, p_μ)` with `p = ∂𝓛/∂v = Eᵀ G q̇`.
pub fn project_oracle_state(sys: &ChaplyginSystem, x: &DVector<f64>) -> Result<DVector<f64>> {
    let (qb, qdot) = split_full(sys, x)?;
    let f = sys.frame(&qb)?;
    let p = f.lift.transpose() * (&f.mass * qdot);
    let k = sys.base_dim();
    let mut out = DVector::zeros(2 * k);
    out.rows_mut(0, k).copy_from_slice(&qb);
    out.rows_mut(k, k).copy_from(&p);
    Ok(out)
}

/// `½ q̇ᵀ G q̇ + V` on a full state.
pub fn oracle_energy(sys: &ChaplyginSystem, x: &DVector<f64>) -> Result<f64> {
    let (qb, qdot) = split_full(sys, x)?;
    let f = sys.frame(&qb)?;
    Ok(0.5 * qdot.dot(&(&f.mass * &qdot)) + f.potential)
}
