//! Built-in systems and the registry exposed by the command line.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use crate::chaplygin::ChaplyginSystem;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::torsion::{AffineSpace, TorsionEntry};

/// Either kind of system the crate can simulate.
#[derive(Debug, Clone)]
pub enum System {
    Chaplygin(ChaplyginSystem),
    Affine(AffineSpace),
}

impl System {
    /// Number of configuration coordinates in the phase space.
    pub fn phase_half_dim(&self) -> usize {
        match self {
            System::Chaplygin(s) => s.base_dim(),
            System::Affine(s) => s.names().len(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            System::Chaplygin(_) => "chaplygin",
            System::Affine(_) => "affine",
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("`{name}` must be positive, got {v}")))
    }
}

fn parse_with(src: &str, values: &HashMap<String, f64>) -> Expr {
    Expr::parse(src).expect("built-in expressions parse").substitute(values)
}

/// Homogeneous ball of mass `m` and radius `a` rolling without slipping on a
/// plane. Coordinates are the Euler angles `(psi, theta, phi)` and the contact
/// point `(x, y)`.
pub fn rolling_ball(m: f64, a: f64) -> Result<ChaplyginSystem> {
    positive("m", m)?;
    positive("a", a)?;
    rolling_ball_with_inertia(m, a, 0.4 * m * a * a)
}

/// Rolling ball with moment of inertia `inertia` about any axis through its
/// centre; the homogeneous ball has `inertia = 2/5 m a²`.
pub fn rolling_ball_with_inertia(m: f64, a: f64, inertia: f64) -> Result<ChaplyginSystem> {
    positive("m", m)?;
    positive("a", a)?;
    positive("I", inertia)?;
    let values: HashMap<String, f64> =
        [("m", m), ("a", a), ("I", inertia)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let e = |s: &str| parse_with(s, &values);
    // ẋ = −a(φ̇ sinθ cosψ − θ̇ sinψ), ẏ = −a(φ̇ sinθ sinψ + θ̇ cosψ)
    let b = vec![
        vec![e("0"), e("0")],
        vec![e("a*sin(psi)"), e("-a*cos(psi)")],
        vec![e("-a*sin(theta)*cos(psi)"), e("-a*sin(theta)*sin(psi)")],
    ];
    let mass = [
        ["I", "0", "I*cos(theta)", "0", "0"],
        ["0", "I", "0", "0", "0"],
        ["I*cos(theta)", "0", "I", "0", "0"],
        ["0", "0", "0", "m", "0"],
        ["0", "0", "0", "0", "m"],
    ]
    .iter()
    .map(|row| row.iter().map(|s| e(s)).collect())
    .collect();
    let names = ["psi", "theta", "phi", "x", "y"].map(String::from).to_vec();
    ChaplyginSystem::new(names, 2, b, mass, Expr::num(0.0))?.with_bound("theta", 0.2, PI - 0.2)
}

/// Free rigid body in body-fixed coordinates as an affine space: metric
/// `diag(I1, I2, I3)/2` and torsion `S_{μν}^σ = ½ ε_{μνσ}`, so that the
/// momentum bracket is the so(3) Lie–Poisson bracket and the flow is Euler's
/// `ṗ = p × ω` with `ω_i = p_i / I_i`.
pub fn rigid_body_torsion(i1: f64, i2: f64, i3: f64) -> Result<AffineSpace> {
    positive("I1", i1)?;
    positive("I2", i2)?;
    positive("I3", i3)?;
    let inertia = [i1, i2, i3];
    let metric = (0..3)
        .map(|i| (0..3).map(|j| Expr::num(if i == j { inertia[i] / 2.0 } else { 0.0 })).collect())
        .collect();
    let torsion = [(0, 1, 2), (1, 2, 0), (2, 0, 1)]
        .iter()
        .map(|&(mu, nu, sigma)| TorsionEntry { mu, nu, sigma, value: Expr::num(0.5) })
        .collect();
    AffineSpace::new(["q1", "q2", "q3"].map(String::from).to_vec(), metric, torsion, Expr::num(0.0))
}

/// Flat space of dimension `n` with identity metric and no torsion.
pub fn free_particle(n: usize) -> Result<AffineSpace> {
    if n == 0 {
        return Err(Error::InvalidParameter("free particle needs n >= 1".into()));
    }
    let metric = (0..n)
        .map(|i| (0..n).map(|j| Expr::num(if i == j { 1.0 } else { 0.0 })).collect())
        .collect();
    let names = (1..=n).map(|i| format!("x{i}")).collect();
    AffineSpace::new(names, metric, Vec::new(), Expr::num(0.0))
}

/// A registry parameter; `default = None` means derived from the others.
#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub name: &'static str,
    pub default: Option<f64>,
    pub description: &'static str,
}

/// Initial reduced phase point `(q, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

/// A named constructor with its parameter schema.
#[derive(Debug, Clone, Copy)]
pub struct SystemSpec {
    pub name: &'static str,
    pub summary: &'static str,
    pub params: &'static [ParamSpec],
    build: fn(&BTreeMap<String, f64>) -> Result<System>,
    initial: fn(&BTreeMap<String, f64>) -> InitialState,
}

impl SystemSpec {
    /// Fills in defaults and rejects unknown parameters.
    pub fn resolve(&self, overrides: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
        if let Some(k) = overrides.keys().find(|k| !self.params.iter().any(|p| p.name == k.as_str())) {
            return Err(Error::Config(format!("system `{}` has no parameter `{k}`", self.name)));
        }
        let mut out = BTreeMap::new();
        for p in self.params {
            if let Some(v) = overrides.get(p.name).copied().or(p.default) {
                out.insert(p.name.to_string(), v);
            }
        }
        Ok(out)
    }

    pub fn build(&self, overrides: &BTreeMap<String, f64>) -> Result<System> {
        (self.build)(&self.resolve(overrides)?)
    }

    pub fn default_initial(&self, overrides: &BTreeMap<String, f64>) -> Result<InitialState> {
        Ok((self.initial)(&self.resolve(overrides)?))
    }
}

fn build_ball(p: &BTreeMap<String, f64>) -> Result<System> {
    let (m, a) = (p["m"], p["a"]);
    let sys = match p.get("I") {
        Some(&i) => rolling_ball_with_inertia(m, a, i)?,
        None => rolling_ball(m, a)?,
    };
    Ok(System::Chaplygin(sys))
}

fn ball_initial(p: &BTreeMap<String, f64>) -> InitialState {
    let scale = p["m"] * p["a"] * p["a"];
    InitialState {
        q: vec![0.3, PI / 3.0, -0.4],
        p: vec![0.5 * scale, -0.3 * scale, 0.8 * scale],
    }
}

fn build_rigid(p: &BTreeMap<String, f64>) -> Result<System> {
    Ok(System::Affine(rigid_body_torsion(p["I1"], p["I2"], p["I3"])?))
}

fn rigid_initial(_: &BTreeMap<String, f64>) -> InitialState {
    InitialState {
        q: vec![0.0; 3],
        p: vec![0.4, 1.0, -0.3],
    }
}

fn particle_dim(p: &BTreeMap<String, f64>) -> Result<usize> {
    let n = p["n"];
    if n.fract() != 0.0 || !(1.0..=64.0).contains(&n) {
        return Err(Error::InvalidParameter(format!("`n` must be an integer in 1..=64, got {n}")));
    }
    Ok(n as usize)
}

fn build_particle(p: &BTreeMap<String, f64>) -> Result<System> {
    Ok(System::Affine(free_particle(particle_dim(p)?)?))
}

fn particle_initial(p: &BTreeMap<String, f64>) -> InitialState {
    let n = particle_dim(p).unwrap_or(1);
    let mut mom = vec![0.0; n];
    mom[0] = 2.0;
    InitialState { q: vec![0.0; n], p: mom }
}

static REGISTRY: [SystemSpec; 3] = [
    SystemSpec {
        name: "rolling-ball",
        summary: "ball rolling without slipping on a plane (Chaplygin, 3 base + 2 constrained coordinates)",
        params: &[
            ParamSpec { name: "m", default: Some(1.0), description: "mass" },
            ParamSpec { name: "a", default: Some(1.0), description: "radius" },
            ParamSpec { name: "I", default: None, description: "moment of inertia (default 2/5 m a^2)" },
        ],
        build: build_ball,
        initial: ball_initial,
    },
    SystemSpec {
        name: "rigid-body",
        summary: "free rigid body as an affine space with so(3) torsion (3 coordinates)",
        params: &[
            ParamSpec { name: "I1", default: Some(1.0), description: "principal moment of inertia" },
            ParamSpec { name: "I2", default: Some(2.0), description: "principal moment of inertia" },
            ParamSpec { name: "I3", default: Some(3.0), description: "principal moment of inertia" },
        ],
        build: build_rigid,
        initial: rigid_initial,
    },
    SystemSpec {
        name: "free-particle",
        summary: "flat space with identity metric and no torsion",
        params: &[ParamSpec { name: "n", default: Some(2.0), description: "dimension" }],
        build: build_particle,
        initial: particle_initial,
    },
];

pub fn registry() -> &'static [SystemSpec] {
    &REGISTRY
}

pub fn lookup(name: &str) -> Result<&'static SystemSpec> {
    REGISTRY.iter().find(|s| s.name == name).ok_or_else(|| {
        let known: Vec<_> = REGISTRY.iter().map(|s| s.name).collect();
        Error::Config(format!("unknown system `{name}` (known: {})", known.join(", ")))
    })
}
