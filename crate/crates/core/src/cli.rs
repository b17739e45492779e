//! Command-line front end: run configuration, simulation, diagnostics and
//! the system registry listing.
//!
//! A run is described by a JSON [`RunConfig`]. Flags given on the command
//! line override the corresponding config fields, and `--dump-config` prints
//! the fully resolved config, which re-runs to identical output.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Deserializer, Serialize};

use crate::bracket::{coupling_residual, jacobiizer, symplecticizer};
use crate::chaplygin::ChaplyginSystem;
use crate::error::Error;
use crate::expr::{Expr, ExprError};
use crate::field::{PhasePoint, ScalarField};
use crate::integrate;
use crate::systems::{self, System};
use crate::tensor::Part;
use crate::torsion::{self, AffineSpace, TorsionEntry, TorsionForm, TorsionTensor};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    Rk4,
    Split,
}

/// Per-state diagnostic columns appended to the trajectory CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Diagnostic {
    /// `H(t) − H(t0)`
    Energy,
    /// max-abs Jacobiizer of the full tensor
    Jacobi,
    /// max-abs coupling residual of the canonical and almost parts
    Coupling,
    /// max-abs Jacobiizer of the momentum bracket
    LiePoisson,
    /// max-abs symplecticizer of the 2-form
    Symplectic,
}

impl Diagnostic {
    pub fn column(self) -> &'static str {
        match self {
            Diagnostic::Energy => "dH",
            Diagnostic::Jacobi => "jacobi",
            Diagnostic::Coupling => "coupling",
            Diagnostic::LiePoisson => "lie_poisson",
            Diagnostic::Symplectic => "symplectic",
        }
    }
}

/// Initial configuration and either momenta `p` or velocities `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConfig {
    pub q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
}

fn zero_expr() -> String {
    "0".to_string()
}

fn is_zero_expr(s: &str) -> bool {
    s.trim() == "0"
}

/// Chaplygin system: base coordinates first, then `constrained` ones.
/// `b` is base × constrained, `mass` covers all coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineChaplygin {
    pub coordinates: Vec<String>,
    pub constrained: usize,
    pub b: Vec<Vec<String>>,
    pub mass: Vec<Vec<String>>,
    #[serde(default = "zero_expr", skip_serializing_if = "is_zero_expr")]
    pub potential: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bounds: BTreeMap<String, [f64; 2]>,
}

/// One torsion component `S_{mu nu}^sigma`, indices given by coordinate name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineTorsion {
    pub mu: String,
    pub nu: String,
    pub sigma: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineAffine {
    pub coordinates: Vec<String>,
    pub metric: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub torsion: Vec<InlineTorsion>,
    #[serde(default = "zero_expr", skip_serializing_if = "is_zero_expr")]
    pub potential: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bounds: BTreeMap<String, [f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum InlineSystem {
    Chaplygin(InlineChaplygin),
    Affine(InlineAffine),
}

/// A registry name or an inline definition.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum SystemRef {
    Named(String),
    Inline(InlineSystem),
}

impl<'de> Deserialize<'de> for SystemRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<SystemRef, D::Error> {
        // Untagged enums lose the inner error message; dispatch by hand.
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) => Ok(SystemRef::Named(s)),
            v => serde_json::from_value(v).map(SystemRef::Inline).map_err(serde::de::Error::custom),
        }
    }
}

fn default_t1() -> f64 {
    1.0
}

fn default_h() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemRef,
    /// Registry parameters, or constants substituted into inline expressions.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<StateConfig>,
    /// States evaluated by `diagnose`; the initial state is used when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<StateConfig>,
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "default_t1")]
    pub t1: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<Diagnostic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn named(system: &str) -> RunConfig {
        RunConfig {
            system: SystemRef::Named(system.to_string()),
            parameters: BTreeMap::new(),
            initial: None,
            grid: Vec::new(),
            t0: 0.0,
            t1: default_t1(),
            h: default_h(),
            integrator: Integrator::Rk4,
            diagnostics: Vec::new(),
            output: None,
        }
    }

    pub fn from_json(src: &str) -> Result<RunConfig, Failure> {
        serde_json::from_str(src).map_err(|e| Failure::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<RunConfig, Failure> {
        let src = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_json(&src)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }

    fn check_times(&self) -> Result<(), Failure> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Failure::Config(format!("h must be positive, got {}", self.h)));
        }
        if !(self.t0.is_finite() && self.t1.is_finite() && self.t1 > self.t0) {
            return Err(Failure::Config(format!("need t1 > t0, got t0 = {}, t1 = {}", self.t0, self.t1)));
        }
        Ok(())
    }

    /// Fills in registry defaults for parameters and the initial state.
    pub fn resolve(&mut self) -> Result<(), Failure> {
        if let SystemRef::Named(name) = &self.system {
            let spec = systems::lookup(name).map_err(Failure::from)?;
            self.parameters = spec.resolve(&self.parameters).map_err(Failure::from)?;
            if self.initial.is_none() {
                let init = spec.default_initial(&self.parameters).map_err(Failure::from)?;
                self.initial = Some(StateConfig { q: init.q, p: Some(init.p), v: None });
            }
        }
        Ok(())
    }

    pub fn system_name(&self) -> String {
        match &self.system {
            SystemRef::Named(n) => n.clone(),
            SystemRef::Inline(InlineSystem::Chaplygin(_)) => "inline-chaplygin".into(),
            SystemRef::Inline(InlineSystem::Affine(_)) => "inline-affine".into(),
        }
    }

    pub fn build(&self) -> Result<Model, Failure> {
        let system = match &self.system {
            SystemRef::Named(name) => {
                systems::lookup(name).and_then(|s| s.build(&self.parameters)).map_err(Failure::from)?
            }
            SystemRef::Inline(def) => build_inline(def, &self.parameters)?,
        };
        Ok(Model { system })
    }
}

/// Why a command failed; selects the exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Config(String),
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        match e {
            Error::Integration { time, source } => {
                Failure::Numerical(format!("{source} (last good time t = {time})"))
            }
            Error::Config(_)
            | Error::InvalidParameter(_)
            | Error::DimensionMismatch { .. }
            | Error::WrongVariance { .. } => Failure::Config(e.to_string()),
            Error::Expr(ref x) if !matches!(x, ExprError::Domain(_)) => Failure::Config(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

fn parse_expr(src: &str, what: &str, params: &HashMap<String, f64>) -> Result<Expr, Failure> {
    Expr::parse(src)
        .map(|e| e.substitute(params))
        .map_err(|e| Failure::Config(format!("{what}: {e}")))
}

fn parse_matrix(
    rows: &[Vec<String>],
    what: &str,
    params: &HashMap<String, f64>,
) -> Result<Vec<Vec<Expr>>, Failure> {
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, s)| parse_expr(s, &format!("{what}[{i}][{j}]"), params))
                .collect()
        })
        .collect()
}

fn coordinate_index(names: &[String], name: &str, what: &str) -> Result<usize, Failure> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Failure::Config(format!("{what}: unknown coordinate `{name}`")))
}

fn build_inline(def: &InlineSystem, parameters: &BTreeMap<String, f64>) -> Result<System, Failure> {
    let params: HashMap<String, f64> = parameters.iter().map(|(k, v)| (k.clone(), *v)).collect();
    match def {
        InlineSystem::Chaplygin(c) => {
            let b = parse_matrix(&c.b, "b", &params)?;
            let mass = parse_matrix(&c.mass, "mass", &params)?;
            let potential = parse_expr(&c.potential, "potential", &params)?;
            let mut sys = ChaplyginSystem::new(c.coordinates.clone(), c.constrained, b, mass, potential)?;
            for (name, [lo, hi]) in &c.bounds {
                sys = sys.with_bound(name, *lo, *hi)?;
            }
            Ok(System::Chaplygin(sys))
        }
        InlineSystem::Affine(a) => {
            let metric = parse_matrix(&a.metric, "metric", &params)?;
            let names = &a.coordinates;
            let mut entries = Vec::with_capacity(a.torsion.len());
            for (i, t) in a.torsion.iter().enumerate() {
                let what = format!("torsion[{i}]");
                entries.push(TorsionEntry {
                    mu: coordinate_index(names, &t.mu, &what)?,
                    nu: coordinate_index(names, &t.nu, &what)?,
                    sigma: coordinate_index(names, &t.sigma, &what)?,
                    value: parse_expr(&t.value, &what, &params)?,
                });
            }
            let potential = parse_expr(&a.potential, "potential", &params)?;
            let mut space = AffineSpace::new(names.clone(), metric, entries, potential)?;
            for (name, [lo, hi]) in &a.bounds {
                space = space.with_bound(name, *lo, *hi)?;
            }
            Ok(System::Affine(space))
        }
    }
}

/// Residuals reported by `diagnose`, maximised over the state grid.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub jacobiizer: f64,
    pub symplecticizer: f64,
    pub coupling: f64,
    pub lie_poisson: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symplectic_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symplectic_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symplectic_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure_constants: Option<f64>,
}

fn max_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, y) => x.or(y),
    }
}

impl Report {
    fn merge(self, o: Report) -> Report {
        Report {
            jacobiizer: self.jacobiizer.max(o.jacobiizer),
            symplecticizer: self.symplecticizer.max(o.symplecticizer),
            coupling: self.coupling.max(o.coupling),
            lie_poisson: self.lie_poisson.max(o.lie_poisson),
            symplectic_a: max_opt(self.symplectic_a, o.symplectic_a),
            symplectic_b: max_opt(self.symplectic_b, o.symplectic_b),
            symplectic_c: max_opt(self.symplectic_c, o.symplectic_c),
            structure_constants: max_opt(self.structure_constants, o.structure_constants),
        }
    }

    fn values(&self) -> impl Iterator<Item = f64> {
        [
            Some(self.jacobiizer),
            Some(self.symplecticizer),
            Some(self.coupling),
            Some(self.lie_poisson),
            self.symplectic_a,
            self.symplectic_b,
            self.symplectic_c,
            self.structure_constants,
        ]
        .into_iter()
        .flatten()
    }
}

/// A built system with a uniform interface over both kinds.
#[derive(Debug, Clone)]
pub struct Model {
    pub system: System,
}

impl Model {
    pub fn half_dim(&self) -> usize {
        self.system.phase_half_dim()
    }

    /// Phase point `(q, p)` from a configured state.
    pub fn state(&self, s: &StateConfig) -> Result<DVector<f64>, Failure> {
        let k = self.half_dim();
        let check = |v: &[f64], what: &str| {
            if v.len() == k {
                Ok(())
            } else {
                Err(Failure::Config(format!("initial {what} has {} entries, system needs {k}", v.len())))
            }
        };
        check(&s.q, "q")?;
        let p = match (&s.p, &s.v) {
            (Some(p), None) => {
                check(p, "p")?;
                DVector::from_column_slice(p)
            }
            (None, Some(v)) => {
                check(v, "v")?;
                match &self.system {
                    System::Chaplygin(c) => c.legendre(&s.q, v)?,
                    System::Affine(a) => torsion::legendre(a, &s.q, v)?,
                }
            }
            _ => return Err(Failure::Config("a state needs exactly one of `p` and `v`".into())),
        };
        Ok(DVector::from_iterator(2 * k, s.q.iter().copied().chain(p.iter().copied())))
    }

    pub fn vector_field(&self, x: &DVector<f64>, part: Part) -> crate::Result<DVector<f64>> {
        let x = x.as_slice();
        match (&self.system, part) {
            (System::Chaplygin(c), Part::Full) => c.vector_field(x),
            (System::Chaplygin(c), Part::Canonical) => c.canonical_vector_field(x),
            (System::Chaplygin(c), Part::Almost) => c.almost_vector_field(x),
            (System::Affine(a), Part::Full) => torsion::vector_field(a, x),
            (System::Affine(a), Part::Canonical) => torsion::canonical_vector_field(a, x),
            (System::Affine(a), Part::Almost) => torsion::almost_vector_field(a, x),
        }
    }

    pub fn energy(&self, x: &DVector<f64>) -> crate::Result<f64> {
        match &self.system {
            System::Chaplygin(c) => c.hamiltonian_field().value(x.as_slice()),
            System::Affine(a) => torsion::hamiltonian_field(a).value(x.as_slice()),
        }
    }

    pub fn diagnostic(&self, d: Diagnostic, x: &DVector<f64>) -> crate::Result<f64> {
        let pt = PhasePoint::new(x.iter().copied().collect())?;
        let k = self.half_dim();
        match (&self.system, d) {
            (_, Diagnostic::Energy) => self.energy(x),
            (System::Chaplygin(c), Diagnostic::Jacobi) => {
                Ok(jacobiizer(&c.tensor_field(Part::Full), &pt)?.max_abs())
            }
            (System::Affine(a), Diagnostic::Jacobi) => {
                Ok(jacobiizer(&TorsionTensor::new(a, Part::Full), &pt)?.max_abs())
            }
            (System::Chaplygin(c), Diagnostic::Coupling) => Ok(coupling_residual(
                &c.tensor_field(Part::Canonical),
                &c.tensor_field(Part::Almost),
                &pt,
            )?
            .max_abs()),
            (System::Affine(a), Diagnostic::Coupling) => Ok(coupling_residual(
                &TorsionTensor::new(a, Part::Canonical),
                &TorsionTensor::new(a, Part::Almost),
                &pt,
            )?
            .max_abs()),
            (System::Chaplygin(c), Diagnostic::LiePoisson) => {
                c.lie_poisson_condition(&pt.as_slice()[..k], &pt.as_slice()[k..])
            }
            (System::Affine(a), Diagnostic::LiePoisson) => {
                Ok(jacobiizer(&TorsionTensor::new(a, Part::Almost), &pt)?.max_abs())
            }
            (System::Chaplygin(c), Diagnostic::Symplectic) => {
                Ok(symplecticizer(&c.form_field(), &pt)?.max_abs())
            }
            (System::Affine(a), Diagnostic::Symplectic) => {
                Ok(symplecticizer(&TorsionForm::new(a), &pt)?.max_abs())
            }
        }
    }

    /// All residuals applicable to this system kind at one state.
    pub fn report(&self, x: &DVector<f64>) -> crate::Result<Report> {
        let mut r = Report {
            jacobiizer: self.diagnostic(Diagnostic::Jacobi, x)?,
            symplecticizer: self.diagnostic(Diagnostic::Symplectic, x)?,
            coupling: self.diagnostic(Diagnostic::Coupling, x)?,
            lie_poisson: self.diagnostic(Diagnostic::LiePoisson, x)?,
            ..Report::default()
        };
        let k = self.half_dim();
        let (q, p) = (&x.as_slice()[..k], &x.as_slice()[k..]);
        match &self.system {
            System::Chaplygin(c) => {
                let s = c.symplectic_condition(q, p)?;
                r.symplectic_a = Some(s.a);
                r.symplectic_b = Some(s.b);
                r.symplectic_c = Some(s.c);
            }
            System::Affine(a) => r.structure_constants = Some(torsion::structure_constant_condition(a, q)?),
        }
        if let Some(v) = r.values().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("residual {v}")));
        }
        Ok(r)
    }
}

/// `printf("%.17g")` formatting, independent of locale.
pub fn format_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        trim_zeros(&format!("{x:.*}", (16 - exp) as usize)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Integrates the configured run; energies and diagnostics are recorded.
pub fn simulate(cfg: &RunConfig, model: &Model) -> Result<integrate::Trajectory, Failure> {
    cfg.check_times()?;
    let init = cfg
        .initial
        .as_ref()
        .ok_or_else(|| Failure::Config("simulate needs an initial state".into()))?;
    let x0 = model.state(init)?;
    let mut traj = match cfg.integrator {
        Integrator::Rk4 => {
            integrate::rk4(&|x| model.vector_field(x, Part::Full), &x0, cfg.t0, cfg.t1, cfg.h)?
        }
        Integrator::Split => integrate::split(
            &|x| model.vector_field(x, Part::Canonical),
            &|x| model.vector_field(x, Part::Almost),
            &x0,
            cfg.t0,
            cfg.t1,
            cfg.h,
        )?,
    };
    let at = |i: usize| traj.times[i];
    let mut energies = Vec::with_capacity(traj.len());
    for (i, x) in traj.states.iter().enumerate() {
        energies.push(model.energy(x).map_err(|e| at_time(e, at(i)))?);
    }
    let mut columns = BTreeMap::new();
    for &d in &cfg.diagnostics {
        let col: Vec<f64> = match d {
            Diagnostic::Energy => energies.iter().map(|e| e - energies[0]).collect(),
            _ => traj
                .states
                .iter()
                .enumerate()
                .map(|(i, x)| model.diagnostic(d, x).map_err(|e| at_time(e, at(i))))
                .collect::<Result<_, _>>()?,
        };
        columns.insert(d.column().to_string(), col);
    }
    traj.energies = energies;
    traj.diagnostics = columns;
    Ok(traj)
}

fn at_time(e: Error, t: f64) -> Failure {
    Failure::from(e).with_time(t)
}

impl Failure {
    fn with_time(self, t: f64) -> Failure {
        match self {
            Failure::Numerical(m) => Failure::Numerical(format!("{m} at t = {t}")),
            c => c,
        }
    }
}

/// Writes the trajectory as CSV: `t,q1..qk,p1..pk,H` then one column per
/// requested diagnostic, in request order.
pub fn write_csv(
    out: &mut dyn Write,
    traj: &integrate::Trajectory,
    k: usize,
    diagnostics: &[Diagnostic],
) -> io::Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend((1..=k).map(|i| format!("q{i}")));
    header.extend((1..=k).map(|i| format!("p{i}")));
    header.push("H".into());
    header.extend(diagnostics.iter().map(|d| d.column().to_string()));
    writeln!(out, "{}", header.join(","))?;
    for (i, (t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
        let mut row = vec![format_g17(*t)];
        row.extend(x.iter().map(|v| format_g17(*v)));
        row.push(format_g17(traj.energies[i]));
        for d in diagnostics {
            row.push(format_g17(traj.diagnostics[d.column()][i]));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Maximum residuals over the grid (or the initial state), computed on up
/// to `jobs` threads. The result does not depend on `jobs`.
pub fn diagnose(cfg: &RunConfig, model: &Model, jobs: usize) -> Result<Report, Failure> {
    let states: Vec<&StateConfig> = if cfg.grid.is_empty() {
        cfg.initial.iter().collect()
    } else {
        cfg.grid.iter().collect()
    };
    if states.is_empty() {
        return Err(Failure::Config("diagnose needs a state grid or an initial state".into()));
    }
    let points = states.iter().map(|s| model.state(s)).collect::<Result<Vec<_>, _>>()?;
    let jobs = jobs.clamp(1, points.len());
    let mut results: Vec<Option<crate::Result<Report>>> = vec![None; points.len()];
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                let points = &points;
                scope.spawn(move || {
                    (j..points.len())
                        .step_by(jobs)
                        .map(|i| (i, model.report(&points[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("diagnostic worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    let mut total: Option<Report> = None;
    for (i, r) in results.into_iter().enumerate() {
        let r = r.expect("every state evaluated").map_err(|e| match Failure::from(e) {
            Failure::Numerical(m) => Failure::Numerical(format!("state {i}: {m}")),
            c => c,
        })?;
        total = Some(match total {
            Some(t) => t.merge(r),
            None => r,
        });
    }
    Ok(total.expect("at least one state"))
}

pub fn list_systems(out: &mut dyn Write) -> io::Result<()> {
    for spec in systems::registry() {
        writeln!(out, "{}", spec.name)?;
        writeln!(out, "    {}", spec.summary)?;
        for p in spec.params {
            let default = match p.default {
                Some(v) => format_g17(v),
                None => "derived".into(),
            };
            writeln!(out, "    {:<4} = {:<8} {}", p.name, default, p.description)?;
        }
    }
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "almost-poisson", version, about = "Almost Poisson brackets of nonholonomic and torsion systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate a system and write its trajectory as CSV.
    Simulate(RunArgs),
    /// Evaluate bracket residuals and write them as JSON.
    Diagnose(RunArgs),
    /// Print the built-in systems and their parameters.
    ListSystems,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Registry system; replaces the config's system.
    #[arg(long, value_name = "NAME")]
    system: Option<String>,
    /// Parameter override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_name = "T")]
    t_end: Option<f64>,
    #[arg(long, value_name = "H")]
    dt: Option<f64>,
    #[arg(long)]
    integrator: Option<Integrator>,
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
    /// Comma-separated diagnostic columns.
    #[arg(long, value_delimiter = ',')]
    diag: Option<Vec<Diagnostic>>,
    /// Worker threads for grid diagnostics.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Print the resolved config and exit.
    #[arg(long)]
    dump_config: bool,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match (&self.config, &self.system) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(name)) => RunConfig::named(name),
            (None, None) => return Err(Failure::Config("give --config or --system".into())),
        };
        if let (Some(_), Some(name)) = (&self.config, &self.system) {
            cfg.system = SystemRef::Named(name.clone());
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Failure::Config(format!("--set {k}: `{v}` is not a number")))?;
            cfg.parameters.insert(k.trim().to_string(), v);
        }
        if let Some(t) = self.t_end {
            cfg.t1 = t;
        }
        if let Some(h) = self.dt {
            cfg.h = h;
        }
        if let Some(i) = self.integrator {
            cfg.integrator = i;
        }
        if let Some(o) = &self.output {
            cfg.output = Some(o.clone());
        }
        if let Some(d) = &self.diag {
            cfg.diagnostics = d.clone();
        }
        cfg.resolve()?;
        Ok(cfg)
    }
}

fn emit(path: Option<&Path>, stdout: &mut dyn Write, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), Failure> {
    let io_err = |e: io::Error| Failure::Config(format!("cannot write output: {e}"));
    match path {
        Some(p) => {
            let file = fs::File::create(p)
                .map_err(|e| Failure::Config(format!("cannot create {}: {e}", p.display())))?;
            let mut w = BufWriter::new(file);
            f(&mut w).and_then(|_| w.flush()).map_err(io_err)
        }
        None => f(stdout).map_err(io_err),
    }
}

fn execute(command: Command, stdout: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::ListSystems => {
            list_systems(stdout).map_err(|e| Failure::Config(format!("cannot write output: {e}")))
        }
        Command::Simulate(args) => {
            let cfg = args.config()?;
            if args.dump_config {
                return emit(None, stdout, |w| writeln!(w, "{}", cfg.to_json()));
            }
            let model = cfg.build()?;
            let traj = simulate(&cfg, &model)?;
            emit(cfg.output.as_deref(), stdout, |w| {
                write_csv(w, &traj, model.half_dim(), &cfg.diagnostics)
            })
        }
        Command::Diagnose(args) => {
            let cfg = args.config()?;
            if args.dump_config {
                return emit(None, stdout, |w| writeln!(w, "{}", cfg.to_json()));
            }
            let model = cfg.build()?;
            let report = diagnose(&cfg, &model, args.jobs)?;
            let json = serde_json::to_string_pretty(&report).expect("reports serialize");
            emit(cfg.output.as_deref(), stdout, |w| writeln!(w, "{json}"))
        }
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                return EXIT_CONFIG;
            }
            let _ = write!(stdout, "{text}");
            return 0;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message());
            f.exit_code()
        }
    }
}
