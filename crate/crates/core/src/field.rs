//! Points and smooth scalar fields in local coordinates.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::expr::{CompiledExpr, Expr};

/// A point `x^i` of an `m`-dimensional manifold chart, `m >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint(DVector<f64>);

impl PhasePoint {
    pub fn new(x: Vec<f64>) -> Result<PhasePoint> {
        if x.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "phase points need dimension >= 2, got {}",
                x.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("component {i} of phase point")));
        }
        Ok(PhasePoint(DVector::from_vec(x)))
    }

    /// Concatenates configuration and momentum coordinates.
    pub fn from_qp(q: &[f64], p: &[f64]) -> Result<PhasePoint> {
        PhasePoint::new(q.iter().chain(p).copied().collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }
}

/// A smooth real function with exact first partials.
pub trait ScalarField {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<DVector<f64>>;
}

impl<T: ScalarField + ?Sized> ScalarField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> Result<f64> {
        (**self).value(x)
    }
    fn gradient(&self, x: &[f64]) -> Result<DVector<f64>> {
        (**self).gradient(x)
    }
}

/// Scalar field defined by an expression; gradients come from symbolic
/// differentiation.
#[derive(Clone)]
pub struct ExprField {
    expr: Expr,
    vars: Vec<String>,
    value: CompiledExpr,
    partials: Vec<CompiledExpr>,
    second: Option<Vec<Vec<CompiledExpr>>>,
}

impl fmt::Debug for ExprField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExprField")
            .field("expr", &self.expr.to_string())
            .field("vars", &self.vars)
            .finish()
    }
}

impl ExprField {
    /// `vars` fixes the coordinate order; every free variable must appear in it.
    pub fn new<S: AsRef<str>>(expr: Expr, vars: &[S]) -> Result<ExprField> {
        let vars: Vec<String> = vars.iter().map(|v| v.as_ref().to_string()).collect();
        let value = expr.compile(&vars)?;
        let partials = vars
            .iter()
            .map(|v| expr.differentiate(v).compile(&vars))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ExprField {
            expr,
            vars,
            value,
            partials,
            second: None,
        })
    }

    pub fn parse<S: AsRef<str>>(source: &str, vars: &[S]) -> Result<ExprField> {
        ExprField::new(Expr::parse(source)?, vars)
    }

    pub fn constant<S: AsRef<str>>(c: f64, vars: &[S]) -> ExprField {
        ExprField::new(Expr::Num(c), vars).expect("constants have no free variables")
    }

    /// Also precomputes the symbolic Hessian.
    pub fn with_second_derivatives(mut self) -> Result<ExprField> {
        let mut rows = Vec::with_capacity(self.vars.len());
        for a in &self.vars {
            let da = self.expr.differentiate(a);
            let row = self
                .vars
                .iter()
                .map(|b| da.differentiate(b).compile(&self.vars))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        self.second = Some(rows);
        Ok(self)
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn is_zero(&self) -> bool {
        self.expr.is_zero()
    }

    pub fn partial(&self, x: &[f64], k: usize) -> Result<f64> {
        Ok(self.partials[k].eval(x)?)
    }

    pub fn second_partial(&self, x: &[f64], k: usize, l: usize) -> Result<f64> {
        let second = self
            .second
            .as_ref()
            .expect("second derivatives were not requested for this field");
        Ok(second[k][l].eval(x)?)
    }
}

impl ScalarField for ExprField {
    fn dim(&self) -> usize {
        self.vars.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Error::check_dim(self.vars.len(), x.len())?;
        Ok(self.value.eval(x)?)
    }

    fn gradient(&self, x: &[f64]) -> Result<DVector<f64>> {
        Error::check_dim(self.vars.len(), x.len())?;
        let mut g = DVector::zeros(x.len());
        for (k, p) in self.partials.iter().enumerate() {
            g[k] = p.eval(x)?;
        }
        Ok(g)
    }
}

type ValueFn = dyn Fn(&[f64]) -> Result<f64> + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Result<DVector<f64>> + Send + Sync;

/// Scalar field backed by closures, for values computed by other modules.
#[derive(Clone)]
pub struct FnField {
    dim: usize,
    value: Arc<ValueFn>,
    gradient: Arc<GradFn>,
}

impl FnField {
    pub fn new(
        dim: usize,
        value: impl Fn(&[f64]) -> Result<f64> + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Result<DVector<f64>> + Send + Sync + 'static,
    ) -> FnField {
        FnField {
            dim,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }
}

impl ScalarField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> Result<f64> {
        Error::check_dim(self.dim, x.len())?;
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64]) -> Result<DVector<f64>> {
        Error::check_dim(self.dim, x.len())?;
        (self.gradient)(x)
    }
}

/// Coordinate function `x^k`.
pub fn coordinate(dim: usize, k: usize) -> FnField {
    FnField::new(
        dim,
        move |x| Ok(x[k]),
        move |x| {
            let mut g = DVector::zeros(x.len());
            g[k] = 1.0;
            Ok(g)
        },
    )
}

/// Coordinate names with closed-box bounds excluding coordinate singularities.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    names: Vec<String>,
    bounds: Vec<(f64, f64)>,
}

impl Chart {
    /// Unbounded chart.
    pub fn new<S: AsRef<str>>(names: &[S]) -> Chart {
        Chart {
            names: names.iter().map(|s| s.as_ref().to_string()).collect(),
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); names.len()],
        }
    }

    pub fn with_bound(mut self, name: &str, lo: f64, hi: f64) -> Result<Chart> {
        let k = self.index(name).ok_or_else(|| {
            Error::InvalidParameter(format!("chart bound for unknown coordinate `{name}`"))
        })?;
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::InvalidParameter(format!(
                "empty chart interval [{lo}, {hi}] for `{name}`"
            )));
        }
        self.bounds[k] = (lo, hi);
        Ok(self)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn check(&self, q: &[f64]) -> Result<()> {
        Error::check_dim(self.names.len(), q.len())?;
        for (k, &v) in q.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("coordinate `{}`", self.names[k])));
            }
            let (lo, hi) = self.bounds[k];
            if v < lo || v > hi {
                return Err(Error::OutsideChart {
                    name: self.names[k].clone(),
                    value: v,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }
}

/// Central difference step used by the finite-difference cross-checks.
pub fn fd_step(x: f64) -> f64 {
    1e-6 * (1.0 + x.abs())
}

/// Central finite-difference gradient; a cross-check only.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> Result<f64>, x: &[f64]) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(x.len());
    let mut y = x.to_vec();
    for k in 0..x.len() {
        let h = fd_step(x[k]);
        y[k] = x[k] + h;
        let up = f(&y)?;
        y[k] = x[k] - h;
        let down = f(&y)?;
        y[k] = x[k];
        g[k] = (up - down) / (2.0 * h);
    }
    Ok(g)
}
