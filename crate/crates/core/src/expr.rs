//! Scalar expressions over named coordinates.
//!
//! The grammar covers real literals, variables, `+ - * /`, unary minus,
//! integer powers `^n` and the functions `sin cos tan sqrt exp log`.
//! Precedence from tightest to loosest: `^`, unary minus, `* /`, `+ -`;
//! binary operators associate to the left. Any identifier that is not
//! followed by `(` is a variable.
//!
//! ```
//! use almost_poisson::expr::Expr;
//!
//! let e = Expr::parse("-a*sin(theta)*cos(psi)").unwrap();
//! let d = e.differentiate("theta");
//! assert_eq!(d.to_string(), "-a*cos(theta)*cos(psi)");
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error: {0}")]
    Domain(String),
}

type ExprResult<T> = Result<T, ExprError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Sqrt,
    Exp,
    Log,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Log => "log",
        }
    }

    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "log" => Func::Log,
            _ => return None,
        })
    }

    fn apply(self, x: f64) -> ExprResult<f64> {
        let y = match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Sqrt => {
                if x < 0.0 {
                    return Err(ExprError::Domain(format!("sqrt of negative value {x}")));
                }
                x.sqrt()
            }
            Func::Exp => x.exp(),
            Func::Log => {
                if x <= 0.0 {
                    return Err(ExprError::Domain(format!("log of non-positive value {x}")));
                }
                x.ln()
            }
        };
        finite(y, self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

fn finite(y: f64, what: &str) -> ExprResult<f64> {
    if y.is_finite() {
        Ok(y)
    } else {
        Err(ExprError::Domain(format!("non-finite result of {what}")))
    }
}

fn checked_div(a: f64, b: f64) -> ExprResult<f64> {
    if b == 0.0 {
        return Err(ExprError::Domain("division by zero".into()));
    }
    finite(a / b, "division")
}

fn checked_pow(a: f64, n: i32) -> ExprResult<f64> {
    if a == 0.0 && n < 0 {
        return Err(ExprError::Domain("zero raised to a negative power".into()));
    }
    finite(a.powi(n), "power")
}

impl Expr {
    pub fn parse(source: &str) -> ExprResult<Expr> {
        Parser::new(source)?.parse_all()
    }

    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    /// Evaluates with every free variable looked up in `bindings`.
    pub fn evaluate(&self, bindings: &HashMap<String, f64>) -> ExprResult<f64> {
        self.eval_with(&|name| bindings.get(name).copied())
    }

    pub fn eval_with(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> ExprResult<f64> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(name) => lookup(name).ok_or_else(|| ExprError::Unbound(name.clone()))?,
            Expr::Neg(a) => -a.eval_with(lookup)?,
            Expr::Add(a, b) => finite(a.eval_with(lookup)? + b.eval_with(lookup)?, "addition")?,
            Expr::Sub(a, b) => finite(a.eval_with(lookup)? - b.eval_with(lookup)?, "subtraction")?,
            Expr::Mul(a, b) => finite(a.eval_with(lookup)? * b.eval_with(lookup)?, "product")?,
            Expr::Div(a, b) => checked_div(a.eval_with(lookup)?, b.eval_with(lookup)?)?,
            Expr::Pow(a, n) => checked_pow(a.eval_with(lookup)?, *n)?,
            Expr::Call(f, a) => f.apply(a.eval_with(lookup)?)?,
        })
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(name) => {
                out.insert(name.clone());
            }
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.collect_vars(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 1.0)
    }

    /// Exact symbolic partial derivative with respect to `var`.
    pub fn differentiate(&self, var: &str) -> Expr {
        match self {
            Expr::Num(_) => Expr::Num(0.0),
            Expr::Var(name) => Expr::Num(if name == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.differentiate(var)),
            Expr::Add(a, b) => add(a.differentiate(var), b.differentiate(var)),
            Expr::Sub(a, b) => sub(a.differentiate(var), b.differentiate(var)),
            Expr::Mul(a, b) => add(
                mul(a.differentiate(var), (**b).clone()),
                mul((**a).clone(), b.differentiate(var)),
            ),
            Expr::Div(a, b) => {
                let da = a.differentiate(var);
                let db = b.differentiate(var);
                if db.is_zero() {
                    div(da, (**b).clone())
                } else {
                    div(
                        sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                        pow((**b).clone(), 2),
                    )
                }
            }
            Expr::Pow(a, n) => {
                if *n == 0 {
                    return Expr::Num(0.0);
                }
                mul(
                    mul(Expr::Num(f64::from(*n)), pow((**a).clone(), n - 1)),
                    a.differentiate(var),
                )
            }
            Expr::Call(f, a) => {
                let da = a.differentiate(var);
                if da.is_zero() {
                    return Expr::Num(0.0);
                }
                let inner = (**a).clone();
                let outer = match f {
                    Func::Sin => call(Func::Cos, inner),
                    Func::Cos => neg(call(Func::Sin, inner)),
                    Func::Tan => div(Expr::Num(1.0), pow(call(Func::Cos, inner), 2)),
                    Func::Sqrt => div(Expr::Num(1.0), mul(Expr::Num(2.0), call(Func::Sqrt, inner))),
                    Func::Exp => call(Func::Exp, inner),
                    Func::Log => div(Expr::Num(1.0), inner),
                };
                mul(outer, da)
            }
        }
    }

    /// Replaces the given variables by literals and folds literal-only subtrees.
    pub fn substitute(&self, values: &HashMap<String, f64>) -> Expr {
        match self {
            Expr::Var(name) => match values.get(name) {
                Some(v) => Expr::Num(*v),
                None => self.clone(),
            },
            Expr::Num(_) => self.clone(),
            Expr::Neg(a) => Expr::Neg(Box::new(a.substitute(values))).folded(),
            Expr::Add(a, b) => {
                Expr::Add(Box::new(a.substitute(values)), Box::new(b.substitute(values))).folded()
            }
            Expr::Sub(a, b) => {
                Expr::Sub(Box::new(a.substitute(values)), Box::new(b.substitute(values))).folded()
            }
            Expr::Mul(a, b) => {
                Expr::Mul(Box::new(a.substitute(values)), Box::new(b.substitute(values))).folded()
            }
            Expr::Div(a, b) => {
                Expr::Div(Box::new(a.substitute(values)), Box::new(b.substitute(values))).folded()
            }
            Expr::Pow(a, n) => Expr::Pow(Box::new(a.substitute(values)), *n).folded(),
            Expr::Call(f, a) => Expr::Call(*f, Box::new(a.substitute(values))).folded(),
        }
    }

    // One level of literal folding; children are assumed already folded.
    fn folded(self) -> Expr {
        let literal_only = match &self {
            Expr::Num(_) | Expr::Var(_) => return self,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => matches!(**a, Expr::Num(_)),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                matches!(**a, Expr::Num(_)) && matches!(**b, Expr::Num(_))
            }
        };
        if !literal_only {
            return self;
        }
        // Domain errors are kept in the tree so that they surface on evaluation.
        match self.eval_with(&|_| None) {
            Ok(v) => Expr::Num(v),
            Err(_) => self,
        }
    }

    /// Resolves variables to slots of `vars` for fast repeated evaluation.
    pub fn compile<S: AsRef<str>>(&self, vars: &[S]) -> ExprResult<CompiledExpr> {
        let slot = |name: &str| vars.iter().position(|v| v.as_ref() == name);
        Ok(CompiledExpr {
            root: self.lower(&slot)?,
        })
    }

    fn lower(&self, slot: &dyn Fn(&str) -> Option<usize>) -> ExprResult<Node> {
        let b = |e: &Expr| -> ExprResult<Box<Node>> { Ok(Box::new(e.lower(slot)?)) };
        Ok(match self {
            Expr::Num(v) => Node::Num(*v),
            Expr::Var(name) => Node::Slot(slot(name).ok_or_else(|| ExprError::Unbound(name.clone()))?),
            Expr::Neg(a) => Node::Neg(b(a)?),
            Expr::Add(x, y) => Node::Bin(BinOp::Add, b(x)?, b(y)?),
            Expr::Sub(x, y) => Node::Bin(BinOp::Sub, b(x)?, b(y)?),
            Expr::Mul(x, y) => Node::Bin(BinOp::Mul, b(x)?, b(y)?),
            Expr::Div(x, y) => Node::Bin(BinOp::Div, b(x)?, b(y)?),
            Expr::Pow(a, n) => Node::Pow(b(a)?, *n),
            Expr::Call(f, a) => Node::Call(*f, b(a)?),
        })
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => 3,
            Expr::Pow(..) => 4,
            Expr::Num(_) | Expr::Var(_) | Expr::Call(..) => 5,
        }
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) => Expr::Num(-v),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if a.is_zero() => b,
        _ if b.is_zero() => a,
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if b.is_zero() => a,
        _ if a.is_zero() => neg(b),
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if a.is_zero() || b.is_zero() => Expr::Num(0.0),
        _ if a.is_one() => b,
        _ if b.is_one() => a,
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        (Expr::Num(x), _) if *x == -1.0 => neg(b),
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if a.is_zero() => Expr::Num(0.0),
        _ if b.is_one() => a,
        (Expr::Num(x), Expr::Num(y)) if *y != 0.0 => Expr::Num(x / y),
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, n: i32) -> Expr {
    match a {
        _ if n == 0 => Expr::Num(1.0),
        _ if n == 1 => a,
        Expr::Num(x) if x != 0.0 || n > 0 => Expr::Num(x.powi(n)),
        other => Expr::Pow(Box::new(other), n),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    Expr::Call(f, Box::new(a))
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::Add(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::Sub(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::Mul(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::Div(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

impl FromStr for Expr {
    type Err = ExprError;
    fn from_str(s: &str) -> ExprResult<Expr> {
        Expr::parse(s)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // `min` is the lowest precedence a child may have without parentheses.
        fn child(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
            if e.precedence() < min {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Num(v) => {
                if v.is_sign_negative() {
                    write!(f, "-{}", -v)
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Var(name) => write!(f, "{name}"),
            Expr::Neg(a) => {
                f.write_str("-")?;
                child(f, a, 3)
            }
            Expr::Add(a, b) => {
                child(f, a, 1)?;
                f.write_str("+")?;
                child(f, b, 2)
            }
            Expr::Sub(a, b) => {
                child(f, a, 1)?;
                f.write_str("-")?;
                child(f, b, 2)
            }
            Expr::Mul(a, b) => {
                child(f, a, 2)?;
                f.write_str("*")?;
                child(f, b, 3)
            }
            Expr::Div(a, b) => {
                child(f, a, 2)?;
                f.write_str("/")?;
                child(f, b, 3)
            }
            Expr::Pow(a, n) => {
                child(f, a, 5)?;
                write!(f, "^{n}")
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Slot(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Pow(Box<Node>, i32),
    Call(Func, Box<Node>),
}

impl Node {
    fn eval(&self, x: &[f64]) -> ExprResult<f64> {
        Ok(match self {
            Node::Num(v) => *v,
            Node::Slot(i) => x[*i],
            Node::Neg(a) => -a.eval(x)?,
            Node::Bin(op, a, b) => {
                let (a, b) = (a.eval(x)?, b.eval(x)?);
                match op {
                    BinOp::Add => finite(a + b, "addition")?,
                    BinOp::Sub => finite(a - b, "subtraction")?,
                    BinOp::Mul => finite(a * b, "product")?,
                    BinOp::Div => checked_div(a, b)?,
                }
            }
            Node::Pow(a, n) => checked_pow(a.eval(x)?, *n)?,
            Node::Call(f, a) => f.apply(a.eval(x)?)?,
        })
    }
}

/// An expression whose variables were resolved to positional slots.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr {
    root: Node,
}

impl CompiledExpr {
    pub fn eval(&self, x: &[f64]) -> ExprResult<f64> {
        self.root.eval(x)
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self.root {
            Node::Num(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

fn syntax(offset: usize, message: impl Into<String>) -> ExprError {
    ExprError::Syntax {
        offset,
        message: message.into(),
    }
}

fn tokenize(src: &str) -> ExprResult<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => out.push((Tok::Plus, i)),
            b'-' => out.push((Tok::Minus, i)),
            b'*' => out.push((Tok::Star, i)),
            b'/' => out.push((Tok::Slash, i)),
            b'^' => out.push((Tok::Caret, i)),
            b'(' => out.push((Tok::LParen, i)),
            b')' => out.push((Tok::RParen, i)),
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let v: f64 = text
                    .parse()
                    .map_err(|_| syntax(start, format!("malformed number `{text}`")))?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(syntax(i, format!("unexpected character `{ch}`")));
            }
        }
        i += 1;
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

impl Parser {
    fn new(src: &str) -> ExprResult<Parser> {
        if src.trim().is_empty() {
            return Err(ExprError::Empty);
        }
        Ok(Parser {
            toks: tokenize(src)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn parse_all(mut self) -> ExprResult<Expr> {
        let e = self.expr()?;
        match self.peek() {
            Tok::End => Ok(e),
            Tok::RParen => Err(syntax(self.offset(), "unmatched `)`")),
            _ => Err(syntax(self.offset(), "expected an operator")),
        }
    }

    fn expr(&mut self) -> ExprResult<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = lhs + self.term()?;
                }
                Tok::Minus => {
                    self.bump();
                    lhs = lhs - self.term()?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> ExprResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = lhs * self.unary()?;
                }
                Tok::Slash => {
                    self.bump();
                    lhs = lhs / self.unary()?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> ExprResult<Expr> {
        match self.peek() {
            Tok::Minus => {
                self.bump();
                Ok(-self.unary()?)
            }
            Tok::Plus => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> ExprResult<Expr> {
        let base = self.primary()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let n = self.exponent()?;
        if *self.peek() == Tok::Caret {
            return Err(syntax(self.offset(), "chained powers need parentheses"));
        }
        Ok(Expr::Pow(Box::new(base), n))
    }

    fn exponent(&mut self) -> ExprResult<i32> {
        let paren = *self.peek() == Tok::LParen;
        if paren {
            self.bump();
        }
        let negative = *self.peek() == Tok::Minus;
        if negative {
            self.bump();
        }
        let (tok, at) = self.bump();
        let n = match tok {
            Tok::Num(v) if v.fract() == 0.0 && v <= f64::from(i32::MAX) => v as i32,
            _ => return Err(syntax(at, "exponent must be an integer literal")),
        };
        if paren {
            let (tok, at) = self.bump();
            if tok != Tok::RParen {
                return Err(syntax(at, "expected `)`"));
            }
        }
        Ok(if negative { -n } else { n })
    }

    fn primary(&mut self) -> ExprResult<Expr> {
        let (tok, at) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Ident(name) => {
                if *self.peek() != Tok::LParen {
                    return Ok(Expr::Var(name));
                }
                let func = Func::lookup(&name).ok_or(ExprError::UnknownFunction { name, offset: at })?;
                self.bump();
                let arg = self.expr()?;
                let (close, at) = self.bump();
                if close != Tok::RParen {
                    return Err(syntax(at, "expected `)`"));
                }
                Ok(call(func, arg))
            }
            Tok::LParen => {
                let inner = self.expr()?;
                let (close, at) = self.bump();
                if close != Tok::RParen {
                    return Err(syntax(at, "expected `)`"));
                }
                Ok(inner)
            }
            Tok::End => Err(syntax(at, "unexpected end of input")),
            _ => Err(syntax(at, "expected a number, variable or `(`")),
        }
    }
}
