//! Symbolic scalar expressions over decision variables and parameters.
//!
//! Trees are immutable and reference counted, so sub-expressions (channel
//! gains, interference sums) can be shared between constraints and across
//! threads without copying.

mod compiled;
mod parse;
mod render;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use compiled::CompiledExpr;
pub use parse::{parse_expression, ParseError};
pub(crate) use parse::{parse_with, BinOp, Builder};
pub use render::{fmt_number, DefaultNames, SymbolNames};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Var(VarId),
    Param(ParamId),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("no value bound for {0:?}")]
    MissingBinding(Symbol),
    #[error("{op} is undefined at {value}")]
    DomainError { op: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(VarId),
    Param(ParamId),
    Neg(Expression),
    Log(Expression),
    Recip(Expression),
    /// Power with a constant real exponent.
    Pow(Expression, f64),
    /// `max(arg, floor)` with a constant floor.
    ClampMin(Expression, f64),
    /// `then` where `arg > threshold`, zero elsewhere. Appears as the
    /// derivative of `ClampMin`.
    IfAbove {
        arg: Expression,
        threshold: f64,
        then: Expression,
    },
    Add(Expression, Expression),
    Sub(Expression, Expression),
    Mul(Expression, Expression),
    Div(Expression, Expression),
    Sum(Vec<Expression>),
}

#[derive(Clone, PartialEq)]
pub struct Expression(Arc<Node>);

impl fmt::Debug for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(&DefaultNames))
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(&DefaultNames))
    }
}

/// Source of symbol values during evaluation.
pub trait Env {
    fn var(&self, v: VarId) -> Option<f64>;
    fn param(&self, p: ParamId) -> Option<f64>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Binding {
    pub vars: BTreeMap<VarId, f64>,
    pub params: BTreeMap<ParamId, f64>,
}

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_var(mut self, v: VarId, x: f64) -> Self {
        self.vars.insert(v, x);
        self
    }

    pub fn with_param(mut self, p: ParamId, x: f64) -> Self {
        self.params.insert(p, x);
        self
    }

    pub fn set_var(&mut self, v: VarId, x: f64) {
        self.vars.insert(v, x);
    }

    pub fn set_param(&mut self, p: ParamId, x: f64) {
        self.params.insert(p, x);
    }
}

impl Env for Binding {
    fn var(&self, v: VarId) -> Option<f64> {
        self.vars.get(&v).copied()
    }
    fn param(&self, p: ParamId) -> Option<f64> {
        self.params.get(&p).copied()
    }
}

/// Dense binding indexed directly by `VarId.0` / `ParamId.0`.
#[derive(Debug, Clone, Copy)]
pub struct DenseEnv<'a> {
    pub vars: &'a [f64],
    pub params: &'a [f64],
}

impl Env for DenseEnv<'_> {
    fn var(&self, v: VarId) -> Option<f64> {
        self.vars.get(v.0 as usize).copied()
    }
    fn param(&self, p: ParamId) -> Option<f64> {
        self.params.get(p.0 as usize).copied()
    }
}

/// First-order expansion `constant + Σ coeff_v · (v − point_v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpression {
    /// Value of the expanded expression at the expansion point.
    pub constant: f64,
    pub coeffs: BTreeMap<VarId, f64>,
    pub point: BTreeMap<VarId, f64>,
}

impl AffineExpression {
    pub fn evaluate(&self, env: &impl Env) -> Result<f64, ExprError> {
        let mut acc = self.constant;
        for (v, c) in &self.coeffs {
            let x = env.var(*v).ok_or(ExprError::MissingBinding(Symbol::Var(*v)))?;
            acc += c * (x - self.point[v]);
        }
        Ok(acc)
    }

    pub fn to_expression(&self) -> Expression {
        let mut terms = vec![Expression::constant(self.constant)];
        for (v, c) in &self.coeffs {
            let shifted = Expression::sub(Expression::var(*v), Expression::constant(self.point[v]));
            terms.push(Expression::mul(Expression::constant(*c), shifted));
        }
        Expression::sum(terms)
    }
}

impl Expression {
    fn new(n: Node) -> Self {
        Expression(Arc::new(n))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(c: f64) -> Self {
        Self::new(Node::Const(c))
    }
    pub fn zero() -> Self {
        Self::constant(0.0)
    }
    pub fn one() -> Self {
        Self::constant(1.0)
    }
    pub fn var(v: VarId) -> Self {
        Self::new(Node::Var(v))
    }
    pub fn param(p: ParamId) -> Self {
        Self::new(Node::Param(p))
    }
    pub fn symbol(s: Symbol) -> Self {
        match s {
            Symbol::Var(v) => Self::var(v),
            Symbol::Param(p) => Self::param(p),
        }
    }
    pub fn neg(a: Expression) -> Self {
        Self::new(Node::Neg(a))
    }
    pub fn log(a: Expression) -> Self {
        Self::new(Node::Log(a))
    }
    pub fn recip(a: Expression) -> Self {
        Self::new(Node::Recip(a))
    }
    pub fn pow(a: Expression, k: f64) -> Self {
        Self::new(Node::Pow(a, k))
    }
    pub fn clamp_min(a: Expression, floor: f64) -> Self {
        Self::new(Node::ClampMin(a, floor))
    }
    pub fn if_above(arg: Expression, threshold: f64, then: Expression) -> Self {
        Self::new(Node::IfAbove { arg, threshold, then })
    }
    pub fn add(a: Expression, b: Expression) -> Self {
        Self::new(Node::Add(a, b))
    }
    pub fn sub(a: Expression, b: Expression) -> Self {
        Self::new(Node::Sub(a, b))
    }
    pub fn mul(a: Expression, b: Expression) -> Self {
        Self::new(Node::Mul(a, b))
    }
    pub fn div(a: Expression, b: Expression) -> Self {
        Self::new(Node::Div(a, b))
    }
    pub fn sum(terms: Vec<Expression>) -> Self {
        Self::new(Node::Sum(terms))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    /// Number of tree nodes, counting shared subtrees once per use.
    pub fn size(&self) -> usize {
        1 + match self.node() {
            Node::Const(_) | Node::Var(_) | Node::Param(_) => 0,
            Node::Neg(a) | Node::Log(a) | Node::Recip(a) | Node::Pow(a, _) | Node::ClampMin(a, _) => a.size(),
            Node::IfAbove { arg, then, .. } => arg.size() + then.size(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => a.size() + b.size(),
            Node::Sum(ts) => ts.iter().map(Expression::size).sum(),
        }
    }

    pub fn evaluate(&self, env: &impl Env) -> Result<f64, ExprError> {
        use ExprError::DomainError;
        Ok(match self.node() {
            Node::Const(c) => *c,
            Node::Var(v) => env.var(*v).ok_or(ExprError::MissingBinding(Symbol::Var(*v)))?,
            Node::Param(p) => env.param(*p).ok_or(ExprError::MissingBinding(Symbol::Param(*p)))?,
            Node::Neg(a) => -a.evaluate(env)?,
            Node::Log(a) => {
                let x = a.evaluate(env)?;
                if !(x > 0.0) {
                    return Err(DomainError { op: "log", value: x });
                }
                x.ln()
            }
            Node::Recip(a) => {
                let x = a.evaluate(env)?;
                if x == 0.0 || x.is_nan() {
                    return Err(DomainError { op: "recip", value: x });
                }
                1.0 / x
            }
            Node::Pow(a, k) => {
                let x = a.evaluate(env)?;
                let y = x.powf(*k);
                if y.is_nan() || (x == 0.0 && *k < 0.0) {
                    return Err(DomainError { op: "pow", value: x });
                }
                y
            }
            Node::ClampMin(a, floor) => a.evaluate(env)?.max(*floor),
            Node::IfAbove { arg, threshold, then } => {
                if arg.evaluate(env)? > *threshold {
                    then.evaluate(env)?
                } else {
                    0.0
                }
            }
            Node::Add(a, b) => a.evaluate(env)? + b.evaluate(env)?,
            Node::Sub(a, b) => a.evaluate(env)? - b.evaluate(env)?,
            Node::Mul(a, b) => a.evaluate(env)? * b.evaluate(env)?,
            Node::Div(a, b) => {
                let num = a.evaluate(env)?;
                let den = b.evaluate(env)?;
                if den == 0.0 || den.is_nan() {
                    return Err(DomainError { op: "div", value: den });
                }
                num / den
            }
            Node::Sum(ts) => {
                let mut acc = 0.0;
                for t in ts {
                    acc += t.evaluate(env)?;
                }
                acc
            }
        })
    }

    fn visit_symbols(&self, f: &mut impl FnMut(Symbol)) {
        match self.node() {
            Node::Const(_) => {}
            Node::Var(v) => f(Symbol::Var(*v)),
            Node::Param(p) => f(Symbol::Param(*p)),
            Node::Neg(a) | Node::Log(a) | Node::Recip(a) | Node::Pow(a, _) | Node::ClampMin(a, _) => a.visit_symbols(f),
            Node::IfAbove { arg, then, .. } => {
                arg.visit_symbols(f);
                then.visit_symbols(f);
            }
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.visit_symbols(f);
                b.visit_symbols(f);
            }
            Node::Sum(ts) => ts.iter().for_each(|t| t.visit_symbols(f)),
        }
    }

    pub fn free_vars(&self) -> BTreeSet<VarId> {
        let mut out = BTreeSet::new();
        self.visit_symbols(&mut |s| {
            if let Symbol::Var(v) = s {
                out.insert(v);
            }
        });
        out
    }

    pub fn free_params(&self) -> BTreeSet<ParamId> {
        let mut out = BTreeSet::new();
        self.visit_symbols(&mut |s| {
            if let Symbol::Param(p) = s {
                out.insert(p);
            }
        });
        out
    }

    /// Replaces symbols for which `f` returns a replacement. The result is
    /// not simplified.
    pub fn substitute(&self, f: &mut impl FnMut(Symbol) -> Option<Expression>) -> Expression {
        self.substitute_dyn(f)
    }

    fn substitute_dyn(&self, f: &mut dyn FnMut(Symbol) -> Option<Expression>) -> Expression {
        match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(v) => f(Symbol::Var(*v)).unwrap_or_else(|| self.clone()),
            Node::Param(p) => f(Symbol::Param(*p)).unwrap_or_else(|| self.clone()),
            Node::Neg(a) => Self::neg(a.substitute_dyn(f)),
            Node::Log(a) => Self::log(a.substitute_dyn(f)),
            Node::Recip(a) => Self::recip(a.substitute_dyn(f)),
            Node::Pow(a, k) => Self::pow(a.substitute_dyn(f), *k),
            Node::ClampMin(a, c) => Self::clamp_min(a.substitute_dyn(f), *c),
            Node::IfAbove { arg, threshold, then } => {
                Self::if_above(arg.substitute_dyn(f), *threshold, then.substitute_dyn(f))
            }
            Node::Add(a, b) => Self::add(a.substitute_dyn(f), b.substitute_dyn(f)),
            Node::Sub(a, b) => Self::sub(a.substitute_dyn(f), b.substitute_dyn(f)),
            Node::Mul(a, b) => Self::mul(a.substitute_dyn(f), b.substitute_dyn(f)),
            Node::Div(a, b) => Self::div(a.substitute_dyn(f), b.substitute_dyn(f)),
            Node::Sum(ts) => Self::sum(ts.iter().map(|t| t.substitute_dyn(f)).collect()),
        }
    }

    /// Local structural simplification: constant folding and removal of
    /// additive zeros and multiplicative ones.
    pub fn simplify(&self) -> Expression {
        match self.node() {
            Node::Const(_) | Node::Var(_) | Node::Param(_) => self.clone(),
            Node::Neg(a) => simp::neg(a.simplify()),
            Node::Log(a) => simp::log(a.simplify()),
            Node::Recip(a) => simp::recip(a.simplify()),
            Node::Pow(a, k) => simp::pow(a.simplify(), *k),
            Node::ClampMin(a, c) => simp::clamp_min(a.simplify(), *c),
            Node::IfAbove { arg, threshold, then } => simp::if_above(arg.simplify(), *threshold, then.simplify()),
            Node::Add(a, b) => simp::add(a.simplify(), b.simplify()),
            Node::Sub(a, b) => simp::sub(a.simplify(), b.simplify()),
            Node::Mul(a, b) => simp::mul(a.simplify(), b.simplify()),
            Node::Div(a, b) => simp::div(a.simplify(), b.simplify()),
            Node::Sum(ts) => simp::sum(ts.iter().map(Expression::simplify).collect()),
        }
    }

    /// Symbolic partial derivative with respect to `v`, simplified as it is
    /// built.
    pub fn differentiate(&self, v: VarId) -> Expression {
        match self.node() {
            Node::Const(_) | Node::Param(_) => Self::zero(),
            Node::Var(w) => {
                if *w == v {
                    Self::one()
                } else {
                    Self::zero()
                }
            }
            Node::Neg(a) => simp::neg(a.differentiate(v)),
            Node::Log(a) => simp::div(a.differentiate(v), a.clone()),
            Node::Recip(a) => {
                let da = a.differentiate(v);
                simp::neg(simp::div(da, simp::mul(a.clone(), a.clone())))
            }
            Node::Pow(a, k) => {
                let da = a.differentiate(v);
                if da.is_zero() {
                    return Self::zero();
                }
                simp::mul(simp::mul(Self::constant(*k), simp::pow(a.clone(), k - 1.0)), da)
            }
            Node::ClampMin(a, c) => simp::if_above(a.clone(), *c, a.differentiate(v)),
            Node::IfAbove { arg, threshold, then } => simp::if_above(arg.clone(), *threshold, then.differentiate(v)),
            Node::Add(a, b) => simp::add(a.differentiate(v), b.differentiate(v)),
            Node::Sub(a, b) => simp::sub(a.differentiate(v), b.differentiate(v)),
            Node::Mul(a, b) => {
                let left = simp::mul(a.differentiate(v), b.clone());
                let right = simp::mul(a.clone(), b.differentiate(v));
                simp::add(left, right)
            }
            Node::Div(a, b) => {
                let da = a.differentiate(v);
                let db = b.differentiate(v);
                if db.is_zero() {
                    return simp::div(da, b.clone());
                }
                let num = simp::sub(simp::mul(da, b.clone()), simp::mul(a.clone(), db));
                simp::div(num, simp::mul(b.clone(), b.clone()))
            }
            Node::Sum(ts) => simp::sum(ts.iter().map(|t| t.differentiate(v)).collect()),
        }
    }

    /// First-order expansion at `point`, which must bind every free symbol.
    pub fn linearize_at(&self, point: &Binding) -> Result<AffineExpression, ExprError> {
        let constant = self.evaluate(point)?;
        let mut coeffs = BTreeMap::new();
        let mut at = BTreeMap::new();
        for v in self.free_vars() {
            let b = point.var(v).ok_or(ExprError::MissingBinding(Symbol::Var(v)))?;
            coeffs.insert(v, self.differentiate(v).evaluate(point)?);
            at.insert(v, b);
        }
        Ok(AffineExpression { constant, coeffs, point: at })
    }

    pub fn render(&self, names: &dyn SymbolNames) -> String {
        let mut out = String::new();
        render::write(self, names, &mut out);
        out
    }
}

macro_rules! binary_op {
    ($trait:ident, $method:ident, $ctor:ident) => {
        impl std::ops::$trait for Expression {
            type Output = Expression;
            fn $method(self, rhs: Expression) -> Expression {
                Expression::$ctor(self, rhs)
            }
        }
        impl std::ops::$trait for &Expression {
            type Output = Expression;
            fn $method(self, rhs: &Expression) -> Expression {
                Expression::$ctor(self.clone(), rhs.clone())
            }
        }
    };
}

binary_op!(Add, add, add);
binary_op!(Sub, sub, sub);
binary_op!(Mul, mul, mul);
binary_op!(Div, div, div);

impl std::ops::Neg for Expression {
    type Output = Expression;
    fn neg(self) -> Expression {
        Expression::neg(self)
    }
}

/// Simplifying constructors.
pub mod simp {
    use super::{Expression, Node};

    pub fn add(a: Expression, b: Expression) -> Expression {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expression::constant(x + y),
            (Some(x), _) if x == 0.0 => b,
            (_, Some(y)) if y == 0.0 => a,
            _ => Expression::add(a, b),
        }
    }

    pub fn sub(a: Expression, b: Expression) -> Expression {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expression::constant(x - y),
            (_, Some(y)) if y == 0.0 => a,
            (Some(x), _) if x == 0.0 => neg(b),
            _ => Expression::sub(a, b),
        }
    }

    pub fn mul(a: Expression, b: Expression) -> Expression {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expression::constant(x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => Expression::zero(),
            (Some(x), _) if x == 1.0 => b,
            (_, Some(y)) if y == 1.0 => a,
            _ => Expression::mul(a, b),
        }
    }

    pub fn div(a: Expression, b: Expression) -> Expression {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) if y != 0.0 => Expression::constant(x / y),
            (Some(x), _) if x == 0.0 => Expression::zero(),
            (_, Some(y)) if y == 1.0 => a,
            _ => Expression::div(a, b),
        }
    }

    pub fn neg(a: Expression) -> Expression {
        match a.node() {
            Node::Const(c) => Expression::constant(-c),
            Node::Neg(inner) => inner.clone(),
            _ => Expression::neg(a),
        }
    }

    pub fn log(a: Expression) -> Expression {
        match a.as_const() {
            Some(c) if c > 0.0 => Expression::constant(c.ln()),
            _ => Expression::log(a),
        }
    }

    pub fn recip(a: Expression) -> Expression {
        match a.as_const() {
            Some(c) if c != 0.0 => Expression::constant(1.0 / c),
            _ => Expression::recip(a),
        }
    }

    pub fn pow(a: Expression, k: f64) -> Expression {
        if k == 1.0 {
            return a;
        }
        if k == 0.0 {
            return Expression::one();
        }
        match a.as_const() {
            Some(c) if c.powf(k).is_finite() => Expression::constant(c.powf(k)),
            _ => Expression::pow(a, k),
        }
    }

    pub fn clamp_min(a: Expression, floor: f64) -> Expression {
        match a.as_const() {
            Some(c) => Expression::constant(c.max(floor)),
            None => Expression::clamp_min(a, floor),
        }
    }

    pub fn if_above(arg: Expression, threshold: f64, then: Expression) -> Expression {
        if then.is_zero() {
            return then;
        }
        match arg.as_const() {
            Some(c) if c > threshold => then,
            Some(_) => Expression::zero(),
            None => Expression::if_above(arg, threshold, then),
        }
    }

    pub fn sum(terms: Vec<Expression>) -> Expression {
        let mut constant = 0.0;
        let mut kept = Vec::with_capacity(terms.len());
        for t in terms {
            match t.as_const() {
                Some(c) => constant += c,
                None => kept.push(t),
            }
        }
        if constant != 0.0 {
            kept.push(Expression::constant(constant));
        }
        match kept.len() {
            0 => Expression::zero(),
            1 => kept.pop().unwrap(),
            _ => Expression::sum(kept),
        }
    }
}
