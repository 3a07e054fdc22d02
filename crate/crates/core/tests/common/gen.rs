//! Random smooth expressions and bindings for property tests.

use proptest::prelude::*;
use swarmctl_core::expr::{Binding, Expression, ParamId, VarId};

pub const VARS: u32 = 3;
pub const PARAMS: u32 = 2;

fn leaf() -> impl Strategy<Value = Expression> {
    prop_oneof![
        (0..VARS).prop_map(|i| Expression::var(VarId(i))),
        (0..PARAMS).prop_map(|i| Expression::param(ParamId(i))),
        (-3.0..3.0f64).prop_map(Expression::constant),
    ]
}

fn positive(e: Expression) -> Expression {
    Expression::add(Expression::constant(1.0), Expression::mul(e.clone(), e))
}

/// Expressions that are defined and differentiable everywhere: every log,
/// reciprocal, quotient and power acts on `1 + e²`.
pub fn smooth_expr() -> impl Strategy<Value = Expression> {
    leaf().prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expression::add(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expression::sub(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expression::mul(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expression::div(a, positive(b))),
            inner.clone().prop_map(Expression::neg),
            inner.clone().prop_map(|a| Expression::log(positive(a))),
            inner.clone().prop_map(|a| Expression::recip(positive(a))),
            (inner.clone(), -2.5..2.5f64).prop_map(|(a, k)| Expression::pow(positive(a), k)),
            prop::collection::vec(inner, 1..4).prop_map(Expression::sum),
        ]
    })
}

pub fn binding() -> impl Strategy<Value = Binding> {
    (prop::collection::vec(-1.5..1.5f64, VARS as usize), prop::collection::vec(-1.5..1.5f64, PARAMS as usize)).prop_map(
        |(v, p)| {
            let mut b = Binding::new();
            for (i, x) in v.into_iter().enumerate() {
                b.set_var(VarId(i as u32), x);
            }
            for (i, x) in p.into_iter().enumerate() {
                b.set_param(ParamId(i as u32), x);
            }
            b
        },
    )
}
