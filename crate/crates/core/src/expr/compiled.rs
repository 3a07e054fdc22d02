//! Flattened postfix form for tight evaluation loops (grid search).

use super::{Expression, Node};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Var(u32),
    Param(u32),
    Neg,
    Log,
    Recip,
    Pow(f64),
    ClampMin(f64),
    IfAbove(f64),
    Add,
    Sub,
    Mul,
    Div,
    Sum(u32),
}

/// An expression compiled to a stack program over dense slices.
///
/// Evaluation does not report domain errors; an undefined operation yields
/// a non-finite value that callers treat as infeasible.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    ops: Vec<Op>,
    depth: usize,
}

impl CompiledExpr {
    pub fn new(e: &Expression) -> Self {
        let mut ops = Vec::new();
        emit(e, &mut ops);
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Var(_) | Op::Param(_) => depth += 1,
                Op::Add | Op::Sub | Op::Mul | Op::Div | Op::IfAbove(_) => depth -= 1,
                Op::Sum(n) => depth = depth + 1 - *n as usize,
                _ => {}
            }
            max_depth = max_depth.max(depth);
        }
        Self { ops, depth: max_depth.max(1) }
    }

    pub fn eval(&self, vars: &[f64], params: &[f64], stack: &mut Vec<f64>) -> f64 {
        stack.clear();
        stack.reserve(self.depth);
        for op in &self.ops {
            match *op {
                Op::Const(c) => stack.push(c),
                Op::Var(i) => stack.push(vars[i as usize]),
                Op::Param(i) => stack.push(params[i as usize]),
                Op::Neg => {
                    let a = stack.pop().unwrap();
                    stack.push(-a);
                }
                Op::Log => {
                    let a = stack.pop().unwrap();
                    stack.push(if a > 0.0 { a.ln() } else { f64::NAN });
                }
                Op::Recip => {
                    let a = stack.pop().unwrap();
                    stack.push(if a != 0.0 { 1.0 / a } else { f64::NAN });
                }
                Op::Pow(k) => {
                    let a = stack.pop().unwrap();
                    stack.push(if a == 0.0 && k < 0.0 { f64::NAN } else { a.powf(k) });
                }
                Op::ClampMin(c) => {
                    let a = stack.pop().unwrap();
                    stack.push(a.max(c));
                }
                Op::IfAbove(t) => {
                    let then = stack.pop().unwrap();
                    let arg = stack.pop().unwrap();
                    stack.push(if arg > t { then } else { 0.0 });
                }
                Op::Add | Op::Sub | Op::Mul | Op::Div => {
                    let b = stack.pop().unwrap();
                    let a = stack.pop().unwrap();
                    stack.push(match *op {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        _ => {
                            if b != 0.0 {
                                a / b
                            } else {
                                f64::NAN
                            }
                        }
                    });
                }
                Op::Sum(n) => {
                    let start = stack.len() - n as usize;
                    let s: f64 = stack.drain(start..).fold(0.0, |acc, x| acc + x);
                    stack.push(s);
                }
            }
        }
        stack.pop().unwrap_or(f64::NAN)
    }
}

fn emit(e: &Expression, ops: &mut Vec<Op>) {
    match e.node() {
        Node::Const(c) => ops.push(Op::Const(*c)),
        Node::Var(v) => ops.push(Op::Var(v.0)),
        Node::Param(p) => ops.push(Op::Param(p.0)),
        Node::Neg(a) => {
            emit(a, ops);
            ops.push(Op::Neg);
        }
        Node::Log(a) => {
            emit(a, ops);
            ops.push(Op::Log);
        }
        Node::Recip(a) => {
            emit(a, ops);
            ops.push(Op::Recip);
        }
        Node::Pow(a, k) => {
            emit(a, ops);
            ops.push(Op::Pow(*k));
        }
        Node::ClampMin(a, c) => {
            emit(a, ops);
            ops.push(Op::ClampMin(*c));
        }
        Node::IfAbove { arg, threshold, then } => {
            emit(arg, ops);
            emit(then, ops);
            ops.push(Op::IfAbove(*threshold));
        }
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            emit(a, ops);
            emit(b, ops);
            ops.push(match e.node() {
                Node::Add(..) => Op::Add,
                Node::Sub(..) => Op::Sub,
                Node::Mul(..) => Op::Mul,
                _ => Op::Div,
            });
        }
        Node::Sum(ts) => {
            for t in ts {
                emit(t, ops);
            }
            ops.push(Op::Sum(ts.len() as u32));
        }
    }
}
