//! Canonical infix rendering.
//!
//! Binary operators are always parenthesized with single spaces around the
//! operator; unary and special operators use function-call syntax. Constants
//! use the shortest representation that parses back to the same `f64`.

use super::{Expression, Node, Symbol};

pub trait SymbolNames {
    fn name(&self, s: Symbol) -> String;
}

impl<F: Fn(Symbol) -> String> SymbolNames for F {
    fn name(&self, s: Symbol) -> String {
        self(s)
    }
}

/// Names variables `v<n>` and parameters `k<n>`.
pub struct DefaultNames;

impl SymbolNames for DefaultNames {
    fn name(&self, s: Symbol) -> String {
        match s {
            Symbol::Var(v) => format!("v{}", v.0),
            Symbol::Param(p) => format!("k{}", p.0),
        }
    }
}

pub fn fmt_number(x: f64) -> String {
    format!("{x:?}")
}

pub(super) fn write(e: &Expression, names: &dyn SymbolNames, out: &mut String) {
    let call = |name: &str, args: &[&Expression], extra: &[f64], out: &mut String| {
        out.push_str(name);
        out.push('(');
        for (i, a) in args.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            write(a, names, out);
        }
        for x in extra {
            out.push_str(", ");
            out.push_str(&fmt_number(*x));
        }
        out.push(')');
    };
    let binary = |a: &Expression, op: &str, b: &Expression, out: &mut String| {
        out.push('(');
        write(a, names, out);
        out.push(' ');
        out.push_str(op);
        out.push(' ');
        write(b, names, out);
        out.push(')');
    };
    match e.node() {
        Node::Const(c) => out.push_str(&fmt_number(*c)),
        Node::Var(v) => out.push_str(&names.name(Symbol::Var(*v))),
        Node::Param(p) => out.push_str(&names.name(Symbol::Param(*p))),
        Node::Neg(a) => call("neg", &[a], &[], out),
        Node::Log(a) => call("log", &[a], &[], out),
        Node::Recip(a) => call("recip", &[a], &[], out),
        Node::Pow(a, k) => call("pow", &[a], &[*k], out),
        Node::ClampMin(a, c) => call("max", &[a], &[*c], out),
        Node::IfAbove { arg, threshold, then } => {
            out.push_str("ifabove(");
            write(arg, names, out);
            out.push_str(", ");
            out.push_str(&fmt_number(*threshold));
            out.push_str(", ");
            write(then, names, out);
            out.push(')');
        }
        Node::Add(a, b) => binary(a, "+", b, out),
        Node::Sub(a, b) => binary(a, "-", b, out),
        Node::Mul(a, b) => binary(a, "*", b, out),
        Node::Div(a, b) => binary(a, "/", b, out),
        Node::Sum(ts) => {
            let refs: Vec<&Expression> = ts.iter().collect();
            call("sum", &refs, &[], out)
        }
    }
}
