//! Node-independent expressions over keywords and index sets.

use crate::expr::{fmt_number, parse_with, BinOp, Builder, ParseError};

use super::library::{self, FUNCTIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl SchemOp {
    fn symbol(self) -> &'static str {
        match self {
            SchemOp::Add => "+",
            SchemOp::Sub => "-",
            SchemOp::Mul => "*",
            SchemOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Schem {
    Num(f64),
    /// Keyword reference with optional index expressions such as `self`,
    /// `l` or `l.tx`.
    Ref { keyword: String, index: Vec<String> },
    Call { name: String, args: Vec<Schem> },
    /// `name(var in set: body)`.
    Bind { name: String, var: String, set: Box<Schem>, body: Box<Schem> },
    Bin(SchemOp, Box<Schem>, Box<Schem>),
}

impl Schem {
    pub fn num(x: f64) -> Self {
        Schem::Num(x)
    }

    pub fn kw(keyword: &str) -> Self {
        Schem::Ref { keyword: keyword.into(), index: Vec::new() }
    }

    pub fn at(keyword: &str, index: &str) -> Self {
        Schem::Ref { keyword: keyword.into(), index: vec![index.into()] }
    }

    pub fn call(name: &str, args: Vec<Schem>) -> Self {
        Schem::Call { name: name.into(), args }
    }

    pub fn bind(name: &str, var: &str, set: Schem, body: Schem) -> Self {
        Schem::Bind { name: name.into(), var: var.into(), set: Box::new(set), body: Box::new(body) }
    }

    pub fn bin(op: SchemOp, a: Schem, b: Schem) -> Self {
        Schem::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn add(a: Schem, b: Schem) -> Self {
        Self::bin(SchemOp::Add, a, b)
    }

    pub fn sub(a: Schem, b: Schem) -> Self {
        Self::bin(SchemOp::Sub, a, b)
    }

    pub fn mul(a: Schem, b: Schem) -> Self {
        Self::bin(SchemOp::Mul, a, b)
    }

    pub fn div(a: Schem, b: Schem) -> Self {
        Self::bin(SchemOp::Div, a, b)
    }

    /// Canonical text: fully parenthesized binaries, `name(args)` calls.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.write(&mut out);
        out
    }

    fn write(&self, out: &mut String) {
        match self {
            Schem::Num(x) => out.push_str(&fmt_number(*x)),
            Schem::Ref { keyword, index } => {
                out.push_str(keyword);
                if !index.is_empty() {
                    out.push('[');
                    out.push_str(&index.join(", "));
                    out.push(']');
                }
            }
            Schem::Call { name, args } => {
                out.push_str(name);
                out.push('(');
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    a.write(out);
                }
                out.push(')');
            }
            Schem::Bind { name, var, set, body } => {
                out.push_str(name);
                out.push('(');
                out.push_str(var);
                out.push_str(" in ");
                set.write(out);
                out.push_str(": ");
                body.write(out);
                out.push(')');
            }
            Schem::Bin(op, a, b) => {
                out.push('(');
                a.write(out);
                out.push(' ');
                out.push_str(op.symbol());
                out.push(' ');
                b.write(out);
                out.push(')');
            }
        }
    }

    /// Every keyword referenced, in order of appearance.
    pub fn keywords(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_keywords(&mut out);
        out
    }

    fn collect_keywords<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Schem::Num(_) => {}
            Schem::Ref { keyword, .. } => out.push(keyword),
            Schem::Call { args, .. } => args.iter().for_each(|a| a.collect_keywords(out)),
            Schem::Bind { set, body, .. } => {
                set.collect_keywords(out);
                body.collect_keywords(out);
            }
            Schem::Bin(_, a, b) => {
                a.collect_keywords(out);
                b.collect_keywords(out);
            }
        }
    }

    /// Whether any reference to `keyword` occurs in the tree.
    pub fn mentions(&self, keyword: &str) -> bool {
        self.keywords().contains(&keyword)
    }
}

struct SchemBuilder;

impl Builder for SchemBuilder {
    type Out = Schem;

    fn number(&mut self, x: f64) -> Schem {
        Schem::Num(x)
    }

    fn symbol(&mut self, name: &str, index: Option<Vec<String>>, col: usize) -> Result<Schem, ParseError> {
        let index = index.unwrap_or_default();
        if let Some(info) = library::lookup(name) {
            if info.arity != index.len() {
                return Err(ParseError::new(col, format!("`{name}` takes {} index expression(s)", info.arity)));
            }
        }
        Ok(Schem::Ref { keyword: name.into(), index })
    }

    fn call(&mut self, name: &str, args: Vec<Schem>, col: usize) -> Result<Schem, ParseError> {
        match FUNCTIONS.iter().find(|(f, _)| *f == name) {
            None => Err(ParseError::new(col, format!("unknown function `{name}`"))),
            Some((_, Some(n))) if *n != args.len() => {
                Err(ParseError::new(col, format!("`{name}` takes {n} argument(s)")))
            }
            Some(_) => Ok(Schem::Call { name: name.into(), args }),
        }
    }

    fn binder(&mut self, name: &str, var: &str, set: Schem, body: Schem, col: usize) -> Result<Schem, ParseError> {
        if name != "sum" {
            return Err(ParseError::new(col, format!("`{name}` cannot range over an index set")));
        }
        Ok(Schem::Bind { name: name.into(), var: var.into(), set: Box::new(set), body: Box::new(body) })
    }

    fn binary(&mut self, op: BinOp, a: Schem, b: Schem) -> Schem {
        let op = match op {
            BinOp::Add => SchemOp::Add,
            BinOp::Sub => SchemOp::Sub,
            BinOp::Mul => SchemOp::Mul,
            BinOp::Div => SchemOp::Div,
        };
        Schem::bin(op, a, b)
    }

    fn negate(&mut self, a: Schem) -> Schem {
        match a {
            Schem::Num(x) => Schem::Num(-x),
            other => Schem::call("neg", vec![other]),
        }
    }
}

/// Parses schematic text. Keyword validity is checked by the caller.
pub fn parse_schematic(text: &str) -> Result<Schem, ParseError> {
    parse_with(text, &mut SchemBuilder)
}
