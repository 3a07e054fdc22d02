//! Infix expression parser.
//!
//! Accepts the canonical rendering plus ordinary operator precedence. The
//! grammar is shared with template scripts through [`Builder`]: the same
//! tokens and precedence rules produce either an [`Expression`] or a
//! schematic tree, depending on the builder.

use thiserror::Error;

use super::{Expression, Symbol};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("column {col}: {message}")]
pub struct ParseError {
    pub col: usize,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(col: usize, message: impl Into<String>) -> Self {
        Self { col, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Plus,
    Minus,
    Star,
    Slash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

pub(crate) trait Builder {
    type Out;
    fn number(&mut self, x: f64) -> Self::Out;
    fn symbol(&mut self, name: &str, index: Option<Vec<String>>, col: usize) -> Result<Self::Out, ParseError>;
    fn call(&mut self, name: &str, args: Vec<Self::Out>, col: usize) -> Result<Self::Out, ParseError>;
    fn binder(&mut self, name: &str, var: &str, set: Self::Out, body: Self::Out, col: usize)
        -> Result<Self::Out, ParseError>;
    fn binary(&mut self, op: BinOp, a: Self::Out, b: Self::Out) -> Self::Out;
    fn negate(&mut self, a: Self::Out) -> Self::Out;
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out: Vec<(Tok, usize)> = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let literal_context = matches!(
            out.last().map(|t| &t.0),
            None | Some(Tok::LParen | Tok::LBracket | Tok::Comma | Tok::Colon | Tok::Plus | Tok::Minus | Tok::Star | Tok::Slash)
        );
        let starts_number = c.is_ascii_digit()
            || (c == '-' && literal_context && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()));
        if starts_number {
            let start = i;
            if c == '-' {
                i += 1;
            }
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let x = s.parse::<f64>().map_err(|_| ParseError::new(col, format!("bad number `{s}`")))?;
            out.push((Tok::Num(x), col));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            loop {
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let dotted = i + 1 < chars.len()
                    && chars[i] == '.'
                    && (chars[i + 1].is_ascii_alphabetic() || chars[i + 1] == '_');
                if dotted {
                    i += 1;
                } else {
                    break;
                }
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), col));
            continue;
        }
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            ',' => Tok::Comma,
            ':' => Tok::Colon,
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            _ => return Err(ParseError::new(col, format!("unexpected character `{c}`"))),
        };
        out.push((tok, col));
        i += 1;
    }
    Ok(out)
}

struct Parser<'b, B: Builder> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end_col: usize,
    b: &'b mut B,
}

impl<B: Builder> Parser<'_, B> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|t| &t.0)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.1)
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ParseError::new(self.col(), format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<B::Out, ParseError> {
        let mut acc = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(acc),
            };
            self.pos += 1;
            let rhs = self.term()?;
            acc = self.b.binary(op, acc, rhs);
        }
    }

    fn term(&mut self) -> Result<B::Out, ParseError> {
        let mut acc = self.factor()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => return Ok(acc),
            };
            self.pos += 1;
            let rhs = self.factor()?;
            acc = self.b.binary(op, acc, rhs);
        }
    }

    fn factor(&mut self) -> Result<B::Out, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            let inner = self.factor()?;
            return Ok(self.b.negate(inner));
        }
        self.atom()
    }

    fn index_list(&mut self) -> Result<Vec<String>, ParseError> {
        let mut idx = Vec::new();
        loop {
            match self.peek().cloned() {
                Some(Tok::Ident(s)) => {
                    self.pos += 1;
                    idx.push(s);
                }
                _ => return Err(ParseError::new(self.col(), "expected index name")),
            }
            match self.peek() {
                Some(Tok::Comma) => self.pos += 1,
                Some(Tok::RBracket) => {
                    self.pos += 1;
                    return Ok(idx);
                }
                _ => return Err(ParseError::new(self.col(), "expected `,` or `]`")),
            }
        }
    }

    fn reference(&mut self) -> Result<B::Out, ParseError> {
        let col = self.col();
        let name = match self.peek().cloned() {
            Some(Tok::Ident(s)) => s,
            _ => return Err(ParseError::new(col, "expected keyword")),
        };
        self.pos += 1;
        let index = if self.peek() == Some(&Tok::LBracket) {
            self.pos += 1;
            Some(self.index_list()?)
        } else {
            None
        };
        self.b.symbol(&name, index, col)
    }

    fn atom(&mut self) -> Result<B::Out, ParseError> {
        let col = self.col();
        match self.peek().cloned() {
            Some(Tok::Num(x)) => {
                self.pos += 1;
                Ok(self.b.number(x))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) if self.peek_at(1) == Some(&Tok::LParen) => {
                self.pos += 2;
                let is_binder = matches!(self.peek(), Some(Tok::Ident(_)))
                    && matches!(self.peek_at(1), Some(Tok::Ident(s)) if s == "in");
                if is_binder {
                    let var = match self.peek().cloned() {
                        Some(Tok::Ident(v)) => v,
                        _ => unreachable!(),
                    };
                    self.pos += 2;
                    let set = self.reference()?;
                    self.expect(Tok::Colon, "`:`")?;
                    let body = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    return self.b.binder(&name, &var, set, body, col);
                }
                let mut args = Vec::new();
                if self.peek() == Some(&Tok::RParen) {
                    self.pos += 1;
                } else {
                    loop {
                        args.push(self.expr()?);
                        match self.peek() {
                            Some(Tok::Comma) => self.pos += 1,
                            Some(Tok::RParen) => {
                                self.pos += 1;
                                break;
                            }
                            _ => return Err(ParseError::new(self.col(), "expected `,` or `)`")),
                        }
                    }
                }
                self.b.call(&name, args, col)
            }
            Some(Tok::Ident(_)) => self.reference(),
            Some(_) => Err(ParseError::new(col, "unexpected token")),
            None => Err(ParseError::new(col, "unexpected end of input")),
        }
    }
}

pub(crate) fn parse_with<B: Builder>(text: &str, b: &mut B) -> Result<B::Out, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, end_col: text.chars().count() + 1, b };
    let out = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(ParseError::new(p.col(), "trailing input"));
    }
    Ok(out)
}

struct ExprBuilder<'r> {
    resolve: &'r mut dyn FnMut(&str) -> Option<Symbol>,
}

fn const_arg(e: &Expression, col: usize, what: &str) -> Result<f64, ParseError> {
    e.as_const().ok_or_else(|| ParseError::new(col, format!("{what} must be a numeric literal")))
}

impl Builder for ExprBuilder<'_> {
    type Out = Expression;

    fn number(&mut self, x: f64) -> Expression {
        Expression::constant(x)
    }

    fn symbol(&mut self, name: &str, index: Option<Vec<String>>, col: usize) -> Result<Expression, ParseError> {
        if index.is_some() {
            return Err(ParseError::new(col, "indexed symbols are not allowed here"));
        }
        (self.resolve)(name)
            .map(Expression::symbol)
            .ok_or_else(|| ParseError::new(col, format!("unknown symbol `{name}`")))
    }

    fn call(&mut self, name: &str, mut args: Vec<Expression>, col: usize) -> Result<Expression, ParseError> {
        let arity = |n: usize, args: &[Expression]| {
            if args.len() == n {
                Ok(())
            } else {
                Err(ParseError::new(col, format!("`{name}` takes {n} argument(s)")))
            }
        };
        match name {
            "log" | "neg" | "recip" => {
                arity(1, &args)?;
                let a = args.pop().unwrap();
                Ok(match name {
                    "log" => Expression::log(a),
                    "neg" => Expression::neg(a),
                    _ => Expression::recip(a),
                })
            }
            "pow" | "max" => {
                arity(2, &args)?;
                let k = const_arg(&args[1], col, "second argument")?;
                let a = args.swap_remove(0);
                Ok(if name == "pow" { Expression::pow(a, k) } else { Expression::clamp_min(a, k) })
            }
            "ifabove" => {
                arity(3, &args)?;
                let t = const_arg(&args[1], col, "threshold")?;
                let then = args.pop().unwrap();
                let arg = args.swap_remove(0);
                Ok(Expression::if_above(arg, t, then))
            }
            "sum" => Ok(Expression::sum(args)),
            _ => Err(ParseError::new(col, format!("unknown function `{name}`"))),
        }
    }

    fn binder(&mut self, name: &str, _: &str, _: Expression, _: Expression, col: usize) -> Result<Expression, ParseError> {
        Err(ParseError::new(col, format!("`{name}` over an index set is not allowed here")))
    }

    fn binary(&mut self, op: BinOp, a: Expression, b: Expression) -> Expression {
        match op {
            BinOp::Add => Expression::add(a, b),
            BinOp::Sub => Expression::sub(a, b),
            BinOp::Mul => Expression::mul(a, b),
            BinOp::Div => Expression::div(a, b),
        }
    }

    fn negate(&mut self, a: Expression) -> Expression {
        match a.as_const() {
            Some(c) => Expression::constant(-c),
            None => Expression::neg(a),
        }
    }
}

/// Parses infix text, resolving symbol names through `resolve`.
pub fn parse_expression(
    text: &str,
    resolve: &mut dyn FnMut(&str) -> Option<Symbol>,
) -> Result<Expression, ParseError> {
    parse_with(text, &mut ExprBuilder { resolve })
}
