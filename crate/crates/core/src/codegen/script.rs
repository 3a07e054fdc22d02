//! Line-oriented template script format.
//!
//! ```text
//! version 1
//! objective min_power
//! schedule diminishing 0.5
//! relinearize 5
//! proximal 0.5
//! protocol routing single_path
//! [DECLS]
//! var opt_var.phy.txPower
//! param HW.min_snr
//! msg MSG.lambda
//! [OBJECTIVE]
//! (opt_var.phy.txPower[self] - ...)
//! [BOUNDS]
//! opt_var.phy.txPower 0.0 1000.0
//! [MESSAGES]
//! send MSG.lambda
//! recv MSG.lambda
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::decompose::StepSchedule;
use crate::expr::fmt_number;
use crate::ncp::ObjectiveTemplate;

use super::library::{self, is_keyword_text, KeywordKind};
use super::schematic::{parse_schematic, Schem};
use super::CodegenError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DeclClass {
    Var,
    Param,
    Msg,
}

impl DeclClass {
    fn as_str(self) -> &'static str {
        match self {
            DeclClass::Var => "var",
            DeclClass::Param => "param",
            DeclClass::Msg => "msg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Declaration {
    pub class: DeclClass,
    pub keyword: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundDecl {
    pub keyword: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Send,
    Recv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageDecl {
    pub direction: Direction,
    pub keyword: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub version: u32,
    pub objective: ObjectiveTemplate,
    pub schedule: StepSchedule,
    /// Rounds between re-expansions of the linearized constraints.
    pub relinearize: u32,
    /// Weight of the proximal term anchoring each local solve.
    pub proximal: f64,
    /// `(layer, protocol)` selections.
    pub protocols: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateScript {
    pub header: Header,
    pub decls: Vec<Declaration>,
    pub objective: Schem,
    pub bounds: Vec<BoundDecl>,
    pub messages: Vec<MessageDecl>,
}

impl TemplateScript {
    pub fn class_of(&self, keyword: &str) -> Option<DeclClass> {
        self.decls.iter().find(|d| d.keyword == keyword).map(|d| d.class)
    }

    pub fn bound(&self, keyword: &str) -> Option<(f64, f64)> {
        self.bounds.iter().find(|b| b.keyword == keyword).map(|b| (b.lo, b.hi))
    }

    pub fn render(&self) -> String {
        let h = &self.header;
        let mut out = String::new();
        let _ = writeln!(out, "version {}", h.version);
        let _ = writeln!(out, "objective {}", h.objective.id());
        let _ = match h.schedule {
            StepSchedule::Constant(a) => writeln!(out, "schedule constant {}", fmt_number(a)),
            StepSchedule::Diminishing(a) => writeln!(out, "schedule diminishing {}", fmt_number(a)),
        };
        let _ = writeln!(out, "relinearize {}", h.relinearize);
        let _ = writeln!(out, "proximal {}", fmt_number(h.proximal));
        for (layer, proto) in &h.protocols {
            let _ = writeln!(out, "protocol {layer} {proto}");
        }
        out.push_str("[DECLS]\n");
        for d in &self.decls {
            let _ = writeln!(out, "{} {}", d.class.as_str(), d.keyword);
        }
        out.push_str("[OBJECTIVE]\n");
        out.push_str(&self.objective.render());
        out.push('\n');
        out.push_str("[BOUNDS]\n");
        for b in &self.bounds {
            let _ = writeln!(out, "{} {} {}", b.keyword, fmt_number(b.lo), fmt_number(b.hi));
        }
        out.push_str("[MESSAGES]\n");
        for m in &self.messages {
            let dir = match m.direction {
                Direction::Send => "send",
                Direction::Recv => "recv",
            };
            let _ = writeln!(out, "{dir} {}", m.keyword);
        }
        out
    }

    /// Checks keywords against the library and the declarations.
    pub fn validate(&self) -> Result<(), CodegenError> {
        let mut seen = BTreeSet::new();
        for d in &self.decls {
            let info = library::lookup(&d.keyword).ok_or_else(|| CodegenError::UnknownKeyword(d.keyword.clone()))?;
            if !seen.insert(d.keyword.as_str()) {
                return Err(CodegenError::DuplicateDeclaration(d.keyword.clone()));
            }
            let allowed = match info.kind {
                KeywordKind::Variable(_) => d.class != DeclClass::Msg,
                KeywordKind::Hardware | KeywordKind::Location => d.class == DeclClass::Param,
                KeywordKind::Message => d.class == DeclClass::Msg,
                KeywordKind::Net | KeywordKind::Axis(_) => false,
            };
            if !allowed {
                return Err(CodegenError::BadDeclaration(format!("{} {}", d.class.as_str(), d.keyword)));
            }
        }
        for k in self.objective.keywords() {
            let info = library::lookup(k).ok_or_else(|| CodegenError::UnknownKeyword(k.to_string()))?;
            let needs_decl = !matches!(info.kind, KeywordKind::Net | KeywordKind::Axis(_));
            if needs_decl && !seen.contains(k) {
                return Err(CodegenError::Undeclared(k.to_string()));
            }
        }
        let mut bounded = BTreeSet::new();
        for b in &self.bounds {
            let info = library::lookup(&b.keyword).ok_or_else(|| CodegenError::UnknownKeyword(b.keyword.clone()))?;
            if !matches!(info.kind, KeywordKind::Variable(_) | KeywordKind::Axis(_)) {
                return Err(CodegenError::BadDeclaration(format!("bounds on {}", b.keyword)));
            }
            if !bounded.insert(b.keyword.as_str()) {
                return Err(CodegenError::DuplicateDeclaration(b.keyword.clone()));
            }
            if !(b.lo <= b.hi) {
                return Err(CodegenError::BadDeclaration(format!("empty bounds on {}", b.keyword)));
            }
        }
        for m in &self.messages {
            let info = library::lookup(&m.keyword).ok_or_else(|| CodegenError::UnknownKeyword(m.keyword.clone()))?;
            if info.kind != KeywordKind::Message {
                return Err(CodegenError::BadDeclaration(format!("message entry {}", m.keyword)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Header,
    Decls,
    Objective,
    Bounds,
    Messages,
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> CodegenError {
    CodegenError::SyntaxError { line, col, message: message.into() }
}

fn number(tok: &str, line: usize, col: usize) -> Result<f64, CodegenError> {
    tok.parse::<f64>().map_err(|_| syntax(line, col, format!("expected a number, found `{tok}`")))
}

/// Splits a line into whitespace-separated tokens with 1-based columns.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push((s, &line[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, &line[s..]));
    }
    out.into_iter().map(|(s, t)| (line[..s].chars().count() + 1, t)).collect()
}

fn keyword_token(tok: (usize, &str), line: usize) -> Result<String, CodegenError> {
    if is_keyword_text(tok.1) {
        Ok(tok.1.to_string())
    } else {
        Err(syntax(line, tok.0, format!("malformed keyword `{}`", tok.1)))
    }
}

pub fn parse_template(text: &str) -> Result<TemplateScript, CodegenError> {
    let mut section = Section::Header;
    let mut opened = BTreeSet::new();
    let mut version = None;
    let mut objective_id = None;
    let mut schedule = None;
    let mut relinearize = None;
    let mut proximal = None;
    let mut protocols = Vec::new();
    let mut decls = Vec::new();
    let mut objective = None;
    let mut bounds = Vec::new();
    let mut messages = Vec::new();
    let mut last_line = 0;

    for (ln, raw) in text.split('\n').enumerate() {
        let line_no = ln + 1;
        last_line = line_no;
        let content = raw.split('#').next().unwrap_or("");
        let toks = tokens(content);
        if toks.is_empty() {
            continue;
        }
        let first = toks[0];
        if first.1.starts_with('[') {
            let next = match first.1 {
                "[DECLS]" => Section::Decls,
                "[OBJECTIVE]" => Section::Objective,
                "[BOUNDS]" => Section::Bounds,
                "[MESSAGES]" => Section::Messages,
                other => return Err(syntax(line_no, first.0, format!("unknown section `{other}`"))),
            };
            if toks.len() > 1 {
                return Err(syntax(line_no, toks[1].0, "unexpected text after section header"));
            }
            if !opened.insert(next as u8) {
                return Err(syntax(line_no, first.0, format!("section {} opened twice", first.1)));
            }
            section = next;
            continue;
        }
        let arity = |n: usize| -> Result<(), CodegenError> {
            if toks.len() == n {
                Ok(())
            } else if toks.len() > n {
                Err(syntax(line_no, toks[n].0, "unexpected extra field"))
            } else {
                Err(syntax(line_no, content.trim_end().chars().count() + 1, "missing field"))
            }
        };
        match section {
            Section::Header => match first.1 {
                "version" => {
                    arity(2)?;
                    let v = toks[1].1.parse::<u32>().map_err(|_| syntax(line_no, toks[1].0, "expected a version number"))?;
                    version = Some(v);
                }
                "objective" => {
                    arity(2)?;
                    let o = ObjectiveTemplate::from_id(toks[1].1)
                        .ok_or_else(|| syntax(line_no, toks[1].0, format!("unknown objective `{}`", toks[1].1)))?;
                    objective_id = Some(o);
                }
                "schedule" => {
                    arity(3)?;
                    let a = number(toks[2].1, line_no, toks[2].0)?;
                    if !(a > 0.0) {
                        return Err(syntax(line_no, toks[2].0, "step size must be positive"));
                    }
                    schedule = Some(match toks[1].1 {
                        "constant" => StepSchedule::Constant(a),
                        "diminishing" => StepSchedule::Diminishing(a),
                        other => return Err(syntax(line_no, toks[1].0, format!("unknown schedule `{other}`"))),
                    });
                }
                "relinearize" => {
                    arity(2)?;
                    let r = toks[1].1.parse::<u32>().ok().filter(|&r| r > 0);
                    relinearize = Some(r.ok_or_else(|| syntax(line_no, toks[1].0, "expected a positive round count"))?);
                }
                "proximal" => {
                    arity(2)?;
                    let t = number(toks[1].1, line_no, toks[1].0)?;
                    if !(t > 0.0) {
                        return Err(syntax(line_no, toks[1].0, "proximal weight must be positive"));
                    }
                    proximal = Some(t);
                }
                "protocol" => {
                    arity(3)?;
                    protocols.push((keyword_token(toks[1], line_no)?, keyword_token(toks[2], line_no)?));
                }
                other => return Err(syntax(line_no, first.0, format!("unknown header field `{other}`"))),
            },
            Section::Decls => {
                arity(2)?;
                let class = match first.1 {
                    "var" => DeclClass::Var,
                    "param" => DeclClass::Param,
                    "msg" => DeclClass::Msg,
                    other => return Err(syntax(line_no, first.0, format!("unknown class `{other}`"))),
                };
                decls.push(Declaration { class, keyword: keyword_token(toks[1], line_no)? });
            }
            Section::Objective => {
                if objective.is_some() {
                    return Err(syntax(line_no, first.0, "the objective takes exactly one line"));
                }
                let offset = first.0 - 1;
                let body = content.trim();
                let parsed = parse_schematic(body).map_err(|e| syntax(line_no, e.col + offset, e.message))?;
                objective = Some(parsed);
            }
            Section::Bounds => {
                arity(3)?;
                let keyword = keyword_token(first, line_no)?;
                let lo = number(toks[1].1, line_no, toks[1].0)?;
                let hi = number(toks[2].1, line_no, toks[2].0)?;
                bounds.push(BoundDecl { keyword, lo, hi });
            }
            Section::Messages => {
                arity(2)?;
                let direction = match first.1 {
                    "send" => Direction::Send,
                    "recv" => Direction::Recv,
                    other => return Err(syntax(line_no, first.0, format!("unknown direction `{other}`"))),
                };
                messages.push(MessageDecl { direction, keyword: keyword_token(toks[1], line_no)? });
            }
        }
    }

    let missing = |what: &str| syntax(last_line, 1, format!("missing {what}"));
    let script = TemplateScript {
        header: Header {
            version: version.ok_or_else(|| missing("version"))?,
            objective: objective_id.ok_or_else(|| missing("objective template"))?,
            schedule: schedule.ok_or_else(|| missing("schedule"))?,
            relinearize: relinearize.ok_or_else(|| missing("relinearize interval"))?,
            proximal: proximal.ok_or_else(|| missing("proximal weight"))?,
            protocols,
        },
        decls,
        objective: objective.ok_or_else(|| missing("objective"))?,
        bounds,
        messages,
    };
    script.validate()?;
    Ok(script)
}
