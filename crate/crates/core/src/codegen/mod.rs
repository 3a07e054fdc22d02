//! Template scripts: emission from a decomposed problem, parsing and
//! per-node instantiation.

mod instantiate;
pub mod library;
mod schematic;
mod script;

use thiserror::Error;

use crate::decompose::StepSchedule;
use crate::expr::ExprError;
use crate::ncp::{LayerId, NetworkControlProblem, ObjectiveTemplate};

pub use instantiate::{
    instantiate, ExecutablePlan, HwKey, LocalVar, MessageRouting, NetQuantity, NetworkView, OutgoingLink, ParamSource,
    PlanParam, PlanPenalty, PlanRouteGroup, TrackedConstraint,
};
pub use schematic::{parse_schematic, Schem, SchemOp};
pub use script::{parse_template, BoundDecl, DeclClass, Declaration, Direction, Header, MessageDecl, TemplateScript};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodegenError {
    #[error("line {line}, column {col}: {message}")]
    SyntaxError { line: usize, col: usize, message: String },
    #[error("unknown keyword `{0}`")]
    UnknownKeyword(String),
    #[error("duplicate declaration of `{0}`")]
    DuplicateDeclaration(String),
    #[error("bad declaration: {0}")]
    BadDeclaration(String),
    #[error("`{0}` is used but not declared")]
    Undeclared(String),
    #[error("role conflict: {0}")]
    RoleConflict(String),
    #[error("instantiation failed: {0}")]
    Instantiation(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmitOptions {
    pub schedule: StepSchedule,
    pub relinearize: u32,
    pub proximal: f64,
    /// Without coordination the template keeps only the node's own share
    /// and exchanges no messages.
    pub coordinated: bool,
}

impl Default for EmitOptions {
    fn default() -> Self {
        Self { schedule: StepSchedule::Diminishing(0.5), relinearize: 5, proximal: 0.25, coordinated: true }
    }
}

fn family_layer_keyword(layer: LayerId) -> Option<&'static str> {
    match layer {
        LayerId::Motion => Some(library::LOC),
        LayerId::Physical => Some(library::TX_POWER),
        LayerId::Network => Some(library::ROUTE_ACTIVE),
        LayerId::Transport => Some(library::RATE),
        LayerId::Mac => None,
    }
}

struct Forms {
    loc: &'static str,
}

impl Forms {
    fn gain(&self, a: &str, b: &str) -> Schem {
        Schem::call("gain", vec![Schem::at(self.loc, a), Schem::at(self.loc, b)])
    }

    fn interference(&self, link: &str) -> Schem {
        Schem::bind(
            "sum",
            "j",
            Schem::at(library::INTERFERERS, link),
            Schem::mul(self.gain("j", &format!("{link}.rx")), Schem::at(library::TX_POWER, "j")),
        )
    }

    fn received(&self, link: &str) -> Schem {
        Schem::mul(
            self.gain(&format!("{link}.tx"), &format!("{link}.rx")),
            Schem::at(library::TX_POWER, &format!("{link}.tx")),
        )
    }

    fn sinr(&self, l: &str) -> Schem {
        let demand = Schem::mul(
            Schem::mul(Schem::at(library::ROUTE_ACTIVE, l), Schem::kw(library::MIN_SNR)),
            Schem::add(Schem::kw(library::NOISE), self.interference(l)),
        );
        Schem::sub(self.received(l), demand)
    }

    fn capacity(&self, f: &str) -> Schem {
        let sinr = Schem::div(self.received(f), Schem::add(Schem::kw(library::NOISE), self.interference(f)));
        let bits = Schem::div(
            Schem::call("log", vec![Schem::add(Schem::num(1.0), sinr)]),
            Schem::call("log", vec![Schem::num(2.0)]),
        );
        Schem::sub(
            Schem::mul(Schem::kw(library::BANDWIDTH), bits),
            Schem::mul(Schem::at(library::ROUTE_ACTIVE, f), Schem::at(library::RATE, &format!("{f}.session"))),
        )
    }
}

fn penalty_sum(var: &str, set: &str, inner: &str, theta: Schem) -> Schem {
    Schem::bind("sum", var, Schem::kw(set), Schem::mul(Schem::at(library::LAMBDA, var), Schem::call(inner, vec![theta])))
}

/// Builds the node-independent template for `p`.
pub fn emit_template(p: &NetworkControlProblem, opts: &EmitOptions) -> Result<TemplateScript, CodegenError> {
    if p.layers.contains(&LayerId::Mac) {
        return Err(CodegenError::BadDeclaration("the MAC layer has no keyword family".into()));
    }
    let forms = Forms { loc: if p.layers.contains(&LayerId::Motion) { library::LOC } else { library::LOCATION } };

    let share = match p.template {
        ObjectiveTemplate::MinPower => Schem::at(library::TX_POWER, "self"),
        ObjectiveTemplate::MaxLogRate => Schem::bind(
            "sum",
            "s",
            Schem::at(library::SESSIONS, "self"),
            Schem::call("neg", vec![Schem::call("log", vec![Schem::at(library::RATE, "s")])]),
        ),
    };
    let objective = if opts.coordinated {
        let mut terms = vec![
            penalty_sum("l", library::LINKS, "lin", forms.sinr("l")),
            penalty_sum("l", library::IN_LINKS, "base", forms.sinr("l")),
        ];
        if p.layers.contains(&LayerId::Transport) {
            terms.push(penalty_sum("f", library::FLOWS, "lin", forms.capacity("f")));
            terms.push(penalty_sum("f", library::IN_FLOWS, "base", forms.capacity("f")));
        }
        Schem::sub(share, Schem::call("sum", terms))
    } else {
        share
    };

    let mentioned: Vec<&str> = objective.keywords();
    let mut decls = Vec::new();
    for layer in [LayerId::Motion, LayerId::Physical, LayerId::Network, LayerId::Transport] {
        let Some(k) = family_layer_keyword(layer) else { continue };
        if p.layers.contains(&layer) {
            decls.push(Declaration { class: DeclClass::Var, keyword: k.into() });
        } else if mentioned.contains(&k) {
            decls.push(Declaration { class: DeclClass::Param, keyword: k.into() });
        }
    }
    for k in [library::LOCATION, library::MIN_SNR, library::NOISE, library::BANDWIDTH] {
        if mentioned.contains(&k) {
            decls.push(Declaration { class: DeclClass::Param, keyword: k.into() });
        }
    }
    if opts.coordinated {
        for k in [library::LAMBDA, library::REMOTE_POINT] {
            decls.push(Declaration { class: DeclClass::Msg, keyword: k.into() });
        }
    }

    let mut bounds = Vec::new();
    let var = |k: &str| decls.iter().any(|d: &Declaration| d.keyword == k && d.class == DeclClass::Var);
    if var(library::TX_POWER) {
        let (lo, hi) = p.bounds.power_mw;
        bounds.push(BoundDecl { keyword: library::TX_POWER.into(), lo, hi });
    }
    if var(library::ROUTE_ACTIVE) {
        bounds.push(BoundDecl { keyword: library::ROUTE_ACTIVE.into(), lo: 0.0, hi: 1.0 });
    }
    if var(library::RATE) {
        let (lo, hi) = p.bounds.rate_bps;
        bounds.push(BoundDecl { keyword: library::RATE.into(), lo, hi });
    }
    if var(library::LOC) {
        let arena = p.topology.arena;
        for (a, k) in library::AXIS_KEYWORDS.iter().enumerate() {
            bounds.push(BoundDecl { keyword: (*k).into(), lo: arena.min[a], hi: arena.max[a] });
        }
    }

    let mut messages = Vec::new();
    if opts.coordinated {
        for k in [library::LAMBDA, library::REMOTE_POINT] {
            messages.push(MessageDecl { direction: Direction::Send, keyword: k.into() });
            messages.push(MessageDecl { direction: Direction::Recv, keyword: k.into() });
        }
    }

    let coordination = if opts.coordinated { "lagrangian" } else { "none" };
    let protocols = [("mac", "fdm"), ("routing", "single_path"), ("transport", "rate"), ("coordination", coordination)]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    let script = TemplateScript {
        header: Header {
            version: library::LIBRARY_VERSION,
            objective: p.template,
            schedule: opts.schedule,
            relinearize: opts.relinearize,
            proximal: opts.proximal,
            protocols,
        },
        decls,
        objective,
        bounds,
        messages,
    };
    script.validate()?;
    Ok(script)
}
