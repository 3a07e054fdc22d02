//! The keyword library shared by every node.

use crate::ncp::LayerId;

pub const LIBRARY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    TxPower,
    Location,
    RouteActive,
    Rate,
}

impl Family {
    pub fn layer(self) -> LayerId {
        match self {
            Family::TxPower => LayerId::Physical,
            Family::Location => LayerId::Motion,
            Family::RouteActive => LayerId::Network,
            Family::Rate => LayerId::Transport,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeywordKind {
    /// Optimizable network quantity; declared `var` or, when its layer is
    /// not optimized, `param`.
    Variable(Family),
    /// Hardware or environment value read from the registers.
    Hardware,
    /// Node positions as read from the motion layer.
    Location,
    /// Index set or index map computed from the network view.
    Net,
    /// Exchanged between neighbors each round.
    Message,
    /// Per-axis position bounds.
    Axis(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeywordInfo {
    pub path: &'static str,
    pub kind: KeywordKind,
    /// Number of index expressions the keyword takes.
    pub arity: usize,
}

pub const TX_POWER: &str = "opt_var.phy.txPower";
pub const ROUTE_ACTIVE: &str = "opt_var.net.nextHop.isRouteActive";
pub const LOC: &str = "opt_var.loc";
pub const RATE: &str = "opt_var.trans.rate";
pub const MIN_SNR: &str = "HW.min_snr";
pub const NOISE: &str = "HW.noise";
pub const BANDWIDTH: &str = "HW.bandwidth";
pub const LOCATION: &str = "HW.location";
pub const LAMBDA: &str = "MSG.lambda";
pub const REMOTE_POINT: &str = "MSG.remote_point";
pub const LINKS: &str = "NET.links";
pub const IN_LINKS: &str = "NET.inLinks";
pub const OUT_LINKS: &str = "NET.outLinks";
pub const FLOWS: &str = "NET.flows";
pub const IN_FLOWS: &str = "NET.inFlows";
pub const INTERFERERS: &str = "NET.interferers";
pub const SESSIONS: &str = "NET.sessions";
pub const DESTINATION: &str = "NET.destination";
pub const NEIGHBORS: &str = "NET.neighbors";
pub const AXIS_KEYWORDS: [&str; 3] = ["opt_var.loc.x", "opt_var.loc.y", "opt_var.loc.z"];

const fn kw(path: &'static str, kind: KeywordKind, arity: usize) -> KeywordInfo {
    KeywordInfo { path, kind, arity }
}

pub static LIBRARY: &[KeywordInfo] = &[
    kw(TX_POWER, KeywordKind::Variable(Family::TxPower), 1),
    kw(ROUTE_ACTIVE, KeywordKind::Variable(Family::RouteActive), 1),
    kw(LOC, KeywordKind::Variable(Family::Location), 1),
    kw(RATE, KeywordKind::Variable(Family::Rate), 1),
    kw(AXIS_KEYWORDS[0], KeywordKind::Axis(0), 0),
    kw(AXIS_KEYWORDS[1], KeywordKind::Axis(1), 0),
    kw(AXIS_KEYWORDS[2], KeywordKind::Axis(2), 0),
    kw(MIN_SNR, KeywordKind::Hardware, 0),
    kw(NOISE, KeywordKind::Hardware, 0),
    kw(BANDWIDTH, KeywordKind::Hardware, 0),
    kw(LOCATION, KeywordKind::Location, 1),
    kw(LAMBDA, KeywordKind::Message, 1),
    kw(REMOTE_POINT, KeywordKind::Message, 0),
    kw(LINKS, KeywordKind::Net, 0),
    kw(IN_LINKS, KeywordKind::Net, 0),
    kw(OUT_LINKS, KeywordKind::Net, 0),
    kw(FLOWS, KeywordKind::Net, 0),
    kw(IN_FLOWS, KeywordKind::Net, 0),
    kw(INTERFERERS, KeywordKind::Net, 1),
    kw(SESSIONS, KeywordKind::Net, 1),
    kw(DESTINATION, KeywordKind::Net, 1),
    kw(NEIGHBORS, KeywordKind::Net, 1),
];

pub fn lookup(path: &str) -> Option<&'static KeywordInfo> {
    LIBRARY.iter().find(|k| k.path == path)
}

/// Keyword of a variable family.
pub fn family_keyword(f: Family) -> &'static str {
    match f {
        Family::TxPower => TX_POWER,
        Family::Location => LOC,
        Family::RouteActive => ROUTE_ACTIVE,
        Family::Rate => RATE,
    }
}

/// Functions usable in schematic expressions, with their arities.
pub const FUNCTIONS: &[(&str, Option<usize>)] = &[
    ("log", Some(1)),
    ("neg", Some(1)),
    ("recip", Some(1)),
    ("pow", Some(2)),
    ("max", Some(2)),
    ("ifabove", Some(3)),
    ("sum", None),
    ("gain", Some(2)),
    ("lin", Some(1)),
    ("base", Some(1)),
];

/// Matches `[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*`.
pub fn is_keyword_text(s: &str) -> bool {
    s.split('.').all(|part| {
        let mut cs = part.chars();
        matches!(cs.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
            && cs.all(|c| c.is_ascii_alphanumeric() || c == '_')
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_paths_are_well_formed_and_unique() {
        for (i, k) in LIBRARY.iter().enumerate() {
            assert!(is_keyword_text(k.path), "{}", k.path);
            assert!(LIBRARY[i + 1..].iter().all(|o| o.path != k.path));
        }
    }

    #[test]
    fn keyword_text_rule() {
        assert!(is_keyword_text("opt_var.phy.txPower"));
        assert!(!is_keyword_text("1abc"));
        assert!(!is_keyword_text("a..b"));
        assert!(!is_keyword_text("a."));
    }
}
