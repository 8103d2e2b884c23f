//! ASIL decomposition checking over a small architecture description.
//!
//! File grammar (`#` starts a comment, blank lines ignored):
//!
//! ```text
//! FFUSION-ARCH v1
//! [elements]
//! <name>: <QM|A|B|C|D>[(<parent level>)]
//! [claims]
//! <parent> -> <part> + <part>
//! [independence]
//! <element> <-> <element>
//! ```
//!
//! Names are `[A-Za-z0-9_.-]+`. The optional parenthesized level, as in
//! `C(D)`, records the level the element was decomposed from; it is kept
//! for display and does not affect verdicts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ARCH_TAG: &str = "FFUSION-ARCH v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AsilLevel {
    QM,
    A,
    B,
    C,
    D,
}

impl AsilLevel {
    pub const ALL: [AsilLevel; 5] = [AsilLevel::QM, AsilLevel::A, AsilLevel::B, AsilLevel::C, AsilLevel::D];

    pub fn rank(self) -> u8 {
        self as u8
    }

    pub fn from_rank(rank: u8) -> Option<Self> {
        Self::ALL.get(rank as usize).copied()
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.to_string() == s)
            .ok_or_else(|| Error::parse("architecture", format!("unknown ASIL level `{s}`")))
    }
}

impl fmt::Display for AsilLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AsilLevel::QM => "QM",
            AsilLevel::A => "A",
            AsilLevel::B => "B",
            AsilLevel::C => "C",
            AsilLevel::D => "D",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub name: String,
    pub level: AsilLevel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposed_from: Option<AsilLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub parent: String,
    pub parts: [String; 2],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArchGraph {
    pub elements: Vec<Element>,
    pub claims: Vec<Claim>,
    pub independence: Vec<[String; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub claim: String,
    pub valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// The decomposition rule: part ranks must cover the parent's rank and the
/// parts must be declared independent.
pub fn rank_sum_allows(parent: AsilLevel, a: AsilLevel, b: AsilLevel) -> bool {
    a.rank() + b.rank() >= parent.rank()
}

/// Minimal part pairs allowed for each parent level, the conventional
/// decomposition table. A pair is acceptable if, in either order, it is at
/// least as strong as some entry.
pub const DECOMPOSITION_TABLE: [(AsilLevel, &[(AsilLevel, AsilLevel)]); 5] = {
    use AsilLevel::*;
    [
        (D, &[(D, QM), (C, A), (B, B)]),
        (C, &[(C, QM), (B, A)]),
        (B, &[(B, QM), (A, A)]),
        (A, &[(A, QM)]),
        (QM, &[(QM, QM)]),
    ]
};

pub fn table_allows(parent: AsilLevel, a: AsilLevel, b: AsilLevel) -> bool {
    let entries = DECOMPOSITION_TABLE
        .iter()
        .find(|(p, _)| *p == parent)
        .map(|(_, e)| *e)
        .unwrap_or(&[]);
    entries
        .iter()
        .any(|&(x, y)| (a >= x && b >= y) || (b >= x && a >= y))
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c))
}

impl ArchGraph {
    pub fn level(&self, name: &str) -> Result<AsilLevel> {
        self.elements
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.level)
            .ok_or_else(|| Error::Input(format!("claim references unknown element `{name}`")))
    }

    pub fn independent(&self, a: &str, b: &str) -> bool {
        self.independence
            .iter()
            .any(|[x, y]| (x == a && y == b) || (x == b && y == a))
    }

    /// Unique names, known references, distinct parts, and no element that
    /// is (transitively) decomposed into itself.
    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for e in &self.elements {
            if !names.insert(e.name.as_str()) {
                return Err(Error::Input(format!("element `{}` declared twice", e.name)));
            }
        }
        let mut edges: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for c in &self.claims {
            self.level(&c.parent)?;
            for p in &c.parts {
                self.level(p)?;
            }
            if c.parts[0] == c.parts[1] {
                return Err(Error::Input(format!("claim on `{}` repeats part `{}`", c.parent, c.parts[0])));
            }
            edges.entry(&c.parent).or_default().extend(c.parts.iter().map(String::as_str));
        }
        for [a, b] in &self.independence {
            self.level(a)?;
            self.level(b)?;
        }
        // Depth-first search with an on-stack set.
        fn visit<'a>(
            n: &'a str,
            edges: &BTreeMap<&'a str, Vec<&'a str>>,
            state: &mut BTreeMap<&'a str, bool>,
        ) -> Result<()> {
            match state.get(n) {
                Some(true) => return Err(Error::Input(format!("decomposition cycle through `{n}`"))),
                Some(false) => return Ok(()),
                None => {}
            }
            state.insert(n, true);
            for &m in edges.get(n).into_iter().flatten() {
                visit(m, edges, state)?;
            }
            state.insert(n, false);
            Ok(())
        }
        let mut state = BTreeMap::new();
        for &n in edges.keys() {
            visit(n, &edges, &mut state)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::parse("architecture", format!("line {line}: {msg}"));
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, l)) if l == ARCH_TAG => {}
            _ => return Err(Error::parse("architecture", format!("missing `{ARCH_TAG}` header"))),
        }
        let mut graph = ArchGraph::default();
        let mut section = "";
        for (no, line) in lines {
            if line.starts_with('[') {
                section = match line {
                    "[elements]" => "elements",
                    "[claims]" => "claims",
                    "[independence]" => "independence",
                    _ => return Err(err(no, format!("unknown section {line}"))),
                };
                continue;
            }
            let name = |s: &str| -> Result<String> {
                let s = s.trim();
                if valid_name(s) {
                    Ok(s.to_string())
                } else {
                    Err(err(no, format!("bad element name `{s}`")))
                }
            };
            match section {
                "elements" => {
                    let (n, lvl) = line
                        .split_once(':')
                        .ok_or_else(|| err(no, "expected `name: LEVEL`".into()))?;
                    let lvl = lvl.trim();
                    let (level, from) = match lvl.split_once('(') {
                        Some((l, rest)) => {
                            let inner = rest
                                .strip_suffix(')')
                                .ok_or_else(|| err(no, format!("unclosed `(` in `{lvl}`")))?;
                            (AsilLevel::parse(l.trim())?, Some(AsilLevel::parse(inner.trim())?))
                        }
                        None => (AsilLevel::parse(lvl)?, None),
                    };
                    graph.elements.push(Element {
                        name: name(n)?,
                        level,
                        decomposed_from: from,
                    });
                }
                "claims" => {
                    let (parent, parts) = line
                        .split_once("->")
                        .ok_or_else(|| err(no, "expected `parent -> a + b`".into()))?;
                    let parts: Vec<&str> = parts.split('+').collect();
                    if parts.len() != 2 {
                        return Err(err(no, format!("only pairwise decomposition is supported, got {} parts", parts.len())));
                    }
                    graph.claims.push(Claim {
                        parent: name(parent)?,
                        parts: [name(parts[0])?, name(parts[1])?],
                    });
                }
                "independence" => {
                    let (a, b) = line
                        .split_once("<->")
                        .ok_or_else(|| err(no, "expected `a <-> b`".into()))?;
                    graph.independence.push([name(a)?, name(b)?]);
                }
                _ => return Err(err(no, "content before any section".into())),
            }
        }
        graph.validate()?;
        Ok(graph)
    }
}

/// One verdict per claim, in file order.
pub fn check_decomposition(graph: &ArchGraph) -> Result<Vec<Verdict>> {
    graph.validate()?;
    graph
        .claims
        .iter()
        .map(|c| {
            let parent = graph.level(&c.parent)?;
            let (a, b) = (graph.level(&c.parts[0])?, graph.level(&c.parts[1])?);
            let mut reasons = Vec::new();
            if !rank_sum_allows(parent, a, b) {
                reasons.push(format!(
                    "rank shortfall: {a}({}) + {b}({}) < {parent}({})",
                    a.rank(),
                    b.rank(),
                    parent.rank()
                ));
            }
            if !graph.independent(&c.parts[0], &c.parts[1]) {
                reasons.push(format!("missing independence between `{}` and `{}`", c.parts[0], c.parts[1]));
            }
            Ok(Verdict {
                claim: format!("{} ({parent}) -> {} ({a}) + {} ({b})", c.parent, c.parts[0], c.parts[1]),
                valid: reasons.is_empty(),
                reason: (!reasons.is_empty()).then(|| reasons.join("; ")),
            })
        })
        .collect()
}
