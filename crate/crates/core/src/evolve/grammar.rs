//! BNF grammars and the codon-to-phenotype mapping.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GrammarError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("nonterminal <{0}> is referenced but never defined")]
    Undefined(String),
    #[error("nonterminal <{0}> is defined twice")]
    Redefined(String),
    #[error("nonterminal <{0}> has no alternatives")]
    Empty(String),
    #[error("grammar has no rules")]
    NoRules,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Symbol {
    Terminal(String),
    NonTerminal(String),
}

impl Symbol {
    pub fn t(s: impl Into<String>) -> Self {
        Symbol::Terminal(s.into())
    }

    pub fn n(s: impl Into<String>) -> Self {
        Symbol::NonTerminal(s.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Production {
    pub lhs: String,
    pub alternatives: Vec<Vec<Symbol>>,
}

/// A validated context-free grammar; the first rule's left-hand side is the
/// start symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    rules: Vec<Production>,
    index: HashMap<String, usize>,
}

impl Grammar {
    pub fn new(rules: Vec<Production>) -> Result<Self, GrammarError> {
        if rules.is_empty() {
            return Err(GrammarError::NoRules);
        }
        let mut index = HashMap::new();
        for (i, r) in rules.iter().enumerate() {
            if index.insert(r.lhs.clone(), i).is_some() {
                return Err(GrammarError::Redefined(r.lhs.clone()));
            }
            if r.alternatives.is_empty() {
                return Err(GrammarError::Empty(r.lhs.clone()));
            }
        }
        for r in &rules {
            for sym in r.alternatives.iter().flatten() {
                if let Symbol::NonTerminal(name) = sym {
                    if !index.contains_key(name) {
                        return Err(GrammarError::Undefined(name.clone()));
                    }
                }
            }
        }
        Ok(Self { rules, index })
    }

    pub fn start(&self) -> &str {
        &self.rules[0].lhs
    }

    pub fn rules(&self) -> &[Production] {
        &self.rules
    }

    pub fn rule(&self, name: &str) -> Option<&Production> {
        self.index.get(name).map(|&i| &self.rules[i])
    }

    /// Parses `<sym> ::= alt1 | alt2` text. Nonterminals are written `<name>`,
    /// terminals as double-quoted literals (with `\"` and `\\` escapes) or bare
    /// words. A line starting with `|` continues the previous rule.
    pub fn parse_bnf(text: &str) -> Result<Self, GrammarError> {
        let mut rules: Vec<Production> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let syntax = |msg: &str| GrammarError::Syntax {
                line,
                msg: msg.to_string(),
            };
            let (lhs, body) = if let Some(rest) = trimmed.strip_prefix('|') {
                let last = rules
                    .last()
                    .ok_or_else(|| syntax("continuation line without a rule"))?;
                (last.lhs.clone(), rest)
            } else {
                let (head, body) = trimmed
                    .split_once("::=")
                    .ok_or_else(|| syntax("expected `::=`"))?;
                let head = head.trim();
                let name = head
                    .strip_prefix('<')
                    .and_then(|h| h.strip_suffix('>'))
                    .ok_or_else(|| syntax("left-hand side must be `<name>`"))?;
                rules.push(Production {
                    lhs: name.to_string(),
                    alternatives: Vec::new(),
                });
                (name.to_string(), body)
            };
            let alts = tokenize_alternatives(body).map_err(|m| syntax(&m))?;
            let rule = rules.last_mut().expect("rule pushed above");
            debug_assert_eq!(rule.lhs, lhs);
            rule.alternatives.extend(alts);
        }
        Grammar::new(rules)
    }

    /// Renders the grammar back to the text accepted by [`Grammar::parse_bnf`].
    pub fn to_bnf(&self) -> String {
        let mut out = String::new();
        for r in &self.rules {
            let alts: Vec<String> = r
                .alternatives
                .iter()
                .map(|alt| {
                    if alt.is_empty() {
                        return "\"\"".to_string();
                    }
                    alt.iter()
                        .map(|s| match s {
                            Symbol::NonTerminal(n) => format!("<{n}>"),
                            Symbol::Terminal(t) => {
                                format!("\"{}\"", t.replace('\\', "\\\\").replace('"', "\\\""))
                            }
                        })
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            let _ = writeln!(out, "<{}> ::= {}", r.lhs, alts.join(" | "));
        }
        out
    }

    /// All sentences of a non-recursive grammar, in decoding order (the i-th
    /// alternative before the (i+1)-th, leftmost symbol varying slowest).
    /// Returns `None` if the grammar is recursive or the language exceeds `limit`.
    pub fn enumerate(&self, limit: usize) -> Option<Vec<String>> {
        let mut memo: HashMap<String, Vec<String>> = HashMap::new();
        let mut stack = Vec::new();
        self.sentences_of(self.start(), limit, &mut memo, &mut stack)
    }

    fn sentences_of(
        &self,
        name: &str,
        limit: usize,
        memo: &mut HashMap<String, Vec<String>>,
        stack: &mut Vec<String>,
    ) -> Option<Vec<String>> {
        if let Some(s) = memo.get(name) {
            return Some(s.clone());
        }
        if stack.iter().any(|s| s == name) {
            return None;
        }
        stack.push(name.to_string());
        let rule = self.rule(name)?;
        let mut all = Vec::new();
        for alt in &rule.alternatives {
            let mut partial = vec![String::new()];
            for sym in alt {
                let options = match sym {
                    Symbol::Terminal(t) => vec![t.clone()],
                    Symbol::NonTerminal(n) => self.sentences_of(n, limit, memo, stack)?,
                };
                if partial.len().saturating_mul(options.len()) > limit {
                    return None;
                }
                partial = partial
                    .iter()
                    .flat_map(|p| options.iter().map(move |o| format!("{p}{o}")))
                    .collect();
            }
            all.extend(partial);
            if all.len() > limit {
                return None;
            }
        }
        stack.pop();
        memo.insert(name.to_string(), all.clone());
        Some(all)
    }
}

fn tokenize_alternatives(body: &str) -> Result<Vec<Vec<Symbol>>, String> {
    let mut alts = vec![Vec::new()];
    let mut chars = body.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '|' => {
                chars.next();
                alts.push(Vec::new());
            }
            '<' => {
                chars.next();
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('>') => break,
                        Some(ch) => name.push(ch),
                        None => return Err("unterminated nonterminal".into()),
                    }
                }
                if name.is_empty() {
                    return Err("empty nonterminal name".into());
                }
                alts.last_mut().unwrap().push(Symbol::NonTerminal(name));
            }
            '"' => {
                chars.next();
                let mut lit = String::new();
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some(esc @ ('"' | '\\')) => lit.push(esc),
                            Some('n') => lit.push('\n'),
                            Some(other) => return Err(format!("bad escape `\\{other}`")),
                            None => return Err("unterminated literal".into()),
                        },
                        Some(ch) => lit.push(ch),
                        None => return Err("unterminated literal".into()),
                    }
                }
                // The empty literal stands for the empty alternative.
                if !lit.is_empty() {
                    alts.last_mut().unwrap().push(Symbol::Terminal(lit));
                }
            }
            _ => {
                let mut word = String::new();
                while let Some(&ch) = chars.peek() {
                    if ch.is_whitespace() || ch == '|' || ch == '<' || ch == '"' {
                        break;
                    }
                    word.push(ch);
                    chars.next();
                }
                alts.last_mut().unwrap().push(Symbol::Terminal(word));
            }
        }
    }
    Ok(alts)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    Valid {
        phenotype: String,
        /// Codons consumed, counting re-reads after wrapping.
        codons_used: usize,
        wraps: usize,
    },
    /// The derivation did not complete within the allowed wraps.
    Invalid,
}

impl Decoded {
    pub fn phenotype(&self) -> Option<&str> {
        match self {
            Decoded::Valid { phenotype, .. } => Some(phenotype),
            Decoded::Invalid => None,
        }
    }
}

/// Hard bound on derivation steps; only reachable through cycles of
/// single-alternative rules, which never consume codons.
const MAX_EXPANSIONS: usize = 1_000_000;

/// Leftmost derivation from the start symbol. A nonterminal with `r > 1`
/// alternatives consumes the next codon and picks alternative `codon mod r`;
/// single-alternative rules consume nothing. Exhausted codons are re-read from
/// the start at most `max_wraps` times.
pub fn ge_decode(codons: &[u32], grammar: &Grammar, max_wraps: usize) -> Decoded {
    let mut stack: Vec<&Symbol> = Vec::new();
    let start = Symbol::NonTerminal(grammar.start().to_string());
    stack.push(&start);
    let mut out = String::new();
    let (mut pos, mut wraps, mut used, mut expansions) = (0usize, 0usize, 0usize, 0usize);
    while let Some(sym) = stack.pop() {
        match sym {
            Symbol::Terminal(t) => out.push_str(t),
            Symbol::NonTerminal(name) => {
                expansions += 1;
                if expansions > MAX_EXPANSIONS {
                    return Decoded::Invalid;
                }
                let rule = grammar.rule(name).expect("validated grammar");
                let alt = if rule.alternatives.len() == 1 {
                    &rule.alternatives[0]
                } else {
                    if pos == codons.len() {
                        if wraps >= max_wraps || codons.is_empty() {
                            return Decoded::Invalid;
                        }
                        wraps += 1;
                        pos = 0;
                    }
                    let choice = codons[pos] as usize % rule.alternatives.len();
                    pos += 1;
                    used += 1;
                    &rule.alternatives[choice]
                };
                stack.extend(alt.iter().rev());
            }
        }
    }
    Decoded::Valid {
        phenotype: out,
        codons_used: used,
        wraps,
    }
}
