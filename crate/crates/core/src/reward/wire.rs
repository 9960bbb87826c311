//! Line parser for the reward wire protocol.
//!
//! Strict grammar, one event per line:
//!
//! ```text
//! ACTION_EXPLANATION=<free text to end of line>
//! RL_REWARD=<decimal>, NEXT=<free text to end of line>
//! ```
//!
//! where `<decimal>` is optional digits, an optional `.`, then digits.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

const EXPLANATION_TOKEN: &str = "ACTION_EXPLANATION";
const REWARD_TOKEN: &str = "RL_REWARD";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEvent {
    pub seq: u64,
    pub explanation: Option<String>,
    pub reward: f64,
    pub next_hint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedLine {
    pub line_no: usize,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParseWarning {
    /// A reward outside `[0, 1]` was clamped.
    Clamped { line_no: usize, raw_value: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardStream {
    pub events: Vec<RewardEvent>,
    pub malformed: Vec<MalformedLine>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<ParseWarning>,
}

impl RewardStream {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty() && self.malformed.is_empty()
    }

    /// Appends another stream, keeping order.
    pub fn extend(&mut self, other: RewardStream) {
        self.events.extend(other.events);
        self.malformed.extend(other.malformed);
        self.warnings.extend(other.warnings);
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.events.iter().map(|e| e.reward)
    }
}

fn strict_reward_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^RL_REWARD=([0-9]*\.?[0-9]+), NEXT=(.*)$").unwrap())
}

fn lenient_reward_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^\s*RL_REWARD\s*=\s*([+-]?(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?)\s*,\s*NEXT\s*=\s*(.*?)\s*$",
        )
        .unwrap()
    })
}

fn lenient_explanation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*ACTION_EXPLANATION\s*=\s*(.*?)\s*$").unwrap())
}

enum Line {
    Explanation(String),
    Reward(f64, String),
    Malformed,
    Ignored,
}

// An explanation carrying a reward token means two lines were fused.
fn explanation(text: &str) -> Line {
    if text.contains(REWARD_TOKEN) {
        Line::Malformed
    } else {
        Line::Explanation(text.to_string())
    }
}

fn classify(line: &str, mode: ParseMode) -> Line {
    match mode {
        ParseMode::Strict => {
            if let Some(text) = line.strip_prefix("ACTION_EXPLANATION=") {
                return explanation(text);
            }
            match strict_reward_re().captures(line) {
                Some(c) => match c[1].parse::<f64>() {
                    Ok(v) => Line::Reward(v, c[2].to_string()),
                    Err(_) => Line::Malformed,
                },
                None => Line::Malformed,
            }
        }
        ParseMode::Lenient => {
            if let Some(c) = lenient_explanation_re().captures(line) {
                return explanation(&c[1]);
            }
            if let Some(c) = lenient_reward_re().captures(line) {
                return match c[1].parse::<f64>() {
                    Ok(v) if v.is_finite() => Line::Reward(v, c[2].to_string()),
                    _ => Line::Malformed,
                };
            }
            if line.contains(REWARD_TOKEN) || line.contains(EXPLANATION_TOKEN) {
                Line::Malformed
            } else {
                Line::Ignored
            }
        }
    }
}

/// Incremental parser; keeps the sequence counter and any pending
/// explanation across calls so a stream may be consumed in pieces.
#[derive(Debug, Clone, Default)]
pub struct RewardParser {
    mode: ParseMode,
    next_seq: u64,
    line_no: usize,
    pending_explanation: Option<String>,
}

impl RewardParser {
    pub fn new(mode: ParseMode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn mode(&self) -> ParseMode {
        self.mode
    }

    /// Feeds one line (without its terminator) and records the outcome in `out`.
    pub fn feed(&mut self, line: &str, out: &mut RewardStream) {
        self.line_no += 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        match classify(line, self.mode) {
            Line::Explanation(text) => self.pending_explanation = Some(text),
            Line::Reward(raw, next_hint) => {
                let reward = raw.clamp(0.0, 1.0);
                if reward != raw {
                    log::warn!("reward {raw} on line {} clamped to {reward}", self.line_no);
                    out.warnings.push(ParseWarning::Clamped { line_no: self.line_no, raw_value: raw });
                }
                out.events.push(RewardEvent {
                    seq: self.next_seq,
                    explanation: self.pending_explanation.take(),
                    reward,
                    next_hint,
                });
                self.next_seq += 1;
            }
            Line::Malformed => out.malformed.push(MalformedLine { line_no: self.line_no, raw: line.to_string() }),
            Line::Ignored => {}
        }
    }

    pub fn parse<I, S>(&mut self, lines: I) -> RewardStream
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = RewardStream::default();
        for line in lines {
            self.feed(line.as_ref(), &mut out);
        }
        out
    }
}

/// Parses a complete sequence of stdout lines. Never fails.
pub fn parse_reward_stream<I, S>(lines: I, mode: ParseMode) -> RewardStream
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    RewardParser::new(mode).parse(lines)
}

/// Outcome reward of a stream: the last emitted value, or 0 with no events.
pub fn final_reward(stream: &RewardStream) -> f64 {
    stream.events.last().map_or(0.0, |e| e.reward)
}

/// True when `r` reaches 1.0 up to the decimal round-trip tolerance.
pub fn classify_success<T: Scalar>(r: T) -> bool {
    r >= T::one() - T::success_eps()
}
