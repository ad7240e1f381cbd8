//! `<kp>` and `<action>` answer strings.
//!
//! ```text
//! <kp> label:(x,y,v);label:(x,y,v);...
//! <action> LA((x1,y1),(x2,y2));RA((x1,y1),(x2,y2))
//! ```
//!
//! Coordinates are integer pixels, `v` is 1 for visible and 0 otherwise.
//! Keypoints appear in the garment kind's fixed label order, all labels
//! present. Action answers list LA before RA and omit an unused arm. The
//! parser accepts exactly what the formatters produce, plus surrounding
//! whitespace.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{ActionTuple, AnnotationError, Arm};
use crate::GarmentType;

pub const KP_PREFIX: &str = "<kp>";
pub const ACTION_PREFIX: &str = "<action>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerKeypoint {
    pub label: String,
    pub pixel: [i64; 2],
    pub visible: bool,
}

/// A complete keypoint set for one garment kind, in label order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeypointAnswer {
    garment: GarmentType,
    keypoints: Vec<AnswerKeypoint>,
}

impl KeypointAnswer {
    /// Sorts `keypoints` into label order; the labels must be exactly the
    /// kind's label set.
    pub fn new(garment: GarmentType, mut keypoints: Vec<AnswerKeypoint>) -> Result<Self, AnnotationError> {
        let labels = garment.labels();
        let mut seen = vec![false; labels.len()];
        for k in &keypoints {
            let i = garment.label_index(&k.label).ok_or_else(|| AnnotationError::LabelSet {
                garment,
                detail: format!("unknown label `{}`", k.label),
            })?;
            if std::mem::replace(&mut seen[i], true) {
                return Err(AnnotationError::LabelSet { garment, detail: format!("duplicate label `{}`", k.label) });
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(AnnotationError::LabelSet { garment, detail: format!("missing label `{}`", labels[i]) });
        }
        keypoints.sort_by_key(|k| garment.label_index(&k.label));
        Ok(KeypointAnswer { garment, keypoints })
    }

    pub fn garment(&self) -> GarmentType {
        self.garment
    }

    pub fn keypoints(&self) -> &[AnswerKeypoint] {
        &self.keypoints
    }

    pub fn get(&self, label: &str) -> Option<&AnswerKeypoint> {
        self.keypoints.iter().find(|k| k.label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Answer {
    Keypoints(KeypointAnswer),
    Actions(Vec<ActionTuple>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("byte {offset}: {message}")]
pub struct ParseError {
    /// Byte offset into the original string.
    pub offset: usize,
    pub message: String,
}

pub fn format_keypoints(answer: &KeypointAnswer) -> String {
    let mut s = String::from(KP_PREFIX);
    for (i, k) in answer.keypoints.iter().enumerate() {
        s.push(if i == 0 { ' ' } else { ';' });
        let _ = write!(s, "{}:({},{},{})", k.label, k.pixel[0], k.pixel[1], u8::from(k.visible));
    }
    s
}

/// Formats tuples LA first. At most one tuple per arm is expected.
pub fn format_actions(tuples: &[ActionTuple]) -> String {
    let mut sorted: Vec<&ActionTuple> = tuples.iter().collect();
    sorted.sort_by_key(|t| t.arm);
    let mut s = String::from(ACTION_PREFIX);
    for (i, t) in sorted.iter().enumerate() {
        s.push(if i == 0 { ' ' } else { ';' });
        let _ = write!(s, "{}(({},{}),({},{}))", t.arm, t.pick[0], t.pick[1], t.place[0], t.place[1]);
    }
    s
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    end: usize,
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { offset: self.pos, message: message.into() })
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..self.end]
    }

    fn at_end(&self) -> bool {
        self.pos == self.end
    }

    fn eat(&mut self, token: &str) -> bool {
        let hit = self.rest().starts_with(token);
        if hit {
            self.pos += token.len();
        }
        hit
    }

    fn expect(&mut self, token: &str) -> Result<(), ParseError> {
        if self.eat(token) {
            Ok(())
        } else {
            self.err(format!("expected `{token}`"))
        }
    }

    /// Canonical decimal integer: optional minus, no leading zeros, no `-0`.
    fn integer(&mut self) -> Result<i64, ParseError> {
        let start = self.pos;
        let bytes = self.rest().as_bytes();
        let neg = bytes.first() == Some(&b'-');
        let digits = bytes[usize::from(neg)..].iter().take_while(|b| b.is_ascii_digit()).count();
        if digits == 0 {
            return self.err("expected an integer");
        }
        let first = bytes[usize::from(neg)];
        if first == b'0' && (digits > 1 || neg) {
            return self.err("non-canonical integer");
        }
        let len = usize::from(neg) + digits;
        let value = self.rest()[..len].parse::<i64>().map_err(|_| ParseError { offset: start, message: "integer out of range".into() })?;
        self.pos += len;
        Ok(value)
    }

    fn label(&mut self) -> &'a str {
        let n = self.rest().bytes().take_while(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || *b == b'_').count();
        let s = &self.rest()[..n];
        self.pos += n;
        s
    }

    fn pair(&mut self) -> Result<[i64; 2], ParseError> {
        self.expect("(")?;
        let x = self.integer()?;
        self.expect(",")?;
        let y = self.integer()?;
        self.expect(")")?;
        Ok([x, y])
    }
}

/// Parses an answer for a garment of kind `garment`.
pub fn parse_answer(text: &str, garment: GarmentType) -> Result<Answer, ParseError> {
    let start = text.len() - text.trim_start().len();
    let end = text.trim_end().len().max(start);
    let mut c = Cursor { text, pos: start, end };
    if c.eat(KP_PREFIX) {
        c.expect(" ")?;
        parse_keypoints(&mut c, garment).map(Answer::Keypoints)
    } else if c.eat(ACTION_PREFIX) {
        c.expect(" ")?;
        parse_actions(&mut c).map(Answer::Actions)
    } else {
        c.err(format!("expected `{KP_PREFIX}` or `{ACTION_PREFIX}`"))
    }
}

/// Parses an `<action>` answer on its own; no garment kind is needed.
pub fn parse_action_answer(text: &str) -> Result<Vec<ActionTuple>, ParseError> {
    let start = text.len() - text.trim_start().len();
    let end = text.trim_end().len().max(start);
    let mut c = Cursor { text, pos: start, end };
    c.expect(ACTION_PREFIX)?;
    c.expect(" ")?;
    parse_actions(&mut c)
}

fn parse_keypoints(c: &mut Cursor, garment: GarmentType) -> Result<KeypointAnswer, ParseError> {
    let mut keypoints = Vec::new();
    for (i, expected) in garment.labels().iter().enumerate() {
        if i > 0 {
            c.expect(";")?;
        }
        let at = c.pos;
        let label = c.label();
        if label != *expected {
            c.pos = at;
            return if garment.label_index(label).is_none() {
                c.err(format!("unknown {garment} label `{label}`"))
            } else {
                c.err(format!("expected label `{expected}`, found `{label}`"))
            };
        }
        c.expect(":(")?;
        let x = c.integer()?;
        c.expect(",")?;
        let y = c.integer()?;
        c.expect(",")?;
        let visible = if c.eat("1") {
            true
        } else if c.eat("0") {
            false
        } else {
            return c.err("visibility flag must be 0 or 1");
        };
        c.expect(")")?;
        keypoints.push(AnswerKeypoint { label: label.to_string(), pixel: [x, y], visible });
    }
    if !c.at_end() {
        return c.err("trailing input after the last keypoint");
    }
    Ok(KeypointAnswer { garment, keypoints })
}

fn parse_actions(c: &mut Cursor) -> Result<Vec<ActionTuple>, ParseError> {
    let mut tuples: Vec<ActionTuple> = Vec::new();
    loop {
        let at = c.pos;
        let arm = if c.eat("LA") {
            Arm::LA
        } else if c.eat("RA") {
            Arm::RA
        } else {
            return c.err("expected `LA` or `RA`");
        };
        if tuples.last().is_some_and(|t| t.arm >= arm) {
            c.pos = at;
            return c.err("arms must appear once each, LA before RA");
        }
        c.expect("(")?;
        let pick = c.pair()?;
        c.expect(",")?;
        let place = c.pair()?;
        c.expect(")")?;
        if pick == place {
            c.pos = at;
            return c.err("pick and place coincide");
        }
        tuples.push(ActionTuple { arm, pick, place });
        if c.at_end() {
            return Ok(tuples);
        }
        c.expect(";")?;
    }
}
