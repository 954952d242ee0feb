//! Text syntax for meshes and distributed types.
//!
//! ```text
//! mesh  := ["mesh"] "{" [axis ("," axis)*] "}"
//! axis  := name ":" int
//! type  := "[" [dim ("," dim)*] "]"
//! dim   := int | int "{" [name ("," name)*] "}" int
//! name  := identifier | "quoted string"
//! ```
//!
//! A bare integer is an unpartitioned dimension.

use std::str::FromStr;

use thiserror::Error;

use crate::mesh::{Axis, Mesh};
use crate::types::{DistDim, DistType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// Prints a name bare when it is an identifier, quoted otherwise.
pub fn fmt_name(name: &str) -> String {
    let mut chars = name.chars();
    let ident = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
    if ident {
        name.to_string()
    } else {
        serde_json::to_string(name).expect("string serialization cannot fail")
    }
}

struct Cursor {
    chars: Vec<char>,
    pos: usize,
}

impl Cursor {
    fn new(src: &str) -> Self {
        Cursor {
            chars: src.chars().collect(),
            pos: 0,
        }
    }

    fn location(&self, pos: usize) -> (usize, usize) {
        let mut line = 1;
        let mut column = 1;
        for &c in &self.chars[..pos.min(self.chars.len())] {
            if c == '\n' {
                line += 1;
                column = 1;
            } else {
                column += 1;
            }
        }
        (line, column)
    }

    fn error_at(&self, pos: usize, message: impl Into<String>) -> ParseError {
        let (line, column) = self.location(pos);
        ParseError {
            line,
            column,
            message: message.into(),
        }
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        self.error_at(self.pos, message)
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn describe_next(&mut self) -> String {
        match self.peek() {
            Some(c) => format!("`{c}`"),
            None => "end of input".to_string(),
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            let found = self.describe_next();
            Err(self.error(format!("expected `{c}`, found {found}")))
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn int(&mut self) -> Result<u64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            let found = self.describe_next();
            return Err(self.error(format!("expected an integer, found {found}")));
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse::<u64>()
            .map_err(|_| self.error_at(start, format!("integer `{text}` does not fit in 64 bits")))
    }

    fn name(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some('"') => {
                let start = self.pos;
                self.pos += 1;
                let mut out = String::new();
                loop {
                    match self.chars.get(self.pos).copied() {
                        None => return Err(self.error_at(start, "unterminated quoted name")),
                        Some('"') => {
                            self.pos += 1;
                            break;
                        }
                        Some('\\') => {
                            let esc = self.chars.get(self.pos + 1).copied();
                            match esc {
                                Some(c @ ('"' | '\\')) => out.push(c),
                                _ => return Err(self.error("unsupported escape in quoted name")),
                            }
                            self.pos += 2;
                        }
                        Some(c) => {
                            out.push(c);
                            self.pos += 1;
                        }
                    }
                }
                if out.is_empty() {
                    return Err(self.error_at(start, "empty axis name"));
                }
                Ok(out)
            }
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                let start = self.pos;
                while self.pos < self.chars.len()
                    && (self.chars[self.pos].is_ascii_alphanumeric() || self.chars[self.pos] == '_')
                {
                    self.pos += 1;
                }
                Ok(self.chars[start..self.pos].iter().collect())
            }
            _ => {
                let found = self.describe_next();
                Err(self.error(format!("expected an axis name, found {found}")))
            }
        }
    }

    fn finish(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(c) => Err(self.error(format!("unexpected trailing `{c}`"))),
        }
    }

    /// Parses a comma separated list up to `close`, allowing a trailing comma.
    fn list<T>(
        &mut self,
        close: char,
        mut item: impl FnMut(&mut Self) -> Result<T, ParseError>,
    ) -> Result<Vec<T>, ParseError> {
        let mut out = Vec::new();
        if self.eat(close) {
            return Ok(out);
        }
        loop {
            out.push(item(self)?);
            if self.eat(close) {
                return Ok(out);
            }
            self.expect(',')?;
            if self.eat(close) {
                return Ok(out);
            }
        }
    }
}

pub fn parse_mesh(src: &str) -> Result<Mesh, ParseError> {
    let mut cur = Cursor::new(src);
    cur.skip_ws();
    if cur.chars[cur.pos..].starts_with(&['m', 'e', 's', 'h']) {
        cur.pos += 4;
    }
    cur.expect('{')?;
    let axes = cur.list('}', |c| {
        let at = {
            c.skip_ws();
            c.pos
        };
        let name = c.name()?;
        c.expect(':')?;
        let size = c.int()?;
        Ok((at, Axis::new(name, size)))
    })?;
    cur.finish()?;
    let positions: Vec<usize> = axes.iter().map(|(p, _)| *p).collect();
    let plain: Vec<Axis> = axes.into_iter().map(|(_, a)| a).collect();
    Mesh::new(plain.clone()).map_err(|e| {
        let bad = match &e {
            crate::mesh::MeshError::DuplicateAxis(n) => plain.iter().rposition(|a| &a.name == n).unwrap_or(0),
            crate::mesh::MeshError::ZeroSize(n) => plain.iter().position(|a| &a.name == n).unwrap_or(0),
            crate::mesh::MeshError::TooManyPoints => plain.len().saturating_sub(1),
        };
        cur.error_at(positions.get(bad).copied().unwrap_or(0), e.to_string())
    })
}

pub fn parse_type(src: &str) -> Result<DistType, ParseError> {
    let mut cur = Cursor::new(src);
    cur.expect('[')?;
    let dims = cur.list(']', |c| {
        let first = c.int()?;
        if c.eat('{') {
            let axes = c.list('}', Cursor::name)?;
            let global = c.int()?;
            Ok(DistDim {
                tile: first,
                axes,
                global,
            })
        } else {
            Ok(DistDim::replicated(first))
        }
    })?;
    cur.finish()?;
    Ok(DistType { dims })
}

impl FromStr for Mesh {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_mesh(s)
    }
}

impl FromStr for DistType {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_type(s)
    }
}
