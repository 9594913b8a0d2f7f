//! A small reader and writer for the Python literal subset the client logs
//! (`[111, 555, {'to': 0, 'message': u'hi'}]`).

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Int(i64),
    Str(String),
    List(Vec<Value>),
    Dict(Vec<(Value, Value)>),
    Bool(bool),
    None,
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    /// Looks up a string key in a dict value.
    pub fn get(&self, key: &str) -> Option<&Value> {
        match self {
            Value::Dict(entries) => entries
                .iter()
                .find(|(k, _)| k.as_str() == Some(key))
                .map(|(_, v)| v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LiteralError {
    #[error("unexpected end of input")]
    Eof,
    #[error("unexpected character {0:?} at byte {1}")]
    Unexpected(char, usize),
}

/// A parsed value plus whether the input ended inside it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed {
    pub value: Value,
    /// Bytes consumed from the input.
    pub consumed: usize,
    /// Input ran out inside a string; every open container was closed implicitly.
    pub cut_short: bool,
}

/// Parses one value at the start of `input` (leading spaces allowed).
pub fn parse_prefix(input: &str) -> Result<Parsed, LiteralError> {
    let mut p = Reader { s: input, pos: 0, lenient: false, cut: false };
    let value = p.value()?;
    Ok(Parsed { value, consumed: p.pos, cut_short: false })
}

/// Like [`parse_prefix`], but an input that stops inside a string literal is
/// accepted: the partial string is kept verbatim and all open containers are
/// closed. Used for records cut at 512 characters.
pub fn parse_prefix_lenient(input: &str) -> Result<Parsed, LiteralError> {
    let mut p = Reader { s: input, pos: 0, lenient: true, cut: false };
    let value = p.value()?;
    Ok(Parsed { value, consumed: p.pos, cut_short: p.cut })
}

struct Reader<'a> {
    s: &'a str,
    pos: usize,
    lenient: bool,
    cut: bool,
}

impl Reader<'_> {
    fn peek(&self) -> Option<char> {
        self.s[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn ws(&mut self) {
        while matches!(self.peek(), Some(' ' | '\t')) {
            self.pos += 1;
        }
    }

    fn unexpected(&self) -> LiteralError {
        match self.peek() {
            Some(c) => LiteralError::Unexpected(c, self.pos),
            None => LiteralError::Eof,
        }
    }

    fn expect(&mut self, want: char) -> Result<(), LiteralError> {
        if self.peek() == Some(want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected())
        }
    }

    fn value(&mut self) -> Result<Value, LiteralError> {
        self.ws();
        match self.peek().ok_or(LiteralError::Eof)? {
            '[' => self.seq(']').map(Value::List),
            '(' => self.seq(')').map(Value::List),
            '{' => self.dict(),
            '\'' | '"' => self.string(),
            'u' | 'b' if matches!(self.s[self.pos + 1..].chars().next(), Some('\'' | '"')) => {
                self.pos += 1;
                self.string()
            }
            '-' | '+' | '0'..='9' => self.int(),
            _ => self.word(),
        }
    }

    fn word(&mut self) -> Result<Value, LiteralError> {
        for (w, v) in [("None", Value::None), ("True", Value::Bool(true)), ("False", Value::Bool(false))] {
            if self.s[self.pos..].starts_with(w) {
                self.pos += w.len();
                return Ok(v);
            }
        }
        Err(self.unexpected())
    }

    fn int(&mut self) -> Result<Value, LiteralError> {
        let start = self.pos;
        if matches!(self.peek(), Some('-' | '+')) {
            self.pos += 1;
        }
        let digits = self.pos;
        while matches!(self.peek(), Some('0'..='9')) {
            self.pos += 1;
        }
        if self.pos == digits {
            return Err(self.unexpected());
        }
        let n = self.s[start..self.pos]
            .parse()
            .map_err(|_| LiteralError::Unexpected('0', start))?;
        // python 2 long suffix
        if matches!(self.peek(), Some('L' | 'l')) {
            self.pos += 1;
        }
        Ok(Value::Int(n))
    }

    fn string(&mut self) -> Result<Value, LiteralError> {
        let quote = self.bump().ok_or(LiteralError::Eof)?;
        let mut out = String::new();
        loop {
            let Some(c) = self.bump() else {
                if self.lenient {
                    self.cut = true;
                    return Ok(Value::Str(out));
                }
                return Err(LiteralError::Eof);
            };
            match c {
                c if c == quote => return Ok(Value::Str(out)),
                '\\' => {
                    let Some(e) = self.bump() else {
                        if self.lenient {
                            self.cut = true;
                            out.push('\\');
                            return Ok(Value::Str(out));
                        }
                        return Err(LiteralError::Eof);
                    };
                    match e {
                        'n' => out.push('\n'),
                        'r' => out.push('\r'),
                        't' => out.push('\t'),
                        '0' => out.push('\0'),
                        'x' => out.push_str(&self.hex_escape(2, 'x')?),
                        'u' => out.push_str(&self.hex_escape(4, 'u')?),
                        'U' => out.push_str(&self.hex_escape(8, 'U')?),
                        other => {
                            if !matches!(other, '\\' | '\'' | '"') {
                                out.push('\\');
                            }
                            out.push(other);
                        }
                    }
                }
                c => out.push(c),
            }
        }
    }

    fn hex_escape(&mut self, len: usize, kind: char) -> Result<String, LiteralError> {
        let start = self.pos;
        let end = (start + len).min(self.s.len());
        let digits = self.s.get(start..end).unwrap_or("");
        if digits.len() == len && digits.chars().all(|c| c.is_ascii_hexdigit()) {
            if let Some(c) = u32::from_str_radix(digits, 16).ok().and_then(char::from_u32) {
                self.pos = end;
                return Ok(c.to_string());
            }
        }
        if self.lenient && end == self.s.len() {
            // escape cut by truncation: keep the raw text
            self.pos = end;
            self.cut = true;
            return Ok(format!("\\{kind}{digits}"));
        }
        Err(LiteralError::Unexpected('\\', start))
    }

    fn seq(&mut self, close: char) -> Result<Vec<Value>, LiteralError> {
        self.pos += 1;
        let mut items = Vec::new();
        loop {
            self.ws();
            if self.peek() == Some(close) {
                self.pos += 1;
                return Ok(items);
            }
            items.push(self.value()?);
            if self.cut {
                return Ok(items);
            }
            self.ws();
            match self.peek() {
                Some(',') => self.pos += 1,
                Some(c) if c == close => {}
                _ => return Err(self.unexpected()),
            }
        }
    }

    fn dict(&mut self) -> Result<Value, LiteralError> {
        self.pos += 1;
        let mut entries = Vec::new();
        loop {
            self.ws();
            if self.peek() == Some('}') {
                self.pos += 1;
                return Ok(Value::Dict(entries));
            }
            let key = self.value()?;
            if self.cut {
                return Ok(Value::Dict(entries));
            }
            self.ws();
            self.expect(':')?;
            let value = self.value()?;
            entries.push((key, value));
            if self.cut {
                return Ok(Value::Dict(entries));
            }
            self.ws();
            match self.peek() {
                Some(',') => self.pos += 1,
                Some('}') => {}
                _ => return Err(self.unexpected()),
            }
        }
    }
}

/// Python `repr` of a string, as the logger would print it.
pub fn repr_str(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c if (c as u32) < 0x20 || (0x7f..=0xff).contains(&(c as u32)) => {
                let _ = write!(out, "\\x{:02x}", c as u32);
            }
            c if (c as u32) > 0xffff => {
                let _ = write!(out, "\\U{:08x}", c as u32);
            }
            c if (c as u32) > 0xff => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

/// Python `repr` of a value.
pub fn repr(value: &Value) -> String {
    match value {
        Value::Int(i) => i.to_string(),
        Value::Str(s) => repr_str(s),
        Value::Bool(true) => "True".into(),
        Value::Bool(false) => "False".into(),
        Value::None => "None".into(),
        Value::List(items) => {
            let inner: Vec<String> = items.iter().map(repr).collect();
            format!("[{}]", inner.join(", "))
        }
        Value::Dict(entries) => {
            let inner: Vec<String> = entries
                .iter()
                .map(|(k, v)| format!("{}: {}", repr(k), repr(v)))
                .collect();
            format!("{{{}}}", inner.join(", "))
        }
    }
}
