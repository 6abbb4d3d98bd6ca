//! EDIFACT-style segment syntax shared by every line-oriented format.
//!
//! Segments end with `'`, elements are separated by `+`, and `?` releases
//! the next character so `+`, `'` and `?` can appear inside an element.

use base64::engine::general_purpose::URL_SAFE;
use base64::Engine;
use thiserror::Error;

pub const TERMINATOR: char = '\'';
pub const SEPARATOR: char = '+';
pub const RELEASE: char = '?';

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parse error at byte {offset}: {reason}")]
pub struct ParseError {
    pub offset: usize,
    pub reason: String,
}

impl ParseError {
    pub fn new(offset: usize, reason: impl Into<String>) -> Self {
        ParseError {
            offset,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub tag: String,
    pub elements: Vec<String>,
    /// Byte offset of the segment's first character in the input.
    pub offset: usize,
}

impl Segment {
    pub fn element(&self, i: usize) -> Result<&str, ParseError> {
        self.elements.get(i).map(String::as_str).ok_or_else(|| {
            ParseError::new(
                self.offset,
                format!("{} segment is missing element {}", self.tag, i + 1),
            )
        })
    }

    pub fn expect_len(&self, n: usize) -> Result<(), ParseError> {
        if self.elements.len() == n {
            Ok(())
        } else {
            Err(ParseError::new(
                self.offset,
                format!(
                    "{} segment has {} elements, expected {}",
                    self.tag,
                    self.elements.len(),
                    n
                ),
            ))
        }
    }

    pub fn base64(&self, i: usize) -> Result<Vec<u8>, ParseError> {
        decode_b64(self.element(i)?).map_err(|e| {
            ParseError::new(self.offset, format!("{} element {}: {e}", self.tag, i + 1))
        })
    }

    pub fn number<T: std::str::FromStr>(&self, i: usize) -> Result<T, ParseError> {
        let raw = self.element(i)?;
        let canonical = raw == "0" || (!raw.is_empty() && !raw.starts_with('0'));
        match raw.parse::<T>() {
            Ok(v) if canonical && raw.bytes().all(|b| b.is_ascii_digit()) => Ok(v),
            _ => Err(ParseError::new(
                self.offset,
                format!("{} element {} is not a number: {raw:?}", self.tag, i + 1),
            )),
        }
    }
}

pub fn encode_b64(bytes: &[u8]) -> String {
    URL_SAFE.encode(bytes)
}

pub fn decode_b64(text: &str) -> Result<Vec<u8>, base64::DecodeError> {
    URL_SAFE.decode(text)
}

/// Splits input into segments. With `newlines` set, line breaks between
/// segments are skipped; otherwise they are ordinary element characters.
pub fn parse(input: &[u8], newlines: bool) -> Result<Vec<Segment>, ParseError> {
    let text = std::str::from_utf8(input)
        .map_err(|e| ParseError::new(e.valid_up_to(), "invalid UTF-8"))?;
    let mut segments = Vec::new();
    let mut chars = text.char_indices().peekable();
    loop {
        if newlines {
            while let Some(&(_, c)) = chars.peek() {
                if c == '\n' || c == '\r' {
                    chars.next();
                } else {
                    break;
                }
            }
        }
        let Some(&(start, _)) = chars.peek() else {
            break;
        };
        let mut elements = Vec::new();
        let mut current = String::new();
        let mut terminated = false;
        while let Some((i, c)) = chars.next() {
            match c {
                RELEASE => match chars.next() {
                    Some((_, e @ (SEPARATOR | TERMINATOR | RELEASE))) => current.push(e),
                    Some((j, e)) => {
                        return Err(ParseError::new(j, format!("invalid release of {e:?}")))
                    }
                    None => return Err(ParseError::new(i + 1, "dangling release character")),
                },
                SEPARATOR => elements.push(std::mem::take(&mut current)),
                TERMINATOR => {
                    elements.push(std::mem::take(&mut current));
                    terminated = true;
                    break;
                }
                _ => current.push(c),
            }
        }
        if !terminated {
            return Err(ParseError::new(text.len(), "unterminated segment"));
        }
        let tag = elements.remove(0);
        if tag.is_empty() {
            return Err(ParseError::new(start, "empty segment tag"));
        }
        segments.push(Segment {
            tag,
            elements,
            offset: start,
        });
    }
    Ok(segments)
}

pub fn escape_into(out: &mut String, element: &str) {
    for c in element.chars() {
        if matches!(c, SEPARATOR | TERMINATOR | RELEASE) {
            out.push(RELEASE);
        }
        out.push(c);
    }
}

/// Accumulates segments into a string.
#[derive(Debug, Default)]
pub struct Writer {
    buf: String,
    newlines: bool,
}

impl Writer {
    pub fn new() -> Self {
        Writer::default()
    }

    /// Writer that ends every segment with a line break.
    pub fn lines() -> Self {
        Writer {
            buf: String::new(),
            newlines: true,
        }
    }

    pub fn segment<S: AsRef<str>>(&mut self, tag: &str, elements: &[S]) -> &mut Self {
        escape_into(&mut self.buf, tag);
        for e in elements {
            self.buf.push(SEPARATOR);
            escape_into(&mut self.buf, e.as_ref());
        }
        self.buf.push(TERMINATOR);
        if self.newlines {
            self.buf.push('\n');
        }
        self
    }

    pub fn finish(self) -> String {
        self.buf
    }
}
