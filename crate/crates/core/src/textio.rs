//! Helpers shared by the line-oriented text formats.

use std::path::{Path, PathBuf};

use crate::error::Error;

/// 17 significant digits; parses back to the identical `f64`.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn push_row(out: &mut String, row: &[f64]) {
    for (j, &x) in row.iter().enumerate() {
        if j > 0 {
            out.push(' ');
        }
        out.push_str(&fmt_f64(x));
    }
    out.push('\n');
}

/// Iterates lines with 1-based numbers and builds located parse errors.
pub(crate) struct Lines<'a> {
    path: PathBuf,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    pub(crate) fn new(path: &Path, text: &'a str) -> Self {
        Self {
            path: path.to_path_buf(),
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    /// The next line, or an error naming the line that should have existed.
    pub(crate) fn next_line(&mut self, what: &str) -> Result<(usize, &'a str), Error> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l))
            }
            None => {
                self.last += 1;
                Err(self.error(self.last, format!("unexpected end of file, expected {what}")))
            }
        }
    }

    /// Errors if any non-blank line remains.
    pub(crate) fn expect_end(&mut self) -> Result<(), Error> {
        for (i, l) in self.inner.by_ref() {
            if !l.trim().is_empty() {
                return Err(Error::Parse {
                    path: self.path.clone(),
                    line: i + 1,
                    msg: "unexpected trailing data".into(),
                });
            }
        }
        Ok(())
    }

    pub(crate) fn error(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn parse_floats(&self, line: usize, text: &str, expected: usize) -> Result<Vec<f64>, Error> {
        let mut out = Vec::with_capacity(expected);
        for tok in text.split_whitespace() {
            let x: f64 = tok
                .parse()
                .map_err(|_| self.error(line, format!("invalid number {tok:?}")))?;
            if !x.is_finite() {
                return Err(self.error(line, format!("non-finite value {tok:?}")));
            }
            out.push(x);
        }
        if out.len() != expected {
            return Err(self.error(line, format!("expected {expected} values, found {}", out.len())));
        }
        Ok(out)
    }
}

/// Parses `key=value` header fields after a fixed magic prefix, in the given order.
pub(crate) fn header_fields<'a>(
    lines: &Lines<'_>,
    line_no: usize,
    line: &'a str,
    magic: &str,
    keys: &[&str],
) -> Result<Vec<&'a str>, Error> {
    let rest = line
        .strip_prefix(magic)
        .ok_or_else(|| lines.error(line_no, format!("missing {magic:?} header")))?;
    let toks: Vec<&str> = rest.split_whitespace().collect();
    if toks.len() != keys.len() {
        return Err(lines.error(line_no, format!("header must have fields {}", keys.join(" "))));
    }
    toks.iter()
        .zip(keys)
        .map(|(tok, key)| {
            tok.strip_prefix(key)
                .and_then(|t| t.strip_prefix('='))
                .ok_or_else(|| lines.error(line_no, format!("expected {key}=..., found {tok:?}")))
        })
        .collect()
}

pub(crate) fn parse_usize(lines: &Lines<'_>, line: usize, key: &str, v: &str) -> Result<usize, Error> {
    v.parse()
        .map_err(|_| lines.error(line, format!("invalid {key} value {v:?}")))
}

pub(crate) fn parse_flag(lines: &Lines<'_>, line: usize, key: &str, v: &str) -> Result<bool, Error> {
    match v {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(lines.error(line, format!("{key} must be 0 or 1, found {v:?}"))),
    }
}
