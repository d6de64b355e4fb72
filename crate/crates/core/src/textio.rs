//! Line-oriented `key value` text used by model and parameter files.

use std::str::FromStr;

use crate::error::{Error, Result};

/// Shortest representation that parses back to the identical `f64`.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

pub(crate) fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("invalid number '{s}'")))
}

pub(crate) fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>> {
    s.split_whitespace()
        .map(|tok| {
            tok.parse::<T>()
                .map_err(|_| Error::Format(format!("invalid list entry '{tok}'")))
        })
        .collect()
}

pub(crate) struct LineReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineReader<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate(),
        }
    }

    /// Next non-empty line, trimmed.
    pub(crate) fn next_line(&mut self) -> Result<(usize, &'a str)> {
        for (no, line) in self.lines.by_ref() {
            let line = line.trim();
            if !line.is_empty() {
                return Ok((no + 1, line));
            }
        }
        Err(Error::Format("unexpected end of file".into()))
    }

    /// Expects a line `key rest...` and returns `rest`.
    pub(crate) fn expect_key(&mut self, key: &str) -> Result<&'a str> {
        let (no, line) = self.next_line()?;
        let (k, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        if k != key {
            return Err(Error::Format(format!(
                "line {no}: expected '{key}', found '{k}'"
            )));
        }
        Ok(rest.trim())
    }

    pub(crate) fn expect_parsed<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let rest = self.expect_key(key)?;
        rest.parse::<T>()
            .map_err(|_| Error::Format(format!("invalid value for '{key}': '{rest}'")))
    }

    pub(crate) fn expect_f64(&mut self, key: &str) -> Result<f64> {
        parse_f64(self.expect_key(key)?)
    }

    pub(crate) fn read_values(&mut self, count: usize) -> Result<Vec<f64>> {
        (0..count)
            .map(|_| self.next_line().and_then(|(_, l)| parse_f64(l)))
            .collect()
    }
}
