//! Flat `key = value` text files.
//!
//! The first line names the file kind and format version, e.g.
//! `# floc calibration v1`. Further lines starting with `#` and blank lines
//! are ignored, as is anything after ` #` on a value line. Keys are unique.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct KvFile {
    source: String,
    kind: String,
    entries: Vec<(String, String, u64)>,
}

impl KvFile {
    pub fn parse(text: &str, source: &str, kind: &str) -> CliResult<Self> {
        let mut lines = text.lines().enumerate();
        let expected = format!("# floc {kind} {FORMAT_VERSION}");
        match lines.next() {
            Some((_, first)) if first.trim() == expected => {}
            _ => return Err(CliError::parse(source, 1, format!("expected header `{expected}`"))),
        }
        let mut entries: Vec<(String, String, u64)> = Vec::new();
        for (i, raw) in lines {
            let line_no = i as u64 + 1;
            let line = raw.split(" #").next().unwrap_or("").trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::parse(source, line_no, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim().to_string();
            if entries.iter().any(|(k, _, _)| *k == key) {
                return Err(CliError::parse(source, line_no, format!("duplicate key `{key}`")));
            }
            entries.push((key, value.trim().to_string(), line_no));
        }
        Ok(Self {
            source: source.to_string(),
            kind: kind.to_string(),
            entries,
        })
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _, _)| k == key).map(|(_, v, _)| v.as_str())
    }

    fn line_of(&self, key: &str) -> u64 {
        self.entries.iter().find(|(k, _, _)| k == key).map_or(0, |e| e.2)
    }

    pub fn value<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::parse(&self.source, self.line_of(key), format!("bad value for `{key}`: {e}")))
            })
            .transpose()
    }

    pub fn value_or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        Ok(self.value(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: Display,
    {
        self.value(key)?
            .ok_or_else(|| CliError::parse(&self.source, 0, format!("missing key `{key}`")))
    }

    /// A bin size, where `none` disables the statistic.
    pub fn bin(&self, key: &str, default: Option<usize>) -> CliResult<Option<usize>> {
        match self.get(key) {
            None => Ok(default),
            Some(v) if v.eq_ignore_ascii_case("none") => Ok(None),
            Some(_) => self.value(key),
        }
    }

    /// Rejects keys outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> CliResult<()> {
        match self.entries.iter().find(|(k, _, _)| !known.contains(&k.as_str())) {
            Some((k, _, line)) => Err(CliError::parse(&self.source, *line, format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

/// Builds a key-value file in insertion order.
#[derive(Debug, Clone)]
pub struct KvWriter {
    out: String,
}

impl KvWriter {
    pub fn new(kind: &str) -> Self {
        Self {
            out: format!("# floc {kind} {FORMAT_VERSION}\n"),
        }
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        self.out.push_str(&format!("# {text}\n"));
        self
    }

    pub fn field(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.out.push_str(&format!("{key} = {value}\n"));
        self
    }

    pub fn bin(&mut self, key: &str, bin: Option<usize>) -> &mut Self {
        match bin {
            Some(b) => self.field(key, b),
            None => self.field(key, "none"),
        }
    }

    pub fn finish(&self) -> String {
        self.out.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut w = KvWriter::new("calibration");
        w.comment("thresholds").field("rho_jump", 0.1 + 0.2).bin("kink_bin", None).field("rho_kink", f64::INFINITY);
        let text = w.finish();
        let kv = KvFile::parse(&text, "mem", "calibration").unwrap();
        assert_eq!(kv.require::<f64>("rho_jump").unwrap(), 0.1 + 0.2);
        assert_eq!(kv.bin("kink_bin", Some(3)).unwrap(), None);
        assert_eq!(kv.bin("jump_bin", Some(3)).unwrap(), Some(3));
        assert_eq!(kv.require::<f64>("rho_kink").unwrap(), f64::INFINITY);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "# floc scenario v1\n\nn = 10\nseed = x\n";
        let kv = KvFile::parse(text, "s.kv", "scenario").unwrap();
        let err = kv.require::<u64>("seed").unwrap_err().to_string();
        assert!(err.starts_with("s.kv:4:"), "{err}");
        assert!(KvFile::parse("# floc other v1\n", "s", "scenario").is_err());
        assert!(KvFile::parse("# floc scenario v1\nn 10\n", "s", "scenario").is_err());
        assert!(KvFile::parse("# floc scenario v1\nn = 1\nn = 2\n", "s", "scenario").is_err());
        let kv = KvFile::parse("# floc scenario v1\nbogus = 1 # note\n", "s", "scenario").unwrap();
        assert_eq!(kv.get("bogus"), Some("1"));
        assert!(kv.check_keys(&["n"]).is_err());
    }
}
