//! Touchstone v1 one-port (`.s1p`) reader and writer.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use pcbgen_core::scoring::FrequencyResponse;

use crate::error::{io_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreqUnit {
    Hz,
    KHz,
    MHz,
    GHz,
}

impl FreqUnit {
    fn to_ghz(self) -> f64 {
        match self {
            FreqUnit::Hz => 1e-9,
            FreqUnit::KHz => 1e-6,
            FreqUnit::MHz => 1e-3,
            FreqUnit::GHz => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    /// dB magnitude, angle in degrees.
    Db,
    /// Linear magnitude, angle in degrees.
    Ma,
    /// Real and imaginary parts.
    Ri,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptionLine {
    pub unit: FreqUnit,
    pub format: DataFormat,
    pub reference_ohms: f64,
}

impl Default for OptionLine {
    /// Touchstone defaults: `# GHZ S MA R 50`.
    fn default() -> Self {
        OptionLine {
            unit: FreqUnit::GHz,
            format: DataFormat::Ma,
            reference_ohms: 50.0,
        }
    }
}

fn bad(line: usize, message: impl Into<String>) -> Error {
    Error::Touchstone {
        line,
        message: message.into(),
    }
}

pub fn parse_option_line(text: &str, line: usize) -> Result<OptionLine> {
    let body = text
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| bad(line, "option line must start with '#'"))?;
    let mut opt = OptionLine::default();
    let mut tokens = body.split_whitespace();
    while let Some(tok) = tokens.next() {
        match tok.to_ascii_uppercase().as_str() {
            "HZ" => opt.unit = FreqUnit::Hz,
            "KHZ" => opt.unit = FreqUnit::KHz,
            "MHZ" => opt.unit = FreqUnit::MHz,
            "GHZ" => opt.unit = FreqUnit::GHz,
            "DB" => opt.format = DataFormat::Db,
            "MA" => opt.format = DataFormat::Ma,
            "RI" => opt.format = DataFormat::Ri,
            "S" => {}
            p @ ("Y" | "Z" | "H" | "G") => {
                return Err(bad(line, format!("malformed option line: only S parameters are supported, found {p}")))
            }
            "R" => {
                let r = tokens
                    .next()
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|r| *r > 0.0)
                    .ok_or_else(|| bad(line, "malformed option line: R needs a positive resistance"))?;
                opt.reference_ohms = r;
            }
            other => return Err(bad(line, format!("malformed option line: unknown token {other:?}"))),
        }
    }
    Ok(opt)
}

fn to_db(format: DataFormat, a: f64, b: f64) -> f64 {
    match format {
        DataFormat::Db => a,
        DataFormat::Ma => 20.0 * a.abs().log10(),
        DataFormat::Ri => 20.0 * a.hypot(b).log10(),
    }
}

/// Parses a one-port Touchstone file into S11 in dB over GHz.
pub fn parse_s1p(text: &str) -> Result<FrequencyResponse> {
    let mut opt: Option<OptionLine> = None;
    let mut freqs = Vec::new();
    let mut s11 = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('!').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('#') {
            if opt.is_some() {
                return Err(bad(line, "malformed option line: a second option line"));
            }
            if !freqs.is_empty() {
                return Err(bad(line, "malformed option line: it must precede the data"));
            }
            opt = Some(parse_option_line(content, line)?);
            continue;
        }
        let o = *opt.get_or_insert_with(OptionLine::default);
        let values = content
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad(line, format!("not a number: {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != 3 {
            return Err(bad(
                line,
                format!(
                    "wrong port count: a one-port row has 3 values, found {}",
                    values.len()
                ),
            ));
        }
        let f = values[0] * o.unit.to_ghz();
        if !f.is_finite() || f <= 0.0 {
            return Err(bad(line, "frequency must be positive"));
        }
        if freqs.last().is_some_and(|&prev| f <= prev) {
            return Err(bad(line, "non-monotone frequencies"));
        }
        let db = to_db(o.format, values[1], values[2]);
        if !db.is_finite() {
            return Err(bad(line, "zero or non-finite magnitude"));
        }
        freqs.push(f);
        s11.push(db);
    }
    if freqs.is_empty() {
        return Err(bad(0, "no data rows"));
    }
    Ok(FrequencyResponse::new(freqs, s11)?)
}

/// Writes `# GHZ S DB R 50` rows. Values use the shortest representation
/// that parses back to the same `f64`, so a read after write is exact.
pub fn format_s1p(resp: &FrequencyResponse) -> String {
    let mut out = String::from("! S11 written by pcbgen\n# GHZ S DB R 50\n");
    for (f, db) in resp.iter() {
        let _ = writeln!(out, "{f} {db} 0");
    }
    out
}

pub fn read_s1p(path: &Path) -> Result<FrequencyResponse> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_s1p(&text).map_err(|e| e.in_file(path))
}

pub fn write_s1p(path: &Path, resp: &FrequencyResponse) -> Result<()> {
    fs::write(path, format_s1p(resp)).map_err(io_err(path))
}
