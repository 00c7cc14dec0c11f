//! Plain-text file formats. All files are UTF-8, whitespace separated, and
//! treat everything after `#` as a comment.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::peaks::PeakList;
use crate::spectral::{SampledSpectrum, Transition};
use crate::spin_model::{HamiltonianParams, ParamId, Spin, SpinSystem};

/// A non-empty, comment-stripped line with its 1-based line number.
#[derive(Debug, Clone)]
pub struct Line<'a> {
    pub number: usize,
    pub tokens: Vec<&'a str>,
}

impl Line<'_> {
    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.number,
            message: message.into(),
        }
    }

    pub fn f64_at(&self, i: usize) -> Result<f64> {
        let tok = self
            .tokens
            .get(i)
            .ok_or_else(|| self.error(format!("missing field {}", i + 1)))?;
        let v: f64 = tok
            .parse()
            .map_err(|_| self.error(format!("`{tok}` is not a number")))?;
        if !v.is_finite() {
            return Err(self.error(format!("`{tok}` is not finite")));
        }
        Ok(v)
    }

    pub fn expect_len(&self, n: usize) -> Result<()> {
        if self.tokens.len() != n {
            return Err(self.error(format!("expected {n} fields, found {}", self.tokens.len())));
        }
        Ok(())
    }
}

pub fn content_lines(text: &str) -> impl Iterator<Item = Line<'_>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let body = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = body.split_whitespace().collect();
        (!tokens.is_empty()).then_some(Line { number: i + 1, tokens })
    })
}

/// Splits a sectioned file into `(section, lines)`. Lines before the first
/// section header are an error.
pub fn sections(text: &str) -> Result<Vec<(String, Vec<Line<'_>>)>> {
    let mut out: Vec<(String, Vec<Line<'_>>)> = Vec::new();
    for line in content_lines(text) {
        let first = line.tokens[0];
        if first.starts_with('[') {
            if line.tokens.len() != 1 || !first.ends_with(']') || first.len() < 3 {
                return Err(line.error("malformed section header"));
            }
            out.push((first[1..first.len() - 1].to_string(), Vec::new()));
        } else {
            match out.last_mut() {
                Some((_, lines)) => lines.push(line),
                None => return Err(line.error("content before the first section header")),
            }
        }
    }
    Ok(out)
}

pub const SPIN_SECTIONS: [&str; 4] = ["spins", "shifts_hz", "dipolar_hz", "scalar_hz"];

/// Parses the spin-system sections of a sectioned file. Sections other than
/// the spin sections and `extra_ok` are rejected.
pub fn parse_spin_sections(
    secs: &[(String, Vec<Line<'_>>)],
    extra_ok: &[&str],
) -> Result<(SpinSystem, HamiltonianParams)> {
    for (name, lines) in secs {
        if !SPIN_SECTIONS.contains(&name.as_str()) && !extra_ok.contains(&name.as_str()) {
            let at = lines.first().map(|l| l.number.saturating_sub(1)).unwrap_or(0);
            return Err(Error::Parse {
                line: at,
                message: format!("unknown section [{name}]"),
            });
        }
    }
    let mut spins = Vec::new();
    for (_, lines) in secs.iter().filter(|(n, _)| n == "spins") {
        for l in lines {
            l.expect_len(2)?;
            spins.push(Spin::new(l.tokens[0], l.tokens[1]));
        }
    }
    let sys = SpinSystem::new(spins).map_err(|e| Error::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    let mut params = HamiltonianParams::zeros(sys.len());
    let lookup = |l: &Line<'_>, i: usize| sys.index_of(l.tokens[i]).map_err(|e| l.error(e.to_string()));
    for (name, lines) in secs {
        for l in lines {
            match name.as_str() {
                "shifts_hz" => {
                    l.expect_len(2)?;
                    params.shifts_hz[lookup(l, 0)?] = l.f64_at(1)?;
                }
                "dipolar_hz" | "scalar_hz" => {
                    l.expect_len(3)?;
                    let (j, k) = (lookup(l, 0)?, lookup(l, 1)?);
                    if j == k {
                        return Err(l.error("a spin cannot couple to itself"));
                    }
                    let id = if name == "dipolar_hz" {
                        ParamId::dipolar(j, k)
                    } else {
                        ParamId::scalar(j, k)
                    };
                    params.set(id, l.f64_at(2)?);
                }
                _ => {}
            }
        }
    }
    Ok((sys, params))
}

pub fn parse_spin_system(text: &str) -> Result<(SpinSystem, HamiltonianParams)> {
    parse_spin_sections(&sections(text)?, &[])
}

pub fn write_spin_system(sys: &SpinSystem, params: &HamiltonianParams) -> String {
    let mut s = String::from("[spins]\n");
    for sp in sys.spins() {
        let _ = writeln!(s, "{} {}", sp.label, sp.species);
    }
    s.push_str("\n[shifts_hz]\n");
    for j in 0..sys.len() {
        let _ = writeln!(s, "{} {}", sys.label(j), params.shifts_hz[j]);
    }
    for (title, m) in [("dipolar_hz", &params.dipolar_hz), ("scalar_hz", &params.scalar_hz)] {
        let _ = write!(s, "\n[{title}]\n");
        for j in 0..sys.len() {
            for k in j + 1..sys.len() {
                if m[(j, k)] != 0.0 {
                    let _ = writeln!(s, "{} {} {}", sys.label(j), sys.label(k), m[(j, k)]);
                }
            }
        }
    }
    s
}

fn columns(text: &str, n: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for l in content_lines(text) {
        l.expect_len(n)?;
        rows.push((0..n).map(|i| l.f64_at(i)).collect::<Result<Vec<f64>>>()?);
    }
    Ok(rows)
}

/// Two-column `freq_hz intensity`.
pub fn parse_sampled_spectrum(text: &str) -> Result<SampledSpectrum> {
    let rows = columns(text, 2)?;
    SampledSpectrum::new(rows.iter().map(|r| r[0]).collect(), rows.iter().map(|r| r[1]).collect())
}

pub fn write_sampled_spectrum(spec: &SampledSpectrum) -> String {
    let mut s = String::from("# freq_hz intensity\n");
    for (f, y) in spec.freq_axis_hz().iter().zip(spec.intensity()) {
        let _ = writeln!(s, "{f} {y}");
    }
    s
}

/// A stick line as stored on disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StickLine {
    pub freq_hz: f64,
    pub integral: f64,
    pub coherence_order: i32,
}

/// Three-column `freq_hz integral coherence_order`.
pub fn parse_stick_spectrum(text: &str) -> Result<Vec<StickLine>> {
    let mut out = Vec::new();
    for l in content_lines(text) {
        l.expect_len(3)?;
        let order: i32 = l.tokens[2]
            .parse()
            .map_err(|_| l.error(format!("`{}` is not an integer", l.tokens[2])))?;
        out.push(StickLine {
            freq_hz: l.f64_at(0)?,
            integral: l.f64_at(1)?,
            coherence_order: order,
        });
    }
    Ok(out)
}

pub fn write_stick_spectrum(lines: &[Transition]) -> String {
    let mut s = String::from("# freq_hz integral coherence_order\n");
    for t in lines {
        let _ = writeln!(s, "{} {} {}", t.freq_hz, t.integral, t.coherence_order);
    }
    s
}

/// Two-column `freq_hz integral`, re-sorted ascending on read.
pub fn parse_peak_list(text: &str) -> Result<PeakList> {
    let mut pairs = Vec::new();
    for l in content_lines(text) {
        l.expect_len(2)?;
        let (f, i) = (l.f64_at(0)?, l.f64_at(1)?);
        if i < 0.0 {
            return Err(l.error("negative integral"));
        }
        pairs.push((f, i));
    }
    PeakList::from_unsorted(pairs)
}

pub fn write_peak_list(peaks: &PeakList) -> String {
    let mut s = String::from("# freq_hz integral\n");
    for (f, i) in peaks.freqs_hz().iter().zip(peaks.integrals()) {
        let _ = writeln!(s, "{f} {i}");
    }
    s
}
