//! Parsing of dimensioned configuration values such as `155us`, `120 km` or `2.3 us/s`.
//!
//! Dimensioned quantities must carry a suffix; a bare number is rejected so that a
//! missing unit can never be silently read as seconds or metres.

use crate::error::{Error, Result};

/// Physical dimension expected by a configuration key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Time,
    Length,
    Decibel,
    Frequency,
    /// Fractional frequency offset, e.g. `2.3us/s` or `1ppm`.
    Drift,
    /// Rate of change of the drift (1/s), e.g. `12ps/s^2` or `500ppb/day`.
    Aging,
    /// Dispersion coefficient in ps/(nm km), stored in SI (s/m^2).
    Dispersion,
    /// Fiber attenuation, stored in dB/km.
    Attenuation,
    /// Quadratic phase rate of the pulse (rad/s^2).
    Chirp,
    Dimensionless,
}

const DAY: f64 = 86_400.0;

fn scale(dim: Dimension, unit: &str) -> Option<f64> {
    use Dimension::*;
    let u = unit.trim();
    let v = match (dim, u) {
        (Time, "ps") => 1e-12,
        (Time, "ns") => 1e-9,
        (Time, "us") | (Time, "µs") => 1e-6,
        (Time, "ms") => 1e-3,
        (Time, "s") => 1.0,
        (Time, "min") => 60.0,
        (Time, "h") => 3600.0,
        (Time, "day") | (Time, "d") => DAY,
        (Length, "nm") => 1e-9,
        (Length, "um") | (Length, "µm") => 1e-6,
        (Length, "m") => 1.0,
        (Length, "km") => 1e3,
        (Decibel, "dB") | (Decibel, "db") => 1.0,
        (Frequency, "Hz") => 1.0,
        (Frequency, "kHz") => 1e3,
        (Frequency, "MHz") => 1e6,
        (Frequency, "GHz") => 1e9,
        (Drift, "ppm") | (Drift, "us/s") | (Drift, "µs/s") => 1e-6,
        (Drift, "ppb") | (Drift, "ns/s") => 1e-9,
        (Drift, "ps/s") => 1e-12,
        (Aging, "ps/s^2") | (Aging, "ps/s2") => 1e-12,
        (Aging, "ns/s^2") | (Aging, "ns/s2") => 1e-9,
        (Aging, "ppb/day") => 1e-9 / DAY,
        (Aging, "ppm/day") => 1e-6 / DAY,
        (Aging, "ppm/year") => 1e-6 / (365.25 * DAY),
        (Dispersion, "ps/nm/km") => 1e-12 / (1e-9 * 1e3),
        (Attenuation, "dB/km") | (Attenuation, "db/km") => 1.0,
        (Chirp, "rad/s^2") | (Chirp, "rad/s2") => 1.0,
        (Chirp, "rad/ps^2") | (Chirp, "rad/ps2") => 1e24,
        (Dimensionless, "") => 1.0,
        (Dimensionless, "%") => 1e-2,
        _ => return None,
    };
    Some(v)
}

/// Splits `"-3.5e2 ps"` into the numeric part and the unit suffix.
fn split_number(s: &str) -> (&str, &str) {
    let s = s.trim();
    let bytes = s.as_bytes();
    let mut end = 0;
    let mut seen_exp = false;
    while end < bytes.len() {
        let c = bytes[end] as char;
        let ok = c.is_ascii_digit()
            || c == '.'
            || ((c == '-' || c == '+') && (end == 0 || matches!(bytes[end - 1], b'e' | b'E')))
            || ((c == 'e' || c == 'E')
                && !seen_exp
                && end > 0
                && bytes.get(end + 1).is_some_and(|n| n.is_ascii_digit() || *n == b'-' || *n == b'+'));
        if !ok {
            break;
        }
        if c == 'e' || c == 'E' {
            seen_exp = true;
        }
        end += 1;
    }
    (&s[..end], s[end..].trim())
}

/// Parses `text` as a quantity of dimension `dim`, returning its SI value.
pub fn parse_quantity(text: &str, dim: Dimension) -> Result<f64> {
    let (num, unit) = split_number(text);
    let value: f64 = num
        .parse()
        .map_err(|_| Error::Config(format!("`{text}`: not a number")))?;
    if unit.is_empty() && dim != Dimension::Dimensionless {
        return Err(Error::Config(format!("`{text}`: missing unit for {dim:?} quantity")));
    }
    let factor = scale(dim, unit).ok_or_else(|| Error::Config(format!("`{text}`: unit `{unit}` is not a {dim:?} unit")))?;
    Ok(value * factor)
}

/// Parses a comma-separated list of quantities.
pub fn parse_list(text: &str, dim: Dimension) -> Result<Vec<f64>> {
    text.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| parse_quantity(p, dim))
        .collect()
}
