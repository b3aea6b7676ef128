//! `%g`-style number formatting at a fixed number of significant digits.

/// Significant digits used for every number the CLI prints.
pub const REPORT_DIGITS: usize = 6;

/// Significant digits used when writing datasets back to CSV.
pub const DATA_DIGITS: usize = 12;

/// Formats `x` with `digits` significant digits, dropping trailing zeros,
/// switching to exponent notation for very small or very large magnitudes.
pub fn sig(x: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if x.is_nan() {
        return "NaN".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent format");
    let exp: i32 = exp.parse().expect("exponent digits");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

/// Shorthand for report output.
pub fn report(x: f64) -> String {
    sig(x, REPORT_DIGITS)
}

/// Rounds `x` to `digits` significant digits (the value `sig` prints).
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    sig(x, digits).parse().unwrap_or(x)
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
