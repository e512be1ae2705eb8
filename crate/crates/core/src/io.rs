//! Numeric text output shared by every CSV writer.

/// Seventeen significant digits, enough for an exact `f64` round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
