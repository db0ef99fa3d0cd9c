//! Number formatting shared by the CSV and text outputs.

/// `x` rounded to 12 significant digits, printed in its shortest
/// round-trip form. Infinities print as `inf` / `-inf`.
pub fn sig12(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    format!("{rounded}")
}
