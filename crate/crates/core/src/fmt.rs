/// Formats `v` with at most `digits` significant digits, using the shortest
/// decimal that parses back to the rounded value.
///
/// `format_sig(1.2345678, 6) == "1.23457"`, `format_sig(0.5, 6) == "0.5"`.
pub fn format_sig(v: f64, digits: usize) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let digits = digits.max(1);
    let rounded: f64 = format!("{:.*e}", digits - 1, v)
        .parse()
        .expect("scientific formatting parses");
    if rounded.abs() < 1e-4 || rounded.abs() >= 1e16 {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    }
}
