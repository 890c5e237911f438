//! Python-compatible text rendering of tool results.
//!
//! Tool results reach the model as text. Rendering them the way the
//! interpreter would print them keeps native and subprocess tools
//! indistinguishable to the model.

use serde_json::Value;

/// `repr(float)`: shortest round-trip digits, positional for decimal
/// exponents in `[-4, 16)`, scientific otherwise.
pub fn float_repr(x: f64) -> String {
    format_float(x, true)
}

fn format_float(x: f64, force_point: bool) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sign = if x.is_sign_negative() { "-" } else { "" };
    let sci = format!("{:e}", x.abs());
    let (mantissa, exp) = sci.split_once('e').expect("`{:e}` always has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();

    if !(-4..16).contains(&exp) {
        let (head, tail) = digits.split_at(1);
        let frac = if tail.is_empty() { String::new() } else { format!(".{tail}") };
        let esign = if exp < 0 { '-' } else { '+' };
        return format!("{sign}{head}{frac}e{esign}{:02}", exp.abs());
    }
    if exp < 0 {
        let zeros = "0".repeat((-exp - 1) as usize);
        return format!("{sign}0.{zeros}{digits}");
    }
    let point = exp as usize + 1;
    if digits.len() <= point {
        let int = format!("{digits}{}", "0".repeat(point - digits.len()));
        return if force_point { format!("{sign}{int}.0") } else { format!("{sign}{int}") };
    }
    let (int, frac) = digits.split_at(point);
    format!("{sign}{int}.{frac}")
}

/// `str(complex(re, im))`.
pub fn complex_repr(re: f64, im: f64) -> String {
    if re == 0.0 && re.is_sign_positive() {
        return format!("{}j", format_float(im, false));
    }
    let im_text = format_float(im, false);
    let im_text = if im_text.starts_with('-') { im_text } else { format!("+{im_text}") };
    format!("({}{im_text}j)", format_float(re, false))
}

/// `str(value)` for a JSON-decoded result.
pub fn python_str(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => python_repr(other),
    }
}

fn python_repr(value: &Value) -> String {
    match value {
        Value::Null => "None".into(),
        Value::Bool(true) => "True".into(),
        Value::Bool(false) => "False".into(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.to_string(),
            (_, Some(u)) => u.to_string(),
            _ => float_repr(n.as_f64().unwrap_or(f64::NAN)),
        },
        Value::String(s) => format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'")),
        Value::Array(items) => format!("[{}]", items.iter().map(python_repr).collect::<Vec<_>>().join(", ")),
        Value::Object(map) => format!(
            "{{{}}}",
            map.iter()
                .map(|(k, v)| format!("'{k}': {}", python_repr(v)))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}
