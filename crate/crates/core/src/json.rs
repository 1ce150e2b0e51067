//! JSON writer that prints every float with 17 significant digits.
//!
//! `serde_json` prints the shortest round-tripping representation; here all
//! floats use a fixed `d.dddddddddddddddde±x` layout so that output width
//! does not depend on the value and re-emitting parsed output reproduces the
//! same bytes. Non-finite floats become `null`.

use serde::Serialize;
use serde_json::{Number, Value};

pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

fn number(n: &Number, out: &mut String) {
    if let Some(u) = n.as_u64() {
        out.push_str(&u.to_string());
    } else if let Some(i) = n.as_i64() {
        out.push_str(&i.to_string());
    } else {
        out.push_str(&format_f64(n.as_f64().unwrap_or(f64::NAN)));
    }
}

fn write(value: &Value, indent: usize, out: &mut String) {
    let pad = |k: usize, out: &mut String| out.extend(std::iter::repeat_n(' ', 2 * k));
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => number(n, out),
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialise")),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, v) in items.iter().enumerate() {
                pad(indent + 1, out);
                write(v, indent + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(indent, out);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            out.push_str("{\n");
            for (i, (k, v)) in map.iter().enumerate() {
                pad(indent + 1, out);
                out.push_str(&serde_json::to_string(k).expect("strings serialise"));
                out.push_str(": ");
                write(v, indent + 1, out);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            pad(indent, out);
            out.push('}');
        }
    }
}

pub fn value_to_string(value: &Value) -> String {
    let mut out = String::new();
    write(value, 0, &mut out);
    out
}

/// Pretty-printed JSON with 17-digit floats.
pub fn to_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    Ok(value_to_string(&serde_json::to_value(value)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn seventeen_digits_and_null() {
        assert_eq!(format_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(format_f64(f64::NAN), "null");
        let v = serde_json::json!({"a": 1, "b": [0.5, -2], "c": "x"});
        assert_eq!(value_to_string(&v), "{\n  \"a\": 1,\n  \"b\": [\n    5.0000000000000000e-1,\n    -2\n  ],\n  \"c\": \"x\"\n}");
    }

    proptest! {
        #[test]
        fn floats_round_trip_bit_exactly(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let parsed: f64 = format_f64(x).parse().unwrap();
            prop_assert_eq!(parsed.to_bits(), x.to_bits());
        }

        #[test]
        fn reemission_is_byte_identical(xs in proptest::collection::vec(-1e300f64..1e300, 0..8)) {
            let first = to_string(&xs).unwrap();
            let parsed: Value = serde_json::from_str(&first).unwrap();
            prop_assert_eq!(value_to_string(&parsed), first);
        }
    }
}
