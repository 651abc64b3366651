//! Serialization helpers: every float leaving the library as JSON is rounded
//! to 12 significant digits, and infinite thresholds are written as strings.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::{Error, Result};

pub const SIGNIFICANT_DIGITS: usize = 12;

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits. Non-finite values pass through.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if n.is_f64() {
                if let Some(x) = n.as_f64() {
                    let r = round_sig(x);
                    if let Some(num) = serde_json::Number::from_f64(r) {
                        *n = num;
                    }
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with all floats rounded.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::Config(e.to_string()))?;
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Float formatting for CSV output.
pub fn fmt_float(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{}", round_sig(x))
    }
}

/// Serde adapter for extended reals: `±∞` is written as `"+inf"` / `"-inf"`,
/// and numbers or those strings (also `"inf"`) are accepted on input.
pub mod ext_real {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn parse(s: &str) -> Option<f64> {
        match s.trim() {
            "inf" | "+inf" | "Infinity" | "+Infinity" => Some(f64::INFINITY),
            "-inf" | "-Infinity" => Some(f64::NEG_INFINITY),
            other => other.parse().ok().filter(|x: &f64| x.is_finite()),
        }
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if *x == f64::INFINITY {
            s.serialize_str("+inf")
        } else if *x == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*x)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => parse(&s).ok_or_else(|| serde::de::Error::custom(format!("not an extended real: {s}"))),
        }
    }
}

/// Pair of extended reals, e.g. an interval `[lo, hi]`.
pub mod ext_real_pair {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Pair(#[serde(with = "ext_real")] f64, #[serde(with = "ext_real")] f64);

    pub fn serialize<S: Serializer>(x: &(f64, f64), s: S) -> std::result::Result<S::Ok, S::Error> {
        Pair(x.0, x.1).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<(f64, f64), D::Error> {
        let p = Pair::deserialize(d)?;
        Ok((p.0, p.1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round_sig(0.1 + 0.2), 0.3);
        assert_eq!(round_sig(1.0 / 3.0), 0.333333333333);
        assert_eq!(round_sig(-2.5e-20), -2.5e-20);
    }

    #[test]
    fn infinite_values_become_strings() {
        #[derive(Serialize, Deserialize)]
        struct T {
            #[serde(with = "ext_real")]
            b: f64,
        }
        let s = to_json_string(&T { b: f64::INFINITY }).unwrap();
        assert!(s.contains("\"+inf\""));
        let t: T = serde_json::from_str(&s).unwrap();
        assert_eq!(t.b, f64::INFINITY);
    }
}
