//! Number formatting and serde helpers shared by reports and exports.

use serde::{Deserialize, Deserializer, Serializer};

/// 17 significant digits; non-finite values as `inf`, `-inf`, `nan`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else if x == 0.0 {
        "0".into()
    } else {
        format!("{x:.16e}")
    }
}

/// Serde adapter writing non-finite floats as strings, since JSON has no
/// representation for them.
pub mod extended_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&fmt_f64(*x))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => match s.as_str() {
                "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
                "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
                "nan" | "NaN" => Ok(f64::NAN),
                other => other.parse().map_err(serde::de::Error::custom),
            },
        }
    }
}

/// Same as [`extended_f64`] for vectors.
pub mod extended_f64_vec {
    use super::*;
    use serde::ser::SerializeSeq;

    #[derive(serde::Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super::extended_f64")] f64);

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(xs.len()))?;
        for x in xs {
            seq.serialize_element(&Wrap(*x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Wrap>::deserialize(d)?.into_iter().map(|w| w.0).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, 126.496] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_f64(0.0), "0");
    }

    #[test]
    fn extended_json() {
        #[derive(serde::Serialize, Deserialize, PartialEq, Debug)]
        struct S {
            #[serde(with = "extended_f64")]
            a: f64,
            #[serde(with = "extended_f64_vec")]
            b: Vec<f64>,
        }
        let v = S { a: f64::INFINITY, b: vec![1.5, f64::NEG_INFINITY] };
        let j = serde_json::to_string(&v).unwrap();
        assert_eq!(j, r#"{"a":"inf","b":[1.5,"-inf"]}"#);
        assert_eq!(serde_json::from_str::<S>(&j).unwrap(), v);
    }
}
