//! Exact text encoding of `f64` as C99-style hexadecimal floating point
//! strings (`0x1.921fb54442d18p+1`).
//!
//! Used for every numerical field of the model artifact so that a
//! save/load round trip reproduces the in-memory bits exactly. The serde
//! adapters below are meant for `#[serde(with = "...")]`.

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

const MANTISSA_BITS: u32 = 52;
const MANTISSA_MASK: u64 = (1 << MANTISSA_BITS) - 1;
const EXP_BIAS: i64 = 1023;

pub fn format(x: f64) -> String {
    let bits = x.to_bits();
    let negative = bits >> 63 == 1;
    let biased = ((bits >> MANTISSA_BITS) & 0x7ff) as i64;
    let mantissa = bits & MANTISSA_MASK;
    let sign = if negative { "-" } else { "" };

    if biased == 0x7ff {
        return if mantissa == 0 {
            format!("{sign}inf")
        } else {
            "nan".to_string()
        };
    }
    if biased == 0 && mantissa == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if biased == 0 {
        (0, 1 - EXP_BIAS)
    } else {
        (1, biased - EXP_BIAS)
    };
    let digits = format!("{mantissa:013x}");
    let digits = digits.trim_end_matches('0');
    if digits.is_empty() {
        format!("{sign}0x{lead}p{exp:+}")
    } else {
        format!("{sign}0x{lead}.{digits}p{exp:+}")
    }
}

pub fn parse(s: &str) -> Result<f64, String> {
    let bad = || format!("malformed hex float {s:?}");
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    match body {
        "inf" => return Ok(if negative { f64::NEG_INFINITY } else { f64::INFINITY }),
        "nan" => return Ok(f64::NAN),
        _ => {}
    }
    let body = body.strip_prefix("0x").ok_or_else(bad)?;
    let (significand, exp) = body.split_once('p').ok_or_else(bad)?;
    let exp: i64 = exp.parse().map_err(|_| bad())?;
    let (lead, frac) = match significand.split_once('.') {
        Some((lead, frac)) => (lead, frac),
        None => (significand, ""),
    };
    if frac.len() > 13 || !frac.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(bad());
    }
    let mantissa = if frac.is_empty() {
        0
    } else {
        u64::from_str_radix(&format!("{frac:0<13}"), 16).map_err(|_| bad())?
    };
    let sign_bit = if negative { 1u64 << 63 } else { 0 };
    let bits = match lead {
        "1" => {
            if !(1 - EXP_BIAS..=EXP_BIAS).contains(&exp) {
                return Err(bad());
            }
            (((exp + EXP_BIAS) as u64) << MANTISSA_BITS) | mantissa
        }
        "0" if mantissa == 0 => 0,
        "0" if exp == 1 - EXP_BIAS => mantissa,
        _ => return Err(bad()),
    };
    Ok(f64::from_bits(sign_bit | bits))
}

pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format(*x))
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    let text = String::deserialize(d)?;
    parse(&text).map_err(D::Error::custom)
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        xs.iter().map(|&x| format(x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|t| parse(t).map_err(D::Error::custom))
            .collect()
    }
}

pub mod option {
    use super::*;

    pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        x.map(format).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|t| parse(&t).map_err(D::Error::custom))
            .transpose()
    }
}

pub mod vec2 {
    use super::*;

    pub fn serialize<S: Serializer>(rows: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        rows.iter()
            .map(|r| r.iter().map(|&x| format(x)).collect::<Vec<_>>())
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        Vec::<Vec<String>>::deserialize(d)?
            .iter()
            .map(|r| {
                r.iter()
                    .map(|t| parse(t).map_err(D::Error::custom))
                    .collect()
            })
            .collect()
    }
}

pub mod matrix {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Encoded {
        rows: usize,
        cols: usize,
        /// Row-major.
        data: Vec<String>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(format(m[(i, j)]));
            }
        }
        Encoded {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let enc = Encoded::deserialize(d)?;
        if enc.data.len() != enc.rows * enc.cols {
            return Err(D::Error::custom("matrix data length does not match shape"));
        }
        let values = enc
            .data
            .iter()
            .map(|t| parse(t).map_err(D::Error::custom))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DMatrix::from_row_slice(enc.rows, enc.cols, &values))
    }
}

pub mod matrices {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(transparent)]
    struct Wrapped(#[serde(with = "super::matrix")] DMatrix<f64>);

    pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        ms.iter()
            .map(|m| Wrapped(m.clone()))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        Ok(Vec::<Wrapped>::deserialize(d)?
            .into_iter()
            .map(|w| w.0)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_encodings() {
        assert_eq!(format(1.0), "0x1p+0");
        assert_eq!(format(-2.5), "-0x1.4p+1");
        assert_eq!(format(0.0), "0x0p+0");
        assert_eq!(format(-0.0), "-0x0p+0");
        assert_eq!(format(f64::INFINITY), "inf");
        assert_eq!(format(std::f64::consts::PI), "0x1.921fb54442d18p+1");
        assert_eq!(format(f64::MIN_POSITIVE / 4.0), "0x0.4p-1022");
    }

    #[test]
    fn rejects_garbage() {
        for s in ["", "0x", "1.0", "0x2p+0", "0x1.zp+0", "0x1p+5000", "0x0.1p+3"] {
            assert!(parse(s).is_err(), "{s}");
        }
    }

    #[test]
    fn special_values() {
        assert!(parse("nan").unwrap().is_nan());
        assert_eq!(parse("-inf").unwrap(), f64::NEG_INFINITY);
        assert_eq!(parse("-0x0p+0").unwrap().to_bits(), (-0.0f64).to_bits());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            let back = parse(&format(x)).unwrap();
            if x.is_nan() {
                prop_assert!(back.is_nan());
            } else {
                prop_assert_eq!(back.to_bits(), x.to_bits());
            }
        }
    }
}
