//! Lowercase hexadecimal floating-point text, exact for every `f64`.
//!
//! Normal numbers print as `0x1.<hex>p<exp>`, subnormals as `0x0.<hex>p-1022`,
//! with trailing zero digits dropped. Non-finite values print as `inf`, `-inf`
//! and `nan`.

use std::fmt::Write;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("not a hexadecimal float: {0:?}")]
pub struct HexFloatError(pub String);

const MANT_BITS: u32 = 52;
const MANT_MASK: u64 = (1 << MANT_BITS) - 1;

pub fn format(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    let mut out = String::new();
    if x.is_sign_negative() {
        out.push('-');
    }
    if x.is_infinite() {
        out.push_str("inf");
        return out;
    }
    let bits = x.to_bits();
    let biased = ((bits >> MANT_BITS) & 0x7ff) as i32;
    let mant = bits & MANT_MASK;
    let (lead, exp) = match (biased, mant) {
        (0, 0) => (0, 0),
        (0, _) => (0, -1022),
        _ => (1, biased - 1023),
    };
    write!(out, "0x{lead}").unwrap();
    if mant != 0 {
        let digits = format!("{mant:013x}");
        out.push('.');
        out.push_str(digits.trim_end_matches('0'));
    }
    write!(out, "p{exp:+}").unwrap();
    out
}

pub fn parse(text: &str) -> Result<f64, HexFloatError> {
    let err = || HexFloatError(text.to_string());
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let sign = if neg { -1.0 } else { 1.0 };
    match body {
        "inf" => return Ok(sign * f64::INFINITY),
        "nan" if !neg => return Ok(f64::NAN),
        _ => {}
    }
    let body = body.strip_prefix("0x").ok_or_else(err)?;
    let (mantissa, exp) = body.split_once('p').ok_or_else(err)?;
    let exp: i32 = exp.parse().map_err(|_| err())?;
    let (lead, frac) = match mantissa.split_once('.') {
        Some((l, f)) if !f.is_empty() => (l, f),
        Some(_) => return Err(err()),
        None => (mantissa, ""),
    };
    if frac.len() > 13 || !frac.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()) {
        return Err(err());
    }
    let mant = if frac.is_empty() {
        0
    } else {
        u64::from_str_radix(frac, 16).map_err(|_| err())? << (4 * (13 - frac.len()))
    };
    let bits = match lead {
        "1" if (-1022..=1023).contains(&exp) => (((exp + 1023) as u64) << MANT_BITS) | mant,
        "0" if mant == 0 && exp == 0 => 0,
        "0" if mant != 0 && exp == -1022 => mant,
        _ => return Err(err()),
    };
    Ok(f64::from_bits(bits | (neg as u64) << 63))
}
