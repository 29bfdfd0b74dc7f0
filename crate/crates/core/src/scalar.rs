//! Numeric back ends for the operators.
//!
//! Every operator is generic over [`Scalar`]. `f64` is the working type;
//! [`BigRational`] evaluates the same formulas exactly, which is what the
//! identity checks rely on: SCC self-weighting, the crude-rate mixture
//! reconstruction and FDP falsification.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

pub trait Scalar: Clone + Debug + PartialOrd + Signed {
    /// `num / den`; callers guarantee `den > 0`.
    fn ratio(num: u64, den: u64) -> Self;
    /// Converts a stored weight, given both its exact and rounded forms.
    fn from_mass(exact: &BigRational, approx: f64) -> Self;
    fn as_f64(&self) -> f64;
}

impl Scalar for f64 {
    fn ratio(num: u64, den: u64) -> Self {
        num as f64 / den as f64
    }
    fn from_mass(_exact: &BigRational, approx: f64) -> Self {
        approx
    }
    fn as_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for BigRational {
    fn ratio(num: u64, den: u64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
    fn from_mass(exact: &BigRational, _approx: f64) -> Self {
        exact.clone()
    }
    fn as_f64(&self) -> f64 {
        rational_to_f64(self)
    }
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

pub fn rational_from_u64(num: u64, den: u64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Parses an exact rational from `"3/8"`, `"0.125"`, `"1e-3"` or `"7"`.
pub fn parse_rational(text: &str) -> Option<BigRational> {
    let text = text.trim();
    if let Some((n, d)) = text.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(BigRational::new(n, d));
    }
    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(pos) => (&text[..pos], text[pos + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (negative, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits: BigInt = format!("{int_part}{frac_part}").parse().ok()?;
    let exp = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut value = if exp >= 0 {
        BigRational::from_integer(digits * num_traits::pow(ten, exp as usize))
    } else {
        BigRational::new(digits, num_traits::pow(ten, (-exp) as usize))
    };
    if negative {
        value = -value;
    }
    Some(value)
}

/// Nearest integer, ties to even.
pub fn round_half_even(r: &BigRational) -> BigInt {
    let floor = r.floor();
    let frac = r - &floor;
    let floor = floor.to_integer();
    match frac.cmp(&rational_from_u64(1, 2)) {
        std::cmp::Ordering::Less => floor,
        std::cmp::Ordering::Greater => floor + 1,
        std::cmp::Ordering::Equal if floor.is_even() => floor,
        std::cmp::Ordering::Equal => floor + 1,
    }
}

/// Decimal text of `r` with exactly `decimals` fractional digits, rounded
/// half to even.
pub fn format_fixed(r: &BigRational, decimals: usize) -> String {
    let scale = num_traits::pow(BigInt::from(10), decimals);
    let scaled = round_half_even(&(r * BigRational::from_integer(scale)));
    let sign = if scaled.is_negative() { "-" } else { "" };
    let digits = scaled.abs().to_string();
    let digits = format!("{digits:0>width$}", width = decimals + 1);
    let (int, frac) = digits.split_at(digits.len() - decimals);
    if decimals == 0 {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{frac}")
    }
}
