//! Exact rational numbers and the decimal conversions used at the I/O boundary.
//!
//! [`Ratio`] is a normalized arbitrary-precision fraction: the denominator is
//! always positive and the pair is kept in lowest terms, so structural equality
//! is numeric equality.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

pub type Ratio = num_rational::BigRational;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid decimal number `{0}`")]
pub struct DecimalParseError(pub String);

/// A decimal literal split into integer digits and a power-of-ten exponent:
/// the value is `digits * 10^-decimals`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaledDecimal {
    pub digits: BigInt,
    pub decimals: u32,
}

impl ScaledDecimal {
    pub fn parse(text: &str) -> Result<Self, DecimalParseError> {
        let err = || DecimalParseError(text.to_string());
        let trimmed = text.trim();
        let (mantissa, exponent) = match trimmed.find(['e', 'E']) {
            Some(pos) => {
                let exp: i64 = trimmed[pos + 1..].parse().map_err(|_| err())?;
                (&trimmed[..pos], exp)
            }
            None => (trimmed, 0),
        };
        let (negative, unsigned) = match mantissa.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
        };
        let (int_part, frac_part) = match unsigned.split_once('.') {
            Some((i, f)) => (i, f),
            None => (unsigned, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err());
        }
        if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let mut digits: BigInt = format!("{int_part}{frac_part}0")
            .parse::<BigInt>()
            .map_err(|_| err())?
            / 10;
        if negative {
            digits = -digits;
        }
        let mut decimals = frac_part.len() as i64 - exponent;
        if decimals < 0 {
            digits *= pow10((-decimals) as u32);
            decimals = 0;
        }
        let decimals = u32::try_from(decimals).map_err(|_| err())?;
        Ok(Self { digits, decimals }.trimmed())
    }

    /// Drops trailing zero decimals so `2.50` and `2.5` scale identically.
    fn trimmed(mut self) -> Self {
        let ten = BigInt::from(10);
        while self.decimals > 0 && (&self.digits % &ten).is_zero() {
            self.digits /= &ten;
            self.decimals -= 1;
        }
        self
    }

    /// The value as an integer after multiplying by `10^decimals`.
    /// `decimals` must be at least `self.decimals`.
    pub fn scaled_to(&self, decimals: u32) -> BigInt {
        assert!(decimals >= self.decimals);
        &self.digits * pow10(decimals - self.decimals)
    }

    pub fn to_ratio(&self) -> Ratio {
        Ratio::new(self.digits.clone(), pow10(self.decimals))
    }
}

pub fn pow10(exp: u32) -> BigInt {
    num_traits::pow(BigInt::from(10), exp as usize)
}

pub fn int(value: i64) -> Ratio {
    Ratio::from_integer(BigInt::from(value))
}

pub fn frac(num: i64, den: i64) -> Ratio {
    Ratio::new(BigInt::from(num), BigInt::from(den))
}

pub fn from_big(value: &BigInt) -> Ratio {
    Ratio::from_integer(value.clone())
}

/// Renders `value` with exactly `precision` digits after the point,
/// rounding half away from zero.
pub fn to_decimal(value: &Ratio, precision: usize) -> String {
    let scale = pow10(precision as u32);
    let scaled = value.numer() * &scale;
    let den = value.denom();
    let (q, r) = scaled.abs().div_rem(den);
    let rounded = if (&r * 2u32) >= *den { q + 1u32 } else { q };
    let negative = value.is_negative() && !rounded.is_zero();
    let digits = rounded.to_str_radix(10);
    let body = if precision == 0 {
        digits
    } else {
        let padded = format!("{digits:0>width$}", width = precision + 1);
        let (int_part, frac_part) = padded.split_at(padded.len() - precision);
        format!("{int_part}.{frac_part}")
    };
    if negative {
        format!("-{body}")
    } else {
        body
    }
}

/// Lossy conversion for the few places that evaluate in floating point.
pub fn to_f64(value: &Ratio) -> f64 {
    value.to_f64().unwrap_or_else(|| {
        // Fall back to a scaled division for magnitudes outside f64 range of
        // the individual parts.
        let shift = value.numer().bits().max(value.denom().bits()).saturating_sub(1000);
        let num = (value.numer() >> shift).to_f64().unwrap_or(f64::NAN);
        let den = (value.denom() >> shift).to_f64().unwrap_or(f64::NAN);
        num / den
    })
}

pub fn min(a: &Ratio, b: &Ratio) -> Ratio {
    if a <= b {
        a.clone()
    } else {
        b.clone()
    }
}

pub fn one() -> Ratio {
    Ratio::one()
}

pub fn zero() -> Ratio {
    Ratio::zero()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_plain_and_decimal_literals() {
        let d = ScaledDecimal::parse("4.88").unwrap();
        assert_eq!(d.digits, BigInt::from(488));
        assert_eq!(d.decimals, 2);
        assert_eq!(ScaledDecimal::parse("2.50").unwrap().decimals, 1);
        assert_eq!(ScaledDecimal::parse("12").unwrap().scaled_to(3), BigInt::from(12000));
        assert_eq!(ScaledDecimal::parse("-0.5").unwrap().to_ratio(), frac(-1, 2));
        assert_eq!(ScaledDecimal::parse("1e3").unwrap().digits, BigInt::from(1000));
        assert_eq!(ScaledDecimal::parse("1.5e-2").unwrap().to_ratio(), frac(3, 200));
        assert_eq!(ScaledDecimal::parse(".25").unwrap().to_ratio(), frac(1, 4));
        for bad in ["", "abc", "1.2.3", "-", ".", "1e", "0x10"] {
            assert!(ScaledDecimal::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn decimal_rendering_rounds_half_away() {
        assert_eq!(to_decimal(&frac(1, 3), 6), "0.333333");
        assert_eq!(to_decimal(&frac(2, 3), 6), "0.666667");
        assert_eq!(to_decimal(&frac(1, 4), 6), "0.250000");
        assert_eq!(to_decimal(&frac(-1, 8), 2), "-0.13");
        assert_eq!(to_decimal(&frac(-1, 1000), 2), "0.00");
        assert_eq!(to_decimal(&frac(35, 2), 0), "18");
        assert_eq!(to_decimal(&int(40), 1), "40.0");
    }

    fn arb_ratio() -> impl Strategy<Value = Ratio> {
        (-1000i64..1000, 1i64..1000).prop_map(|(n, d)| frac(n, d))
    }

    proptest! {
        #[test]
        fn arithmetic_round_trips(a in arb_ratio(), b in arb_ratio()) {
            let sum = &a + &b;
            prop_assert_eq!(&(&sum - &b), &a);
            if !b.is_zero() {
                prop_assert_eq!(&(&(&a * &b) / &b), &a);
            }
            for r in [&sum, &(&a * &b)] {
                prop_assert!(r.denom().is_positive());
                prop_assert!(r.numer().gcd(r.denom()).is_one());
            }
        }
    }
}
