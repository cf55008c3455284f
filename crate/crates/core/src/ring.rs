//! Fixed-point arithmetic over the ring `Z/2^64Z`.
//!
//! Every secret-shared value in this crate is a residue modulo `Q = 2^64`.
//! Reals enter the ring through [`FixedPointCodec`]: `x` maps to
//! `round(x * 2^f)` with negatives in two's-complement convention, so ring
//! addition and multiplication of encodings track real addition and
//! multiplication up to the usual fixed-point scale bookkeeping. `Q = 2^64`
//! makes ring arithmetic native wrapping `u64` arithmetic.

use core::fmt;
use core::iter::Sum;
use core::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Bit width of the ring; `Q = 2^RING_BITS`.
pub const RING_BITS: u32 = 64;

/// A residue modulo `2^64`. Residues at or above `2^63` decode as negative.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct RingElement(u64);

impl RingElement {
    pub const ZERO: RingElement = RingElement(0);
    pub const ONE: RingElement = RingElement(1);

    pub fn new(raw: u64) -> Self {
        RingElement(raw)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// Embeds a signed integer via two's complement.
    pub fn from_signed(v: i64) -> Self {
        RingElement(v as u64)
    }

    /// Two's-complement reading of the residue.
    pub fn to_signed(self) -> i64 {
        self.0 as i64
    }

    /// Sign convention: negative iff the most significant bit is set.
    pub fn is_negative(self) -> bool {
        self.0 >> (RING_BITS - 1) == 1
    }

    /// Arithmetic (sign-preserving) right shift of the signed reading.
    pub fn shift_right_signed(self, bits: u32) -> Self {
        RingElement(((self.0 as i64) >> bits) as u64)
    }
}

impl Add for RingElement {
    type Output = RingElement;
    fn add(self, rhs: Self) -> Self {
        RingElement(self.0.wrapping_add(rhs.0))
    }
}

impl Sub for RingElement {
    type Output = RingElement;
    fn sub(self, rhs: Self) -> Self {
        RingElement(self.0.wrapping_sub(rhs.0))
    }
}

impl Mul for RingElement {
    type Output = RingElement;
    fn mul(self, rhs: Self) -> Self {
        RingElement(self.0.wrapping_mul(rhs.0))
    }
}

impl Neg for RingElement {
    type Output = RingElement;
    fn neg(self) -> Self {
        RingElement(self.0.wrapping_neg())
    }
}

impl Sum for RingElement {
    fn sum<I: Iterator<Item = RingElement>>(iter: I) -> Self {
        iter.fold(RingElement::ZERO, |acc, x| acc + x)
    }
}

impl fmt::Debug for RingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RingElement({})", self.0)
    }
}

impl fmt::Display for RingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RingError {
    #[error("value {value} is outside the encodable range (|x| < {limit})")]
    Overflow { value: f64, limit: f64 },
}

/// Maps reals onto the ring with `frac_bits` bits of fractional precision.
///
/// `decode(encode(x))` differs from `x` by at most `2^-frac_bits` for values
/// inside `max_magnitude`, and products of two encodings carry doubled
/// fractional precision until truncated back down.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    frac_bits: u32,
}

impl FixedPointCodec {
    pub const DEFAULT_FRAC_BITS: u32 = 16;

    pub fn new(frac_bits: u32) -> Self {
        assert!(
            frac_bits > 0 && frac_bits < 31,
            "fractional precision must leave integer headroom"
        );
        FixedPointCodec { frac_bits }
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits
    }

    /// Codec for products of two encodings (doubled fractional precision).
    pub fn product_codec(self) -> FixedPointCodec {
        FixedPointCodec {
            frac_bits: self.frac_bits * 2,
        }
    }

    /// Scale factor `2^frac_bits`.
    pub fn scale(self) -> f64 {
        (1u64 << self.frac_bits) as f64
    }

    /// Reals with `|x| >= max_magnitude` are rejected by [`encode`].
    ///
    /// The bound keeps one spare bit below the sign bit so sums of a few
    /// encodings cannot cross the sign boundary.
    ///
    /// [`encode`]: FixedPointCodec::encode
    pub fn max_magnitude(self) -> f64 {
        let exp = 63 - self.frac_bits - 1;
        (1u64 << exp) as f64
    }

    pub fn encode(self, x: f64) -> Result<RingElement, RingError> {
        let limit = self.max_magnitude();
        if !x.is_finite() || !(libm::fabs(x) < limit) {
            return Err(RingError::Overflow { value: x, limit });
        }
        let scaled = libm::round(x * self.scale());
        Ok(RingElement::from_signed(scaled as i64))
    }

    pub fn decode(self, r: RingElement) -> f64 {
        r.to_signed() as f64 / self.scale()
    }

    /// Encodes a slice, failing on the first out-of-range value.
    pub fn encode_all(self, xs: &[f64]) -> Result<alloc::vec::Vec<RingElement>, RingError> {
        xs.iter().map(|&x| self.encode(x)).collect()
    }

    pub fn decode_all(self, rs: &[RingElement]) -> alloc::vec::Vec<f64> {
        rs.iter().map(|&r| self.decode(r)).collect()
    }
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        FixedPointCodec::new(Self::DEFAULT_FRAC_BITS)
    }
}

/// Plaintext reference truncation: drops `frac_bits` of fractional precision
/// by an arithmetic shift of the signed reading. The secure truncation
/// protocol reconstructs this value up to one unit in the last place, and the
/// fixed-point reference forward pass uses it verbatim.
pub fn truncate_signed(r: RingElement, frac_bits: u32) -> RingElement {
    r.shift_right_signed(frac_bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const Q_MINUS: fn(u64) -> u64 = |x| 0u64.wrapping_sub(x);

    #[test]
    fn encode_known_values() {
        let codec = FixedPointCodec::default();
        assert_eq!(codec.encode(1.5).unwrap().raw(), 98304);
        assert_eq!(codec.encode(0.0).unwrap().raw(), 0);
        assert_eq!(codec.encode(-1.0).unwrap().raw(), Q_MINUS(65536));
    }

    #[test]
    fn decode_known_values() {
        let codec = FixedPointCodec::default();
        assert_eq!(codec.decode(RingElement::new(98304)), 1.5);
        assert_eq!(codec.decode(RingElement::new(Q_MINUS(65536))), -1.0);
        let x = 3.14159;
        let roundtrip = codec.decode(codec.encode(x).unwrap());
        assert!((roundtrip - x).abs() <= 1.0 / codec.scale());
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let codec = FixedPointCodec::default();
        let limit = codec.max_magnitude();
        assert!(codec.encode(limit).is_err());
        assert!(codec.encode(-limit * 2.0).is_err());
        assert!(codec.encode(f64::NAN).is_err());
        assert!(codec.encode(limit - 1.0).is_ok());
    }

    #[test]
    fn ring_identities() {
        let x = RingElement::new(0xDEAD_BEEF_0BAD_F00D);
        assert_eq!(RingElement::new(u64::MAX) + RingElement::ONE, RingElement::ZERO);
        assert_eq!(x * RingElement::ONE, x);
        assert_eq!(-x + x, RingElement::ZERO);
    }

    #[test]
    fn sign_convention_is_msb() {
        assert!(!RingElement::new(0).is_negative());
        assert!(!RingElement::new((1 << 63) - 1).is_negative());
        assert!(RingElement::new(1 << 63).is_negative());
        assert!(RingElement::from_signed(-1).is_negative());
    }

    #[test]
    fn addition_tracks_reals() {
        let codec = FixedPointCodec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tol = 2.0 / codec.scale();
        for _ in 0..10_000 {
            let x = rng.random_range(-1048576.0..1048576.0);
            let y = rng.random_range(-1048576.0..1048576.0);
            let sum = codec.decode(codec.encode(x).unwrap() + codec.encode(y).unwrap());
            assert!((sum - (x + y)).abs() <= tol, "x={x} y={y} sum={sum}");
        }
    }

    proptest! {
        #[test]
        fn mul_distributes_over_add(a: u64, b: u64, c: u64) {
            let (a, b, c) = (RingElement::new(a), RingElement::new(b), RingElement::new(c));
            prop_assert_eq!(a * (b + c), a * b + a * c);
        }

        #[test]
        fn decode_sign_matches_msb(raw: u64) {
            let r = RingElement::new(raw);
            let codec = FixedPointCodec::default();
            prop_assert_eq!(codec.decode(r) < 0.0, r.is_negative());
        }

        #[test]
        fn truncate_matches_integer_division(v in -(1i64 << 40)..(1i64 << 40)) {
            let shifted = truncate_signed(RingElement::from_signed(v), 16);
            prop_assert_eq!(shifted.to_signed(), v >> 16);
        }
    }
}
