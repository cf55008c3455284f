//! Secure computation kernels over additively shared tensors.
//!
//! Addition is local; multiplication spends one Beaver triple per element and
//! opens only the two one-time masks; comparison routes through the binary
//! domain (`a2b`, sign-bit extract, lift back); fixed-point products carry
//! doubled fractional precision until [`SecureContext::truncate`] rescales
//! them with a dealer truncation pair. The composite linear-algebra kernels
//! (matmul, convolution, pooling) are built from those pieces with exactly
//! one truncation per output element.
//!
//! Every tensor tracks its fractional precision; combining mismatched
//! precisions is a runtime error rather than a silent scale bug.

use alloc::vec;
use alloc::vec::Vec;

use crate::bus::Exchange;
use crate::ring::{FixedPointCodec, RingElement};
use crate::sharing::{
    a2b, b2a_low_bits, share_arithmetic, ArithmeticShareVector, BinaryShareVector, PartyId,
    SessionId, SessionRandomness, ShareError,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SecureError {
    #[error("tensor shapes {0:?} and {1:?} are not conformable")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("fractional precision mismatch: {0} vs {1} bits")]
    PrecisionMismatch(u32, u32),
    #[error(transparent)]
    Share(#[from] ShareError),
}

/// An additively shared tensor: one share vector per party plus shape and
/// fractional-precision bookkeeping.
#[derive(Clone, Debug)]
pub struct SecureTensor {
    shape: Vec<usize>,
    frac_bits: u32,
    shares: Vec<ArithmeticShareVector>,
}

impl SecureTensor {
    pub fn from_shares(
        shares: Vec<ArithmeticShareVector>,
        shape: Vec<usize>,
        frac_bits: u32,
    ) -> Self {
        let len: usize = shape.iter().product();
        assert!(shares.len() >= 2, "secure tensor needs at least two parties");
        for s in &shares {
            assert_eq!(s.len(), len, "share length must match shape");
        }
        SecureTensor {
            shape,
            frac_bits,
            shares,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn party_count(&self) -> u16 {
        self.shares.len() as u16
    }

    pub fn shares(&self) -> &[ArithmeticShareVector] {
        &self.shares
    }

    pub fn session(&self) -> SessionId {
        self.shares[0].session
    }

    /// Sums all parties' shares — the decrypt step of whoever collects them.
    pub fn reconstruct(&self) -> Vec<RingElement> {
        let mut out = vec![RingElement::ZERO; self.len()];
        for party in &self.shares {
            for (acc, &s) in out.iter_mut().zip(&party.elems) {
                *acc = *acc + s;
            }
        }
        out
    }

    /// Reconstructs and rescales by this tensor's own fractional precision.
    pub fn reconstruct_f64(&self) -> Vec<f64> {
        let scale = (1u128 << self.frac_bits) as f64;
        self.reconstruct()
            .into_iter()
            .map(|r| r.to_signed() as f64 / scale)
            .collect()
    }

    fn view(&self) -> Vec<&[RingElement]> {
        self.shares.iter().map(|s| s.elems.as_slice()).collect()
    }

    /// Local reshape; element order is unchanged.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<SecureTensor, SecureError> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(SecureError::ShapeMismatch(self.shape.clone(), shape));
        }
        let mut out = self.clone();
        out.shape = shape;
        Ok(out)
    }
}

fn wrap_shares(
    per_party: Vec<Vec<RingElement>>,
    session: SessionId,
    shape: Vec<usize>,
    frac_bits: u32,
) -> SecureTensor {
    let shares = per_party
        .into_iter()
        .enumerate()
        .map(|(p, elems)| ArithmeticShareVector {
            owner: PartyId(p as u16),
            session,
            elems,
        })
        .collect();
    SecureTensor::from_shares(shares, shape, frac_bits)
}

/// Offset that makes masked truncation operands positive: values entering
/// [`SecureContext::truncate`] must stay below this in magnitude.
const TRUNCATION_OFFSET: u64 = 1 << 62;

/// Driver for one group of parties computing over shares. Owns the session
/// counter, the dealer supply and the opening channel; all revealed values
/// flow through [`Exchange`] where they are logged and tallied.
pub struct SecureContext<'a> {
    codec: FixedPointCodec,
    randomness: &'a mut SessionRandomness,
    exchange: Exchange<'a>,
    next_session: u64,
}

impl<'a> SecureContext<'a> {
    pub fn new(
        codec: FixedPointCodec,
        randomness: &'a mut SessionRandomness,
        exchange: Exchange<'a>,
    ) -> Self {
        assert_eq!(randomness.parties(), exchange.party_count());
        SecureContext {
            codec,
            randomness,
            exchange,
            next_session: 1,
        }
    }

    pub fn codec(&self) -> FixedPointCodec {
        self.codec
    }

    pub fn parties(&self) -> u16 {
        self.exchange.party_count()
    }

    pub fn exchange(&self) -> &Exchange<'a> {
        &self.exchange
    }

    pub fn exchange_mut(&mut self) -> &mut Exchange<'a> {
        &mut self.exchange
    }

    fn mint(&mut self) -> SessionId {
        let id = SessionId(self.next_session);
        self.next_session += 1;
        id
    }

    /// Shares plaintext ring values into a fresh tensor (kernel tests and
    /// dealer-side fixtures; protocol actors share through their own paths).
    pub fn share_plain(
        &mut self,
        values: &[RingElement],
        shape: Vec<usize>,
        frac_bits: u32,
    ) -> Result<SecureTensor, SecureError> {
        let session = self.mint();
        let parties = self.parties();
        let shares = share_arithmetic(values, parties, session, self.exchange.sharing_rng())?;
        Ok(SecureTensor::from_shares(shares, shape, frac_bits))
    }

    /// Adopts externally produced shares under a fresh session id.
    pub fn adopt(
        &mut self,
        per_party: Vec<Vec<RingElement>>,
        shape: Vec<usize>,
        frac_bits: u32,
    ) -> SecureTensor {
        let session = self.mint();
        wrap_shares(per_party, session, shape, frac_bits)
    }

    fn check_conformable(x: &SecureTensor, y: &SecureTensor) -> Result<(), SecureError> {
        if x.shape != y.shape {
            return Err(SecureError::ShapeMismatch(x.shape.clone(), y.shape.clone()));
        }
        if x.frac_bits != y.frac_bits {
            return Err(SecureError::PrecisionMismatch(x.frac_bits, y.frac_bits));
        }
        Ok(())
    }

    /// Element-wise addition; purely local.
    pub fn add(&mut self, x: &SecureTensor, y: &SecureTensor) -> Result<SecureTensor, SecureError> {
        Self::check_conformable(x, y)?;
        let session = self.mint();
        let per_party = x
            .shares
            .iter()
            .zip(&y.shares)
            .map(|(xs, ys)| {
                xs.elems
                    .iter()
                    .zip(&ys.elems)
                    .map(|(&a, &b)| a + b)
                    .collect()
            })
            .collect();
        Ok(wrap_shares(per_party, session, x.shape.clone(), x.frac_bits))
    }

    /// Element-wise subtraction; purely local.
    pub fn sub(&mut self, x: &SecureTensor, y: &SecureTensor) -> Result<SecureTensor, SecureError> {
        Self::check_conformable(x, y)?;
        let session = self.mint();
        let per_party = x
            .shares
            .iter()
            .zip(&y.shares)
            .map(|(xs, ys)| {
                xs.elems
                    .iter()
                    .zip(&ys.elems)
                    .map(|(&a, &b)| a - b)
                    .collect()
            })
            .collect();
        Ok(wrap_shares(per_party, session, x.shape.clone(), x.frac_bits))
    }

    /// Multiplies every share by a public ring constant. The caller states
    /// how many fractional bits the constant carries.
    pub fn mul_public(&mut self, x: &SecureTensor, c: RingElement, c_frac: u32) -> SecureTensor {
        let session = self.mint();
        let per_party = x
            .shares
            .iter()
            .map(|xs| xs.elems.iter().map(|&v| v * c).collect())
            .collect();
        wrap_shares(per_party, session, x.shape.clone(), x.frac_bits + c_frac)
    }

    /// Computes `c - x` for a public integer constant `c` (party 0 holds the
    /// constant). Used to flip comparison bits.
    pub fn sub_from_public(&mut self, c: RingElement, x: &SecureTensor) -> SecureTensor {
        let session = self.mint();
        let per_party = x
            .shares
            .iter()
            .enumerate()
            .map(|(p, xs)| {
                xs.elems
                    .iter()
                    .map(|&v| if p == 0 { c - v } else { -v })
                    .collect()
            })
            .collect();
        wrap_shares(per_party, session, x.shape.clone(), x.frac_bits)
    }

    /// Beaver multiplication. Opens exactly two masked values per element;
    /// the product carries the summed fractional precision of its inputs.
    pub fn mul(&mut self, x: &SecureTensor, y: &SecureTensor) -> Result<SecureTensor, SecureError> {
        if x.shape != y.shape {
            return Err(SecureError::ShapeMismatch(x.shape.clone(), y.shape.clone()));
        }
        let product = self.mul_elems(&x.view(), &y.view())?;
        let session = self.mint();
        Ok(wrap_shares(
            product,
            session,
            x.shape.clone(),
            x.frac_bits + y.frac_bits,
        ))
    }

    /// Beaver core over bare share slices, `[party][elem]`.
    fn mul_elems(
        &mut self,
        x: &[&[RingElement]],
        y: &[&[RingElement]],
    ) -> Result<Vec<Vec<RingElement>>, SecureError> {
        let h = x.len();
        let n = x[0].len();
        if n == 0 {
            return Ok(vec![Vec::new(); h]);
        }
        let triples = self.randomness.triples(n)?;
        let eps_shares: Vec<Vec<RingElement>> = (0..h)
            .map(|p| (0..n).map(|e| x[p][e] - triples.a[p][e]).collect())
            .collect();
        let delta_shares: Vec<Vec<RingElement>> = (0..h)
            .map(|p| (0..n).map(|e| y[p][e] - triples.b[p][e]).collect())
            .collect();
        let eps = self.exchange.open_ring(&eps_shares);
        let delta = self.exchange.open_ring(&delta_shares);
        let mut z: Vec<Vec<RingElement>> = (0..h)
            .map(|p| {
                (0..n)
                    .map(|e| {
                        triples.c[p][e] + eps[e] * triples.b[p][e] + triples.a[p][e] * delta[e]
                    })
                    .collect()
            })
            .collect();
        for e in 0..n {
            z[0][e] = z[0][e] + eps[e] * delta[e];
        }
        Ok(z)
    }

    /// Drops `codec.frac_bits()` of fractional precision: mask with a
    /// truncation pair, open, shift the public value, unmask. The result is
    /// the arithmetic shift of the signed value up to one unit in the last
    /// place. Operands must stay well below the ring's sign boundary.
    pub fn truncate(&mut self, x: &SecureTensor) -> Result<SecureTensor, SecureError> {
        let f = self.codec.frac_bits();
        if x.frac_bits < 2 * f {
            return Err(SecureError::PrecisionMismatch(x.frac_bits, 2 * f));
        }
        let shifted = self.truncate_elems(&x.view(), f)?;
        let session = self.mint();
        Ok(wrap_shares(
            shifted,
            session,
            x.shape.clone(),
            x.frac_bits - f,
        ))
    }

    fn truncate_elems(
        &mut self,
        x: &[&[RingElement]],
        bits: u32,
    ) -> Result<Vec<Vec<RingElement>>, SecureError> {
        let h = x.len();
        let n = x[0].len();
        if n == 0 {
            return Ok(vec![Vec::new(); h]);
        }
        let pairs = self.randomness.truncation(n, bits)?;
        let offset = RingElement::new(TRUNCATION_OFFSET);
        let masked: Vec<Vec<RingElement>> = (0..h)
            .map(|p| {
                (0..n)
                    .map(|e| {
                        let m = x[p][e] + pairs.r[p][e];
                        if p == 0 {
                            m + offset
                        } else {
                            m
                        }
                    })
                    .collect()
            })
            .collect();
        let opened = self.exchange.open_ring(&masked);
        let offset_shift = RingElement::new(TRUNCATION_OFFSET >> bits);
        Ok((0..h)
            .map(|p| {
                (0..n)
                    .map(|e| {
                        let mut share = -pairs.r_shifted[p][e];
                        if p == 0 {
                            share =
                                share + RingElement::new(opened[e].raw() >> bits) - offset_shift;
                        }
                        share
                    })
                    .collect()
            })
            .collect())
    }

    /// Sign-bit extraction: 1 where the signed value is negative, else 0.
    /// Pipeline: convert to the binary domain, take the most significant bit
    /// locally, lift the bit back into the ring. Exact for every residue.
    pub fn less_than_zero(&mut self, x: &SecureTensor) -> Result<SecureTensor, SecureError> {
        let bits = a2b(&x.shares, self.randomness, &mut self.exchange)?;
        let msb: Vec<BinaryShareVector> = bits
            .into_iter()
            .map(|mut b| {
                for w in b.words.iter_mut() {
                    *w >>= 63;
                }
                b
            })
            .collect();
        let lifted = b2a_low_bits(&msb, 1, self.randomness, &mut self.exchange)?;
        Ok(SecureTensor::from_shares(lifted, x.shape.clone(), 0))
    }

    /// 1 where `x < y`, element-wise: subtract, then test the sign.
    pub fn compare(
        &mut self,
        x: &SecureTensor,
        y: &SecureTensor,
    ) -> Result<SecureTensor, SecureError> {
        let diff = self.sub(x, y)?;
        self.less_than_zero(&diff)
    }

    /// `max(x, 0)` element-wise, computed as `x * (1 - [x < 0])`. The sign
    /// bit carries no fractional precision, so no truncation follows.
    pub fn relu(&mut self, x: &SecureTensor) -> Result<SecureTensor, SecureError> {
        let negative = self.less_than_zero(x)?;
        let keep = self.sub_from_public(RingElement::ONE, &negative);
        self.mul(x, &keep)
    }

    /// Matrix product `[m, k] x [k, n] -> [m, n]` with one truncation per
    /// output element. Both operands must carry the codec's base precision.
    pub fn matmul(
        &mut self,
        x: &SecureTensor,
        w: &SecureTensor,
    ) -> Result<SecureTensor, SecureError> {
        let f = self.codec.frac_bits();
        if x.frac_bits != f || w.frac_bits != f {
            return Err(SecureError::PrecisionMismatch(x.frac_bits, w.frac_bits));
        }
        let (&[m, k], &[k2, n]) = (&x.shape[..], &w.shape[..]) else {
            return Err(SecureError::ShapeMismatch(x.shape.clone(), w.shape.clone()));
        };
        if k != k2 {
            return Err(SecureError::ShapeMismatch(x.shape.clone(), w.shape.clone()));
        }
        let h = x.shares.len();
        let mut acc: Vec<Vec<RingElement>> = vec![Vec::with_capacity(m * n); h];
        // Row by row: expand the row against every weight column, multiply
        // element-wise, and fold the inner dimension locally.
        for i in 0..m {
            let xe: Vec<Vec<RingElement>> = (0..h)
                .map(|p| {
                    let row = &x.shares[p].elems[i * k..(i + 1) * k];
                    let mut out = Vec::with_capacity(n * k);
                    for _ in 0..n {
                        out.extend_from_slice(row);
                    }
                    out
                })
                .collect();
            let we: Vec<Vec<RingElement>> = (0..h)
                .map(|p| {
                    let wt = &w.shares[p].elems;
                    let mut out = Vec::with_capacity(n * k);
                    for j in 0..n {
                        for l in 0..k {
                            out.push(wt[l * n + j]);
                        }
                    }
                    out
                })
                .collect();
            let xe_view: Vec<&[RingElement]> = xe.iter().map(|v| v.as_slice()).collect();
            let we_view: Vec<&[RingElement]> = we.iter().map(|v| v.as_slice()).collect();
            let products = self.mul_elems(&xe_view, &we_view)?;
            for p in 0..h {
                for j in 0..n {
                    let mut sum = RingElement::ZERO;
                    for l in 0..k {
                        sum = sum + products[p][j * k + l];
                    }
                    acc[p].push(sum);
                }
            }
        }
        let acc_view: Vec<&[RingElement]> = acc.iter().map(|v| v.as_slice()).collect();
        let shifted = self.truncate_elems(&acc_view, f)?;
        let session = self.mint();
        Ok(wrap_shares(shifted, session, vec![m, n], f))
    }

    /// Valid (no padding) 2-D convolution over `[batch, c, h, w]` inputs with
    /// `[oc, c, k, k]` kernels, one truncation per output element.
    pub fn conv2d(
        &mut self,
        x: &SecureTensor,
        kernels: &SecureTensor,
        stride: usize,
    ) -> Result<SecureTensor, SecureError> {
        let f = self.codec.frac_bits();
        if x.frac_bits != f || kernels.frac_bits != f {
            return Err(SecureError::PrecisionMismatch(x.frac_bits, kernels.frac_bits));
        }
        let (&[batch, c, ih, iw], &[oc, kc, kh, kw]) = (&x.shape[..], &kernels.shape[..]) else {
            return Err(SecureError::ShapeMismatch(
                x.shape.clone(),
                kernels.shape.clone(),
            ));
        };
        if kc != c || kh != kw || stride == 0 || ih < kh || iw < kw {
            return Err(SecureError::ShapeMismatch(
                x.shape.clone(),
                kernels.shape.clone(),
            ));
        }
        let k = kh;
        let oh = (ih - k) / stride + 1;
        let ow = (iw - k) / stride + 1;
        let parties = x.shares.len();
        let patch = c * k * k;
        let mut acc: Vec<Vec<RingElement>> =
            vec![Vec::with_capacity(batch * oc * oh * ow); parties];
        for b in 0..batch {
            // One expansion per sample: every (output pixel, kernel) pair.
            let mut xe: Vec<Vec<RingElement>> =
                vec![Vec::with_capacity(oc * oh * ow * patch); parties];
            let mut ke: Vec<Vec<RingElement>> =
                vec![Vec::with_capacity(oc * oh * ow * patch); parties];
            for p in 0..parties {
                let xs = &x.shares[p].elems;
                let ks = &kernels.shares[p].elems;
                for o in 0..oc {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ch in 0..c {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iy = oy * stride + ky;
                                        let ix = ox * stride + kx;
                                        xe[p].push(xs[((b * c + ch) * ih + iy) * iw + ix]);
                                        ke[p].push(ks[((o * c + ch) * k + ky) * k + kx]);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let xe_view: Vec<&[RingElement]> = xe.iter().map(|v| v.as_slice()).collect();
            let ke_view: Vec<&[RingElement]> = ke.iter().map(|v| v.as_slice()).collect();
            let products = self.mul_elems(&xe_view, &ke_view)?;
            for p in 0..parties {
                for out_idx in 0..oc * oh * ow {
                    let mut sum = RingElement::ZERO;
                    for e in 0..patch {
                        sum = sum + products[p][out_idx * patch + e];
                    }
                    acc[p].push(sum);
                }
            }
        }
        let acc_view: Vec<&[RingElement]> = acc.iter().map(|v| v.as_slice()).collect();
        let shifted = self.truncate_elems(&acc_view, f)?;
        let session = self.mint();
        Ok(wrap_shares(shifted, session, vec![batch, oc, oh, ow], f))
    }

    /// Non-overlapping average pooling over `[batch, c, h, w]`: local window
    /// sums, one public multiply by `1/window^2`, one truncation.
    pub fn avgpool(&mut self, x: &SecureTensor, window: usize) -> Result<SecureTensor, SecureError> {
        let f = self.codec.frac_bits();
        if x.frac_bits != f {
            return Err(SecureError::PrecisionMismatch(x.frac_bits, f));
        }
        let &[batch, c, ih, iw] = &x.shape[..] else {
            return Err(SecureError::ShapeMismatch(x.shape.clone(), vec![window]));
        };
        if window == 0 || ih % window != 0 || iw % window != 0 {
            return Err(SecureError::ShapeMismatch(x.shape.clone(), vec![window]));
        }
        let oh = ih / window;
        let ow = iw / window;
        let parties = x.shares.len();
        let mut sums: Vec<Vec<RingElement>> =
            vec![Vec::with_capacity(batch * c * oh * ow); parties];
        for p in 0..parties {
            let xs = &x.shares[p].elems;
            for b in 0..batch {
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut sum = RingElement::ZERO;
                            for wy in 0..window {
                                for wx in 0..window {
                                    let iy = oy * window + wy;
                                    let ix = ox * window + wx;
                                    sum = sum + xs[((b * c + ch) * ih + iy) * iw + ix];
                                }
                            }
                            sums[p].push(sum);
                        }
                    }
                }
            }
        }
        let inv_area = self
            .codec
            .encode(1.0 / (window * window) as f64)
            .expect("window area reciprocal encodable");
        for party in sums.iter_mut() {
            for v in party.iter_mut() {
                *v = *v * inv_area;
            }
        }
        let sums_view: Vec<&[RingElement]> = sums.iter().map(|v| v.as_slice()).collect();
        let shifted = self.truncate_elems(&sums_view, f)?;
        let session = self.mint();
        Ok(wrap_shares(shifted, session, vec![batch, c, oh, ow], f))
    }

    /// Adds a bias vector along the last axis of a `[rows, n]` tensor or the
    /// channel axis of a `[batch, c, h, w]` tensor. Local.
    pub fn bias_add(
        &mut self,
        x: &SecureTensor,
        bias: &SecureTensor,
    ) -> Result<SecureTensor, SecureError> {
        if x.frac_bits != bias.frac_bits {
            return Err(SecureError::PrecisionMismatch(x.frac_bits, bias.frac_bits));
        }
        let b = bias.len();
        let session = self.mint();
        match &x.shape[..] {
            &[_, n] if n == b => {
                let per_party = x
                    .shares
                    .iter()
                    .zip(&bias.shares)
                    .map(|(xs, bs)| {
                        xs.elems
                            .iter()
                            .enumerate()
                            .map(|(i, &v)| v + bs.elems[i % b])
                            .collect()
                    })
                    .collect();
                Ok(wrap_shares(per_party, session, x.shape.clone(), x.frac_bits))
            }
            &[_, c, h, w] if c == b => {
                let plane = h * w;
                let per_party = x
                    .shares
                    .iter()
                    .zip(&bias.shares)
                    .map(|(xs, bs)| {
                        xs.elems
                            .iter()
                            .enumerate()
                            .map(|(i, &v)| v + bs.elems[(i / plane) % c])
                            .collect()
                    })
                    .collect();
                Ok(wrap_shares(per_party, session, x.shape.clone(), x.frac_bits))
            }
            _ => Err(SecureError::ShapeMismatch(
                x.shape.clone(),
                bias.shape.clone(),
            )),
        }
    }
}
