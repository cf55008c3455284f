//! n-party additive and XOR secret sharing plus the trusted dealer.
//!
//! An arithmetic sharing of a vector splits each element into `h` residues
//! that sum to the secret modulo `2^64`; a binary sharing XORs to the secret
//! bit pattern. The dealer is a logical actor that issues the correlated
//! randomness the online protocols consume: Beaver triples for ring
//! multiplication, AND triples for boolean gates, bit pairs for moving single
//! bits between domains, and truncation pairs for fixed-point rescaling.
//! Every issued object is single-use.
//!
//! The [`a2b`]/[`b2a`] conversions move whole 64-bit values between the two
//! share domains: `a2b` has each party bit-share its own arithmetic share and
//! then adds the `h` shared words inside a ripple-carry adder circuit, `b2a`
//! lifts each masked bit back into the ring and recombines with powers of two.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bus::Exchange;
use crate::ring::RingElement;

/// Index of a participating institution, unique within a session.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct PartyId(pub u16);

impl PartyId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

/// Binds the shares of one secret together.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct SessionId(pub u64);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ShareError {
    #[error("secret sharing needs at least two parties (got {0})")]
    DegenerateParties(u16),
    #[error("shares belong to different sessions")]
    SessionMismatch,
    #[error("shares have different lengths")]
    LengthMismatch,
    #[error("correlated randomness object was already consumed")]
    SingleUseViolation,
    #[error("dealer supply of {0} exhausted")]
    DealerExhausted(&'static str),
}

/// One party's additive shares of a secret vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ArithmeticShareVector {
    pub owner: PartyId,
    pub session: SessionId,
    pub elems: Vec<RingElement>,
}

impl ArithmeticShareVector {
    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }
}

/// One party's XOR shares of a vector of 64-bit words.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryShareVector {
    pub owner: PartyId,
    pub session: SessionId,
    pub words: Vec<u64>,
}

impl BinaryShareVector {
    pub fn len(&self) -> usize {
        self.words.len()
    }
}

/// Splits `values` into `parties` additive shares: the first `h - 1` shares
/// are uniformly random, the last absorbs the difference.
pub fn share_arithmetic(
    values: &[RingElement],
    parties: u16,
    session: SessionId,
    rng: &mut impl RngCore,
) -> Result<Vec<ArithmeticShareVector>, ShareError> {
    if parties < 2 {
        return Err(ShareError::DegenerateParties(parties));
    }
    let mut shares: Vec<ArithmeticShareVector> = (0..parties)
        .map(|p| ArithmeticShareVector {
            owner: PartyId(p),
            session,
            elems: Vec::with_capacity(values.len()),
        })
        .collect();
    for &value in values {
        let mut acc = RingElement::ZERO;
        for share in shares.iter_mut().take(parties as usize - 1) {
            let r = RingElement::new(rng.next_u64());
            share.elems.push(r);
            acc = acc + r;
        }
        shares[parties as usize - 1].elems.push(value - acc);
    }
    Ok(shares)
}

/// Position-wise modular sum of all parties' shares.
pub fn reconstruct_arithmetic(
    shares: &[ArithmeticShareVector],
) -> Result<Vec<RingElement>, ShareError> {
    if shares.len() < 2 {
        return Err(ShareError::DegenerateParties(shares.len() as u16));
    }
    let session = shares[0].session;
    let len = shares[0].len();
    let mut out = vec![RingElement::ZERO; len];
    for share in shares {
        if share.session != session {
            return Err(ShareError::SessionMismatch);
        }
        if share.len() != len {
            return Err(ShareError::LengthMismatch);
        }
        for (acc, &s) in out.iter_mut().zip(&share.elems) {
            *acc = *acc + s;
        }
    }
    Ok(out)
}

/// XOR counterpart of [`share_arithmetic`].
pub fn share_binary(
    words: &[u64],
    parties: u16,
    session: SessionId,
    rng: &mut impl RngCore,
) -> Result<Vec<BinaryShareVector>, ShareError> {
    if parties < 2 {
        return Err(ShareError::DegenerateParties(parties));
    }
    let mut shares: Vec<BinaryShareVector> = (0..parties)
        .map(|p| BinaryShareVector {
            owner: PartyId(p),
            session,
            words: Vec::with_capacity(words.len()),
        })
        .collect();
    for &word in words {
        let mut acc = 0u64;
        for share in shares.iter_mut().take(parties as usize - 1) {
            let r = rng.next_u64();
            share.words.push(r);
            acc ^= r;
        }
        shares[parties as usize - 1].words.push(word ^ acc);
    }
    Ok(shares)
}

/// XOR of all parties' share words.
pub fn reconstruct_binary(shares: &[BinaryShareVector]) -> Result<Vec<u64>, ShareError> {
    if shares.len() < 2 {
        return Err(ShareError::DegenerateParties(shares.len() as u16));
    }
    let session = shares[0].session;
    let len = shares[0].len();
    let mut out = vec![0u64; len];
    for share in shares {
        if share.session != session {
            return Err(ShareError::SessionMismatch);
        }
        if share.len() != len {
            return Err(ShareError::LengthMismatch);
        }
        for (acc, &w) in out.iter_mut().zip(&share.words) {
            *acc ^= w;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Correlated randomness
// ---------------------------------------------------------------------------

/// Dealer-issued shares of `(a, b, c)` with `c = a * b`, good for one private
/// ring multiplication.
#[derive(Clone, Debug)]
pub struct BeaverTriple {
    a: Vec<RingElement>,
    b: Vec<RingElement>,
    c: Vec<RingElement>,
    consumed: bool,
}

impl BeaverTriple {
    pub fn a_shares(&self) -> &[RingElement] {
        &self.a
    }

    pub fn b_shares(&self) -> &[RingElement] {
        &self.b
    }

    pub fn c_shares(&self) -> &[RingElement] {
        &self.c
    }

    /// Marks the triple used; a second call is a freshness violation.
    pub fn consume(&mut self) -> Result<(), ShareError> {
        if self.consumed {
            return Err(ShareError::SingleUseViolation);
        }
        self.consumed = true;
        Ok(())
    }

    fn relation_holds(&self) -> bool {
        let a: RingElement = self.a.iter().copied().sum();
        let b: RingElement = self.b.iter().copied().sum();
        let c: RingElement = self.c.iter().copied().sum();
        a * b == c
    }
}

/// Shares of a random bit held in both domains: `r_arith` sums to the bit,
/// `r_bits` XORs to it (bit 0 of the words).
#[derive(Clone, Debug)]
pub struct BitConversionPair {
    r_arith: Vec<RingElement>,
    r_bits: Vec<u64>,
    consumed: bool,
}

impl BitConversionPair {
    pub fn arith_shares(&self) -> &[RingElement] {
        &self.r_arith
    }

    pub fn bit_shares(&self) -> &[u64] {
        &self.r_bits
    }

    pub fn consume(&mut self) -> Result<(), ShareError> {
        if self.consumed {
            return Err(ShareError::SingleUseViolation);
        }
        self.consumed = true;
        Ok(())
    }

    fn relation_holds(&self) -> bool {
        let arith: RingElement = self.r_arith.iter().copied().sum();
        let bit = self.r_bits.iter().fold(0u64, |acc, w| acc ^ w) & 1;
        arith == RingElement::new(bit)
    }
}

/// Shares of a random mask `r` and of `r >> frac_bits`, used to rescale after
/// fixed-point multiplication. The mask stays below `2^63` so the masked
/// opening never wraps the ring.
#[derive(Clone, Debug)]
pub struct TruncationPair {
    frac_bits: u32,
    r: Vec<RingElement>,
    r_shifted: Vec<RingElement>,
    consumed: bool,
}

impl TruncationPair {
    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn mask_shares(&self) -> &[RingElement] {
        &self.r
    }

    pub fn shifted_shares(&self) -> &[RingElement] {
        &self.r_shifted
    }

    pub fn consume(&mut self) -> Result<(), ShareError> {
        if self.consumed {
            return Err(ShareError::SingleUseViolation);
        }
        self.consumed = true;
        Ok(())
    }

    fn relation_holds(&self) -> bool {
        let r: RingElement = self.r.iter().copied().sum();
        let rt: RingElement = self.r_shifted.iter().copied().sum();
        rt == r.shift_right_signed(self.frac_bits) && !r.is_negative()
    }
}

/// Column-major batch of boolean AND triples: word `i` of `a`, `b`, `c`
/// satisfies `c = a & b` after XOR reconstruction. Batches are issued whole
/// and moved into the consuming gate, so reuse is impossible by construction.
#[derive(Clone, Debug)]
pub struct BinaryTripleBlock {
    /// Layout `[party][word]`.
    pub a: Vec<Vec<u64>>,
    pub b: Vec<Vec<u64>>,
    pub c: Vec<Vec<u64>>,
}

impl BinaryTripleBlock {
    pub fn words(&self) -> usize {
        self.a.first().map_or(0, Vec::len)
    }
}

/// Column-major batch of Beaver triples, layout `[party][elem]`.
#[derive(Clone, Debug)]
pub struct TripleBlock {
    pub a: Vec<Vec<RingElement>>,
    pub b: Vec<Vec<RingElement>>,
    pub c: Vec<Vec<RingElement>>,
}

impl TripleBlock {
    pub fn len(&self) -> usize {
        self.a.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Column-major batch of truncation pairs.
#[derive(Clone, Debug)]
pub struct TruncBlock {
    pub frac_bits: u32,
    pub r: Vec<Vec<RingElement>>,
    pub r_shifted: Vec<Vec<RingElement>>,
}

/// Column-major batch of bit conversion pairs.
#[derive(Clone, Debug)]
pub struct BitPairBlock {
    pub r_arith: Vec<Vec<RingElement>>,
    pub r_bits: Vec<Vec<u64>>,
}

impl BitPairBlock {
    pub fn len(&self) -> usize {
        self.r_arith.first().map_or(0, Vec::len)
    }
}

/// Running totals of what a dealer has issued, by object kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueCounters {
    pub beaver_triples: u64,
    pub binary_triple_words: u64,
    pub bit_pairs: u64,
    pub truncation_pairs: u64,
}

/// The trusted third party. It never sees live data; it only expands a seed
/// into correlated randomness, so an identical seed reproduces the identical
/// issuance sequence.
pub struct Dealer {
    parties: u16,
    rng: ChaCha8Rng,
    issued: IssueCounters,
}

impl Dealer {
    pub fn new(parties: u16, seed: u64) -> Self {
        assert!(parties >= 2, "dealer needs at least two parties");
        Dealer {
            parties,
            rng: ChaCha8Rng::seed_from_u64(seed),
            issued: IssueCounters::default(),
        }
    }

    pub fn parties(&self) -> u16 {
        self.parties
    }

    pub fn issued(&self) -> IssueCounters {
        self.issued
    }

    fn additive_shares_of(&mut self, value: RingElement) -> Vec<RingElement> {
        let h = self.parties as usize;
        let mut shares = Vec::with_capacity(h);
        let mut acc = RingElement::ZERO;
        for _ in 0..h - 1 {
            let r = RingElement::new(self.rng.next_u64());
            acc = acc + r;
            shares.push(r);
        }
        shares.push(value - acc);
        shares
    }

    fn xor_shares_of(&mut self, word: u64) -> Vec<u64> {
        let h = self.parties as usize;
        let mut shares = Vec::with_capacity(h);
        let mut acc = 0u64;
        for _ in 0..h - 1 {
            let r = self.rng.next_u64();
            acc ^= r;
            shares.push(r);
        }
        shares.push(word ^ acc);
        shares
    }

    /// Issues `count` single-use Beaver triples.
    pub fn beaver_triples(&mut self, count: usize) -> Vec<BeaverTriple> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let a = RingElement::new(self.rng.next_u64());
            let b = RingElement::new(self.rng.next_u64());
            let triple = BeaverTriple {
                a: self.additive_shares_of(a),
                b: self.additive_shares_of(b),
                c: self.additive_shares_of(a * b),
                consumed: false,
            };
            debug_assert!(triple.relation_holds());
            out.push(triple);
        }
        self.issued.beaver_triples += count as u64;
        out
    }

    /// Issues a column-major batch of Beaver triples for vectorized kernels.
    pub fn triple_block(&mut self, count: usize) -> TripleBlock {
        let h = self.parties as usize;
        let mut block = TripleBlock {
            a: vec![Vec::with_capacity(count); h],
            b: vec![Vec::with_capacity(count); h],
            c: vec![Vec::with_capacity(count); h],
        };
        for _ in 0..count {
            let a = RingElement::new(self.rng.next_u64());
            let b = RingElement::new(self.rng.next_u64());
            for (p, share) in self.additive_shares_of(a).into_iter().enumerate() {
                block.a[p].push(share);
            }
            for (p, share) in self.additive_shares_of(b).into_iter().enumerate() {
                block.b[p].push(share);
            }
            for (p, share) in self.additive_shares_of(a * b).into_iter().enumerate() {
                block.c[p].push(share);
            }
        }
        self.issued.beaver_triples += count as u64;
        block
    }

    /// Issues `words` boolean AND triples, 64 bit positions per word.
    pub fn binary_triple_block(&mut self, words: usize) -> BinaryTripleBlock {
        let h = self.parties as usize;
        let mut block = BinaryTripleBlock {
            a: vec![Vec::with_capacity(words); h],
            b: vec![Vec::with_capacity(words); h],
            c: vec![Vec::with_capacity(words); h],
        };
        for _ in 0..words {
            let a = self.rng.next_u64();
            let b = self.rng.next_u64();
            for (p, share) in self.xor_shares_of(a).into_iter().enumerate() {
                block.a[p].push(share);
            }
            for (p, share) in self.xor_shares_of(b).into_iter().enumerate() {
                block.b[p].push(share);
            }
            for (p, share) in self.xor_shares_of(a & b).into_iter().enumerate() {
                block.c[p].push(share);
            }
        }
        self.issued.binary_triple_words += words as u64;
        block
    }

    /// Issues `count` single-use pairs of a random bit shared in both domains.
    pub fn bit_conversion_pairs(&mut self, count: usize) -> Vec<BitConversionPair> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let bit = self.rng.next_u64() & 1;
            let pair = BitConversionPair {
                r_arith: self.additive_shares_of(RingElement::new(bit)),
                r_bits: self.xor_shares_of(bit),
                consumed: false,
            };
            debug_assert!(pair.relation_holds());
            out.push(pair);
        }
        self.issued.bit_pairs += count as u64;
        out
    }

    /// Column-major batch variant of [`bit_conversion_pairs`].
    ///
    /// [`bit_conversion_pairs`]: Dealer::bit_conversion_pairs
    pub fn bit_pair_block(&mut self, count: usize) -> BitPairBlock {
        let h = self.parties as usize;
        let mut block = BitPairBlock {
            r_arith: vec![Vec::with_capacity(count); h],
            r_bits: vec![Vec::with_capacity(count); h],
        };
        for _ in 0..count {
            let bit = self.rng.next_u64() & 1;
            for (p, share) in self
                .additive_shares_of(RingElement::new(bit))
                .into_iter()
                .enumerate()
            {
                block.r_arith[p].push(share);
            }
            for (p, share) in self.xor_shares_of(bit).into_iter().enumerate() {
                block.r_bits[p].push(share);
            }
        }
        self.issued.bit_pairs += count as u64;
        block
    }

    /// Issues `count` single-use truncation pairs for `frac_bits` of rescale.
    pub fn truncation_pairs(&mut self, count: usize, frac_bits: u32) -> Vec<TruncationPair> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let r = RingElement::new(self.rng.next_u64() >> 1);
            let pair = TruncationPair {
                frac_bits,
                r: self.additive_shares_of(r),
                r_shifted: self.additive_shares_of(r.shift_right_signed(frac_bits)),
                consumed: false,
            };
            debug_assert!(pair.relation_holds());
            out.push(pair);
        }
        self.issued.truncation_pairs += count as u64;
        out
    }

    /// Column-major batch variant of [`truncation_pairs`].
    ///
    /// [`truncation_pairs`]: Dealer::truncation_pairs
    pub fn trunc_block(&mut self, count: usize, frac_bits: u32) -> TruncBlock {
        let h = self.parties as usize;
        let mut block = TruncBlock {
            frac_bits,
            r: vec![Vec::with_capacity(count); h],
            r_shifted: vec![Vec::with_capacity(count); h],
        };
        for _ in 0..count {
            let r = RingElement::new(self.rng.next_u64() >> 1);
            for (p, share) in self.additive_shares_of(r).into_iter().enumerate() {
                block.r[p].push(share);
            }
            for (p, share) in self
                .additive_shares_of(r.shift_right_signed(frac_bits))
                .into_iter()
                .enumerate()
            {
                block.r_shifted[p].push(share);
            }
        }
        self.issued.truncation_pairs += count as u64;
        block
    }
}

/// What a secure-evaluation session is allowed to draw from the dealer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomnessBudget {
    pub beaver_triples: u64,
    pub truncation_pairs: u64,
    pub bit_pairs: u64,
    pub binary_triple_words: u64,
}

impl RandomnessBudget {
    pub fn add(&mut self, other: RandomnessBudget) {
        self.beaver_triples += other.beaver_triples;
        self.truncation_pairs += other.truncation_pairs;
        self.bit_pairs += other.bit_pairs;
        self.binary_triple_words += other.binary_triple_words;
    }

    /// Share bytes the dealer ships for this budget (for bus accounting).
    pub fn share_bytes(&self, parties: u16) -> u64 {
        let per_party = self.beaver_triples * 3 * 8
            + self.truncation_pairs * 2 * 8
            + self.bit_pairs * 2 * 8
            + self.binary_triple_words * 3 * 8;
        per_party * parties as u64
    }
}

/// Per-session source of correlated randomness.
///
/// A budgeted supply models the dealer provisioning a session up front;
/// drawing past the budget is a hard [`ShareError::DealerExhausted`]. An
/// on-demand supply has no cap and is what standalone kernels and tests use.
pub struct SessionRandomness {
    dealer: Dealer,
    remaining: Option<RandomnessBudget>,
}

impl SessionRandomness {
    pub fn on_demand(dealer: Dealer) -> Self {
        SessionRandomness {
            dealer,
            remaining: None,
        }
    }

    pub fn budgeted(dealer: Dealer, budget: RandomnessBudget) -> Self {
        SessionRandomness {
            dealer,
            remaining: Some(budget),
        }
    }

    pub fn parties(&self) -> u16 {
        self.dealer.parties()
    }

    pub fn issued(&self) -> IssueCounters {
        self.dealer.issued()
    }

    /// Remaining budget, if this supply is budgeted.
    pub fn remaining(&self) -> Option<RandomnessBudget> {
        self.remaining
    }

    fn debit(
        remaining: &mut Option<RandomnessBudget>,
        field: impl Fn(&mut RandomnessBudget) -> &mut u64,
        amount: u64,
        kind: &'static str,
    ) -> Result<(), ShareError> {
        if let Some(budget) = remaining {
            let slot = field(budget);
            if *slot < amount {
                return Err(ShareError::DealerExhausted(kind));
            }
            *slot -= amount;
        }
        Ok(())
    }

    pub fn triples(&mut self, count: usize) -> Result<TripleBlock, ShareError> {
        Self::debit(
            &mut self.remaining,
            |b| &mut b.beaver_triples,
            count as u64,
            "beaver triples",
        )?;
        Ok(self.dealer.triple_block(count))
    }

    pub fn truncation(&mut self, count: usize, frac_bits: u32) -> Result<TruncBlock, ShareError> {
        Self::debit(
            &mut self.remaining,
            |b| &mut b.truncation_pairs,
            count as u64,
            "truncation pairs",
        )?;
        Ok(self.dealer.trunc_block(count, frac_bits))
    }

    pub fn bit_pairs(&mut self, count: usize) -> Result<BitPairBlock, ShareError> {
        Self::debit(
            &mut self.remaining,
            |b| &mut b.bit_pairs,
            count as u64,
            "bit conversion pairs",
        )?;
        Ok(self.dealer.bit_pair_block(count))
    }

    pub fn and_words(&mut self, words: usize) -> Result<BinaryTripleBlock, ShareError> {
        Self::debit(
            &mut self.remaining,
            |b| &mut b.binary_triple_words,
            words as u64,
            "binary triples",
        )?;
        Ok(self.dealer.binary_triple_block(words))
    }
}

// ---------------------------------------------------------------------------
// Pseudorandom zero shares
// ---------------------------------------------------------------------------

/// Pairwise-PRG zero sharing: party `i < j` adds the pair stream, party `j`
/// subtracts it, so the per-party offsets always sum to zero. A fresh sharing
/// of `x` by party `p` is the trivial sharing `(0, …, x, …, 0)` plus one zero
/// share.
pub struct ZeroSharer {
    parties: u16,
    prgs: Vec<ChaCha8Rng>,
}

impl ZeroSharer {
    /// Seeds one PRG per unordered party pair, as handed out at session setup.
    pub fn new(parties: u16, seed: u64) -> Self {
        assert!(parties >= 2);
        let pair_count = parties as usize * (parties as usize - 1) / 2;
        let mut root = ChaCha8Rng::seed_from_u64(seed);
        let prgs = (0..pair_count)
            .map(|_| ChaCha8Rng::seed_from_u64(root.next_u64()))
            .collect();
        ZeroSharer { parties, prgs }
    }

    fn pair_slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.parties as usize);
        let h = self.parties as usize;
        // Row-major upper triangle.
        i * h - i * (i + 1) / 2 + (j - i - 1)
    }

    /// Per-party offset vectors that sum to zero position-wise.
    pub fn zero_shares(&mut self, len: usize) -> Vec<Vec<RingElement>> {
        let h = self.parties as usize;
        let mut offsets = vec![vec![RingElement::ZERO; len]; h];
        for i in 0..h {
            for j in (i + 1)..h {
                let slot = self.pair_slot(i, j);
                for e in 0..len {
                    let r = RingElement::new(self.prgs[slot].next_u64());
                    offsets[i][e] = offsets[i][e] + r;
                    offsets[j][e] = offsets[j][e] - r;
                }
            }
        }
        offsets
    }

    /// Fresh sharing of `values` contributed by `owner`.
    pub fn share_value(
        &mut self,
        owner: PartyId,
        values: &[RingElement],
        session: SessionId,
    ) -> Vec<ArithmeticShareVector> {
        let mut shares = self.zero_shares(values.len());
        for (slot, &v) in shares[owner.index()].iter_mut().zip(values) {
            *slot = *slot + v;
        }
        shares
            .into_iter()
            .enumerate()
            .map(|(p, elems)| ArithmeticShareVector {
                owner: PartyId(p as u16),
                session,
                elems,
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Share-domain conversions
// ---------------------------------------------------------------------------

fn xor_share_words(
    words: &[u64],
    parties: u16,
    rng: &mut impl RngCore,
) -> Vec<Vec<u64>> {
    let h = parties as usize;
    let mut shares = vec![Vec::with_capacity(words.len()); h];
    for &word in words {
        let mut acc = 0u64;
        for share in shares.iter_mut().take(h - 1) {
            let r = rng.next_u64();
            acc ^= r;
            share.push(r);
        }
        shares[h - 1].push(word ^ acc);
    }
    shares
}

/// AND gate over XOR-shared word vectors, one dealer triple word per word.
fn shared_and(
    x: &[Vec<u64>],
    y: &[Vec<u64>],
    randomness: &mut SessionRandomness,
    exchange: &mut Exchange<'_>,
) -> Result<Vec<Vec<u64>>, ShareError> {
    let h = x.len();
    let n = x[0].len();
    let triples = randomness.and_words(n)?;
    let eps_shares: Vec<Vec<u64>> = (0..h)
        .map(|p| (0..n).map(|e| x[p][e] ^ triples.a[p][e]).collect())
        .collect();
    let delta_shares: Vec<Vec<u64>> = (0..h)
        .map(|p| (0..n).map(|e| y[p][e] ^ triples.b[p][e]).collect())
        .collect();
    let eps = exchange.open_words(&eps_shares);
    let delta = exchange.open_words(&delta_shares);
    let mut z: Vec<Vec<u64>> = (0..h)
        .map(|p| {
            (0..n)
                .map(|e| triples.c[p][e] ^ (eps[e] & triples.b[p][e]) ^ (triples.a[p][e] & delta[e]))
                .collect()
        })
        .collect();
    for e in 0..n {
        z[0][e] ^= eps[e] & delta[e];
    }
    Ok(z)
}

/// Ripple-carry addition of two XOR-shared word vectors modulo `2^64`.
fn shared_add_words(
    x: &[Vec<u64>],
    y: &[Vec<u64>],
    randomness: &mut SessionRandomness,
    exchange: &mut Exchange<'_>,
) -> Result<Vec<Vec<u64>>, ShareError> {
    let h = x.len();
    let n = x[0].len();
    let generate = shared_and(x, y, randomness, exchange)?;
    let propagate: Vec<Vec<u64>> = (0..h)
        .map(|p| (0..n).map(|e| x[p][e] ^ y[p][e]).collect())
        .collect();
    // carry[e] bit j = carry into bit j; bit 0 starts at zero.
    let mut carry: Vec<Vec<u64>> = vec![vec![0u64; n]; h];
    for j in 0..63 {
        let t = shared_and(&propagate, &carry, randomness, exchange)?;
        let mask = 1u64 << j;
        for p in 0..h {
            for e in 0..n {
                let carry_out = (generate[p][e] ^ t[p][e]) & mask;
                carry[p][e] |= carry_out << 1;
            }
        }
    }
    Ok((0..h)
        .map(|p| (0..n).map(|e| propagate[p][e] ^ carry[p][e]).collect())
        .collect())
}

/// Converts arithmetic shares to binary shares of the same 64-bit patterns.
///
/// Each party XOR-shares its own arithmetic share, then the `h` shared words
/// are summed in a shared ripple-carry adder so the XOR reconstruction equals
/// the additive reconstruction modulo `2^64`.
pub fn a2b(
    shares: &[ArithmeticShareVector],
    randomness: &mut SessionRandomness,
    exchange: &mut Exchange<'_>,
) -> Result<Vec<BinaryShareVector>, ShareError> {
    let h = shares.len();
    if h < 2 {
        return Err(ShareError::DegenerateParties(h as u16));
    }
    let session = shares[0].session;
    let n = shares[0].len();
    for s in shares {
        if s.session != session {
            return Err(ShareError::SessionMismatch);
        }
        if s.len() != n {
            return Err(ShareError::LengthMismatch);
        }
    }

    // Every party bit-shares its own arithmetic share among the group.
    let mut acc: Option<Vec<Vec<u64>>> = None;
    for contributor in shares {
        let words: Vec<u64> = contributor.elems.iter().map(|r| r.raw()).collect();
        let shared = xor_share_words(&words, h as u16, exchange.sharing_rng());
        exchange.log_bit_share_distribution(contributor.owner.index(), n as u64 * 8);
        acc = Some(match acc {
            None => shared,
            Some(sum) => shared_add_words(&sum, &shared, randomness, exchange)?,
        });
    }

    Ok(acc
        .expect("at least two parties")
        .into_iter()
        .enumerate()
        .map(|(p, words)| BinaryShareVector {
            owner: PartyId(p as u16),
            session,
            words,
        })
        .collect())
}

/// Converts the low `bit_count` bits of binary shares back to arithmetic
/// shares of the same value.
///
/// Per bit: mask with a dealer bit pair, open the masked bit, and lift with
/// `[bit] = [r] + z - 2 z [r]`, then recombine as `sum_b 2^b [bit_b]`.
pub fn b2a_low_bits(
    shares: &[BinaryShareVector],
    bit_count: u32,
    randomness: &mut SessionRandomness,
    exchange: &mut Exchange<'_>,
) -> Result<Vec<ArithmeticShareVector>, ShareError> {
    let h = shares.len();
    if h < 2 {
        return Err(ShareError::DegenerateParties(h as u16));
    }
    let session = shares[0].session;
    let n = shares[0].len();
    for s in shares {
        if s.session != session {
            return Err(ShareError::SessionMismatch);
        }
        if s.len() != n {
            return Err(ShareError::LengthMismatch);
        }
    }

    let mut acc = vec![vec![RingElement::ZERO; n]; h];
    for bit in 0..bit_count {
        let pairs = randomness.bit_pairs(n)?;
        // Masked bit z = x_bit XOR r, opened one word per element (bit 0).
        let masked: Vec<Vec<u64>> = (0..h)
            .map(|p| {
                (0..n)
                    .map(|e| ((shares[p].words[e] >> bit) & 1) ^ (pairs.r_bits[p][e] & 1))
                    .collect()
            })
            .collect();
        let opened = exchange.open_words(&masked);
        let weight = RingElement::new(1u64 << bit);
        for p in 0..h {
            for e in 0..n {
                let z = opened[e] & 1;
                let r = pairs.r_arith[p][e];
                // [bit] = [r] + z - 2 z [r]; z is public.
                let mut lifted = if z == 1 { -r } else { r };
                if z == 1 && p == 0 {
                    lifted = lifted + RingElement::ONE;
                }
                acc[p][e] = acc[p][e] + weight * lifted;
            }
        }
    }

    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(p, elems)| ArithmeticShareVector {
            owner: PartyId(p as u16),
            session,
            elems,
        })
        .collect())
}

/// Full-width inverse of [`a2b`].
pub fn b2a(
    shares: &[BinaryShareVector],
    randomness: &mut SessionRandomness,
    exchange: &mut Exchange<'_>,
) -> Result<Vec<ArithmeticShareVector>, ShareError> {
    b2a_low_bits(shares, 64, randomness, exchange)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::MessageBus;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    const SESSION: SessionId = SessionId(7);

    #[test]
    fn share_reconstruct_round_trip() {
        let mut r = rng(1);
        let secret = vec![RingElement::new(42)];
        let shares = share_arithmetic(&secret, 3, SESSION, &mut r).unwrap();
        assert_eq!(reconstruct_arithmetic(&shares).unwrap(), secret);
    }

    #[test]
    fn sharing_zero_still_splits() {
        let mut r = rng(2);
        let shares = share_arithmetic(&[RingElement::ZERO], 2, SESSION, &mut r).unwrap();
        assert_eq!(
            shares[0].elems[0] + shares[1].elems[0],
            RingElement::ZERO
        );
        assert_ne!(shares[0].elems[0], RingElement::ZERO, "degenerate split");
    }

    #[test]
    fn degenerate_party_counts_rejected() {
        let mut r = rng(3);
        assert_eq!(
            share_arithmetic(&[RingElement::ONE], 1, SESSION, &mut r),
            Err(ShareError::DegenerateParties(1))
        );
        assert!(share_binary(&[1u64], 0, SESSION, &mut r).is_err());
    }

    #[test]
    fn reconstruct_checks_session_and_length() {
        let mut r = rng(4);
        let mut shares = share_arithmetic(&[RingElement::ONE], 2, SESSION, &mut r).unwrap();
        shares[1].session = SessionId(99);
        assert_eq!(
            reconstruct_arithmetic(&shares),
            Err(ShareError::SessionMismatch)
        );
        let mut shares = share_arithmetic(&[RingElement::ONE], 2, SESSION, &mut r).unwrap();
        shares[1].elems.push(RingElement::ZERO);
        assert_eq!(
            reconstruct_arithmetic(&shares),
            Err(ShareError::LengthMismatch)
        );
    }

    #[test]
    fn binary_round_trip_many_words() {
        let mut r = rng(5);
        let words: Vec<u64> = (0..1000).map(|_| r.next_u64()).collect();
        for h in [2u16, 3, 5] {
            let shares = share_binary(&words, h, SESSION, &mut r).unwrap();
            assert_eq!(reconstruct_binary(&shares).unwrap(), words);
        }
        let zeros = vec![
            BinaryShareVector {
                owner: PartyId(0),
                session: SESSION,
                words: vec![0, 0],
            },
            BinaryShareVector {
                owner: PartyId(1),
                session: SESSION,
                words: vec![0, 0],
            },
        ];
        assert_eq!(reconstruct_binary(&zeros).unwrap(), vec![0, 0]);
    }

    #[test]
    fn arithmetic_round_trip_all_party_counts() {
        let mut r = rng(6);
        for h in [2u16, 3, 5, 8] {
            for _ in 0..1000 {
                let secret = vec![RingElement::new(r.next_u64())];
                let shares = share_arithmetic(&secret, h, SESSION, &mut r).unwrap();
                assert_eq!(reconstruct_arithmetic(&shares).unwrap(), secret);
            }
        }
    }

    /// Chi-squared over the low byte of first-party shares: the share stream
    /// should be indistinguishable from uniform at this sample size.
    fn chi_squared_low_byte(samples: &[u64]) -> f64 {
        let mut counts = [0f64; 256];
        for &s in samples {
            counts[(s & 0xFF) as usize] += 1.0;
        }
        let expected = samples.len() as f64 / 256.0;
        counts
            .iter()
            .map(|&c| (c - expected) * (c - expected) / expected)
            .sum()
    }

    #[test]
    fn share_values_look_uniform() {
        let mut r = rng(7);
        let samples: Vec<u64> = (0..20_000)
            .map(|i| {
                let shares =
                    share_arithmetic(&[RingElement::new(i)], 2, SESSION, &mut r).unwrap();
                shares[0].elems[0].raw()
            })
            .collect();
        // 255 degrees of freedom: p > 0.001 means chi2 below ~330.5.
        let chi2 = chi_squared_low_byte(&samples);
        assert!(chi2 < 330.5, "chi2 = {chi2}");
    }

    #[test]
    fn subset_marginals_independent_of_secret() {
        // The first h-1 shares of two different secrets should follow the
        // same distribution; compare low-byte histograms of party 0.
        let collect = |secret: u64, seed: u64| -> Vec<u64> {
            let mut r = rng(seed);
            (0..20_000)
                .map(|_| {
                    let shares =
                        share_arithmetic(&[RingElement::new(secret)], 3, SESSION, &mut r)
                            .unwrap();
                    shares[0].elems[0].raw()
                })
                .collect()
        };
        let a = collect(0, 8);
        let b = collect(u64::MAX / 3, 8);
        // Same RNG stream, same first h-1 shares: marginals identical.
        assert_eq!(a, b);
        let chi2 = chi_squared_low_byte(&a);
        assert!(chi2 < 330.5, "chi2 = {chi2}");
    }

    #[test]
    fn beaver_triples_satisfy_relation() {
        let mut dealer = Dealer::new(3, 11);
        for triple in dealer.beaver_triples(32) {
            let a: RingElement = triple.a_shares().iter().copied().sum();
            let b: RingElement = triple.b_shares().iter().copied().sum();
            let c: RingElement = triple.c_shares().iter().copied().sum();
            assert_eq!(a * b, c);
        }
    }

    #[test]
    fn bit_pairs_agree_across_domains() {
        let mut dealer = Dealer::new(4, 12);
        for pair in dealer.bit_conversion_pairs(64) {
            let arith: RingElement = pair.arith_shares().iter().copied().sum();
            let bit = pair.bit_shares().iter().fold(0u64, |acc, w| acc ^ w) & 1;
            assert!(arith == RingElement::ZERO || arith == RingElement::ONE);
            assert_eq!(arith.raw(), bit);
        }
    }

    #[test]
    fn truncation_pairs_shift_correctly() {
        let mut dealer = Dealer::new(2, 13);
        for pair in dealer.truncation_pairs(64, 16) {
            let r: RingElement = pair.mask_shares().iter().copied().sum();
            let rt: RingElement = pair.shifted_shares().iter().copied().sum();
            assert!(!r.is_negative());
            assert_eq!(rt, r.shift_right_signed(16));
        }
    }

    #[test]
    fn consumed_objects_reject_reuse() {
        let mut dealer = Dealer::new(2, 14);
        let mut triple = dealer.beaver_triples(1).pop().unwrap();
        assert!(triple.consume().is_ok());
        assert_eq!(triple.consume(), Err(ShareError::SingleUseViolation));

        let mut pair = dealer.truncation_pairs(1, 16).pop().unwrap();
        assert!(pair.consume().is_ok());
        assert_eq!(pair.consume(), Err(ShareError::SingleUseViolation));

        let mut bits = dealer.bit_conversion_pairs(1).pop().unwrap();
        assert!(bits.consume().is_ok());
        assert_eq!(bits.consume(), Err(ShareError::SingleUseViolation));
    }

    #[test]
    fn dealer_is_deterministic_under_seed() {
        let mut d1 = Dealer::new(3, 99);
        let mut d2 = Dealer::new(3, 99);
        let t1 = d1.triple_block(16);
        let t2 = d2.triple_block(16);
        assert_eq!(t1.a, t2.a);
        assert_eq!(t1.b, t2.b);
        assert_eq!(t1.c, t2.c);
        assert_eq!(d1.issued(), d2.issued());
    }

    #[test]
    fn budgeted_supply_exhausts() {
        let dealer = Dealer::new(2, 15);
        let budget = RandomnessBudget {
            beaver_triples: 4,
            ..RandomnessBudget::default()
        };
        let mut supply = SessionRandomness::budgeted(dealer, budget);
        assert!(supply.triples(3).is_ok());
        assert_eq!(
            supply.triples(2).err(),
            Some(ShareError::DealerExhausted("beaver triples"))
        );
        assert!(supply.triples(1).is_ok());
    }

    #[test]
    fn zero_shares_sum_to_zero() {
        let mut sharer = ZeroSharer::new(4, 21);
        let offsets = sharer.zero_shares(8);
        for e in 0..8 {
            let sum: RingElement = offsets.iter().map(|o| o[e]).sum();
            assert_eq!(sum, RingElement::ZERO);
        }
        let shares = sharer.share_value(PartyId(2), &[RingElement::new(123)], SESSION);
        assert_eq!(
            reconstruct_arithmetic(&shares).unwrap(),
            vec![RingElement::new(123)]
        );
    }

    fn conversion_fixture(h: u16, seed: u64) -> (SessionRandomness, MessageBus) {
        let dealer = Dealer::new(h, seed);
        (SessionRandomness::on_demand(dealer), MessageBus::new())
    }

    #[test]
    fn a2b_matches_arithmetic_value() {
        for h in [2u16, 3] {
            let (mut supply, mut bus) = conversion_fixture(h, 31);
            let mut exchange = Exchange::for_parties(&mut bus, h, SESSION.0);
            let mut r = rng(32);
            for trial in 0..250 {
                let secret = vec![RingElement::new(r.next_u64()), RingElement::new(trial)];
                let shares = share_arithmetic(&secret, h, SESSION, &mut r).unwrap();
                let bits = a2b(&shares, &mut supply, &mut exchange).unwrap();
                let words = reconstruct_binary(&bits).unwrap();
                assert_eq!(words[0], secret[0].raw());
                assert_eq!(words[1], secret[1].raw());
            }
        }
    }

    #[test]
    fn a2b_small_values() {
        let (mut supply, mut bus) = conversion_fixture(2, 33);
        let mut exchange = Exchange::for_parties(&mut bus, 2, SESSION.0);
        let mut r = rng(34);
        let shares =
            share_arithmetic(&[RingElement::new(5), RingElement::ZERO], 2, SESSION, &mut r)
                .unwrap();
        let bits = a2b(&shares, &mut supply, &mut exchange).unwrap();
        assert_eq!(reconstruct_binary(&bits).unwrap(), vec![0b101, 0]);
    }

    #[test]
    fn b2a_inverts_a2b() {
        for h in [2u16, 3] {
            let (mut supply, mut bus) = conversion_fixture(h, 35);
            let mut exchange = Exchange::for_parties(&mut bus, h, SESSION.0);
            let mut r = rng(36);
            for _ in 0..250 {
                let secret = vec![RingElement::new(r.next_u64())];
                let shares = share_arithmetic(&secret, h, SESSION, &mut r).unwrap();
                let bits = a2b(&shares, &mut supply, &mut exchange).unwrap();
                let back = b2a(&bits, &mut supply, &mut exchange).unwrap();
                assert_eq!(reconstruct_arithmetic(&back).unwrap(), secret);
            }
        }
    }

    #[test]
    fn b2a_on_plain_patterns() {
        let (mut supply, mut bus) = conversion_fixture(3, 37);
        let mut exchange = Exchange::for_parties(&mut bus, 3, SESSION.0);
        let mut r = rng(38);
        let shares = share_binary(&[0b110u64, 1u64], 3, SESSION, &mut r).unwrap();
        let arith = b2a(&shares, &mut supply, &mut exchange).unwrap();
        assert_eq!(
            reconstruct_arithmetic(&arith).unwrap(),
            vec![RingElement::new(6), RingElement::ONE]
        );
    }
}
