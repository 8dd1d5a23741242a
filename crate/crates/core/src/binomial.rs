//! Exact binomial majority threshold.
//!
//! The majority threshold is the largest `x` in `0..=k` with
//! `F(x) <= alpha`, where `F` is the CDF of `Bin(k, 1 - alpha)`. It is an
//! integer that every downstream set and certificate depends on, so the CDF
//! is evaluated exactly: `alpha` is taken as the dyadic rational its `f64`
//! bit pattern denotes and every comparison is done on big integers.

use alloc::vec::Vec;

use num_bigint::BigUint;
use num_traits::One;

use crate::error::{Error, Result};

/// `alpha` as `numerator / 2^exponent`, exactly.
fn dyadic(alpha: f64) -> (u64, u32) {
    let bits = alpha.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i32;
    let fraction = bits & ((1u64 << 52) - 1);
    let (mut mantissa, mut exp) = if biased == 0 {
        (fraction, 1074u32)
    } else {
        (fraction | (1u64 << 52), (1075 - biased) as u32)
    };
    let shift = mantissa.trailing_zeros().min(exp);
    mantissa >>= shift;
    exp -= shift;
    (mantissa, exp)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(alloc::format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// Terms `C(k, i) (1 - alpha)^i alpha^(k - i)`, all scaled by `2^(e k)`.
struct ScaledPmf {
    terms: Vec<BigUint>,
    /// `alpha * 2^(e k)`.
    scaled_alpha: BigUint,
}

fn scaled_pmf(alpha: f64, k: usize) -> ScaledPmf {
    let (a, e) = dyadic(alpha);
    let denom = BigUint::one() << e;
    let a = BigUint::from(a);
    let b = &denom - &a;

    // Powers a^j and b^j for j in 0..=k.
    let mut a_pow = Vec::with_capacity(k + 1);
    let mut b_pow = Vec::with_capacity(k + 1);
    a_pow.push(BigUint::one());
    b_pow.push(BigUint::one());
    for j in 0..k {
        a_pow.push(&a_pow[j] * &a);
        b_pow.push(&b_pow[j] * &b);
    }

    let mut terms = Vec::with_capacity(k + 1);
    let mut binom = BigUint::one();
    for i in 0..=k {
        terms.push(&binom * &b_pow[i] * &a_pow[k - i]);
        binom = binom * BigUint::from(k - i) / BigUint::from(i + 1);
    }
    let scaled_alpha = if k == 0 {
        // Bin(0, p) is a point mass at 0; alpha * 2^0.
        BigUint::from(0u8)
    } else {
        a * denom.pow((k - 1) as u32)
    };
    ScaledPmf {
        terms,
        scaled_alpha,
    }
}

/// Largest `x` in `0..=k` with `F(x) <= alpha` for `F` the CDF of
/// `Bin(k, 1 - alpha)`.
///
/// `F(0) = alpha^k <= alpha`, so the result is always defined and lies in
/// `0..k` (`F(k) = 1 > alpha`).
pub fn binomial_majority_threshold(alpha: f64, k: usize) -> Result<usize> {
    check_alpha(alpha)?;
    if k == 0 {
        return Err(Error::InvalidConfig(
            "partition count must be at least 1".into(),
        ));
    }
    let pmf = scaled_pmf(alpha, k);
    let mut cdf = BigUint::from(0u8);
    let mut threshold = None;
    for (x, term) in pmf.terms.iter().enumerate() {
        cdf += term;
        if cdf <= pmf.scaled_alpha {
            threshold = Some(x);
        } else {
            break;
        }
    }
    // alpha^k <= alpha for k >= 1, so x = 0 always qualifies.
    Ok(threshold.expect("F(0) = alpha^k never exceeds alpha"))
}

/// Whether `F(x) <= alpha`, evaluated exactly.
pub fn cdf_at_most_alpha(alpha: f64, k: usize, x: usize) -> Result<bool> {
    check_alpha(alpha)?;
    let pmf = scaled_pmf(alpha, k);
    let upto = x.min(k);
    let cdf: BigUint = pmf.terms[..=upto].iter().sum();
    Ok(cdf <= pmf.scaled_alpha)
}
