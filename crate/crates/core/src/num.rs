//! Exact rational helpers.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

pub type Q = num_rational::BigRational;

pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn zero() -> Q {
    Q::zero()
}

pub fn one() -> Q {
    Q::one()
}

/// Least common multiple of the denominators of `values` (1 for an empty input).
pub fn denominator_lcm<'a>(values: impl IntoIterator<Item = &'a Q>) -> BigInt {
    values
        .into_iter()
        .fold(BigInt::one(), |acc, v| acc.lcm(v.denom()))
}

pub fn is_nonneg(v: &Q) -> bool {
    !v.is_negative()
}

/// Converts an integral rational to `u32`, if it fits.
pub fn to_u32(v: &Q) -> Option<u32> {
    if !v.is_integer() || v.is_negative() {
        return None;
    }
    u32::try_from(v.to_integer()).ok()
}

/// Numerator and denominator as machine integers, if both fit in `i64`.
fn small(v: &Q) -> Option<(i128, i128)> {
    Some((i64::try_from(v.numer()).ok()?.into(), i64::try_from(v.denom()).ok()?.into()))
}

fn add_small(acc: (i128, i128), term: (i128, i128)) -> Option<(i128, i128)> {
    let n = acc.0.checked_mul(term.1)?.checked_add(term.0.checked_mul(acc.1)?)?;
    let d = acc.1.checked_mul(term.1)?;
    let g = n.gcd(&d);
    Some(if g > 1 { (n / g, d / g) } else { (n, d) })
}

/// Compares `sum c * x` over `terms` with `rhs` in machine integers. `None` when an
/// input or intermediate value does not fit, so the caller falls back to `Q`.
pub fn small_dot_cmp<'a>(terms: impl Iterator<Item = (&'a Q, &'a Q)>, rhs: &Q) -> Option<core::cmp::Ordering> {
    let mut acc = (0i128, 1i128);
    for (c, x) in terms {
        let ((cn, cd), (xn, xd)) = (small(c)?, small(x)?);
        acc = add_small(acc, (cn.checked_mul(xn)?, cd.checked_mul(xd)?))?;
    }
    let (rn, rd) = small(rhs)?;
    Some(acc.0.checked_mul(rd)?.cmp(&rn.checked_mul(acc.1)?))
}

/// Whether `values` sum to one, computed in machine integers when they fit.
pub fn sums_to_one<'a>(values: impl Iterator<Item = &'a Q> + Clone) -> bool {
    let fast = values.clone().try_fold((0i128, 1i128), |acc, x| add_small(acc, small(x)?));
    match fast {
        Some((n, d)) => n == d,
        None => values.fold(Q::zero(), |mut a, x| {
            a += x;
            a
        })
        .is_one(),
    }
}
