//! Locating an unknown fraction with bounded numerator and denominator from
//! threshold queries.
//!
//! The search walks the Stern–Brocot tree between two bracketing fractions.
//! Runs of moves in the same direction are taken by galloping (doubling, then
//! bisecting the run length), so the number of queries grows with the
//! logarithm of the bound rather than with the length of the runs.

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

use crate::ratio::Ratio;

#[derive(Debug, Clone, PartialEq, Eq)]
struct Frac {
    num: BigInt,
    den: BigInt,
}

impl Frac {
    fn new(num: impl Into<BigInt>, den: impl Into<BigInt>) -> Self {
        Self { num: num.into(), den: den.into() }
    }

    fn plus_times(&self, k: &BigInt, other: &Frac) -> Frac {
        Frac { num: &self.num + k * &other.num, den: &self.den + k * &other.den }
    }

    fn to_ratio(&self) -> Ratio {
        Ratio::new(self.num.clone(), self.den.clone())
    }
}

/// Result of [`search_min_fraction`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Located {
    /// The smallest bounded fraction accepted by the predicate.
    pub value: Ratio,
    /// Its bounded left neighbour: the largest bounded fraction known to be
    /// rejected.
    pub left_neighbour: Ratio,
}

/// Largest `k` in `[1, kmax]` with `pred(k)`, given `pred(1)` holds and
/// `pred` is monotone (true then false).
fn gallop<E>(
    kmax: &BigInt,
    mut pred: impl FnMut(&BigInt) -> Result<bool, E>,
) -> Result<BigInt, E> {
    let mut lo = BigInt::one();
    let mut hi: Option<BigInt> = None;
    let mut probe = BigInt::from(2);
    while probe <= *kmax {
        if pred(&probe)? {
            lo = probe.clone();
            probe *= 2;
        } else {
            hi = Some(probe);
            break;
        }
    }
    let mut hi = hi.unwrap_or_else(|| kmax + 1);
    while &hi - &lo > BigInt::one() {
        let mid: BigInt = (&lo + &hi) / 2;
        if pred(&mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Largest `k >= 0` such that `base + k * step` keeps both terms within
/// `bound`.
fn max_steps(base: &Frac, step: &Frac, bound: &BigInt) -> BigInt {
    let limit = |b: &BigInt, s: &BigInt| -> Option<BigInt> {
        if s.is_zero() {
            None
        } else if b > bound {
            Some(BigInt::from(-1))
        } else {
            Some((bound - b) / s)
        }
    };
    match (limit(&base.num, &step.num), limit(&base.den, &step.den)) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => unreachable!("step fraction is never 0/0"),
    }
}

/// Finds the smallest fraction `x*` with numerator and denominator at most
/// `bound` such that `accepts(x*)`, where `accepts` is monotone (every
/// fraction above an accepted one is accepted).
///
/// The caller provides a bracket `left < x* <= right`: `left` must be known
/// rejected (or be the exclusive lower end of the search) and `right` known
/// accepted. Both must be given in lowest terms with terms within `bound`.
pub fn search_min_fraction<E>(
    bound: &BigInt,
    left: (i64, i64),
    right: (i64, i64),
    mut accepts: impl FnMut(&Ratio) -> Result<bool, E>,
) -> Result<Located, E> {
    let mut l = Frac::new(left.0, left.1);
    let mut r = Frac::new(right.0, right.1);
    let done = |l: &Frac, r: &Frac| Located { value: r.to_ratio(), left_neighbour: l.to_ratio() };

    let mediant = l.plus_times(&BigInt::one(), &r);
    if mediant.num > *bound || mediant.den > *bound {
        return Ok(done(&l, &r));
    }
    let mut move_right_end = accepts(&mediant.to_ratio())?;
    loop {
        if move_right_end {
            // r_k = r + k*l decreases with k; keep the last accepted one.
            let kmax = max_steps(&r, &l, bound);
            let k = gallop(&kmax, |k| accepts(&r.plus_times(k, &l).to_ratio()))?;
            r = r.plus_times(&k, &l);
            if k == kmax {
                return Ok(done(&l, &r));
            }
            // The next mediant is r + l, known rejected.
        } else {
            // l_k = l + k*r increases with k; keep the last rejected one.
            let kmax = max_steps(&l, &r, bound);
            let k = gallop(&kmax, |k| accepts(&l.plus_times(k, &r).to_ratio()).map(|a| !a))?;
            l = l.plus_times(&k, &r);
            if k == kmax {
                return Ok(done(&l, &r));
            }
        }
        move_right_end = !move_right_end;
    }
}

/// Number of queries [`search_min_fraction`] may use for a given bound,
/// `c * ceil(log2(2 * bound^2))`.
pub fn query_budget(bound: &BigInt, c: usize) -> usize {
    let squared: BigInt = bound * bound * 2;
    let bits = if squared.is_positive() { (squared - 1u32).bits() as usize } else { 0 };
    c * bits.max(1)
}
