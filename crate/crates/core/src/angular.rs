//! Angular-momentum algebra: Wigner 3-j symbols and the rank-1/rank-2
//! spherical tensor matrix elements entering the molecular Hamiltonian.
//!
//! Quantum numbers are carried as [`HalfInteger`]s (stored doubled) so that
//! selection rules are decided in exact integer arithmetic. The 3-j symbol is
//! evaluated with the Racah sum in exact big-integer arithmetic; conversion to
//! `f64` happens once, at the very end.

use std::fmt;
use std::ops::{Add, Neg, Sub};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Largest `j` accepted by [`wigner_3j`].
pub const MAX_J: i32 = 100;

/// An integer or half-integer quantum number, stored as twice its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct HalfInteger {
    twice: i32,
}

impl HalfInteger {
    pub const ZERO: HalfInteger = HalfInteger { twice: 0 };
    pub const HALF: HalfInteger = HalfInteger { twice: 1 };
    pub const ONE: HalfInteger = HalfInteger { twice: 2 };

    pub const fn from_twice(twice: i32) -> Self {
        HalfInteger { twice }
    }

    pub const fn integer(n: i32) -> Self {
        HalfInteger { twice: 2 * n }
    }

    pub const fn twice(self) -> i32 {
        self.twice
    }

    pub const fn is_integer(self) -> bool {
        self.twice % 2 == 0
    }

    /// The integer value, if this is an integer.
    pub const fn as_integer(self) -> Option<i32> {
        if self.is_integer() {
            Some(self.twice / 2)
        } else {
            None
        }
    }

    pub const fn abs(self) -> Self {
        HalfInteger {
            twice: self.twice.abs(),
        }
    }

    pub fn to_f64(self) -> f64 {
        f64::from(self.twice) / 2.0
    }

    /// `(-1)^self` for integer `self`; `None` for half-integers.
    pub fn parity_sign(self) -> Option<f64> {
        self.as_integer()
            .map(|n| if n.rem_euclid(2) == 0 { 1.0 } else { -1.0 })
    }
}

impl From<i32> for HalfInteger {
    fn from(n: i32) -> Self {
        HalfInteger::integer(n)
    }
}

impl Add for HalfInteger {
    type Output = HalfInteger;
    fn add(self, rhs: Self) -> Self {
        HalfInteger {
            twice: self.twice + rhs.twice,
        }
    }
}

impl Sub for HalfInteger {
    type Output = HalfInteger;
    fn sub(self, rhs: Self) -> Self {
        HalfInteger {
            twice: self.twice - rhs.twice,
        }
    }
}

impl Neg for HalfInteger {
    type Output = HalfInteger;
    fn neg(self) -> Self {
        HalfInteger { twice: -self.twice }
    }
}

impl fmt::Display for HalfInteger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.twice / 2)
        } else {
            write!(f, "{}/2", self.twice)
        }
    }
}

fn check_pair(j: HalfInteger, m: HalfInteger) -> Result<()> {
    if j.twice < 0 {
        return Err(Error::InvalidQuantumNumbers(format!("negative j = {j}")));
    }
    if j.twice > 2 * MAX_J {
        return Err(Error::InvalidQuantumNumbers(format!(
            "j = {j} exceeds supported maximum {MAX_J}"
        )));
    }
    if m.twice.abs() > j.twice {
        return Err(Error::InvalidQuantumNumbers(format!(
            "|m| > j for j = {j}, m = {m}"
        )));
    }
    if (j.twice - m.twice) % 2 != 0 {
        return Err(Error::InvalidQuantumNumbers(format!(
            "j = {j} and m = {m} differ in integer character"
        )));
    }
    Ok(())
}

fn triangle(j1: i32, j2: i32, j3: i32) -> bool {
    // doubled values
    j3 >= (j1 - j2).abs() && j3 <= j1 + j2 && (j1 + j2 + j3) % 2 == 0
}

fn factorial(n: u32) -> BigUint {
    (2..=n).fold(BigUint::one(), |acc, k| acc * k)
}

/// `n! / m!` for `n >= m`.
fn falling(n: u32, m: u32) -> BigUint {
    (m + 1..=n).fold(BigUint::one(), |acc, k| acc * k)
}

/// `a / b` as an `f64` mantissa and a binary exponent, accurate to double
/// precision for arbitrarily large operands.
fn scaled_ratio(a: &BigUint, b: &BigUint) -> (f64, i64) {
    let shift = (b.bits() as i64 - a.bits() as i64 + 64).max(0);
    let q = (a << shift as usize) / b;
    (q.to_f64().unwrap_or(f64::INFINITY), -shift)
}

/// Wigner 3-j symbol `(j1 j2 j3; m1 m2 m3)`.
///
/// Returns exactly `0.0` when `m1 + m2 + m3 != 0`, the triangle condition
/// fails, or all `m` vanish with odd `j1 + j2 + j3`.
pub fn wigner_3j(
    j1: HalfInteger,
    j2: HalfInteger,
    j3: HalfInteger,
    m1: HalfInteger,
    m2: HalfInteger,
    m3: HalfInteger,
) -> Result<f64> {
    check_pair(j1, m1)?;
    check_pair(j2, m2)?;
    check_pair(j3, m3)?;

    let (dj1, dj2, dj3) = (j1.twice, j2.twice, j3.twice);
    let (dm1, dm2, dm3) = (m1.twice, m2.twice, m3.twice);
    if dm1 + dm2 + dm3 != 0 || !triangle(dj1, dj2, dj3) {
        return Ok(0.0);
    }
    if dm1 == 0 && dm2 == 0 && dm3 == 0 && ((dj1 + dj2 + dj3) / 2) % 2 == 1 {
        return Ok(0.0);
    }

    // All of these are integers once the checks above have passed.
    let half = |x: i32| -> i64 { i64::from(x / 2) };
    let t1 = half(dj3 - dj2 + dm1);
    let t2 = half(dj3 - dj1 - dm2);
    let t3 = half(dj1 + dj2 - dj3);
    let t4 = half(dj1 - dm1);
    let t5 = half(dj2 + dm2);
    let k_min = 0.max(-t1).max(-t2);
    let k_max = t3.min(t4).min(t5);
    if k_min > k_max {
        return Ok(0.0);
    }

    // Common multiple of every denominator in the Racah sum.
    let u = |x: i64| x as u32;
    let common = factorial(u(k_max))
        * factorial(u(t1 + k_max))
        * factorial(u(t2 + k_max))
        * factorial(u(t3 - k_min))
        * factorial(u(t4 - k_min))
        * factorial(u(t5 - k_min));

    let mut positive = BigUint::zero();
    let mut negative = BigUint::zero();
    for k in k_min..=k_max {
        let term = falling(u(k_max), u(k))
            * falling(u(t1 + k_max), u(t1 + k))
            * falling(u(t2 + k_max), u(t2 + k))
            * falling(u(t3 - k_min), u(t3 - k))
            * falling(u(t4 - k_min), u(t4 - k))
            * falling(u(t5 - k_min), u(t5 - k));
        if k % 2 == 0 {
            positive += term;
        } else {
            negative += term;
        }
    }
    let (sum, sum_sign) = if positive >= negative {
        (positive - negative, 1.0)
    } else {
        (negative - positive, -1.0)
    };
    if sum.is_zero() {
        return Ok(0.0);
    }

    // value^2 = sum^2 * prefactor / common^2, prefactor = triangle coefficient
    // times the six (j +- m)! factors.
    let ju = |x: i32| (x / 2) as u32;
    let numerator = &sum
        * &sum
        * factorial(ju(dj1 + dj2 - dj3))
        * factorial(ju(dj1 - dj2 + dj3))
        * factorial(ju(-dj1 + dj2 + dj3))
        * factorial(ju(dj1 + dm1))
        * factorial(ju(dj1 - dm1))
        * factorial(ju(dj2 + dm2))
        * factorial(ju(dj2 - dm2))
        * factorial(ju(dj3 + dm3))
        * factorial(ju(dj3 - dm3));
    let denominator = &common * &common * factorial(ju(dj1 + dj2 + dj3) + 1);

    let (mut mantissa, mut exponent) = scaled_ratio(&numerator, &denominator);
    if exponent % 2 != 0 {
        mantissa *= 2.0;
        exponent -= 1;
    }
    let magnitude = mantissa.sqrt() * 2f64.powi((exponent / 2) as i32);

    let phase_exp = (dj1 - dj2 - dm3) / 2;
    let phase = if phase_exp.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    };
    Ok(phase * sum_sign * magnitude)
}

/// `<N, M_N | C^j_p | N', M_N'>` for the renormalized spherical harmonics.
pub fn spherical_harmonic_element(
    n: HalfInteger,
    m_n: HalfInteger,
    rank: HalfInteger,
    p: HalfInteger,
    n2: HalfInteger,
    m_n2: HalfInteger,
) -> Result<f64> {
    if !n.is_integer() || !n2.is_integer() || n.twice < 0 || n2.twice < 0 {
        return Err(Error::InvalidQuantumNumbers(format!(
            "rotational quantum numbers must be non-negative integers, got N = {n}, N' = {n2}"
        )));
    }
    if rank != HalfInteger::integer(1) && rank != HalfInteger::integer(2) {
        return Err(Error::InvalidQuantumNumbers(format!(
            "tensor rank must be 1 or 2, got {rank}"
        )));
    }
    let reduced = wigner_3j(
        n,
        rank,
        n2,
        HalfInteger::ZERO,
        HalfInteger::ZERO,
        HalfInteger::ZERO,
    )?;
    if reduced == 0.0 {
        // still validate the projection triple
        wigner_3j(n, rank, n2, -m_n, p, m_n2)?;
        return Ok(0.0);
    }
    let projection = wigner_3j(n, rank, n2, -m_n, p, m_n2)?;
    if projection == 0.0 {
        return Ok(0.0);
    }
    let sign = m_n
        .parity_sign()
        .ok_or_else(|| Error::InvalidQuantumNumbers(format!("M_N = {m_n} must be an integer")))?;
    let dim = f64::from((n.twice + 1) * (n2.twice + 1));
    Ok(sign * dim.sqrt() * projection * reduced)
}

/// `<M_s, M_I | T^2_p(I, s) | M_s', M_I'>` for `s = I = 1/2`.
pub fn tensor_is_element(
    m_s: HalfInteger,
    m_i: HalfInteger,
    p: HalfInteger,
    m_s2: HalfInteger,
    m_i2: HalfInteger,
) -> Result<f64> {
    let s = HalfInteger::HALF;
    let i = HalfInteger::HALF;
    for m in [m_s, m_i, m_s2, m_i2] {
        check_pair(s, m)?;
    }
    if !p.is_integer() || p.twice.abs() > 4 {
        return Err(Error::InvalidQuantumNumbers(format!(
            "tensor component p = {p} outside -2..=2"
        )));
    }
    let one = HalfInteger::ONE;
    let two = HalfInteger::integer(2);

    let phase = (i - m_i + s - m_s - p)
        .parity_sign()
        .expect("I - M_I + s - M_s - p is integral for s = I = 1/2");
    let (iv, sv) = (i.to_f64(), s.to_f64());
    let prefactor =
        (5.0 * iv * (iv + 1.0) * (2.0 * iv + 1.0) * sv * (sv + 1.0) * (2.0 * sv + 1.0)).sqrt();

    let mut sum = 0.0;
    for p1 in -1..=1 {
        let p1 = HalfInteger::integer(p1);
        let p2 = p - p1;
        if p2.twice.abs() > 2 {
            continue;
        }
        let a = wigner_3j(one, one, two, p1, p2, -p)?;
        if a == 0.0 {
            continue;
        }
        let b = wigner_3j(i, one, i, -m_i, p1, m_i2)?;
        if b == 0.0 {
            continue;
        }
        let c = wigner_3j(s, one, s, -m_s, p2, m_s2)?;
        sum += a * b * c;
    }
    if sum == 0.0 {
        return Ok(0.0);
    }
    Ok(phase * prefactor * sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(twice: i32) -> HalfInteger {
        HalfInteger::from_twice(twice)
    }
    fn int(n: i32) -> HalfInteger {
        HalfInteger::integer(n)
    }

    #[test]
    fn half_integer_arithmetic() {
        let a = h(3);
        let b = h(1);
        assert_eq!(a + b, int(2));
        assert_eq!(a - b, int(1));
        assert_eq!(-a, h(-3));
        assert_eq!(format!("{a}"), "3/2");
        assert_eq!(format!("{}", int(-2)), "-2");
        assert!(!a.is_integer());
        assert_eq!(int(3).parity_sign(), Some(-1.0));
        assert_eq!(h(1).parity_sign(), None);
    }

    #[test]
    fn three_j_reference_values() {
        let v = wigner_3j(int(1), int(1), int(2), int(0), int(0), int(0)).unwrap();
        assert!((v - (2.0f64 / 15.0).sqrt()).abs() < 1e-15);
        assert!((v - 0.365_148_4).abs() < 1e-7);

        let v = wigner_3j(int(1), int(1), int(1), int(0), int(0), int(1)).unwrap();
        assert_eq!(v, 0.0);

        let v = wigner_3j(h(1), h(1), int(1), h(1), h(1), int(-1)).unwrap();
        assert!((v + 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn three_j_rejects_invalid_input() {
        assert!(wigner_3j(int(1), int(1), int(1), int(2), int(0), int(-2)).is_err());
        assert!(wigner_3j(int(1), h(1), h(1), h(1), h(1), int(-1)).is_err());
        assert!(wigner_3j(int(-1), int(1), int(1), int(0), int(0), int(0)).is_err());
    }

    #[test]
    fn three_j_selection_rules_return_exact_zero() {
        // triangle violation
        assert_eq!(
            wigner_3j(int(1), int(1), int(3), int(0), int(0), int(0)).unwrap(),
            0.0
        );
        // odd J with all m zero
        assert_eq!(
            wigner_3j(int(1), int(2), int(2), int(0), int(0), int(0)).unwrap(),
            0.0
        );
    }

    #[test]
    fn three_j_large_j_is_finite() {
        let v = wigner_3j(int(100), int(100), int(100), int(0), int(0), int(0)).unwrap();
        assert!(v.is_finite() && v.abs() < 1.0 && v != 0.0);
        assert!(wigner_3j(int(101), int(1), int(100), int(0), int(0), int(0)).is_err());
    }

    #[test]
    fn spherical_harmonic_reference_values() {
        let v = spherical_harmonic_element(int(0), int(0), int(1), int(0), int(1), int(0)).unwrap();
        assert!((v - 1.0 / 3f64.sqrt()).abs() < 1e-15);

        let v = spherical_harmonic_element(int(0), int(0), int(1), int(0), int(2), int(0)).unwrap();
        assert_eq!(v, 0.0);

        // <1,1|C^2_0|1,1> = -1/5 (the P2 expectation value of Y_11)
        let v = spherical_harmonic_element(int(1), int(1), int(2), int(0), int(1), int(1)).unwrap();
        assert!((v + 0.2).abs() < 1e-15);
        // <1,0|C^2_0|1,0> = +2/5
        let v = spherical_harmonic_element(int(1), int(0), int(2), int(0), int(1), int(0)).unwrap();
        assert!((v - 0.4).abs() < 1e-15);
    }

    #[test]
    fn spherical_harmonic_rejects_bad_rank() {
        assert!(
            spherical_harmonic_element(int(0), int(0), int(3), int(0), int(3), int(0)).is_err()
        );
        assert!(spherical_harmonic_element(h(1), h(1), int(1), int(0), h(1), h(1)).is_err());
    }

    #[test]
    fn tensor_is_reference_values() {
        let v = tensor_is_element(h(1), h(1), int(0), h(1), h(1)).unwrap();
        assert!((v - 1.0 / (2.0 * 6f64.sqrt())).abs() < 1e-15);

        let v = tensor_is_element(h(-1), h(-1), int(-2), h(1), h(1)).unwrap();
        assert!((v - 0.5).abs() < 1e-15);

        // p = +1 requires M_s + M_I = M_s' + M_I' + 1
        for ms2 in [-1, 1] {
            for mi2 in [-1, 1] {
                let v = tensor_is_element(h(1), h(1), int(1), h(ms2), h(mi2)).unwrap();
                if ms2 + mi2 == 0 {
                    assert!(v != 0.0);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    mod oracle {
        use num_bigint::BigInt;
        use num_rational::BigRational;
        use num_traits::{One, Signed, ToPrimitive, Zero};

        fn fact(n: i64) -> BigInt {
            (1..=n).fold(BigInt::one(), |a, k| a * k)
        }

        /// Racah formula in exact rationals; arguments doubled. Returns
        /// (sign, value squared).
        pub fn three_j(j: [i32; 3], m: [i32; 3]) -> f64 {
            if m.iter().sum::<i32>() != 0 {
                return 0.0;
            }
            let [a, b, c] = j.map(i64::from);
            let [x, y, z] = m.map(i64::from);
            if c < (a - b).abs() || c > a + b || (a + b + c) % 2 != 0 {
                return 0.0;
            }
            let h = |v: i64| v / 2;
            let mut sum = BigRational::zero();
            for k in 0..=h(a + b + c) {
                let d = [
                    k,
                    h(c - b + x) + k,
                    h(c - a - y) + k,
                    h(a + b - c) - k,
                    h(a - x) - k,
                    h(b + y) - k,
                ];
                if d.iter().any(|&v| v < 0) {
                    continue;
                }
                let den = d.iter().fold(BigInt::one(), |acc, &v| acc * fact(v));
                let term = BigRational::new(BigInt::one(), den);
                sum = if k % 2 == 0 { sum + term } else { sum - term };
            }
            let tri = BigRational::new(
                fact(h(a + b - c)) * fact(h(a - b + c)) * fact(h(-a + b + c)),
                fact(h(a + b + c) + 1),
            );
            let proj = fact(h(a + x))
                * fact(h(a - x))
                * fact(h(b + y))
                * fact(h(b - y))
                * fact(h(c + z))
                * fact(h(c - z));
            let sq = tri * BigRational::from_integer(proj) * &sum * &sum;
            let sign = if sum.is_negative() { -1.0 } else { 1.0 };
            let phase = if h(a - b - z).rem_euclid(2) == 0 {
                1.0
            } else {
                -1.0
            };
            phase * sign * sq.to_f64().unwrap().sqrt()
        }
    }

    /// All doubled (j, m) triples with j <= 3.
    fn all_symbols() -> Vec<([i32; 3], [i32; 3])> {
        let mut out = Vec::new();
        for j1 in 0..=6 {
            for j2 in 0..=6 {
                for j3 in 0..=6 {
                    for m1 in (-j1..=j1).step_by(2) {
                        for m2 in (-j2..=j2).step_by(2) {
                            let m3: i32 = -m1 - m2;
                            if m3.abs() <= j3 && (j3 - m3) % 2 == 0 {
                                out.push(([j1, j2, j3], [m1, m2, m3]));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn w(j: [i32; 3], m: [i32; 3]) -> f64 {
        wigner_3j(h(j[0]), h(j[1]), h(j[2]), h(m[0]), h(m[1]), h(m[2])).unwrap()
    }

    #[test]
    fn three_j_matches_exact_oracle() {
        let symbols = all_symbols();
        assert!(symbols.len() > 1000);
        for (j, m) in symbols {
            let got = w(j, m);
            let want = oracle::three_j(j, m);
            let tol = 1e-13 * want.abs().max(f64::MIN_POSITIVE);
            assert!((got - want).abs() <= tol, "{j:?} {m:?}: {got} vs {want}");
            if want == 0.0 {
                assert_eq!(got, 0.0);
            }
        }
    }

    #[test]
    fn three_j_permutation_symmetry() {
        for (j, m) in all_symbols() {
            let v = w(j, m);
            let odd = if ((j[0] + j[1] + j[2]) / 2) % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            let cyc = w([j[1], j[2], j[0]], [m[1], m[2], m[0]]);
            assert!((cyc - v).abs() < 1e-14);
            let swap = w([j[1], j[0], j[2]], [m[1], m[0], m[2]]);
            assert!((swap - odd * v).abs() < 1e-14);
            let flip = w(j, [-m[0], -m[1], -m[2]]);
            assert!((flip - odd * v).abs() < 1e-14);
        }
    }

    #[test]
    fn three_j_orthogonality() {
        for j1 in 0..=6 {
            for j2 in 0..=6 {
                for j3 in 0..=6 {
                    for j3p in 0..=6 {
                        if (j1 + j2 + j3) % 2 != 0 || (j1 + j2 + j3p) % 2 != 0 {
                            continue;
                        }
                        for m3 in (-j3..=j3).step_by(2) {
                            for m3p in (-j3p..=j3p).step_by(2) {
                                let mut sum = 0.0;
                                for m1 in (-j1..=j1).step_by(2) {
                                    for m2 in (-j2..=j2).step_by(2) {
                                        if m1 + m2 + m3 != 0 || m1 + m2 + m3p != 0 {
                                            continue;
                                        }
                                        sum += w([j1, j2, j3], [m1, m2, m3])
                                            * w([j1, j2, j3p], [m1, m2, m3p]);
                                    }
                                }
                                let allowed = j3 >= (j1 - j2).abs() && j3 <= j1 + j2;
                                let want = if j3 == j3p && m3 == m3p && allowed {
                                    1.0
                                } else {
                                    0.0
                                };
                                assert!((f64::from(j3 + 1) * sum - want).abs() < 1e-13);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Spherical components of a spin-1/2 operator acting on one factor of the
    /// |M_s, M_I> product space; index = 2*(M_s>0) + (M_I>0).
    fn spin_component(q: i32, on_s: bool) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for row in 0..4 {
            for col in 0..4 {
                let (rs, ri) = (row >> 1, row & 1);
                let (cs, ci) = (col >> 1, col & 1);
                let (r, c, spectator_ok) = if on_s {
                    (rs, cs, ri == ci)
                } else {
                    (ri, ci, rs == cs)
                };
                if !spectator_ok {
                    continue;
                }
                let v = match q {
                    0 if r == c => {
                        if r == 1 {
                            0.5
                        } else {
                            -0.5
                        }
                    }
                    1 if r == 1 && c == 0 => -1.0 / 2f64.sqrt(),
                    -1 if r == 0 && c == 1 => 1.0 / 2f64.sqrt(),
                    _ => 0.0,
                };
                out[row][col] = v;
            }
        }
        out
    }

    fn rank2_oracle(p: i32) -> [[f64; 4]; 4] {
        let s6 = 6f64.sqrt();
        let s2 = 2f64.sqrt();
        let cg: Vec<(i32, i32, f64)> = match p {
            2 => vec![(1, 1, 1.0)],
            1 => vec![(1, 0, 1.0 / s2), (0, 1, 1.0 / s2)],
            0 => vec![(1, -1, 1.0 / s6), (0, 0, 2.0 / s6), (-1, 1, 1.0 / s6)],
            -1 => vec![(-1, 0, 1.0 / s2), (0, -1, 1.0 / s2)],
            -2 => vec![(-1, -1, 1.0)],
            _ => unreachable!(),
        };
        let mut out = [[0.0; 4]; 4];
        for (pi, ps, coeff) in cg {
            let a = spin_component(pi, false);
            let b = spin_component(ps, true);
            for r in 0..4 {
                for c in 0..4 {
                    out[r][c] += coeff * (0..4).map(|k| a[r][k] * b[k][c]).sum::<f64>();
                }
            }
        }
        out
    }

    fn index_to_m(idx: usize) -> (HalfInteger, HalfInteger) {
        let m = |bit: usize| if bit == 1 { h(1) } else { h(-1) };
        (m(idx >> 1), m(idx & 1))
    }

    #[test]
    fn tensor_is_matches_operator_construction() {
        for p in -2..=2 {
            let want = rank2_oracle(p);
            for r in 0..4 {
                for c in 0..4 {
                    let (ms, mi) = index_to_m(r);
                    let (ms2, mi2) = index_to_m(c);
                    let got = tensor_is_element(ms, mi, int(p), ms2, mi2).unwrap();
                    assert!(
                        (got - want[r][c]).abs() < 1e-14,
                        "p={p} r={r} c={c}: {got} vs {}",
                        want[r][c]
                    );
                }
            }
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn spin_half() -> impl Strategy<Value = HalfInteger> {
            prop_oneof![Just(h(1)), Just(h(-1))]
        }

        proptest! {
            #[test]
            fn tensor_is_hermiticity(
                ms in spin_half(), mi in spin_half(), ms2 in spin_half(), mi2 in spin_half(), p in -2i32..=2
            ) {
                let a = tensor_is_element(ms, mi, int(p), ms2, mi2).unwrap();
                let b = tensor_is_element(ms2, mi2, int(-p), ms, mi).unwrap();
                let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
                prop_assert!((a - sign * b).abs() < 1e-14);
            }

            #[test]
            fn three_j_vanishes_off_projection_shell(
                j1 in 0i32..=20, j2 in 0i32..=20, j3 in 0i32..=20, a in 0i32..=20, b in 0i32..=20, c in 0i32..=20
            ) {
                // doubled projections stepping down from j in steps of 2
                let m = [j1 - 2 * (a % (j1 + 1)), j2 - 2 * (b % (j2 + 1)), j3 - 2 * (c % (j3 + 1))];
                prop_assume!(m.iter().sum::<i32>() != 0);
                prop_assert_eq!(w([j1, j2, j3], m), 0.0);
            }

            #[test]
            fn three_j_bounded(j1 in 0i32..=40, j2 in 0i32..=40, a in 0i32..=40, b in 0i32..=40, t in 0i32..=80) {
                let m1 = j1 - 2 * (a % (j1 + 1));
                let m2 = j2 - 2 * (b % (j2 + 1));
                let m3 = -m1 - m2;
                // pick an allowed j3 by stepping through the triangle range
                let lo = (j1 - j2).abs().max(m3.abs());
                let hi = j1 + j2;
                prop_assume!(lo <= hi);
                let j3 = lo + 2 * (t % ((hi - lo) / 2 + 1));
                let v = w([j1, j2, j3], [m1, m2, m3]);
                prop_assert!(v.abs() <= 1.0 / f64::from(j3 + 1).sqrt() + 1e-14);
                let want = oracle::three_j([j1, j2, j3], [m1, m2, m3]);
                prop_assert!((v - want).abs() <= 1e-13 * want.abs());
            }
        }
    }
}
