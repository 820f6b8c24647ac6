//! Arithmetic in `F_p` and in one fixed extension `F_{p^m}`, `m` a power of
//! two, with deterministic square roots.
//!
//! Elements are coefficient vectors (little-endian in the class of `x`)
//! modulo the first monic irreducible polynomial of degree `m` in scan
//! order. The scan visits `x^m + a_{m-1} x^{m-1} + ... + a_0` with the
//! integer `Σ a_i p^i` increasing, so `a_0` varies fastest.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigUint;
use serde::Serialize;
use thiserror::Error;

/// Largest supported `log2` of the extension degree.
pub const MAX_LOG2_DEGREE: usize = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("{0} is not a prime")]
    NotPrime(u64),
    #[error("characteristic 2 is not supported")]
    EvenCharacteristic,
    #[error("prime {0} too large (must be below 2^31)")]
    PrimeTooLarge(u64),
    #[error("extension degree 2^{0} too large (max 2^{MAX_LOG2_DEGREE})")]
    DegreeTooLarge(usize),
    #[error("element is not in the subfield of degree {0}")]
    NotInSubfield(usize),
    #[error("subfield degree {k} does not divide extension degree {m}")]
    BadSubfield { k: usize, m: usize },
    #[error("zero has no inverse")]
    DivisionByZero,
}

pub fn is_prime(p: u64) -> bool {
    if p < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= p {
        if p.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// An element of `F_{p^m}`; ordered lexicographically on the coefficient
/// vector, constant term first.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct FieldElement {
    coeffs: Vec<u64>,
}

impl FieldElement {
    pub fn coeffs(&self) -> &[u64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0)
    }

    /// The value as an integer in `0..p` when the element lies in `F_p`.
    pub fn as_base(&self) -> Option<u64> {
        self.coeffs[1..].iter().all(|&c| c == 0).then(|| self.coeffs[0])
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.as_base() {
            Some(v) => write!(f, "{v}"),
            None => write!(f, "{:?}", self.coeffs),
        }
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Polynomials over `F_p`, little-endian, used to find the modulus.
mod fp_poly {
    pub fn trim(mut a: Vec<u64>) -> Vec<u64> {
        while a.len() > 1 && *a.last().unwrap() == 0 {
            a.pop();
        }
        a
    }

    pub fn inv(a: u64, p: u64) -> u64 {
        super::pow_mod(a, p - 2, p)
    }

    pub fn rem(a: &[u64], m: &[u64], p: u64) -> Vec<u64> {
        let mut a = trim(a.to_vec());
        let m = trim(m.to_vec());
        let dm = m.len() - 1;
        let lead_inv = inv(m[dm], p);
        while a.len() > dm && !(a.len() == 1 && a[0] == 0) {
            let da = a.len() - 1;
            let c = a[da] * lead_inv % p;
            if c != 0 {
                for j in 0..=dm {
                    let t = c * m[j] % p;
                    a[da - dm + j] = (a[da - dm + j] + p - t) % p;
                }
            }
            a.pop();
            a = trim(a);
            if da < dm {
                break;
            }
        }
        if a.is_empty() {
            vec![0]
        } else {
            a
        }
    }

    pub fn mul_mod(a: &[u64], b: &[u64], m: &[u64], p: u64) -> Vec<u64> {
        let mut out = vec![0u64; a.len() + b.len() - 1];
        for (i, &x) in a.iter().enumerate() {
            if x == 0 {
                continue;
            }
            for (j, &y) in b.iter().enumerate() {
                out[i + j] = (out[i + j] + x * y) % p;
            }
        }
        rem(&out, m, p)
    }

    pub fn pow_mod(base: &[u64], mut e: u64, m: &[u64], p: u64) -> Vec<u64> {
        let mut result = vec![1u64];
        let mut b = rem(base, m, p);
        while e > 0 {
            if e & 1 == 1 {
                result = mul_mod(&result, &b, m, p);
            }
            b = mul_mod(&b, &b, m, p);
            e >>= 1;
        }
        result
    }

    pub fn is_zero(a: &[u64]) -> bool {
        a.iter().all(|&c| c == 0)
    }

    pub fn gcd(a: &[u64], b: &[u64], p: u64) -> Vec<u64> {
        let (mut a, mut b) = (trim(a.to_vec()), trim(b.to_vec()));
        while !is_zero(&b) {
            let r = rem(&a, &b, p);
            a = b;
            b = r;
        }
        a
    }

    pub fn sub(a: &[u64], b: &[u64], p: u64) -> Vec<u64> {
        let n = a.len().max(b.len());
        (0..n)
            .map(|i| (a.get(i).copied().unwrap_or(0) + p - b.get(i).copied().unwrap_or(0)) % p)
            .collect()
    }

    /// Rabin's test for a monic `f` of degree `2^d`.
    pub fn is_irreducible_pow2(f: &[u64], p: u64) -> bool {
        let m = f.len() - 1;
        if m == 1 {
            return true;
        }
        if f[0] == 0 {
            return false;
        }
        // x^(p^k) mod f for k = 1..=m
        let x = vec![0u64, 1];
        let mut h = x.clone();
        for k in 1..=m {
            h = pow_mod(&h, p, f, p);
            if k == m / 2 {
                let g = gcd(f, &sub(&h, &x, p), p);
                if g.len() > 1 {
                    return false;
                }
            }
        }
        is_zero(&sub(&h, &x, p))
    }
}

pub(crate) fn pow_mod(mut b: u64, mut e: u64, p: u64) -> u64 {
    let mut r = 1u64;
    b %= p;
    while e > 0 {
        if e & 1 == 1 {
            r = r * b % p;
        }
        b = b * b % p;
        e >>= 1;
    }
    r
}

/// The field `F_{p^m}` with `m = 2^log2_degree`.
#[derive(Clone, Debug)]
pub struct FieldCtx {
    p: u64,
    log2_degree: usize,
    m: usize,
    modulus: Vec<u64>,
    q: BigUint,
    two_adic: u32,
    odd_part: BigUint,
    nonsquare: FieldElement,
}

impl PartialEq for FieldCtx {
    fn eq(&self, other: &Self) -> bool {
        self.p == other.p && self.modulus == other.modulus
    }
}

impl Eq for FieldCtx {}

impl FieldCtx {
    /// `F_{p^(2^depth)}`.
    pub fn new(p: u64, depth: usize) -> Result<FieldCtx, FieldError> {
        if p == 2 {
            return Err(FieldError::EvenCharacteristic);
        }
        if !is_prime(p) {
            return Err(FieldError::NotPrime(p));
        }
        if p >= 1 << 31 {
            return Err(FieldError::PrimeTooLarge(p));
        }
        if depth > MAX_LOG2_DEGREE {
            return Err(FieldError::DegreeTooLarge(depth));
        }
        let m = 1usize << depth;
        let modulus = first_irreducible(p, m);
        let q = BigUint::from(p).pow(m as u32);
        let qm1 = &q - 1u32;
        let two_adic = qm1.trailing_zeros().expect("q - 1 is nonzero") as u32;
        let odd_part = &qm1 >> two_adic;
        let mut ctx = FieldCtx {
            p,
            log2_degree: depth,
            m,
            modulus,
            q,
            two_adic,
            odd_part,
            nonsquare: FieldElement { coeffs: vec![0; m] },
        };
        ctx.nonsquare = ctx.least_nonsquare();
        Ok(ctx)
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn degree(&self) -> usize {
        self.m
    }

    pub fn log2_degree(&self) -> usize {
        self.log2_degree
    }

    /// Monic modulus, little-endian, length `m + 1`.
    pub fn modulus(&self) -> &[u64] {
        &self.modulus
    }

    pub fn order(&self) -> &BigUint {
        &self.q
    }

    pub fn nonsquare(&self) -> &FieldElement {
        &self.nonsquare
    }

    pub fn zero(&self) -> FieldElement {
        FieldElement { coeffs: vec![0; self.m] }
    }

    pub fn one(&self) -> FieldElement {
        self.from_u64(1)
    }

    pub fn from_u64(&self, v: u64) -> FieldElement {
        let mut e = self.zero();
        e.coeffs[0] = v % self.p;
        e
    }

    pub fn from_i64(&self, v: i64) -> FieldElement {
        self.from_u64(v.rem_euclid(self.p as i64) as u64)
    }

    /// Element from coefficients; missing entries are zero, values reduced mod p.
    pub fn from_coeffs(&self, coeffs: &[u64]) -> FieldElement {
        assert!(coeffs.len() <= self.m, "too many coefficients for degree {}", self.m);
        let mut e = self.zero();
        for (i, &c) in coeffs.iter().enumerate() {
            e.coeffs[i] = c % self.p;
        }
        e
    }

    /// The class of `x`, a generator of the field over `F_p` (for `m > 1`).
    pub fn gen(&self) -> FieldElement {
        if self.m == 1 {
            self.from_u64(0)
        } else {
            self.from_coeffs(&[0, 1])
        }
    }

    pub fn add(&self, a: &FieldElement, b: &FieldElement) -> FieldElement {
        let coeffs = a.coeffs.iter().zip(&b.coeffs).map(|(&x, &y)| (x + y) % self.p).collect();
        FieldElement { coeffs }
    }

    pub fn sub(&self, a: &FieldElement, b: &FieldElement) -> FieldElement {
        let coeffs = a
            .coeffs
            .iter()
            .zip(&b.coeffs)
            .map(|(&x, &y)| (x + self.p - y) % self.p)
            .collect();
        FieldElement { coeffs }
    }

    pub fn neg(&self, a: &FieldElement) -> FieldElement {
        let coeffs = a.coeffs.iter().map(|&x| (self.p - x) % self.p).collect();
        FieldElement { coeffs }
    }

    pub fn mul(&self, a: &FieldElement, b: &FieldElement) -> FieldElement {
        let (m, p) = (self.m, self.p);
        let mut prod = vec![0u64; 2 * m - 1];
        for (i, &x) in a.coeffs.iter().enumerate() {
            if x == 0 {
                continue;
            }
            for (j, &y) in b.coeffs.iter().enumerate() {
                prod[i + j] = (prod[i + j] + x * y) % p;
            }
        }
        for i in (m..2 * m - 1).rev() {
            let c = prod[i];
            if c != 0 {
                for j in 0..m {
                    let t = c * self.modulus[j] % p;
                    prod[i - m + j] = (prod[i - m + j] + p - t) % p;
                }
            }
        }
        prod.truncate(m);
        FieldElement { coeffs: prod }
    }

    pub fn square(&self, a: &FieldElement) -> FieldElement {
        self.mul(a, a)
    }

    pub fn pow(&self, a: &FieldElement, e: &BigUint) -> FieldElement {
        let mut result = self.one();
        for i in (0..e.bits()).rev() {
            result = self.square(&result);
            if e.bit(i) {
                result = self.mul(&result, a);
            }
        }
        result
    }

    pub fn pow_u64(&self, a: &FieldElement, e: u64) -> FieldElement {
        self.pow(a, &BigUint::from(e))
    }

    /// `a^(p^k)`.
    pub fn frobenius(&self, a: &FieldElement, k: usize) -> FieldElement {
        (0..k).fold(a.clone(), |acc, _| self.pow_u64(&acc, self.p))
    }

    pub fn inv(&self, a: &FieldElement) -> Result<FieldElement, FieldError> {
        if a.is_zero() {
            return Err(FieldError::DivisionByZero);
        }
        Ok(self.pow(a, &(&self.q - 2u32)))
    }

    pub fn div(&self, a: &FieldElement, b: &FieldElement) -> Result<FieldElement, FieldError> {
        Ok(self.mul(a, &self.inv(b)?))
    }

    /// Whether `a` lies in the subfield `F_{p^k}`.
    pub fn in_subfield(&self, a: &FieldElement, k: usize) -> bool {
        &self.frobenius(a, k) == a
    }

    pub fn is_square(&self, a: &FieldElement) -> bool {
        a.is_zero() || self.pow(a, &((&self.q - 1u32) >> 1)) == self.one()
    }

    /// Quadratic character of `a` over the subfield `F_{p^k}`: `+1`, `-1`,
    /// or 0 for zero.
    pub fn character_over(&self, a: &FieldElement, k: usize) -> Result<i8, FieldError> {
        if k == 0 || !self.m.is_multiple_of(k) {
            return Err(FieldError::BadSubfield { k, m: self.m });
        }
        if !self.in_subfield(a, k) {
            return Err(FieldError::NotInSubfield(k));
        }
        if a.is_zero() {
            return Ok(0);
        }
        let qk = BigUint::from(self.p).pow(k as u32);
        let v = self.pow(a, &((qk - 1u32) >> 1));
        Ok(if v == self.one() { 1 } else { -1 })
    }

    /// Both square roots in canonical order, or `None` for a non-square.
    /// For zero the pair is `(0, 0)`.
    pub fn sqrt(&self, a: &FieldElement) -> Option<(FieldElement, FieldElement)> {
        if a.is_zero() {
            return Some((self.zero(), self.zero()));
        }
        if !self.is_square(a) {
            return None;
        }
        let root = if self.two_adic == 1 {
            // q ≡ 3 mod 4
            self.pow(a, &((&self.q + 1u32) >> 2))
        } else {
            self.tonelli_shanks(a)
        };
        debug_assert_eq!(&self.square(&root), a);
        let other = self.neg(&root);
        Some(match root.cmp(&other) {
            Ordering::Greater => (other, root),
            _ => (root, other),
        })
    }

    fn tonelli_shanks(&self, a: &FieldElement) -> FieldElement {
        let one = self.one();
        let mut e = self.two_adic;
        let mut c = self.pow(&self.nonsquare, &self.odd_part);
        let mut x = self.pow(a, &((&self.odd_part + 1u32) >> 1));
        let mut b = self.pow(a, &self.odd_part);
        while b != one {
            let mut i = 0;
            let mut t = b.clone();
            while t != one {
                t = self.square(&t);
                i += 1;
            }
            let mut g = c;
            for _ in 0..(e - i - 1) {
                g = self.square(&g);
            }
            x = self.mul(&x, &g);
            c = self.square(&g);
            b = self.mul(&b, &c);
            e = i;
        }
        x
    }

    /// `k`-th element in canonical order (last coefficient varies fastest).
    fn nth_element(&self, mut k: u64) -> FieldElement {
        let mut e = self.zero();
        for i in (0..self.m).rev() {
            e.coeffs[i] = k % self.p;
            k /= self.p;
            if k == 0 {
                break;
            }
        }
        e
    }

    fn least_nonsquare(&self) -> FieldElement {
        (1u64..)
            .map(|k| self.nth_element(k))
            .find(|e| !self.is_square(e))
            .expect("half of all nonzero elements are non-squares")
    }
}

fn first_irreducible(p: u64, m: usize) -> Vec<u64> {
    for k in 0u64.. {
        let mut f = vec![0u64; m + 1];
        f[m] = 1;
        let mut t = k;
        for c in f.iter_mut().take(m) {
            *c = t % p;
            t /= p;
        }
        if t != 0 {
            break;
        }
        if m >= 2 && has_root(&f, p) {
            continue;
        }
        if fp_poly::is_irreducible_pow2(&f, p) {
            return f;
        }
    }
    unreachable!("an irreducible polynomial of every degree exists")
}

fn has_root(f: &[u64], p: u64) -> bool {
    (0..p).any(|x| f.iter().rev().fold(0u64, |acc, &c| (acc * x + c) % p) == 0)
}
