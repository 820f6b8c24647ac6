//! Dynamics of `f(z) = z^2 + c`: critical-orbit portraits, the integer
//! polynomials `f_x^r(0) + f_x^s(0)`, and preimage trees over finite fields.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::field::{is_prime, FieldCtx, FieldElement, FieldError};
use crate::parity::{ParityError, PortraitParams};
use crate::tree::{node_count, TreeError, TreeWord, MAX_DEPTH};

/// Orbits longer than this are not followed.
pub const MAX_ORBIT_STEPS: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DynamicsError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Params(#[from] ParityError),
    #[error("critical orbit of c = {0} is periodic, Chebyshev, or not found")]
    BadPortrait(String),
    #[error("c = {c} has portrait ({found_r}, {found_s}), expected ({r}, {s})")]
    WrongPortrait { c: String, r: usize, s: usize, found_r: usize, found_s: usize },
    #[error("{0} must lie in the base field of degree {1}")]
    NotInBaseField(&'static str, usize),
    #[error("x0 = {0} is in the forward orbit of 0")]
    Postcritical(String),
    #[error("x0 = {x0} is periodic with period {period}")]
    Periodic { x0: String, period: usize },
    #[error("field of degree {have} cannot hold depth-{depth} preimages over degree {base}")]
    FieldTooSmall { have: usize, depth: usize, base: usize },
    #[error("no square root at node {0} (internal invariant violated)")]
    SqrtMissing(TreeWord),
    #[error("node {0} has value c; tree meets the critical point")]
    CriticalNode(TreeWord),
}

/// Polynomial with integer coefficients, constant term first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntPoly {
    coeffs: Vec<BigInt>,
}

impl IntPoly {
    pub fn from_coeffs(coeffs: Vec<BigInt>) -> IntPoly {
        let mut p = IntPoly { coeffs };
        p.trim();
        p
    }

    fn trim(&mut self) {
        while self.coeffs.len() > 1 && self.coeffs.last().is_some_and(Zero::is_zero) {
            self.coeffs.pop();
        }
        if self.coeffs.is_empty() {
            self.coeffs.push(BigInt::zero());
        }
    }

    pub fn coeffs(&self) -> &[BigInt] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn add(&self, other: &IntPoly) -> IntPoly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let zero = BigInt::zero();
        IntPoly::from_coeffs(
            (0..n)
                .map(|i| self.coeffs.get(i).unwrap_or(&zero) + other.coeffs.get(i).unwrap_or(&zero))
                .collect(),
        )
    }

    pub fn mul(&self, other: &IntPoly) -> IntPoly {
        let mut out = vec![BigInt::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        IntPoly::from_coeffs(out)
    }

    /// Coefficients mod 2 as bits.
    pub fn mod2(&self) -> Vec<u8> {
        trim_bits(self.coeffs.iter().map(|c| (c % 2u32).abs().to_u8().unwrap_or(0)).collect())
    }

    pub fn eval_mod(&self, x: u64, p: u64) -> u64 {
        let pb = BigInt::from(p);
        self.coeffs.iter().rev().fold(0u64, |acc, c| {
            let c = ((c % &pb) + &pb) % &pb;
            (acc * x + c.to_u64().unwrap_or(0)) % p
        })
    }
}

impl fmt::Display for IntPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, c) in self.coeffs.iter().enumerate().rev() {
            if c.is_zero() {
                continue;
            }
            let sign = if c.is_negative() { "-" } else { "+" };
            if first {
                if c.is_negative() {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            first = false;
            let mag = c.abs();
            if !mag.is_one() || i == 0 {
                write!(f, "{mag}")?;
            }
            match i {
                0 => {}
                1 => write!(f, "x")?,
                _ => write!(f, "x^{i}")?,
            }
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// `f_x^n(0)` as a polynomial in `x`.
pub fn critical_iterate_poly(n: usize) -> IntPoly {
    let x = IntPoly::from_coeffs(vec![BigInt::zero(), BigInt::one()]);
    let mut cur = IntPoly::from_coeffs(vec![BigInt::zero()]);
    for _ in 0..n {
        cur = cur.mul(&cur).add(&x);
    }
    cur
}

/// `f_x^r(0) + f_x^s(0)`.
pub fn misiurewicz_poly(r: usize, s: usize) -> IntPoly {
    critical_iterate_poly(r).add(&critical_iterate_poly(s))
}

fn trim_bits(mut v: Vec<u8>) -> Vec<u8> {
    while v.len() > 1 && v.last() == Some(&0) {
        v.pop();
    }
    v
}

fn f2_mul(a: &[u8], b: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 1 {
            for (j, &y) in b.iter().enumerate() {
                out[i + j] ^= y;
            }
        }
    }
    trim_bits(out)
}

/// `Σ_{i<n} x^(2^i)` over `F_2`.
pub fn power_sum_mod2(n: usize) -> Vec<u8> {
    if n == 0 {
        return vec![0];
    }
    let mut v = vec![0u8; (1 << (n - 1)) + 1];
    for i in 0..n {
        v[1 << i] = 1;
    }
    v
}

/// Whether `misiurewicz_poly(r, s) mod 2` equals `(Σ_{i<r-s} x^(2^i))^(2^s)`.
pub fn misiurewicz_mod2_check(r: usize, s: usize) -> bool {
    let mut g = power_sum_mod2(r - s);
    for _ in 0..s {
        g = f2_mul(&g, &g);
    }
    misiurewicz_poly(r, s).mod2() == g
}

/// Per-n result of the mod-2 iterate check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Mod2Row {
    pub n: usize,
    pub degree: usize,
    pub ok: bool,
}

/// Checks `f_x^n(0) ≡ Σ_{i<n} x^(2^i) (mod 2)` for `n = 1..=n_max`.
///
/// The iterates are computed in `(Z/2^64)[x]` with wrapping arithmetic, which
/// is exact modulo `2^64` and so exact modulo 2.
pub fn mod2_iterate_check(n_max: usize) -> Vec<Mod2Row> {
    let mut cur: Vec<u64> = vec![0];
    let mut rows = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let mut next = vec![0u64; 2 * cur.len() - 1];
        for (i, &a) in cur.iter().enumerate() {
            if a == 0 {
                continue;
            }
            next[2 * i] = next[2 * i].wrapping_add(a.wrapping_mul(a));
            for (j, &b) in cur.iter().enumerate().skip(i + 1) {
                next[i + j] = next[i + j].wrapping_add(a.wrapping_mul(b).wrapping_mul(2));
            }
        }
        if next.len() < 2 {
            next.resize(2, 0);
        }
        next[1] = next[1].wrapping_add(1);
        cur = next;
        let bits = trim_bits(cur.iter().map(|c| (c & 1) as u8).collect());
        rows.push(Mod2Row {
            n,
            degree: cur.len() - 1,
            ok: bits == power_sum_mod2(n),
        });
    }
    rows
}

/// Critical orbit data for `z^2 + c`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OrbitPortrait {
    pub c: FieldElement,
    pub r: usize,
    pub s: usize,
    pub tail_len: usize,
    pub cycle_len: usize,
    /// `f^0(0), ..., f^(r+1)(0)`.
    pub orbit: Vec<FieldElement>,
    /// `f(0), ..., f^r(0)` pairwise distinct.
    pub distinct: bool,
}

impl OrbitPortrait {
    pub fn params(&self) -> Result<PortraitParams, ParityError> {
        PortraitParams::new(self.r, self.s)
    }

    /// `f^i(0)` for any `i >= 0`.
    pub fn iterate(&self, i: usize) -> &FieldElement {
        if i <= self.r + 1 {
            &self.orbit[i]
        } else {
            // f^(s+1+k) has period r - s
            &self.orbit[self.s + 1 + (i - self.s - 1) % self.cycle_len]
        }
    }

    /// `f^1(0), ..., f^r(0)`.
    pub fn postcritical(&self) -> &[FieldElement] {
        &self.orbit[1..=self.r]
    }
}

/// Minimal `(r, s)` with `f^r(0) = -f^s(0)` in the field of `ctx`; `None` for
/// a periodic critical point, the Chebyshev portrait `(2, 1)`, or an orbit
/// longer than [`MAX_ORBIT_STEPS`].
pub fn orbit_portrait(ctx: &FieldCtx, c: &FieldElement) -> Option<OrbitPortrait> {
    let mut seen: HashMap<FieldElement, usize> = HashMap::new();
    let mut orbit = vec![ctx.zero()];
    seen.insert(ctx.zero(), 0);
    loop {
        if orbit.len() > MAX_ORBIT_STEPS {
            return None;
        }
        let last = orbit.last().unwrap();
        let next = ctx.add(&ctx.square(last), c);
        if let Some(&first) = seen.get(&next) {
            // first repetition f^R = f^S with S = first, R = orbit.len()
            if first == 0 {
                return None;
            }
            let (r, s) = (orbit.len() - 1, first - 1);
            if s == 0 || (r, s) == (2, 1) {
                return None;
            }
            orbit.push(next);
            orbit.truncate(r + 2);
            return Some(OrbitPortrait {
                c: c.clone(),
                r,
                s,
                tail_len: s + 1,
                cycle_len: r - s,
                orbit,
                distinct: true,
            });
        }
        seen.insert(next.clone(), orbit.len());
        orbit.push(next);
    }
}

/// [`orbit_portrait`] for an integer `c` in `F_p`.
pub fn orbit_portrait_fp(p: u64, c: u64) -> Result<Option<OrbitPortrait>, FieldError> {
    let ctx = FieldCtx::new(p, 0)?;
    Ok(orbit_portrait(&ctx, &ctx.from_u64(c)))
}

fn critical_sum_mod(r: usize, s: usize, c: u64, p: u64) -> u64 {
    let mut z = 0u64;
    let (mut fr, mut fs) = (0, 0);
    for i in 1..=r {
        z = (z * z + c) % p;
        if i == s {
            fs = z;
        }
    }
    if r > 0 {
        fr = z;
    }
    (fr + fs) % p
}

/// All `(p, c)` with `p <= p_max` an odd prime and `c` in `F_p` a root of the
/// polynomial `f_x^r(0) + f_x^s(0)` whose critical portrait is exactly `(r, s)`.
pub fn find_pcf_params(r: usize, s: usize, p_max: u64) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    if s == 0 || r <= s {
        return out;
    }
    for p in (3..=p_max).filter(|&p| is_prime(p)) {
        let ctx = FieldCtx::new(p, 0).expect("odd prime");
        for c in 0..p {
            if critical_sum_mod(r, s, c, p) != 0 {
                continue;
            }
            if let Some(pt) = orbit_portrait(&ctx, &ctx.from_u64(c)) {
                if pt.r == r && pt.s == s && pt.distinct {
                    out.push((p, c));
                }
            }
        }
    }
    out
}

/// Points `x0` of `F_p`, in increasing order, that are neither postcritical
/// nor periodic under `z^2 + c`.
pub fn valid_base_points(p: u64, c: u64) -> Result<Vec<u64>, DynamicsError> {
    let ctx = FieldCtx::new(p, 0)?;
    let c = ctx.from_u64(c);
    let portrait = orbit_portrait(&ctx, &c).ok_or_else(|| DynamicsError::BadPortrait(c.to_string()))?;
    Ok((0..p)
        .filter(|&x| {
            let x = ctx.from_u64(x);
            !portrait.postcritical().contains(&x) && period_of(&ctx, &c, &x).is_none()
        })
        .collect())
}

/// A labeled preimage tree of `x0` under `z^2 + c`, stored in heap order.
#[derive(Clone, Debug)]
pub struct LabeledTree {
    ctx: Arc<FieldCtx>,
    c: FieldElement,
    x0: FieldElement,
    base_degree: usize,
    portrait: OrbitPortrait,
    params: PortraitParams,
    depth: usize,
    values: Vec<FieldElement>,
}

/// Builds the depth-`depth` preimage tree of `x0`, with `c` and `x0` in `F_p`.
pub fn preimage_tree(
    ctx: Arc<FieldCtx>,
    c: &FieldElement,
    x0: &FieldElement,
    depth: usize,
) -> Result<LabeledTree, DynamicsError> {
    preimage_tree_over(ctx, c, x0, depth, 1)
}

/// Builds the tree in the smallest field that holds it: `F_{p^(2^depth)}`.
pub fn build_tree(p: u64, c: u64, x0: u64, depth: usize) -> Result<LabeledTree, DynamicsError> {
    let ctx = Arc::new(FieldCtx::new(p, depth)?);
    let (c, x0) = (ctx.from_u64(c), ctx.from_u64(x0));
    preimage_tree(ctx, &c, &x0, depth)
}

/// As [`preimage_tree`], with `c` and `x0` in `F_{p^base_degree}`.
pub fn preimage_tree_over(
    ctx: Arc<FieldCtx>,
    c: &FieldElement,
    x0: &FieldElement,
    depth: usize,
    base_degree: usize,
) -> Result<LabeledTree, DynamicsError> {
    if depth > MAX_DEPTH {
        return Err(TreeError::DepthTooLarge(depth).into());
    }
    let m = ctx.degree();
    let needed = base_degree.checked_shl(depth as u32).unwrap_or(usize::MAX);
    if base_degree == 0 || !m.is_multiple_of(needed) {
        return Err(DynamicsError::FieldTooSmall { have: m, depth, base: base_degree });
    }
    if !ctx.in_subfield(c, base_degree) {
        return Err(DynamicsError::NotInBaseField("c", base_degree));
    }
    if !ctx.in_subfield(x0, base_degree) {
        return Err(DynamicsError::NotInBaseField("x0", base_degree));
    }
    let portrait = orbit_portrait(&ctx, c).ok_or_else(|| DynamicsError::BadPortrait(c.to_string()))?;
    let params = portrait.params()?;
    if portrait.postcritical().contains(x0) {
        return Err(DynamicsError::Postcritical(x0.to_string()));
    }
    if let Some(period) = period_of(&ctx, c, x0) {
        return Err(DynamicsError::Periodic { x0: x0.to_string(), period });
    }

    let total = node_count(depth + 1);
    let mut values = Vec::with_capacity(total);
    values.push(x0.clone());
    for idx in 0..node_count(depth) {
        let w = TreeWord::from_index(idx as u64);
        let d = ctx.sub(&values[idx], c);
        if d.is_zero() {
            return Err(DynamicsError::CriticalNode(w));
        }
        let (lo, hi) = ctx.sqrt(&d).ok_or(DynamicsError::SqrtMissing(w))?;
        values.push(lo);
        values.push(hi);
    }
    Ok(LabeledTree {
        ctx,
        c: c.clone(),
        x0: x0.clone(),
        base_degree,
        portrait,
        params,
        depth,
        values,
    })
}

fn period_of(ctx: &FieldCtx, c: &FieldElement, x0: &FieldElement) -> Option<usize> {
    let mut seen = HashSet::new();
    let mut z = x0.clone();
    for k in 1..=MAX_ORBIT_STEPS {
        z = ctx.add(&ctx.square(&z), c);
        if &z == x0 {
            return Some(k);
        }
        if !seen.insert(z.clone()) {
            return None;
        }
    }
    None
}

impl LabeledTree {
    pub fn ctx(&self) -> &Arc<FieldCtx> {
        &self.ctx
    }

    pub fn c(&self) -> &FieldElement {
        &self.c
    }

    pub fn x0(&self) -> &FieldElement {
        &self.x0
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn base_degree(&self) -> usize {
        self.base_degree
    }

    pub fn params(&self) -> &PortraitParams {
        &self.params
    }

    pub fn portrait(&self) -> &OrbitPortrait {
        &self.portrait
    }

    pub fn values(&self) -> &[FieldElement] {
        &self.values
    }

    /// Value at `w`; panics if `w` is deeper than the tree.
    pub fn value(&self, w: TreeWord) -> &FieldElement {
        assert!(w.len() <= self.depth, "node {w} beyond depth {}", self.depth);
        &self.values[w.index() as usize]
    }

    pub fn get(&self, w: TreeWord) -> Option<&FieldElement> {
        (w.len() <= self.depth).then(|| &self.values[w.index() as usize])
    }

    /// Exchanges the labels `ya` and `yb`, carrying their subtrees along.
    pub fn swap_children(&mut self, y: TreeWord) -> Result<(), TreeError> {
        if y.len() >= self.depth {
            return Err(TreeError::WordTooLong { len: y.len() + 1, depth: self.depth });
        }
        for k in 0..self.depth - y.len() {
            let ra = y.a().extension_range(k);
            let rb = y.b().extension_range(k);
            for (i, j) in ra.zip(rb) {
                self.values.swap(i as usize, j as usize);
            }
        }
        Ok(())
    }

    /// `Π_{|w| = m-1} [y w a]`: one preimage per sibling pair of `f^-m(y)`.
    pub fn half_product(&self, y: TreeWord, m: usize) -> FieldElement {
        assert!(m >= 1 && y.len() + m <= self.depth);
        let mut prod = self.ctx.one();
        for idx in y.extension_range(m - 1) {
            prod = self.ctx.mul(&prod, self.value(TreeWord::from_index(idx).a()));
        }
        prod
    }

    /// Square of [`Self::half_product`] predicted from the critical orbit.
    pub fn half_product_square(&self, y: TreeWord, m: usize) -> FieldElement {
        let v = self.value(y);
        if m == 1 {
            self.ctx.sub(v, &self.c)
        } else {
            self.ctx.sub(self.portrait.iterate(m), v)
        }
    }

    /// Nodes where `[wa]^2 + c = [w]` or `[wa] = -[wb]` fails.
    pub fn structure_failures(&self) -> Vec<TreeWord> {
        (0..node_count(self.depth) as u64)
            .map(TreeWord::from_index)
            .filter(|&w| {
                let (va, vb) = (self.value(w.a()), self.value(w.b()));
                &self.ctx.add(&self.ctx.square(va), &self.c) != self.value(w) || self.ctx.add(va, vb) != self.ctx.zero()
            })
            .collect()
    }

    /// Hex SHA-256 of the field, parameters and node values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.ctx.p().to_le_bytes());
        for &c in self.ctx.modulus() {
            h.update(c.to_le_bytes());
        }
        for e in [&self.c, &self.x0] {
            for &c in e.coeffs() {
                h.update(c.to_le_bytes());
            }
        }
        h.update((self.depth as u64).to_le_bytes());
        h.update((self.base_degree as u64).to_le_bytes());
        for v in &self.values {
            for &c in v.coeffs() {
                h.update(c.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

struct Nodes<'a>(&'a LabeledTree);

impl Serialize for Nodes<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.values.len()))?;
        for (i, v) in self.0.values.iter().enumerate() {
            map.serialize_entry(&TreeWord::from_index(i as u64).to_string(), v)?;
        }
        map.end()
    }
}

#[derive(Serialize)]
struct PortraitRs {
    r: usize,
    s: usize,
}

impl Serialize for LabeledTree {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("LabeledTree", 10)?;
        st.serialize_field("p", &self.ctx.p())?;
        st.serialize_field("m", &self.ctx.degree())?;
        st.serialize_field("modulus", self.ctx.modulus())?;
        st.serialize_field("c", &self.c)?;
        st.serialize_field("x0", &self.x0)?;
        st.serialize_field("depth", &self.depth)?;
        st.serialize_field("base_degree", &self.base_degree)?;
        st.serialize_field("portrait", &PortraitRs { r: self.portrait.r, s: self.portrait.s })?;
        st.serialize_field("checksum", &self.checksum())?;
        st.serialize_field("nodes", &Nodes(self))?;
        st.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ints(v: &[i64]) -> IntPoly {
        IntPoly::from_coeffs(v.iter().map(|&c| BigInt::from(c)).collect())
    }

    #[test]
    fn portraits() {
        let p = orbit_portrait_fp(7, 1).unwrap().unwrap();
        assert_eq!((p.r, p.s, p.tail_len, p.cycle_len), (3, 2, 3, 1));
        let vals: Vec<_> = p.orbit.iter().map(|e| e.as_base().unwrap()).collect();
        assert_eq!(vals, [0, 1, 2, 5, 5]);
        let p = orbit_portrait_fp(5, 2).unwrap().unwrap();
        assert_eq!((p.r, p.s), (3, 1));
        assert_eq!(p.iterate(6).as_base(), Some(1));
        assert!(orbit_portrait_fp(7, 0).unwrap().is_none());
        // z^2 - 2: 0 -> -2 -> 2 -> 2 is the Chebyshev portrait
        assert!(orbit_portrait_fp(7, 5).unwrap().is_none());
    }

    #[test]
    fn misiurewicz_examples() {
        assert_eq!(misiurewicz_poly(3, 2), ints(&[0, 2, 2, 2, 1]));
        assert_eq!(misiurewicz_poly(2, 1), ints(&[0, 2, 1]));
        assert_eq!(misiurewicz_poly(3, 2).to_string(), "x^4 + 2x^3 + 2x^2 + 2x");
        assert_eq!(ints(&[-1, 0, -3]).to_string(), "-3x^2 - 1");
        // x (x^3 + 2x^2 + 2x + 2)
        assert_eq!(ints(&[0, 1]).mul(&ints(&[2, 2, 2, 1])), misiurewicz_poly(3, 2));
        for (r, s) in [(3, 1), (3, 2), (4, 2), (5, 3)] {
            assert!(misiurewicz_mod2_check(r, s), "({r},{s})");
        }
    }

    #[test]
    fn mod2_rows() {
        let rows = mod2_iterate_check(12);
        assert_eq!(rows.len(), 12);
        assert!(rows.iter().all(|r| r.ok));
        assert_eq!(rows[11].degree, 2048);
    }

    #[test]
    fn wrapping_iterates_match_exact_ones() {
        let mut cur: Vec<u64> = vec![0];
        for n in 1..=9 {
            let exact = critical_iterate_poly(n);
            let mut next = vec![0u64; 2 * cur.len() - 1];
            for (i, &a) in cur.iter().enumerate() {
                for (j, &b) in cur.iter().enumerate() {
                    next[i + j] = next[i + j].wrapping_add(a.wrapping_mul(b));
                }
            }
            next.resize(next.len().max(2), 0);
            next[1] = next[1].wrapping_add(1);
            cur = next;
            let modulus: BigInt = BigInt::from(1u8) << 64usize;
            for (k, c) in exact.coeffs().iter().enumerate() {
                assert_eq!(BigInt::to_u64(&(c % &modulus)).unwrap(), cur[k], "n={n} k={k}");
            }
        }
    }

    #[test]
    fn pcf_search() {
        assert!(find_pcf_params(3, 2, 7).contains(&(7, 1)));
        assert!(find_pcf_params(3, 1, 5).contains(&(5, 2)));
        for (r, s) in [(3, 2), (3, 1), (4, 2), (4, 1)] {
            let found = find_pcf_params(r, s, 60);
            assert_eq!(found, find_pcf_params(r, s, 60));
            let poly = misiurewicz_poly(r, s);
            for &(p, c) in &found {
                assert_eq!(poly.eval_mod(c, p), 0);
                let pt = orbit_portrait_fp(p, c).unwrap().unwrap();
                assert_eq!((pt.r, pt.s), (r, s));
                let distinct: HashSet<_> = pt.postcritical().iter().collect();
                assert_eq!(distinct.len(), r);
            }
        }
        assert!(find_pcf_params(2, 1, 50).is_empty());
    }

    #[test]
    fn tree_basics() {
        let t = build_tree(7, 1, 4, 1).unwrap();
        let ctx = t.ctx().clone();
        let a = t.value(TreeWord::ROOT.a());
        assert!(a.as_base().is_none());
        assert_eq!(ctx.square(a), ctx.from_u64(3));
        assert_eq!(
            build_tree(7, 1, 3, 2).unwrap_err(),
            DynamicsError::Periodic { x0: "3".into(), period: 1 }
        );
        assert!(matches!(build_tree(7, 1, 2, 2), Err(DynamicsError::Postcritical(_))));
        assert!(matches!(build_tree(7, 0, 4, 2), Err(DynamicsError::BadPortrait(_))));
        assert_eq!(valid_base_points(7, 1).unwrap(), [0, 4, 6]);
        assert_eq!(valid_base_points(5, 2).unwrap(), [0, 4]);
        let ctx2 = Arc::new(FieldCtx::new(7, 2).unwrap());
        let (c, x0) = (ctx2.one(), ctx2.from_u64(4));
        assert!(matches!(
            preimage_tree(ctx2.clone(), &c, &x0, 3),
            Err(DynamicsError::FieldTooSmall { .. })
        ));
        assert!(matches!(
            preimage_tree(ctx2.clone(), &c, &ctx2.gen(), 2),
            Err(DynamicsError::NotInBaseField("x0", 1))
        ));
    }

    #[test]
    fn tree_structure_and_products() {
        let t = build_tree(7, 1, 4, 4).unwrap();
        assert_eq!(t.values().len(), 31);
        assert!(t.structure_failures().is_empty());
        let ctx = t.ctx();
        for idx in 0..node_count(4) as u64 {
            let y = TreeWord::from_index(idx);
            for m in 1..=4 - y.len() {
                assert_eq!(ctx.square(&t.half_product(y, m)), t.half_product_square(y, m), "{y} m={m}");
            }
            let (a, b) = (t.value(y.a()), t.value(y.b()));
            assert!(a < b, "canonical sibling order at {y}");
        }
    }

    #[test]
    fn swapping_keeps_structure() {
        let mut t = build_tree(5, 2, 4, 4).unwrap();
        let before = t.checksum();
        let y: TreeWord = "ab".parse().unwrap();
        let (va, vb) = (t.value(y.a()).clone(), t.value(y.b()).clone());
        let (vaa, vba) = (t.value(y.a().a()).clone(), t.value(y.b().a()).clone());
        t.swap_children(y).unwrap();
        assert_eq!(t.value(y.a()), &vb);
        assert_eq!(t.value(y.b()), &va);
        assert_eq!(t.value(y.b().a()), &vaa);
        assert_eq!(t.value(y.a().a()), &vba);
        assert!(t.structure_failures().is_empty());
        assert_ne!(t.checksum(), before);
        t.swap_children(y).unwrap();
        assert_eq!(t.checksum(), before);
        assert!(t.swap_children("abab".parse().unwrap()).is_err());
    }

    #[test]
    fn tree_json() {
        let t = build_tree(7, 1, 4, 1).unwrap();
        let v = serde_json::to_value(&t).unwrap();
        assert_eq!(v["p"], 7);
        assert_eq!(v["m"], 2);
        assert_eq!(v["modulus"], serde_json::json!([1, 0, 1]));
        assert_eq!(v["c"], serde_json::json!([1, 0]));
        assert_eq!(v["portrait"], serde_json::json!({"r": 3, "s": 2}));
        let nodes = v["nodes"].as_object().unwrap();
        assert_eq!(nodes.len(), 3);
        assert_eq!(nodes[""], serde_json::json!([4, 0]));
        assert!(nodes.contains_key("a") && nodes.contains_key("b"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn preimage_products_hold(idx in 0usize..6, x0 in 0u64..50) {
            let (p, c) = [(7u64, 1u64), (5, 2), (13, 3), (11, 4), (17, 9), (19, 7)][idx];
            let x0 = x0 % p;
            if let Ok(t) = build_tree(p, c, x0, 4) {
                prop_assert!(t.structure_failures().is_empty());
                let ctx = t.ctx();
                for y in 0..node_count(3) as u64 {
                    let y = TreeWord::from_index(y);
                    for m in 1..=4 - y.len() {
                        prop_assert_eq!(ctx.square(&t.half_product(y, m)), t.half_product_square(y, m));
                    }
                }
            }
        }
    }
}
