//! Automorphisms of the finite rooted binary tree.
//!
//! Nodes are words over `{a, b}` stored by heap index: the root is 0, the
//! `a`-child of node `i` is `2i + 1` and the `b`-child is `2i + 2`. An
//! automorphism of depth `n` is one parity bit per node of levels `0..n`,
//! telling whether the two children of that node are exchanged.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Largest depth accepted for a [`TreeAutomorphism`] (2^24 - 1 parity bits).
pub const MAX_DEPTH: usize = 24;

/// Largest word length representable by a [`TreeWord`].
pub const MAX_WORD_LEN: usize = 62;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("depth {0} exceeds the supported maximum")]
    DepthTooLarge(usize),
    #[error("depth mismatch: {0} vs {1}")]
    DepthMismatch(usize, usize),
    #[error("word of length {len} does not fit depth {depth}")]
    WordTooLong { len: usize, depth: usize },
    #[error("restriction depth {m} outside 1..={depth}")]
    RestrictOutOfRange { m: usize, depth: usize },
    #[error("invalid symbol {0:?} in tree word")]
    BadSymbol(char),
    #[error("malformed automorphism encoding: {0}")]
    Malformed(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    A,
    B,
}

impl Symbol {
    pub fn bit(self) -> u64 {
        match self {
            Symbol::A => 0,
            Symbol::B => 1,
        }
    }

    pub fn from_bit(bit: bool) -> Symbol {
        if bit {
            Symbol::B
        } else {
            Symbol::A
        }
    }

    pub fn flip(self) -> Symbol {
        match self {
            Symbol::A => Symbol::B,
            Symbol::B => Symbol::A,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Symbol::A => 'a',
            Symbol::B => 'b',
        }
    }
}

/// A node of the tree, named by its word and stored as its heap index.
///
/// Words of one level occupy a contiguous index range, and within a level
/// the position of a word is its binary value with `a = 0`, `b = 1` and the
/// first symbol most significant.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct TreeWord {
    index: u64,
}

impl TreeWord {
    pub const ROOT: TreeWord = TreeWord { index: 0 };

    pub fn from_index(index: u64) -> TreeWord {
        assert!(index < (1u64 << (MAX_WORD_LEN + 1)) - 1, "heap index out of range");
        TreeWord { index }
    }

    /// First heap index of the given level.
    pub fn level_start(level: usize) -> u64 {
        (1u64 << level) - 1
    }

    pub fn from_level_position(level: usize, position: u64) -> TreeWord {
        assert!(level <= MAX_WORD_LEN && position < (1u64 << level));
        TreeWord {
            index: Self::level_start(level) + position,
        }
    }

    pub fn from_symbols<I: IntoIterator<Item = Symbol>>(symbols: I) -> TreeWord {
        symbols.into_iter().fold(TreeWord::ROOT, |w, s| w.child(s))
    }

    pub fn index(self) -> u64 {
        self.index
    }

    pub fn len(self) -> usize {
        63 - (self.index + 1).leading_zeros() as usize
    }

    pub fn is_empty(self) -> bool {
        self.index == 0
    }

    pub fn position(self) -> u64 {
        self.index - Self::level_start(self.len())
    }

    pub fn child(self, s: Symbol) -> TreeWord {
        assert!(self.len() < MAX_WORD_LEN, "tree word too long");
        TreeWord {
            index: 2 * self.index + 1 + s.bit(),
        }
    }

    pub fn a(self) -> TreeWord {
        self.child(Symbol::A)
    }

    pub fn b(self) -> TreeWord {
        self.child(Symbol::B)
    }

    pub fn parent(self) -> Option<TreeWord> {
        if self.index == 0 {
            None
        } else {
            Some(TreeWord {
                index: (self.index - 1) / 2,
            })
        }
    }

    pub fn last(self) -> Option<Symbol> {
        if self.index == 0 {
            None
        } else {
            Some(Symbol::from_bit(self.index.is_multiple_of(2)))
        }
    }

    /// Symbol at position `k` (0-based from the root side).
    pub fn symbol(self, k: usize) -> Symbol {
        let len = self.len();
        assert!(k < len);
        Symbol::from_bit((self.position() >> (len - 1 - k)) & 1 == 1)
    }

    pub fn symbols(self) -> Vec<Symbol> {
        (0..self.len()).map(|k| self.symbol(k)).collect()
    }

    pub fn concat(self, other: TreeWord) -> TreeWord {
        let len = self.len() + other.len();
        assert!(len <= MAX_WORD_LEN, "tree word too long");
        TreeWord::from_level_position(len, (self.position() << other.len()) | other.position())
    }

    pub fn prefix(self, k: usize) -> TreeWord {
        let len = self.len();
        assert!(k <= len);
        TreeWord::from_level_position(k, self.position() >> (len - k))
    }

    pub fn is_prefix_of(self, other: TreeWord) -> bool {
        self.len() <= other.len() && other.prefix(self.len()) == self
    }

    /// All words of one level, in heap order.
    pub fn level(level: usize) -> impl Iterator<Item = TreeWord> {
        (0..1u64 << level).map(move |p| TreeWord::from_level_position(level, p))
    }

    /// Heap indices of the words `self·w` for all `w` of length `k`; they
    /// form one contiguous range.
    pub fn extension_range(self, k: usize) -> std::ops::Range<u64> {
        let level = self.len() + k;
        let start = Self::level_start(level) + (self.position() << k);
        start..start + (1u64 << k)
    }
}

impl fmt::Display for TreeWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in self.symbols() {
            write!(f, "{}", s.as_char())?;
        }
        Ok(())
    }
}

impl fmt::Debug for TreeWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            write!(f, "ε")
        } else {
            write!(f, "{self}")
        }
    }
}

impl FromStr for TreeWord {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<TreeWord, TreeError> {
        if s == "ε" {
            return Ok(TreeWord::ROOT);
        }
        let mut w = TreeWord::ROOT;
        for ch in s.chars() {
            let sym = match ch {
                'a' => Symbol::A,
                'b' => Symbol::B,
                other => return Err(TreeError::BadSymbol(other)),
            };
            if w.len() == MAX_WORD_LEN {
                return Err(TreeError::WordTooLong {
                    len: s.chars().count(),
                    depth: MAX_WORD_LEN,
                });
            }
            w = w.child(sym);
        }
        Ok(w)
    }
}

impl Serialize for TreeWord {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TreeWord {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<TreeWord, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A depth-`n` automorphism: parity bit `idx(w)` is `Par(σ, w)` for every
/// node `w` of length `< n`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct TreeAutomorphism {
    depth: usize,
    bits: Vec<u64>,
}

fn check_depth(n: usize) -> Result<(), TreeError> {
    if n == 0 {
        Err(TreeError::ZeroDepth)
    } else if n > MAX_DEPTH {
        Err(TreeError::DepthTooLarge(n))
    } else {
        Ok(())
    }
}

/// Number of parity bits of a depth-`n` automorphism.
pub fn node_count(n: usize) -> usize {
    (1usize << n) - 1
}

impl TreeAutomorphism {
    pub fn identity(n: usize) -> Result<Self, TreeError> {
        check_depth(n)?;
        Ok(TreeAutomorphism {
            depth: n,
            bits: vec![0; node_count(n).div_ceil(64)],
        })
    }

    pub fn root_swap(n: usize) -> Result<Self, TreeError> {
        let mut t = Self::identity(n)?;
        t.bits[0] = 1;
        Ok(t)
    }

    /// Builds the automorphism whose parity at `w` is `f(w)`.
    pub fn from_fn<F: FnMut(TreeWord) -> bool>(n: usize, mut f: F) -> Result<Self, TreeError> {
        let mut t = Self::identity(n)?;
        for i in 0..node_count(n) {
            if f(TreeWord::from_index(i as u64)) {
                t.set(i);
            }
        }
        Ok(t)
    }

    /// Parity 1 exactly on the given nodes; nodes at or beyond the depth are dropped.
    pub fn from_support<I: IntoIterator<Item = TreeWord>>(n: usize, support: I) -> Result<Self, TreeError> {
        let mut t = Self::identity(n)?;
        for w in support {
            if w.len() < n {
                t.set(w.index() as usize);
            }
        }
        Ok(t)
    }

    /// Builds from a packed parity vector (bit `i` = node `i`); depth at most 6.
    pub fn from_packed(n: usize, v: u64) -> Result<Self, TreeError> {
        check_depth(n)?;
        if n > packed::MAX_PACKED_DEPTH {
            return Err(TreeError::DepthTooLarge(n));
        }
        let mask = packed::mask(n);
        if v & !mask != 0 {
            return Err(TreeError::Malformed(format!("packed vector {v:#x} has bits beyond depth {n}")));
        }
        Ok(TreeAutomorphism { depth: n, bits: vec![v] })
    }

    /// The parity vector as one integer, when the depth is at most 6.
    pub fn to_packed(&self) -> Option<u64> {
        (self.depth <= packed::MAX_PACKED_DEPTH).then(|| self.bits[0])
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn node_count(&self) -> usize {
        node_count(self.depth)
    }

    #[inline]
    pub fn bit(&self, idx: usize) -> bool {
        (self.bits[idx / 64] >> (idx % 64)) & 1 == 1
    }

    fn set(&mut self, idx: usize) {
        self.bits[idx / 64] |= 1 << (idx % 64);
    }

    fn put(&mut self, idx: usize, v: bool) {
        if v {
            self.set(idx);
        }
    }

    pub fn par(&self, w: TreeWord) -> Result<bool, TreeError> {
        if w.len() >= self.depth {
            return Err(TreeError::WordTooLong {
                len: w.len(),
                depth: self.depth - 1,
            });
        }
        Ok(self.bit(w.index() as usize))
    }

    /// `(-1)^Par(σ, w)`.
    pub fn sgn(&self, w: TreeWord) -> Result<i8, TreeError> {
        Ok(if self.par(w)? { -1 } else { 1 })
    }

    pub fn support(&self) -> Vec<TreeWord> {
        (0..self.node_count())
            .filter(|&i| self.bit(i))
            .map(|i| TreeWord::from_index(i as u64))
            .collect()
    }

    pub fn apply(&self, w: TreeWord) -> Result<TreeWord, TreeError> {
        if w.len() > self.depth {
            return Err(TreeError::WordTooLong {
                len: w.len(),
                depth: self.depth,
            });
        }
        let mut src = TreeWord::ROOT;
        let mut img = TreeWord::ROOT;
        for s in w.symbols() {
            let flip = self.bit(src.index() as usize);
            img = img.child(if flip { s.flip() } else { s });
            src = src.child(s);
        }
        Ok(img)
    }

    /// Heap index of `σ(x)` for every node `x` of levels `0..=depth`.
    pub fn image_table(&self) -> Vec<u64> {
        let total = node_count(self.depth + 1);
        let mut img = vec![0u64; total];
        for x in 0..self.node_count() {
            let ix = img[x];
            let t = self.bit(x) as u64;
            img[2 * x + 1] = 2 * ix + 1 + t;
            img[2 * x + 2] = 2 * ix + 2 - t;
        }
        img
    }

    /// `self ∘ tau`: first `tau`, then `self`.
    pub fn compose(&self, tau: &TreeAutomorphism) -> Result<TreeAutomorphism, TreeError> {
        if self.depth != tau.depth {
            return Err(TreeError::DepthMismatch(self.depth, tau.depth));
        }
        let n = self.node_count();
        let mut out = TreeAutomorphism::identity(self.depth)?;
        let mut img = vec![0u64; n];
        for x in 0..n {
            let ix = img[x] as usize;
            let t = tau.bit(x);
            out.put(x, self.bit(ix) ^ t);
            if 2 * x + 2 < n {
                let t = t as u64;
                img[2 * x + 1] = 2 * ix as u64 + 1 + t;
                img[2 * x + 2] = 2 * ix as u64 + 2 - t;
            }
        }
        Ok(out)
    }

    pub fn invert(&self) -> TreeAutomorphism {
        let img = self.image_table();
        let n = self.node_count();
        let mut out = TreeAutomorphism::identity(self.depth).expect("depth already validated");
        for x in 0..n {
            out.put(img[x] as usize, self.bit(x));
        }
        out
    }

    pub fn restrict(&self, m: usize) -> Result<TreeAutomorphism, TreeError> {
        if m == 0 || m > self.depth {
            return Err(TreeError::RestrictOutOfRange { m, depth: self.depth });
        }
        let mut out = TreeAutomorphism::identity(m)?;
        for i in 0..node_count(m) {
            out.put(i, self.bit(i));
        }
        Ok(out)
    }

    /// The automorphism fixing `a` and `b` that acts as `alpha` above `a`
    /// and as `beta` above `b`; its depth is one more than theirs.
    pub fn graft(alpha: &TreeAutomorphism, beta: &TreeAutomorphism) -> Result<TreeAutomorphism, TreeError> {
        if alpha.depth != beta.depth {
            return Err(TreeError::DepthMismatch(alpha.depth, beta.depth));
        }
        let mut out = TreeAutomorphism::identity(alpha.depth + 1)?;
        let (ra, rb) = (TreeWord::ROOT.a(), TreeWord::ROOT.b());
        for i in 0..alpha.node_count() {
            let w = TreeWord::from_index(i as u64);
            out.put(ra.concat(w).index() as usize, alpha.bit(i));
            out.put(rb.concat(w).index() as usize, beta.bit(i));
        }
        Ok(out)
    }

    pub fn is_identity(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// XOR of the parities of all nodes on one level.
    pub fn level_parity(&self, level: usize) -> bool {
        assert!(level < self.depth);
        let range = TreeWord::ROOT.extension_range(level);
        range.fold(false, |acc, i| acc ^ self.bit(i as usize))
    }

    pub fn encode(&self) -> String {
        let nbytes = self.node_count().div_ceil(8);
        let mut s = format!("ATn:{}:", self.depth);
        for k in 0..nbytes {
            let byte = (self.bits[k / 8] >> (8 * (k % 8))) & 0xff;
            s.push_str(&format!("{byte:02x}"));
        }
        s
    }

    pub fn decode(text: &str) -> Result<TreeAutomorphism, TreeError> {
        let bad = |msg: &str| TreeError::Malformed(msg.to_string());
        let mut parts = text.split(':');
        let (tag, depth, hex) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(t), Some(d), Some(h), None) => (t, d, h),
            _ => return Err(bad("expected ATn:<depth>:<hex>")),
        };
        if tag != "ATn" {
            return Err(bad("header must be ATn"));
        }
        if depth.is_empty() || !depth.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad("depth is not a decimal integer"));
        }
        let n: usize = depth.parse().map_err(|_| bad("depth out of range"))?;
        let mut out = TreeAutomorphism::identity(n)?;
        let bits = out.node_count();
        let nbytes = bits.div_ceil(8);
        if hex.len() != 2 * nbytes {
            return Err(TreeError::Malformed(format!(
                "expected {} hex digits for depth {n}, found {}",
                2 * nbytes,
                hex.len()
            )));
        }
        if !hex.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
            return Err(bad("non-hex or uppercase characters"));
        }
        for k in 0..nbytes {
            let byte = u64::from_str_radix(&hex[2 * k..2 * k + 2], 16).expect("checked hex");
            out.bits[k / 8] |= byte << (8 * (k % 8));
        }
        let pad = bits % 64;
        if pad != 0 && out.bits[bits / 64] >> pad != 0 {
            return Err(bad("nonzero pad bits"));
        }
        Ok(out)
    }
}

impl fmt::Display for TreeAutomorphism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

impl fmt::Debug for TreeAutomorphism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

impl FromStr for TreeAutomorphism {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self, TreeError> {
        TreeAutomorphism::decode(s)
    }
}

impl Serialize for TreeAutomorphism {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.encode())
    }
}

impl<'de> Deserialize<'de> for TreeAutomorphism {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        TreeAutomorphism::decode(&s).map_err(serde::de::Error::custom)
    }
}

/// Parity vectors of depth at most 6 packed into one `u64`, used by the
/// counting and closure loops.
pub mod packed {
    pub const MAX_PACKED_DEPTH: usize = 6;

    pub fn mask(n: usize) -> u64 {
        debug_assert!(n <= MAX_PACKED_DEPTH);
        (1u64 << super::node_count(n)) - 1
    }

    /// Packed form of `s ∘ t` at depth `n`.
    #[inline]
    pub fn compose(n: usize, s: u64, t: u64) -> u64 {
        let nodes = super::node_count(n);
        let inner = super::node_count(n - 1);
        let mut img = [0u8; 64];
        let mut out = 0u64;
        for x in 0..nodes {
            let ix = img[x] as u32;
            let tb = (t >> x) & 1;
            out |= (((s >> ix) & 1) ^ tb) << x;
            if x < inner {
                img[2 * x + 1] = (2 * ix + 1 + tb as u32) as u8;
                img[2 * x + 2] = (2 * ix + 2 - tb as u32) as u8;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &str) -> TreeWord {
        s.parse().unwrap()
    }

    /// Parities read back from an action given as a function on words.
    fn parities_from_action<F: Fn(TreeWord) -> TreeWord>(n: usize, act: F) -> TreeAutomorphism {
        TreeAutomorphism::from_fn(n, |x| act(x.a()).last() == Some(Symbol::B)).unwrap()
    }

    fn all_of_depth(n: usize) -> Vec<TreeAutomorphism> {
        (0..1u64 << node_count(n))
            .map(|v| TreeAutomorphism::from_packed(n, v).unwrap())
            .collect()
    }

    #[test]
    fn heap_index_is_a_bijection() {
        let mut seen = Vec::new();
        for level in 0..=5 {
            for word in TreeWord::level(level) {
                assert_eq!(word.len(), level);
                let back: TreeWord = word.to_string().parse().unwrap();
                assert_eq!(back, word);
                seen.push(word.index());
            }
        }
        let expected: Vec<u64> = (0..63).collect();
        assert_eq!(seen, expected);
        assert_eq!(w("ab").index(), 4);
        assert_eq!(w("ba").index(), 5);
        assert_eq!(w("ab").concat(w("ba")), w("abba"));
        assert_eq!(w("abba").prefix(2), w("ab"));
        assert_eq!(w("ab").extension_range(2), w("abaa").index()..w("abbb").index() + 1);
    }

    #[test]
    fn identity_and_root_swap() {
        let id = TreeAutomorphism::identity(4).unwrap();
        assert!(TreeWord::level(3).all(|x| !id.par(x).unwrap()));
        assert_eq!(TreeAutomorphism::identity(0), Err(TreeError::ZeroDepth));
        let tau = TreeAutomorphism::root_swap(2).unwrap();
        assert_eq!(tau.apply(w("ab")).unwrap(), w("bb"));
        assert_eq!(tau.apply(w("aa")).unwrap(), w("ba"));
        let tau3 = TreeAutomorphism::root_swap(3).unwrap();
        assert!(tau3.par(TreeWord::ROOT).unwrap());
        assert!(!tau3.par(w("a")).unwrap());
        assert!(tau3.compose(&tau3).unwrap().is_identity());
        assert_eq!(tau3.invert(), tau3);
    }

    #[test]
    fn apply_prefix_rule() {
        let sigma = TreeAutomorphism::from_support(2, [w("a")]).unwrap();
        assert_eq!(sigma.apply(w("ab")).unwrap(), w("aa"));
        assert_eq!(sigma.apply(w("ba")).unwrap(), w("ba"));
        assert!(sigma.apply(w("aaa")).is_err());
        assert!(sigma.par(w("aa")).is_err());
    }

    #[test]
    fn group_order_at_small_depth() {
        for (n, order) in [(1, 2usize), (2, 8), (3, 128)] {
            let elems = all_of_depth(n);
            let distinct: std::collections::HashSet<String> = elems
                .iter()
                .map(|s| {
                    TreeWord::level(n)
                        .map(|x| s.apply(x).unwrap().to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                })
                .collect();
            assert_eq!(distinct.len(), order);
        }
    }

    #[test]
    fn compose_matches_composed_actions_exhaustively() {
        for n in 1..=3 {
            let elems = all_of_depth(n);
            for s in &elems {
                for t in &elems {
                    let st = s.compose(t).unwrap();
                    let oracle = parities_from_action(n, |x| s.apply(t.apply(x).unwrap()).unwrap());
                    assert_eq!(st, oracle);
                    for x in 0..node_count(n) as u64 {
                        let x = TreeWord::from_index(x);
                        let lhs = st.par(x).unwrap();
                        let rhs = s.par(t.apply(x).unwrap()).unwrap() ^ t.par(x).unwrap();
                        assert_eq!(lhs, rhs);
                        let sg = st.sgn(x).unwrap();
                        assert_eq!(sg, s.sgn(t.apply(x).unwrap()).unwrap() * t.sgn(x).unwrap());
                    }
                    let ps = packed::compose(n, s.to_packed().unwrap(), t.to_packed().unwrap());
                    assert_eq!(ps, st.to_packed().unwrap());
                }
            }
        }
    }

    #[test]
    fn double_inverse_exhaustive_depth_three() {
        for s in all_of_depth(3) {
            assert_eq!(s.invert().invert(), s);
            assert!(s.compose(&s.invert()).unwrap().is_identity());
        }
    }

    #[test]
    fn graft_and_restrict() {
        let id2 = TreeAutomorphism::identity(2).unwrap();
        assert_eq!(TreeAutomorphism::graft(&id2, &id2).unwrap(), TreeAutomorphism::identity(3).unwrap());
        let g = TreeAutomorphism::graft(
            &TreeAutomorphism::root_swap(1).unwrap(),
            &TreeAutomorphism::identity(1).unwrap(),
        )
        .unwrap();
        assert_eq!(g.support(), vec![w("a")]);
        assert!(TreeAutomorphism::graft(&id2, &TreeAutomorphism::identity(3).unwrap()).is_err());
        assert!(id2.restrict(0).is_err());
        assert!(id2.restrict(3).is_err());
    }

    #[test]
    fn encoding_examples() {
        assert_eq!(TreeAutomorphism::identity(2).unwrap().encode(), "ATn:2:00");
        assert_eq!(TreeAutomorphism::root_swap(2).unwrap().encode(), "ATn:2:01");
        assert_eq!(TreeAutomorphism::identity(1).unwrap().encode(), "ATn:1:00");
        let s = TreeAutomorphism::from_support(4, [w("bba")]).unwrap();
        // node bba has heap index 13: byte 1, bit 5
        assert_eq!(s.encode(), "ATn:4:0020");
        for bad in [
            "ATn:2",
            "ATx:2:00",
            "ATn:2:0",
            "ATn:2:000",
            "ATn:2:0g",
            "ATn:2:0A",
            "ATn:2:08",
            "ATn:0:",
            "ATn:+2:00",
            "ATn:2:00:00",
        ] {
            assert!(TreeAutomorphism::decode(bad).is_err(), "{bad}");
        }
    }

    fn arb_aut(max_depth: usize) -> impl Strategy<Value = TreeAutomorphism> {
        (1..=max_depth, any::<u64>()).prop_map(|(n, v)| TreeAutomorphism::from_packed(n, v & packed::mask(n)).unwrap())
    }

    fn arb_pair(n: usize) -> impl Strategy<Value = (TreeAutomorphism, TreeAutomorphism)> {
        (any::<u64>(), any::<u64>()).prop_map(move |(a, b)| {
            (
                TreeAutomorphism::from_packed(n, a & packed::mask(n)).unwrap(),
                TreeAutomorphism::from_packed(n, b & packed::mask(n)).unwrap(),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn encode_round_trip(s in arb_aut(6)) {
            prop_assert_eq!(TreeAutomorphism::decode(&s.encode()).unwrap(), s);
        }

        #[test]
        fn apply_is_a_level_bijection(s in arb_aut(6)) {
            for level in 0..=s.depth() {
                let mut imgs: Vec<TreeWord> = TreeWord::level(level).map(|x| s.apply(x).unwrap()).collect();
                imgs.sort();
                prop_assert_eq!(imgs, TreeWord::level(level).collect::<Vec<_>>());
            }
        }

        #[test]
        fn restrict_is_a_homomorphism((s, t) in arb_pair(5), m in 1usize..=5) {
            let lhs = s.compose(&t).unwrap().restrict(m).unwrap();
            let rhs = s.restrict(m).unwrap().compose(&t.restrict(m).unwrap()).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn graft_then_restrict_recovers_arguments((s, t) in arb_pair(4), m in 1usize..=4) {
            let g = TreeAutomorphism::graft(&s, &t).unwrap();
            prop_assert_eq!(g.restrict(1).unwrap(), TreeAutomorphism::identity(1).unwrap());
            let g_restricted = g.restrict(m + 1).unwrap();
            let expected = TreeAutomorphism::graft(&s.restrict(m).unwrap(), &t.restrict(m).unwrap()).unwrap();
            prop_assert_eq!(g_restricted, expected);
        }

        #[test]
        fn inverse_is_two_sided(s in arb_aut(6)) {
            let inv = s.invert();
            prop_assert!(s.compose(&inv).unwrap().is_identity());
            prop_assert!(inv.compose(&s).unwrap().is_identity());
        }

        #[test]
        fn packed_compose_matches((s, t) in arb_pair(6)) {
            let st = s.compose(&t).unwrap();
            prop_assert_eq!(packed::compose(6, s.to_packed().unwrap(), t.to_packed().unwrap()), st.to_packed().unwrap());
        }

        #[test]
        fn compose_acts_as_composition_at_depth_8(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s = TreeAutomorphism::from_fn(8, |_| rng.gen()).unwrap();
            let t = TreeAutomorphism::from_fn(8, |_| rng.gen()).unwrap();
            let st = s.compose(&t).unwrap();
            for i in 0..64u64 {
                let x = TreeWord::from_level_position(8, (i * 37) % 256);
                prop_assert_eq!(st.apply(x).unwrap(), s.apply(t.apply(x).unwrap()).unwrap());
            }
        }
    }
}
