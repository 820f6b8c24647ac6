//! Recursively grafted generators at finite depth, subgroup closure, and the order formula.

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

use crate::parity::PortraitParams;
use crate::tree::{packed, TreeAutomorphism, TreeError, TreeWord};

/// Default element budget for [`closure`].
pub const DEFAULT_BUDGET: u64 = 1 << 25;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PinkError {
    #[error("generator index {i} outside 1..={r}")]
    BadIndex { i: usize, r: usize },
    #[error("order formula needs r > s >= 1 with r >= 3 or (r, s) = (2, 1); got ({r}, {s})")]
    InvalidParams { r: usize, s: usize },
    #[error("closure works on depths up to 6, got {0}")]
    DepthTooLarge(usize),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Words of length `< n` on which generator `i` has parity 1.
pub fn generator_support(i: usize, params: &PortraitParams, n: usize) -> Result<Vec<TreeWord>, PinkError> {
    let (r, s) = (params.r(), params.s());
    if i == 0 || i > r {
        return Err(PinkError::BadIndex { i, r });
    }
    let a = |k: usize| vec![crate::tree::Symbol::A; k];
    let mut out = Vec::new();
    if i <= s {
        if i - 1 < n {
            out.push(TreeWord::from_symbols(a(i - 1)));
        }
        return Ok(out);
    }
    // a^{i-s-1} (b a^{l-1})^k a^s with l = r - s
    let l = r - s;
    let mut block = vec![crate::tree::Symbol::B];
    block.extend(a(l - 1));
    let mut k = 0;
    loop {
        let len = (i - s - 1) + k * l + s;
        if len >= n {
            break;
        }
        let mut word = a(i - s - 1);
        for _ in 0..k {
            word.extend(&block);
        }
        word.extend(a(s));
        out.push(TreeWord::from_symbols(word));
        k += 1;
    }
    Ok(out)
}

/// Generator `i` (1-based) at depth `n`.
pub fn pink_generator(i: usize, params: &PortraitParams, n: usize) -> Result<TreeAutomorphism, PinkError> {
    let support = generator_support(i, params, n)?;
    Ok(TreeAutomorphism::from_support(n, support)?)
}

#[derive(Clone, Debug)]
pub struct GeneratorSet {
    pub params: PortraitParams,
    pub depth: usize,
    pub generators: Vec<TreeAutomorphism>,
}

impl GeneratorSet {
    pub fn new(params: PortraitParams, depth: usize) -> Result<GeneratorSet, PinkError> {
        let generators = (1..=params.r())
            .map(|i| pink_generator(i, &params, depth))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GeneratorSet {
            params,
            depth,
            generators,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ClosureReport {
    /// Number of elements found; a lower bound when `complete` is false.
    pub order: u64,
    pub complete: bool,
    pub log2: Option<u32>,
    #[serde(skip)]
    pub elements: Option<Vec<u64>>,
}

enum Seen {
    Bits(Vec<u64>),
    Hash(HashSet<u64>),
}

impl Seen {
    fn new(depth: usize) -> Seen {
        if depth <= 5 {
            let bits = 1usize << crate::tree::node_count(depth);
            Seen::Bits(vec![0; bits.div_ceil(64)])
        } else {
            Seen::Hash(HashSet::new())
        }
    }

    /// Returns true when `v` was not present before.
    fn insert(&mut self, v: u64) -> bool {
        match self {
            Seen::Bits(b) => {
                let (w, m) = ((v / 64) as usize, 1u64 << (v % 64));
                let fresh = b[w] & m == 0;
                b[w] |= m;
                fresh
            }
            Seen::Hash(h) => h.insert(v),
        }
    }
}

/// Breadth-first closure of the generated subgroup, multiplying on the left
/// by generators. Stops once more than `budget` elements are known.
pub fn closure(gens: &GeneratorSet, budget: u64, keep_elements: bool) -> Result<ClosureReport, PinkError> {
    let n = gens.depth;
    if n > packed::MAX_PACKED_DEPTH {
        return Err(PinkError::DepthTooLarge(n));
    }
    let g: Vec<u64> = gens
        .generators
        .iter()
        .map(|x| x.to_packed().expect("depth checked"))
        .collect();
    let mut seen = Seen::new(n);
    let mut queue = vec![0u64];
    seen.insert(0);
    let mut head = 0;
    let mut complete = true;
    'outer: while head < queue.len() {
        let h = queue[head];
        head += 1;
        for &gi in &g {
            let v = packed::compose(n, gi, h);
            if seen.insert(v) {
                queue.push(v);
                if queue.len() as u64 > budget {
                    complete = false;
                    break 'outer;
                }
            }
        }
    }
    let order = queue.len() as u64;
    Ok(ClosureReport {
        order,
        complete,
        log2: (complete && order.is_power_of_two()).then(|| order.trailing_zeros()),
        elements: keep_elements.then_some(queue),
    })
}

/// `log2` of the order of the generated group at depth `n`, piecewise in
/// `(r, s, n)`; also defined for `(r, s) = (2, 1)`.
pub fn pink_log2_order(r: usize, s: usize, n: usize) -> Result<u64, PinkError> {
    if s == 0 || r <= s || (r < 3 && (r, s) != (2, 1)) || n == 0 || n > 62 {
        return Err(PinkError::InvalidParams { r, s });
    }
    let p = |k: usize| 1u64 << k;
    Ok(if n <= r {
        p(n) - 1
    } else if (r, s) == (2, 1) {
        n as u64 + 1
    } else if s == 1 {
        p(n) - 3 * p(n - r) + 2
    } else if (r, s) == (3, 2) {
        p(n) - 5 * p(n - 4) + 2
    } else {
        p(n) - p(n - r + 1) + 1
    })
}
