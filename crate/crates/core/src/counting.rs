//! Exact counting over `Aut(T_n)`: predicate counts for the four parity
//! groups, kernel counts on the top level, and the order table that ties
//! them to the closure and the order formula.
//!
//! Predicates are compiled to bitmask forms over the packed parity vector,
//! so one evaluation is a handful of `AND` + `popcount` steps.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::parity::{p_forms, r_forms, GroupVariant, ParityForm, PortraitParams, TailCase};
use crate::pink::{closure, pink_log2_order, GeneratorSet, PinkError};
use crate::tree::{node_count, TreeWord};

/// Largest depth for exhaustive enumeration (2^31 parity vectors).
pub const MAX_EXHAUSTIVE_DEPTH: usize = 5;

/// Number of top bits used to split the enumeration into shards.
pub const SHARD_BITS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CountError {
    #[error("depth {0} is too large for exhaustive enumeration (max {MAX_EXHAUSTIVE_DEPTH})")]
    TooLarge(usize),
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("kernel block of {0} bits is too large to enumerate")]
    BlockTooLarge(usize),
    #[error("solution count {0} of a linear system is not a power of two")]
    NotPowerOfTwo(u64),
    #[error(transparent)]
    Pink(#[from] PinkError),
}

/// `Σ bits(lin) + Σ_k (Σ bits(qa_k))(Σ bits(qb_k))` mod 2 over a packed vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MaskForm {
    lin: u64,
    quad: [(u64, u64); 2],
    nquad: usize,
}

fn mask_of(nodes: &[u64]) -> u64 {
    nodes.iter().fold(0u64, |m, &i| {
        assert!(i < 64, "node index beyond packed range");
        m ^ (1 << i)
    })
}

impl MaskForm {
    pub fn from_form(f: &ParityForm) -> MaskForm {
        assert!(f.products.len() <= 2);
        let mut out = MaskForm {
            lin: mask_of(&f.linear),
            ..Default::default()
        };
        for (l, r) in &f.products {
            out.quad[out.nquad] = (mask_of(l), mask_of(r));
            out.nquad += 1;
        }
        out
    }

    /// Sum of two forms; each may carry at most one product term.
    pub fn plus(&self, other: &MaskForm) -> MaskForm {
        assert!(self.nquad + other.nquad <= 2);
        let mut out = *self;
        out.lin ^= other.lin;
        for k in 0..other.nquad {
            out.quad[out.nquad] = other.quad[k];
            out.nquad += 1;
        }
        out
    }

    #[inline(always)]
    pub fn eval(&self, v: u64) -> bool {
        let mut c = (v & self.lin).count_ones();
        for k in 0..self.nquad {
            let (a, b) = self.quad[k];
            c ^= (v & a).count_ones() & (v & b).count_ones();
        }
        c & 1 == 1
    }

    /// All bits this form reads.
    pub fn support(&self) -> u64 {
        (0..self.nquad).fold(self.lin, |m, k| m | self.quad[k].0 | self.quad[k].1)
    }
}

/// A membership predicate as a list of forms that must all vanish.
#[derive(Clone, Debug)]
pub struct CompiledPredicate {
    depth: usize,
    forms: Vec<MaskForm>,
}

fn all_equal(forms: Vec<MaskForm>) -> Vec<MaskForm> {
    match forms.split_first() {
        None => Vec::new(),
        Some((first, rest)) => rest.iter().map(|f| f.plus(first)).collect(),
    }
}

impl CompiledPredicate {
    pub fn new(params: &PortraitParams, n: usize, variant: GroupVariant) -> CompiledPredicate {
        assert!((1..=crate::tree::packed::MAX_PACKED_DEPTH).contains(&n));
        let p: Vec<MaskForm> = p_forms(params, n)
            .iter()
            .flat_map(|(_, fa, fb)| [MaskForm::from_form(fa), MaskForm::from_form(fb)])
            .collect();
        let r: Vec<MaskForm> = r_forms(params, n).iter().map(|(_, f)| MaskForm::from_form(f)).collect();
        let case = params.case();
        let mut forms = match variant {
            GroupVariant::Mp => all_equal(p),
            GroupVariant::Bp => p,
            GroupVariant::TMp => match case {
                TailCase::LongTail => all_equal(p),
                TailCase::SpecialLongTail => {
                    let mut f = all_equal(p);
                    f.extend(all_equal(r));
                    f
                }
                TailCase::ShortTail => {
                    let mut f = p;
                    f.extend(all_equal(r));
                    f
                }
            },
            GroupVariant::TBp => {
                let mut f = p;
                if case != TailCase::LongTail {
                    f.extend(r);
                }
                f
            }
        };
        forms.retain(|f| f.support() != 0 || f.eval(0));
        CompiledPredicate { depth: n, forms }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn forms(&self) -> &[MaskForm] {
        &self.forms
    }

    #[inline]
    pub fn eval(&self, v: u64) -> bool {
        self.forms.iter().all(|f| !f.eval(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountMethod {
    Exhaustive,
    Sharded,
    KernelBlock,
    Direct,
}

impl CountMethod {
    pub fn name(self) -> &'static str {
        match self {
            CountMethod::Exhaustive => "exhaustive",
            CountMethod::Sharded => "sharded",
            CountMethod::KernelBlock => "kernel-block",
            CountMethod::Direct => "direct",
        }
    }
}

fn secs<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

fn exact_log2(count: u64) -> Option<u32> {
    count.is_power_of_two().then(|| count.trailing_zeros())
}

#[derive(Clone, Debug, Serialize)]
pub struct CountReport {
    pub r: usize,
    pub s: usize,
    pub n: usize,
    pub variant: GroupVariant,
    pub count: u64,
    pub log2: Option<u32>,
    pub method: CountMethod,
    #[serde(serialize_with = "secs")]
    pub elapsed: Duration,
}

fn count_exhaustive(pred: &CompiledPredicate) -> u64 {
    let total = 1u64 << node_count(pred.depth);
    (0..total).filter(|&v| pred.eval(v)).count() as u64
}

/// Shards fix the top `SHARD_BITS` bits of the vector (all on the top
/// level). Inside a shard, forms that read only the lower levels are
/// checked once per lower-level pattern before the free top bits are
/// enumerated.
fn count_sharded(pred: &CompiledPredicate, workers: usize) -> u64 {
    let n = pred.depth;
    let total_bits = node_count(n);
    let low_bits = node_count(n - 1);
    let top_bits = total_bits - low_bits;
    let shard_bits = SHARD_BITS.min(top_bits);
    let free_top = top_bits - shard_bits;
    let low_mask = (1u64 << low_bits) - 1;
    let (lower, upper): (Vec<MaskForm>, Vec<MaskForm>) =
        pred.forms.iter().partition(|f| f.support() & !low_mask == 0);
    let shards = 1usize << shard_bits;
    let next = AtomicUsize::new(0);
    let results = Mutex::new(vec![0u64; shards]);
    let work = || loop {
        let k = next.fetch_add(1, Ordering::Relaxed);
        if k >= shards {
            break;
        }
        let fixed = (k as u64) << (total_bits - shard_bits);
        let mut count = 0u64;
        for low in 0..1u64 << low_bits {
            if lower.iter().any(|f| f.eval(low)) {
                continue;
            }
            let base = fixed | low;
            for t in 0..1u64 << free_top {
                let v = base | (t << low_bits);
                if upper.iter().all(|f| !f.eval(v)) {
                    count += 1;
                }
            }
        }
        results.lock().expect("no worker panics while holding the lock")[k] = count;
    };
    let workers = workers.clamp(1, shards);
    std::thread::scope(|scope| {
        for _ in 1..workers {
            scope.spawn(work);
        }
        work();
    });
    let per_shard = results.into_inner().expect("workers finished");
    per_shard.iter().sum()
}

/// Number of `σ ∈ Aut(T_n)` in the given group, by full enumeration.
pub fn count_predicate(
    n: usize,
    variant: GroupVariant,
    params: &PortraitParams,
    method: CountMethod,
    workers: usize,
) -> Result<CountReport, CountError> {
    if n == 0 {
        return Err(CountError::ZeroDepth);
    }
    if n > MAX_EXHAUSTIVE_DEPTH {
        return Err(CountError::TooLarge(n));
    }
    let start = Instant::now();
    let pred = CompiledPredicate::new(params, n, variant);
    let (count, method) = match method {
        CountMethod::Exhaustive => (count_exhaustive(&pred), CountMethod::Exhaustive),
        _ => (count_sharded(&pred, workers), CountMethod::Sharded),
    };
    Ok(CountReport {
        r: params.r(),
        s: params.s(),
        n,
        variant,
        count,
        log2: exact_log2(count),
        method,
        elapsed: start.elapsed(),
    })
}

/// Kernel of restriction to depth `n - 1`: `S` inside `Bp`, `TS` inside `TBp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum KernelVariant {
    S,
    #[serde(rename = "tS")]
    TS,
}

impl KernelVariant {
    pub fn name(self) -> &'static str {
        match self {
            KernelVariant::S => "S",
            KernelVariant::TS => "tS",
        }
    }

    fn group(self) -> GroupVariant {
        match self {
            KernelVariant::S => GroupVariant::Bp,
            KernelVariant::TS => GroupVariant::TBp,
        }
    }
}

impl std::str::FromStr for KernelVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "S" | "s" => Ok(KernelVariant::S),
            "tS" | "ts" | "TS" => Ok(KernelVariant::TS),
            _ => Err(format!("unknown kernel variant {s:?} (expected S or tS)")),
        }
    }
}

/// Closed-form `log2` of the kernel size.
pub fn kernel_log2_formula(params: &PortraitParams, n: usize, variant: KernelVariant) -> u64 {
    assert!(n >= 1);
    let top = 1u64 << (n - 1);
    let r = params.r();
    if n <= r {
        return top;
    }
    match (variant, params.case()) {
        (KernelVariant::TS, TailCase::SpecialLongTail) if n >= 5 => top - 5 * (1 << (n - 5)),
        (KernelVariant::TS, TailCase::ShortTail) => top - 3 * (1 << (n - r - 1)),
        _ => top - (1 << (n - r)),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelReport {
    pub r: usize,
    pub s: usize,
    pub n: usize,
    pub variant: KernelVariant,
    /// Count from enumerating every top-level pattern against the group predicate.
    pub direct_count: Option<u64>,
    pub direct_log2: Option<u32>,
    /// `log2` of the product of per-block solution counts of the kernel equations.
    pub block_log2: u64,
    pub formula_log2: u64,
    pub agree: bool,
    #[serde(serialize_with = "secs")]
    pub elapsed: Duration,
}

/// Parity constraints on top-level nodes; each list of heap indices must
/// have an even number of parity-1 nodes.
fn kernel_equations(params: &PortraitParams, n: usize, variant: KernelVariant) -> Vec<(usize, Vec<u64>)> {
    let r = params.r();
    let mut eqs = Vec::new();
    if n <= r {
        return eqs;
    }
    let anchor = n - r - 1;
    for x in TreeWord::level(anchor) {
        eqs.push((anchor, x.a().extension_range(r - 1).collect()));
        eqs.push((anchor, x.b().extension_range(r - 1).collect()));
        if variant == KernelVariant::TS && params.case() == TailCase::ShortTail {
            let mut nodes: Vec<u64> = x.a().b().extension_range(r - 2).collect();
            nodes.extend(x.b().b().extension_range(r - 2));
            eqs.push((anchor, nodes));
        }
    }
    if variant == KernelVariant::TS && params.case() == TailCase::SpecialLongTail && n >= 5 {
        for y in TreeWord::level(n - 5) {
            let mut nodes = Vec::new();
            for w in y.extension_range(2).map(TreeWord::from_index) {
                nodes.extend(w.a().extension_range(1));
            }
            eqs.push((n - 5, nodes));
        }
    }
    eqs
}

fn block_log2(params: &PortraitParams, n: usize, variant: KernelVariant) -> Result<u64, CountError> {
    let eqs = kernel_equations(params, n, variant);
    let top = 1u64 << (n - 1);
    let Some(block_level) = eqs.iter().map(|(l, _)| *l).min() else {
        return Ok(top);
    };
    let width = n - 1 - block_level;
    let block_bits = 1usize << width;
    if block_bits > 24 {
        return Err(CountError::BlockTooLarge(block_bits));
    }
    let mut total = 0u64;
    for z in TreeWord::level(block_level) {
        let range = z.extension_range(width);
        let local: Vec<u64> = eqs
            .iter()
            .filter(|(_, nodes)| range.contains(&nodes[0]))
            .map(|(_, nodes)| {
                nodes.iter().fold(0u64, |m, &i| {
                    assert!(range.contains(&i), "equation crosses block boundary");
                    m | 1 << (i - range.start)
                })
            })
            .collect();
        let solutions = (0..1u64 << block_bits)
            .filter(|&t| local.iter().all(|&m| (t & m).count_ones() % 2 == 0))
            .count() as u64;
        total += exact_log2(solutions).ok_or(CountError::NotPowerOfTwo(solutions))? as u64;
    }
    Ok(total)
}

/// Counts the kernel two ways and compares with the closed form.
pub fn kernel_count(params: &PortraitParams, n: usize, variant: KernelVariant) -> Result<KernelReport, CountError> {
    if n == 0 {
        return Err(CountError::ZeroDepth);
    }
    let start = Instant::now();
    let direct_count = (n <= MAX_EXHAUSTIVE_DEPTH).then(|| {
        let pred = CompiledPredicate::new(params, n, variant.group());
        let shift = node_count(n - 1);
        (0..1u64 << (1u64 << (n - 1)))
            .filter(|&t| pred.eval(t << shift))
            .count() as u64
    });
    let direct_log2 = direct_count.and_then(exact_log2);
    let block = block_log2(params, n, variant)?;
    let formula = kernel_log2_formula(params, n, variant);
    let agree = block == formula && direct_count.is_none_or(|_| direct_log2.map(u64::from) == Some(formula));
    Ok(KernelReport {
        r: params.r(),
        s: params.s(),
        n,
        variant,
        direct_count,
        direct_log2,
        block_log2: block,
        formula_log2: formula,
        agree,
        elapsed: start.elapsed(),
    })
}

#[derive(Clone, Copy, Debug)]
pub struct TableOptions {
    pub budget: u64,
    pub predicate_max_n: usize,
    pub workers: usize,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions {
            budget: crate::pink::DEFAULT_BUDGET,
            predicate_max_n: MAX_EXHAUSTIVE_DEPTH,
            workers: 1,
        }
    }
}

/// One measured group order: `log2` when a power of two, otherwise the raw count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Log2(u64),
    Raw(u64),
    Skipped,
}

impl Cell {
    fn from_count(count: u64) -> Cell {
        exact_log2(count).map_or(Cell::Raw(count), |l| Cell::Log2(l as u64))
    }

    pub fn log2(self) -> Option<u64> {
        match self {
            Cell::Log2(l) => Some(l),
            _ => None,
        }
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Log2(l) => write!(f, "{l}"),
            Cell::Raw(c) => write!(f, "raw:{c}"),
            Cell::Skipped => write!(f, "skipped"),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OrderRow {
    pub r: usize,
    pub s: usize,
    pub n: usize,
    pub log2_formula: u64,
    pub log2_closure: Cell,
    pub log2_predicate: Cell,
    /// `log2` of the top-level kernel (block product), for `n >= 2`.
    pub log2_kernel: Option<u64>,
    /// Whether `|group_{n-1}| · |kernel_n| = 2^formula`.
    pub recursion_ok: Option<bool>,
    pub agree: bool,
}

impl OrderRow {
    pub const CSV_HEADER: &'static str = "r,s,n,log2_formula,log2_closure,log2_predicate,agree";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.r, self.s, self.n, self.log2_formula, self.log2_closure, self.log2_predicate, self.agree
        )
    }
}

/// Formula, closure, predicate count and kernel recursion for `n = 1..=n_max`.
pub fn verify_order_table(
    params: &PortraitParams,
    n_max: usize,
    opts: &TableOptions,
) -> Result<Vec<OrderRow>, CountError> {
    let mut rows: Vec<OrderRow> = Vec::new();
    for n in 1..=n_max {
        let formula = pink_log2_order(params.r(), params.s(), n)?;
        let log2_closure = if n <= crate::tree::packed::MAX_PACKED_DEPTH && formula <= 63 && (1u64 << formula) <= opts.budget {
            let rep = closure(&GeneratorSet::new(*params, n)?, opts.budget, false)?;
            if rep.complete {
                Cell::from_count(rep.order)
            } else {
                Cell::Skipped
            }
        } else {
            Cell::Skipped
        };
        let log2_predicate = if n <= opts.predicate_max_n.min(MAX_EXHAUSTIVE_DEPTH) {
            let rep = count_predicate(n, GroupVariant::TBp, params, CountMethod::Sharded, opts.workers)?;
            Cell::from_count(rep.count)
        } else {
            Cell::Skipped
        };
        let (log2_kernel, recursion_ok) = if n >= 2 {
            let kernel = block_log2(params, n, KernelVariant::TS)?;
            let prev = rows.last().expect("previous row");
            let prev_log2 = prev
                .log2_closure
                .log2()
                .or(prev.log2_predicate.log2())
                .unwrap_or(prev.log2_formula);
            (Some(kernel), Some(prev_log2 + kernel == formula))
        } else {
            (None, None)
        };
        let cell_ok = |c: Cell| match c {
            Cell::Log2(l) => l == formula,
            Cell::Raw(_) => false,
            Cell::Skipped => true,
        };
        let agree = cell_ok(log2_closure) && cell_ok(log2_predicate) && recursion_ok != Some(false);
        rows.push(OrderRow {
            r: params.r(),
            s: params.s(),
            n,
            log2_formula: formula,
            log2_closure,
            log2_predicate,
            log2_kernel,
            recursion_ok,
            agree,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parity::membership;
    use crate::tree::{packed, TreeAutomorphism};
    use proptest::prelude::*;

    fn params(r: usize, s: usize) -> PortraitParams {
        PortraitParams::new(r, s).unwrap()
    }

    #[test]
    fn compiled_predicate_matches_membership_exhaustively_at_depth_four() {
        for (r, s) in [(3, 1), (3, 2)] {
            let p = params(r, s);
            let preds: Vec<_> = GroupVariant::ALL
                .iter()
                .map(|&v| (v, CompiledPredicate::new(&p, 4, v)))
                .collect();
            for v in 0..1u64 << 15 {
                let rep = membership(&TreeAutomorphism::from_packed(4, v).unwrap(), &p);
                for (variant, pred) in &preds {
                    assert_eq!(pred.eval(v), rep.satisfies(*variant), "({r},{s}) {variant:?} {v:#x}");
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn compiled_predicate_matches_membership_at_depths_five_and_six(v in any::<u64>(), n in 5usize..=6) {
            let v = v & packed::mask(n);
            let sigma = TreeAutomorphism::from_packed(n, v).unwrap();
            for (r, s) in [(3, 1), (3, 2), (4, 2), (4, 1), (5, 2)] {
                let p = params(r, s);
                let rep = membership(&sigma, &p);
                for variant in GroupVariant::ALL {
                    prop_assert_eq!(CompiledPredicate::new(&p, n, variant).eval(v), rep.satisfies(variant));
                }
            }
        }
    }

    #[test]
    fn spec_count_examples() {
        let c = |n, v, r, s| count_predicate(n, v, &params(r, s), CountMethod::Exhaustive, 1).unwrap().count;
        assert_eq!(c(4, GroupVariant::TBp, 3, 2), 8192);
        assert_eq!(c(4, GroupVariant::TBp, 3, 1), 4096);
        assert_eq!(c(4, GroupVariant::Bp, 3, 1), 8192);
        for v in GroupVariant::ALL {
            assert_eq!(c(3, v, 4, 2), 128);
        }
        assert!(count_predicate(6, GroupVariant::Bp, &params(3, 1), CountMethod::Exhaustive, 1).is_err());
    }

    #[test]
    fn sharded_equals_exhaustive_up_to_depth_four() {
        for (r, s) in [(3, 1), (3, 2), (4, 2), (4, 1), (5, 2)] {
            for n in 1..=4 {
                for v in GroupVariant::ALL {
                    let p = params(r, s);
                    let a = count_predicate(n, v, &p, CountMethod::Exhaustive, 1).unwrap();
                    let b = count_predicate(n, v, &p, CountMethod::Sharded, 3).unwrap();
                    assert_eq!(a.count, b.count, "({r},{s},{n}) {v:?}");
                }
            }
        }
    }

    #[test]
    fn index_of_kernel_divides_h() {
        // |Mp| / |Bp| and |TMp| / |TBp| are 1, 2 or 4.
        for (r, s) in [(3, 1), (3, 2)] {
            for n in 1..=4 {
                let p = params(r, s);
                let c = |v| count_predicate(n, v, &p, CountMethod::Exhaustive, 1).unwrap().count;
                for (big, small) in [(GroupVariant::Mp, GroupVariant::Bp), (GroupVariant::TMp, GroupVariant::TBp)] {
                    let (b, k) = (c(big), c(small));
                    assert!(b % k == 0 && [1, 2, 4].contains(&(b / k)), "({r},{s},{n})");
                }
            }
        }
    }

    #[test]
    fn kernel_examples() {
        let k = |r, s, n, v| kernel_count(&params(r, s), n, v).unwrap();
        let a = k(4, 2, 5, KernelVariant::S);
        assert_eq!((a.direct_log2, a.block_log2, a.formula_log2), (Some(14), 14, 14));
        let b = k(3, 2, 5, KernelVariant::TS);
        assert_eq!((b.direct_log2, b.block_log2), (Some(11), 11));
        let c = k(3, 1, 5, KernelVariant::TS);
        assert_eq!((c.direct_log2, c.block_log2), (Some(10), 10));
        for (r, s) in [(3, 1), (3, 2), (4, 2), (4, 1), (5, 2)] {
            for n in 1..=5 {
                for v in [KernelVariant::S, KernelVariant::TS] {
                    assert!(k(r, s, n, v).agree, "({r},{s},{n}) {v:?}");
                }
            }
        }
        // block product alone at depths beyond direct enumeration
        assert_eq!(k(3, 2, 6, KernelVariant::TS).block_log2, 32 - 10);
        assert_eq!(k(4, 2, 7, KernelVariant::S).block_log2, 64 - 8);
    }

    #[test]
    fn order_table_small() {
        let opts = TableOptions {
            predicate_max_n: 4,
            ..Default::default()
        };
        let rows = verify_order_table(&params(3, 2), 4, &opts).unwrap();
        let logs: Vec<u64> = rows.iter().map(|r| r.log2_closure.log2().unwrap()).collect();
        assert_eq!(logs, [1, 3, 7, 13]);
        assert!(rows.iter().all(|r| r.agree));
        assert_eq!(rows[3].csv(), "3,2,4,13,13,13,true");
    }
}
