//! Sign normalization of preimage-tree labels and exact verification of the
//! product identities that the normalized labels satisfy.
//!
//! Each normalizer walks anchor levels upward and, where a ratio has the
//! wrong sign, exchanges the two children of one node (moving their whole
//! subtrees). Swaps at one level never disturb identities anchored lower.

use serde::Serialize;
use thiserror::Error;

use crate::dynamics::LabeledTree;
use crate::field::{FieldCtx, FieldElement};
use crate::parity::TailCase;
use crate::tree::{Symbol, TreeError, TreeWord};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabelError {
    #[error("field has no square root of -1")]
    NoZeta4,
    #[error("field has no square root of 2")]
    NoSqrt2,
    #[error("labeling for the {expected} case requested on a {found} tree")]
    WrongCase { expected: &'static str, found: &'static str },
    #[error("ratio {which} at node {node} does not square to the expected constant")]
    RatioNotRoot { node: TreeWord, which: &'static str },
    #[error("delta denominator vanishes at node {0}")]
    DeltaDenominator(TreeWord),
    #[error("tree is not long-tail labeled at node {0}")]
    NotLongTailLabeled(TreeWord),
    #[error("short-tail product at node {node} is neither +{which} nor -{which}")]
    LockFailed { node: TreeWord, which: &'static str },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// One exchange of the labels `ya`, `yb`; `level` is the level of `ya`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Swap {
    pub node: TreeWord,
    pub level: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IdentityCheck {
    pub node: TreeWord,
    pub id: String,
    pub ok: bool,
    pub lhs: FieldElement,
    pub rhs: FieldElement,
}

/// Outcome of testing the product identity with the factor `c` on `U_b`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReadingReport {
    pub identity: &'static str,
    pub nodes_checked: usize,
    pub holds_everywhere: bool,
    pub failures: Vec<TreeWord>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LabelingReport {
    pub case: &'static str,
    pub zeta4: Option<FieldElement>,
    pub sqrt2: Option<FieldElement>,
    pub swaps: Vec<Swap>,
    pub checks: Vec<IdentityCheck>,
    pub vacuous: bool,
    pub all_ok: bool,
    pub tree_checksum: String,
    pub u_product_with_c: Option<ReadingReport>,
}

impl LabelingReport {
    pub fn failures(&self) -> impl Iterator<Item = &IdentityCheck> {
        self.checks.iter().filter(|c| !c.ok)
    }
}

/// Canonically smaller square root of -1, if the field has one.
pub fn canonical_zeta4(ctx: &FieldCtx) -> Option<FieldElement> {
    ctx.sqrt(&ctx.from_i64(-1)).map(|(lo, _)| lo)
}

/// Canonically smaller square root of 2, if the field has one.
pub fn canonical_sqrt2(ctx: &FieldCtx) -> Option<FieldElement> {
    ctx.sqrt(&ctx.from_u64(2)).map(|(lo, _)| lo)
}

fn word(base: TreeWord, s: &str) -> TreeWord {
    s.chars().fold(base, |w, ch| w.child(if ch == 'a' { Symbol::A } else { Symbol::B }))
}

fn repeat_a(base: TreeWord, k: usize) -> TreeWord {
    (0..k).fold(base, |w, _| w.a())
}

fn anchors(max_level: Option<usize>) -> impl Iterator<Item = TreeWord> {
    max_level.into_iter().flat_map(|m| (0..=m).flat_map(TreeWord::level))
}

fn anchor_max(depth: usize, height: usize) -> Option<usize> {
    depth.checked_sub(height)
}

fn product<'a, I: IntoIterator<Item = &'a FieldElement>>(ctx: &FieldCtx, it: I) -> FieldElement {
    it.into_iter().fold(ctx.one(), |acc, v| ctx.mul(&acc, v))
}

/// `Π_{|w| = k} [y w a]`.
fn a_product(tree: &LabeledTree, y: TreeWord, k: usize) -> FieldElement {
    tree.half_product(y, k + 1)
}

/// The two long-tail ratios at `x`: numerators `r` levels above `xa` / `xb`,
/// denominators `s` levels above the other child.
pub fn long_tail_ratios(tree: &LabeledTree, x: TreeWord) -> (FieldElement, FieldElement) {
    let ctx = tree.ctx();
    let (r, s) = (tree.params().r(), tree.params().s());
    let ratio = |num: TreeWord, den: TreeWord| {
        let n = a_product(tree, num, r - 1);
        let d = a_product(tree, den, s - 1);
        ctx.div(&n, &d).expect("tree nodes are nonzero")
    };
    (ratio(x.a(), x.b()), ratio(x.b(), x.a()))
}

fn check_case(tree: &LabeledTree, allowed: &[TailCase], expected: &'static str) -> Result<(), LabelError> {
    let found = tree.params().case();
    if allowed.contains(&found) {
        Ok(())
    } else {
        Err(LabelError::WrongCase { expected, found: found.name() })
    }
}

fn swap(tree: &mut LabeledTree, y: TreeWord, swaps: &mut Vec<Swap>) -> Result<(), LabelError> {
    tree.swap_children(y)?;
    swaps.push(Swap { node: y, level: y.len() + 1 });
    Ok(())
}

/// Makes both long-tail ratios equal `zeta4` at every anchor with
/// level `<= depth - r - 1`.
pub fn label_longtail(tree: &mut LabeledTree, zeta4: &FieldElement) -> Result<Vec<Swap>, LabelError> {
    check_case(tree, &[TailCase::LongTail, TailCase::SpecialLongTail], "long")?;
    let ctx = tree.ctx().clone();
    let minus_one = ctx.from_i64(-1);
    if ctx.square(zeta4) != minus_one {
        return Err(LabelError::NoZeta4);
    }
    let neg = ctx.neg(zeta4);
    let r = tree.params().r();
    let mut swaps = Vec::new();
    for x in anchors(anchor_max(tree.depth(), r + 1)) {
        let (g1, _) = long_tail_ratios(tree, x);
        if g1 == neg {
            swap(tree, repeat_a(x.a(), r - 1), &mut swaps)?;
        } else if g1 != *zeta4 {
            return Err(LabelError::RatioNotRoot { node: x, which: "a" });
        }
        let (_, g2) = long_tail_ratios(tree, x);
        if g2 == neg {
            swap(tree, repeat_a(x.b(), r - 1), &mut swaps)?;
        } else if g2 != *zeta4 {
            return Err(LabelError::RatioNotRoot { node: x, which: "b" });
        }
    }
    Ok(swaps)
}

/// Exact values used by the `(3, 2)` normalization at an anchor `x`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SpecialQuantities {
    /// Indexed by `w` in order `aa, ab, ba, bb`.
    pub gamma: [FieldElement; 4],
    pub gamma_prime: [FieldElement; 4],
    pub u_a: FieldElement,
    pub u_b: FieldElement,
    /// `None` when the denominator vanishes.
    pub delta: Option<FieldElement>,
}

const PAIRS: [&str; 4] = ["aa", "ab", "ba", "bb"];

/// Requires `level(x) <= depth - 5`.
pub fn special_quantities(tree: &LabeledTree, x: TreeWord) -> Result<SpecialQuantities, LabelError> {
    if x.len() + 5 > tree.depth() {
        return Err(TreeError::WordTooLong { len: x.len() + 5, depth: tree.depth() }.into());
    }
    let ctx = tree.ctx();
    let v = |w: TreeWord, s: &str| tree.value(word(w, s)).clone();
    let mut gamma = Vec::with_capacity(4);
    let mut gamma_prime = Vec::with_capacity(4);
    for pair in PAIRS {
        let xw = word(x, pair);
        let t1 = product(ctx, [&v(xw, "aaa"), &v(xw, "aba"), &v(xw, "ba")]);
        let t2 = product(ctx, [&v(xw, "baa"), &v(xw, "bba"), &v(xw, "aa")]);
        gamma.push(ctx.add(&t1, &t2));
        gamma_prime.push(ctx.sub(&t1, &t2));
    }
    let c = tree.c();
    let u_a = product(ctx, [c, &v(x, "aaa"), &v(x, "aba")]);
    let u_b = product(ctx, [c, &v(x, "baa"), &v(x, "bba")]);
    let den = delta_denominator(ctx, c, &u_a, &u_b);
    let num = product(ctx, &gamma);
    let delta = ctx.div(&num, &den).ok();
    Ok(SpecialQuantities {
        gamma: gamma.try_into().expect("four pairs"),
        gamma_prime: gamma_prime.try_into().expect("four pairs"),
        u_a,
        u_b,
        delta,
    })
}

fn cc1(ctx: &FieldCtx, c: &FieldElement) -> FieldElement {
    ctx.add(&ctx.add(&ctx.square(c), c), &ctx.one())
}

/// `4 (c^2 + c + 1) (2 + U_a + U_b)`.
fn delta_denominator(ctx: &FieldCtx, c: &FieldElement, u_a: &FieldElement, u_b: &FieldElement) -> FieldElement {
    let s = ctx.add(&ctx.add(&ctx.from_u64(2), u_a), u_b);
    product(ctx, [&ctx.from_u64(4), &cc1(ctx, c), &s])
}

/// Makes `delta(x) = sqrt2` at every anchor with level `<= depth - 5`,
/// keeping the long-tail ratios intact. The tree must already be long-tail
/// labeled with `zeta4`.
pub fn label_special(
    tree: &mut LabeledTree,
    zeta4: &FieldElement,
    sqrt2: &FieldElement,
) -> Result<Vec<Swap>, LabelError> {
    check_case(tree, &[TailCase::SpecialLongTail], "special")?;
    let ctx = tree.ctx().clone();
    if ctx.square(sqrt2) != ctx.from_u64(2) {
        return Err(LabelError::NoSqrt2);
    }
    for x in anchors(anchor_max(tree.depth(), tree.params().r() + 1)) {
        let (g1, g2) = long_tail_ratios(tree, x);
        if &g1 != zeta4 || &g2 != zeta4 {
            return Err(LabelError::NotLongTailLabeled(x));
        }
    }
    let neg = ctx.neg(sqrt2);
    let mut swaps = Vec::new();
    for x in anchors(anchor_max(tree.depth(), 5)) {
        let q = special_quantities(tree, x)?;
        let delta = q.delta.ok_or(LabelError::DeltaDenominator(x))?;
        if delta == neg {
            swap(tree, word(x, "aaa"), &mut swaps)?;
            swap(tree, word(x, "aab"), &mut swaps)?;
        } else if &delta != sqrt2 {
            return Err(LabelError::RatioNotRoot { node: x, which: "delta" });
        }
    }
    Ok(swaps)
}

/// `E_y = Π_{|w| = r-2} [y w a]`.
pub fn e_product(tree: &LabeledTree, y: TreeWord) -> FieldElement {
    a_product(tree, y, tree.params().r() - 2)
}

/// The four short-tail ratios `A1, A2, B1, B2` at `x`.
fn short_tail_ratios(tree: &LabeledTree, x: TreeWord) -> [FieldElement; 4] {
    let ctx = tree.ctx();
    let e = |s| e_product(tree, word(x, s));
    let (eaa, eab, eba, ebb) = (e("aa"), e("ab"), e("ba"), e("bb"));
    let d = |n: FieldElement, den: &FieldElement| ctx.div(&n, den).expect("tree nodes are nonzero");
    [
        d(ctx.add(&eaa, &eab), &ebb),
        d(ctx.sub(&eab, &eaa), &eba),
        d(ctx.add(&eba, &ebb), &eab),
        d(ctx.sub(&ebb, &eba), &eaa),
    ]
}

/// Locks `E_xaa E_xab = [xba]`, `E_xba E_xbb = [xaa]` and makes the four
/// short-tail ratios equal `sqrt2` at every anchor with level `<= depth - r - 1`.
pub fn label_shorttail(tree: &mut LabeledTree, sqrt2: &FieldElement) -> Result<Vec<Swap>, LabelError> {
    check_case(tree, &[TailCase::ShortTail], "short")?;
    let ctx = tree.ctx().clone();
    if ctx.square(sqrt2) != ctx.from_u64(2) {
        return Err(LabelError::NoSqrt2);
    }
    let neg2 = ctx.neg(sqrt2);
    let r = tree.params().r();
    let mut swaps = Vec::new();
    for x in anchors(anchor_max(tree.depth(), r + 1)) {
        let e = |t: &LabeledTree, s| e_product(t, word(x, s));
        let lock_a = ctx.mul(&e(tree, "aa"), &e(tree, "ab"));
        let target_a = tree.value(word(x, "ba")).clone();
        if lock_a == ctx.neg(&target_a) {
            swap(tree, repeat_a(x.a(), r - 1), &mut swaps)?;
        } else if lock_a != target_a {
            return Err(LabelError::LockFailed { node: x, which: "[xba]" });
        }
        let lock_b = ctx.mul(&e(tree, "ba"), &e(tree, "bb"));
        let target_b = tree.value(word(x, "aa")).clone();
        if lock_b == ctx.neg(&target_b) {
            swap(tree, repeat_a(x.b(), r - 1), &mut swaps)?;
        } else if lock_b != target_b {
            return Err(LabelError::LockFailed { node: x, which: "[xaa]" });
        }
        let [a1, ..] = short_tail_ratios(tree, x);
        if a1 == neg2 {
            swap(tree, repeat_a(word(x, "aa"), r - 2), &mut swaps)?;
            swap(tree, repeat_a(word(x, "ab"), r - 2), &mut swaps)?;
        } else if &a1 != sqrt2 {
            return Err(LabelError::RatioNotRoot { node: x, which: "A1" });
        }
    }
    Ok(swaps)
}

/// Runs the normalization for the tree's case with canonical roots.
pub fn normalize(tree: &mut LabeledTree) -> Result<Vec<Swap>, LabelError> {
    let ctx = tree.ctx().clone();
    match tree.params().case() {
        TailCase::LongTail => label_longtail(tree, &canonical_zeta4(&ctx).ok_or(LabelError::NoZeta4)?),
        TailCase::SpecialLongTail => {
            let z = canonical_zeta4(&ctx).ok_or(LabelError::NoZeta4)?;
            let s2 = canonical_sqrt2(&ctx).ok_or(LabelError::NoSqrt2)?;
            let mut swaps = label_longtail(tree, &z)?;
            swaps.extend(label_special(tree, &z, &s2)?);
            Ok(swaps)
        }
        TailCase::ShortTail => label_shorttail(tree, &canonical_sqrt2(&ctx).ok_or(LabelError::NoSqrt2)?),
    }
}

/// Normalizes a copy of `tree` and verifies it; the report lists the swaps.
pub fn label_and_verify(tree: &LabeledTree) -> Result<(LabeledTree, LabelingReport), LabelError> {
    let mut out = tree.clone();
    let swaps = normalize(&mut out)?;
    let mut report = verify_identities(&out, tree.params().case());
    report.swaps = swaps;
    Ok((out, report))
}

struct Checker<'a> {
    ctx: &'a FieldCtx,
    checks: Vec<IdentityCheck>,
}

impl Checker<'_> {
    fn eq(&mut self, node: TreeWord, id: impl Into<String>, lhs: FieldElement, rhs: FieldElement) {
        self.checks.push(IdentityCheck {
            node,
            id: id.into(),
            ok: lhs == rhs,
            lhs,
            rhs,
        });
    }

    fn nonzero(&mut self, node: TreeWord, id: &str, v: FieldElement) {
        let zero = self.ctx.zero();
        self.checks.push(IdentityCheck {
            node,
            id: id.into(),
            ok: v != zero,
            lhs: v,
            rhs: zero,
        });
    }
}

/// Checks every identity of `case` at every node where it is defined.
/// Failures are recorded, never raised.
pub fn verify_identities(tree: &LabeledTree, case: TailCase) -> LabelingReport {
    let ctx = tree.ctx().as_ref();
    let depth = tree.depth();
    let r = tree.params().r();
    let c = tree.c();
    let mut ck = Checker { ctx, checks: Vec::new() };
    let zeta4 = canonical_zeta4(ctx);
    let sqrt2 = canonical_sqrt2(ctx);
    let two = ctx.from_u64(2);

    for y in (0..depth).flat_map(TreeWord::level) {
        let (va, vb) = (tree.value(y.a()), tree.value(y.b()));
        ck.eq(y, "square_root", ctx.add(&ctx.square(va), c), tree.value(y).clone());
        ck.eq(y, "siblings", va.clone(), ctx.neg(vb));
        for m in 1..=depth - y.len() {
            ck.eq(
                y,
                format!("preimage_product_{m}"),
                ctx.square(&tree.half_product(y, m)),
                tree.half_product_square(y, m),
            );
        }
    }

    let mut vacuous = true;
    let mut printed = None;
    if matches!(case, TailCase::LongTail | TailCase::SpecialLongTail) && tree.params().s() >= 2 {
        let minus_one = ctx.from_i64(-1);
        for x in anchors(anchor_max(depth, r + 1)) {
            vacuous = false;
            let (g1, g2) = long_tail_ratios(tree, x);
            ck.eq(x, "ratio_a_square", ctx.square(&g1), minus_one.clone());
            ck.eq(x, "ratio_b_square", ctx.square(&g2), minus_one.clone());
            if let Some(z) = &zeta4 {
                ck.eq(x, "ratio_a", g1, z.clone());
                ck.eq(x, "ratio_b", g2, z.clone());
            }
        }
    }
    if case == TailCase::SpecialLongTail && tree.params().r() == 3 && tree.params().s() == 2 {
        let mut reading = ReadingReport {
            identity: "gamma product with factor c on U_b",
            nodes_checked: 0,
            holds_everywhere: true,
            failures: Vec::new(),
        };
        for x in anchors(anchor_max(depth, 5)) {
            vacuous = false;
            let q = special_quantities(tree, x).expect("anchor in range");
            special_checks(&mut ck, tree, x, &q, sqrt2.as_ref());
            let gsq = ctx.square(&product(ctx, &q.gamma));
            let k = ctx.mul(&ctx.from_u64(64), &ctx.square(&cc1(ctx, c)));
            let alt = product(ctx, [&k, &ctx.add(&two, &q.u_a), &ctx.add(&two, &ctx.mul(c, &q.u_b))]);
            reading.nodes_checked += 1;
            if gsq != alt {
                reading.holds_everywhere = false;
                reading.failures.push(x);
            }
        }
        if reading.nodes_checked > 0 {
            printed = Some(reading);
        }
    }
    if case == TailCase::ShortTail && tree.params().s() == 1 {
        for x in anchors(anchor_max(depth, r + 1)) {
            vacuous = false;
            let e = |s| e_product(tree, word(x, s));
            let (eaa, eab, eba, ebb) = (e("aa"), e("ab"), e("ba"), e("bb"));
            let (xaa, xba) = (tree.value(word(x, "aa")), tree.value(word(x, "ba")));
            let pa = ctx.mul(&eaa, &eab);
            let pb = ctx.mul(&eba, &ebb);
            ck.eq(x, "short_tail_product_a", ctx.square(&pa), ctx.square(xba));
            ck.eq(x, "short_tail_product_b", ctx.square(&pb), ctx.square(xaa));
            ck.eq(x, "lock_a", pa, xba.clone());
            ck.eq(x, "lock_b", pb, xaa.clone());
            let ratios = short_tail_ratios(tree, x);
            ck.eq(x, "root2_square", ctx.square(&ratios[0]), two.clone());
            ck.eq(x, "a1_a2_product", ctx.mul(&ratios[0], &ratios[1]), two.clone());
            if let Some(s2) = &sqrt2 {
                for (id, v) in ["root2_a1", "root2_a2", "root2_b1", "root2_b2"].iter().zip(ratios) {
                    ck.eq(x, *id, v, s2.clone());
                }
            }
        }
    }

    let all_ok = ck.checks.iter().all(|c| c.ok);
    LabelingReport {
        case: case.name(),
        zeta4: if case == TailCase::ShortTail { None } else { zeta4 },
        sqrt2: if case == TailCase::LongTail { None } else { sqrt2 },
        swaps: Vec::new(),
        checks: ck.checks,
        vacuous,
        all_ok,
        tree_checksum: tree.checksum(),
        u_product_with_c: printed,
    }
}

fn special_checks(
    ck: &mut Checker<'_>,
    tree: &LabeledTree,
    x: TreeWord,
    q: &SpecialQuantities,
    sqrt2: Option<&FieldElement>,
) {
    let ctx = ck.ctx;
    let c = tree.c();
    let v = |s: &str| tree.value(word(x, s)).clone();
    let two = ctx.from_u64(2);
    let (u1u2, u3u4) = (ctx.mul(&v("aaa"), &v("aba")), ctx.mul(&v("baa"), &v("bba")));
    // c^2 + c + 2
    let k = ctx.add(&cc1(ctx, c), &ctx.one());
    let g = &q.gamma;
    let gsq = |i: usize, node: &str, u: &FieldElement| {
        (ctx.square(&g[i]), ctx.mul(&two, &ctx.add(&v(node), &ctx.sub(&k, u))))
    };
    let (l, rr) = gsq(0, "aa", &u3u4);
    ck.eq(x, "gamma_aa_square", l, rr);
    let (l, rr) = gsq(1, "ab", &u3u4);
    ck.eq(x, "gamma_ab_square", l, rr);
    let (l, rr) = gsq(2, "ba", &u1u2);
    ck.eq(x, "gamma_ba_square", l, rr);
    let (l, rr) = gsq(3, "bb", &u1u2);
    ck.eq(x, "gamma_bb_square", l, rr);

    let eight_k = ctx.mul(&ctx.from_u64(8), &cc1(ctx, c));
    let pair = |i: usize, j: usize, u: &FieldElement| {
        (
            ctx.square(&ctx.mul(&g[i], &g[j])),
            ctx.mul(&eight_k, &ctx.add(&two, &ctx.mul(c, u))),
        )
    };
    let (l, rr) = pair(0, 1, &u3u4);
    ck.eq(x, "gamma_pair_a", l, rr);
    let (l, rr) = pair(2, 3, &u1u2);
    ck.eq(x, "gamma_pair_b", l, rr);

    let (ua, ub) = (&q.u_a, &q.u_b);
    let (ta, tb) = (ctx.add(&two, ua), ctx.add(&two, ub));
    let k64 = ctx.mul(&ctx.from_u64(64), &ctx.square(&cc1(ctx, c)));
    ck.eq(x, "u_product", ctx.square(&product(ctx, g)), product(ctx, [&k64, &ta, &tb]));
    ck.nonzero(x, "u_a_plus_two", ta.clone());
    ck.nonzero(x, "u_b_plus_two", tb.clone());
    let sum = ctx.add(&ta, ub);
    ck.eq(x, "sum_square_product", ctx.square(&sum), product(ctx, [&two, &ta, &tb]));
    let den = delta_denominator(ctx, c, ua, ub);
    let num = product(ctx, g);
    match ctx.div(&num, &den) {
        Ok(delta) => {
            ck.eq(x, "delta_square", ctx.square(&delta), two.clone());
            if let Some(s2) = sqrt2 {
                ck.eq(x, "delta", delta, s2.clone());
            }
        }
        Err(_) => ck.nonzero(x, "delta_denominator", den),
    }

    // quotient identities, cross-multiplied
    let gp = &q.gamma_prime;
    ck.eq(
        x,
        "quotient_gamma_a",
        ctx.mul(&ctx.mul(&gp[0], &gp[1]), &tb),
        ctx.neg(&ctx.mul(ua, &ctx.mul(&g[0], &g[1]))),
    );
    ck.eq(
        x,
        "quotient_gamma_b",
        ctx.mul(&ctx.mul(&gp[2], &gp[3]), &ta),
        ctx.neg(&ctx.mul(ub, &ctx.mul(&g[2], &g[3]))),
    );
    let diff = |p: &FieldElement, m: &FieldElement| ctx.sub(&ctx.add(&two, p), m);
    ck.eq(
        x,
        "quotient_sum_over_difference",
        ctx.mul(&sum, &ctx.mul(ua, ub)),
        ctx.neg(&product(ctx, [&ta, &tb, &ctx.sub(&diff(&ctx.zero(), ua), ub)])),
    );
    ck.eq(x, "quotient_a_minus_b", ctx.mul(&sum, ua), ctx.mul(&tb, &diff(ua, ub)));
    ck.eq(x, "quotient_b_minus_a", ctx.mul(&sum, ub), ctx.mul(&ta, &diff(ub, ua)));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::build_tree;

    fn labeled(p: u64, c: u64, x0: u64, depth: usize) -> (LabeledTree, LabelingReport) {
        let t = build_tree(p, c, x0, depth).unwrap();
        label_and_verify(&t).unwrap()
    }

    fn failing_ids(rep: &LabelingReport) -> Vec<(String, String)> {
        rep.failures().map(|c| (c.node.to_string(), c.id.clone())).collect()
    }

    #[test]
    fn special_instance_root_values() {
        let (t, rep) = labeled(7, 1, 4, 5);
        assert!(rep.all_ok, "{:?}", failing_ids(&rep));
        assert_eq!(rep.case, "special");
        assert!(!rep.vacuous);
        let ctx = t.ctx();
        let s2 = rep.sqrt2.clone().unwrap();
        assert_eq!(s2.as_base(), Some(3));
        let q = special_quantities(&t, TreeWord::ROOT).unwrap();
        assert_eq!(q.delta.unwrap().as_base(), Some(3));
        let z = rep.zeta4.clone().unwrap();
        assert_eq!(ctx.square(&z), ctx.from_i64(-1));
        let (g1, g2) = long_tail_ratios(&t, TreeWord::ROOT);
        assert_eq!((g1, g2), (z.clone(), z));
        // c = 1 makes both readings of the product identity agree
        assert!(rep.u_product_with_c.as_ref().unwrap().holds_everywhere);
        // ids present at the root
        for id in ["delta", "sum_square_product", "u_product", "quotient_gamma_a", "quotient_b_minus_a", "ratio_b"] {
            assert!(rep.checks.iter().any(|c| c.node == TreeWord::ROOT && c.id == id), "{id}");
        }
    }

    #[test]
    fn printed_reading_is_discriminated_when_c_is_not_one() {
        // (11, 2) has portrait (3, 2)
        let x0 = crate::dynamics::valid_base_points(11, 2).unwrap()[0];
        let (_, rep) = labeled(11, 2, x0, 5);
        assert!(rep.all_ok, "{:?}", failing_ids(&rep));
        let printed = rep.u_product_with_c.unwrap();
        assert_eq!(printed.nodes_checked, 1);
        assert!(!printed.holds_everywhere);
    }

    #[test]
    fn short_tail_instance() {
        let (t, rep) = labeled(5, 2, 4, 4);
        assert!(rep.all_ok, "{:?}", failing_ids(&rep));
        let s2 = canonical_sqrt2(t.ctx()).unwrap();
        for x in anchors(Some(0)) {
            for v in short_tail_ratios(&t, x) {
                assert_eq!(v, s2);
            }
        }
        // E_y has 2^(r-2) factors
        let r = t.params().r();
        assert_eq!(TreeWord::ROOT.a().a().extension_range(r - 2).count(), 1 << (r - 2));
        let (_, rep5) = labeled(5, 2, 0, 5);
        assert!(rep5.all_ok, "{:?}", failing_ids(&rep5));
    }

    #[test]
    fn long_tail_instance() {
        let (t, rep) = labeled(7, 4, crate::dynamics::valid_base_points(7, 4).unwrap()[0], 5);
        assert_eq!(t.params().r(), 4);
        assert!(rep.all_ok, "{:?}", failing_ids(&rep));
        assert!(rep.checks.iter().any(|c| c.id == "ratio_a"));
        assert!(rep.sqrt2.is_none());
    }

    #[test]
    fn normalization_is_idempotent() {
        for (p, c, x0, d) in [(7, 1, 4, 6), (5, 2, 4, 5), (7, 4, 0, 5), (11, 2, 0, 5)] {
            let Ok(t) = build_tree(p, c, x0, d) else { continue };
            let (mut t1, rep) = label_and_verify(&t).unwrap();
            assert!(rep.all_ok, "({p},{c},{x0}) {:?}", failing_ids(&rep));
            let before = t1.checksum();
            assert!(normalize(&mut t1).unwrap().is_empty());
            assert_eq!(t1.checksum(), before);
        }
    }

    #[test]
    fn label_independent_identities_hold_before_normalization() {
        let t = build_tree(7, 1, 4, 5).unwrap();
        let rep = verify_identities(&t, TailCase::SpecialLongTail);
        let independent = |id: &str| {
            id.starts_with("preimage_product")
                || ["square_root", "siblings", "ratio_a_square", "ratio_b_square", "sum_square_product", "u_a_plus_two", "u_b_plus_two"]
                    .contains(&id)
        };
        assert!(rep.checks.iter().filter(|c| independent(&c.id)).all(|c| c.ok));
        let (_, labeled) = label_and_verify(&t).unwrap();
        assert_eq!(rep.all_ok, labeled.swaps.is_empty());
    }

    #[test]
    fn targeted_mutation() {
        let (mut t, rep) = labeled(7, 1, 4, 5);
        assert!(rep.all_ok);
        let y: TreeWord = "aaaa".parse().unwrap();
        t.swap_children(y).unwrap();
        let rep = verify_identities(&t, TailCase::SpecialLongTail);
        let failed: Vec<_> = rep.failures().collect();
        assert!(!failed.is_empty());
        for c in &failed {
            assert!(c.node.is_prefix_of(y), "unexpected failure {} at {}", c.id, c.node);
        }
        let has = |node: &str, id: &str| failed.iter().any(|c| c.node.to_string() == node && c.id == id);
        assert!(has("a", "ratio_a"));
        assert!(has("", "delta"));
        assert!(!has("a", "ratio_a_square"));
        assert!(!has("", "ratio_a"));
        assert!(rep.checks.iter().filter(|c| c.id == "siblings" || c.id == "square_root").all(|c| c.ok));
    }

    #[test]
    fn vacuous_and_errors() {
        let t = build_tree(7, 1, 4, 3).unwrap();
        let (t2, rep) = label_and_verify(&t).unwrap();
        assert!(rep.vacuous && rep.all_ok && rep.swaps.is_empty());
        assert_eq!(t2.checksum(), t.checksum());
        let mut t = build_tree(5, 2, 4, 4).unwrap();
        let z = canonical_zeta4(t.ctx()).unwrap();
        assert!(matches!(label_longtail(&mut t, &z), Err(LabelError::WrongCase { .. })));
        let mut t = build_tree(7, 1, 4, 5).unwrap();
        let ctx = t.ctx().clone();
        assert_eq!(label_longtail(&mut t, &ctx.one()), Err(LabelError::NoZeta4));
        let s2 = canonical_sqrt2(&ctx).unwrap();
        let z = canonical_zeta4(&ctx).unwrap();
        // special step requires long-tail labels first; the raw tree may or may not conform
        let raw = build_tree(7, 1, 4, 5).unwrap();
        let conforming = anchors(Some(0)).chain(anchors(Some(1))).all(|x| {
            let (g1, g2) = long_tail_ratios(&raw, x);
            g1 == z && g2 == z
        });
        let mut raw2 = raw.clone();
        assert_eq!(label_special(&mut raw2, &z, &s2).is_ok(), conforming);
    }

    #[test]
    fn report_json_shape() {
        let (_, rep) = labeled(7, 1, 4, 5);
        let v = serde_json::to_value(&rep).unwrap();
        for key in ["case", "zeta4", "sqrt2", "swaps", "checks"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let first = &v["checks"][0];
        assert!(first.get("node").is_some() && first.get("id").is_some() && first.get("ok").is_some());
        if let Some(s) = v["swaps"].as_array().and_then(|a| a.first()) {
            assert!(s.get("node").is_some() && s.get("level").is_some());
        }
    }
}
