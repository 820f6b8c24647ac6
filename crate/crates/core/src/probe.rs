//! Frobenius elements acting on labeled preimage trees, the sign checks they
//! must pass, and the quadratic-character data of the discriminants `D_i`.

use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{orbit_portrait, LabeledTree};
use crate::field::{FieldCtx, FieldElement, FieldError};
use crate::labeling::{canonical_sqrt2, canonical_zeta4};
use crate::parity::{membership, p_a, p_b, r_functional, MembershipReport, PortraitParams, TailCase};
use crate::tree::{node_count, TreeAutomorphism, TreeError, TreeWord};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProbeError {
    #[error("power map leaves the preimage set at node {0}")]
    LeavesTree(TreeWord),
    #[error("subfield degree {k} invalid for field of degree {m}")]
    BadSubfield { k: usize, m: usize },
    #[error("c and x0 must lie in the field of degree {0}")]
    NotFixed(usize),
    #[error("level {n} outside 1..={depth}")]
    BadLevel { n: usize, depth: usize },
    #[error("D_{0} is zero")]
    ZeroDiscriminant(usize),
    #[error("c has no admissible critical portrait")]
    BadPortrait,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// The automorphism induced by `v -> v^(p^k)` on the tree's labels.
pub fn frobenius_automorphism(tree: &LabeledTree, k: usize) -> Result<TreeAutomorphism, ProbeError> {
    let ctx = tree.ctx();
    if k == 0 || !ctx.degree().is_multiple_of(k) {
        return Err(ProbeError::BadSubfield { k, m: ctx.degree() });
    }
    if !ctx.in_subfield(tree.c(), k) || !ctx.in_subfield(tree.x0(), k) {
        return Err(ProbeError::NotFixed(k));
    }
    let depth = tree.depth();
    let values = tree.values();
    let internal = node_count(depth);
    let mut image = vec![0usize; internal];
    let mut bits = vec![false; internal];
    for idx in 0..internal {
        let u = image[idx];
        let fa = ctx.frobenius(&values[2 * idx + 1], k);
        let par = if fa == values[2 * u + 1] {
            false
        } else if fa == values[2 * u + 2] {
            true
        } else {
            return Err(ProbeError::LeavesTree(TreeWord::from_index(2 * idx as u64 + 1)));
        };
        bits[idx] = par;
        let (ia, ib) = if par { (2 * u + 2, 2 * u + 1) } else { (2 * u + 1, 2 * u + 2) };
        if 2 * idx + 2 < internal {
            image[2 * idx + 1] = ia;
            image[2 * idx + 2] = ib;
        }
    }
    Ok(TreeAutomorphism::from_fn(depth, |w| bits[w.index() as usize])?)
}

/// `+1` if `sigma` fixes `e`, `-1` if it negates it, where `sigma` is the
/// `p^k` power map; `None` otherwise.
fn frob_sign(ctx: &FieldCtx, e: &FieldElement, k: usize) -> Option<i8> {
    let img = ctx.frobenius(e, k);
    if &img == e {
        Some(1)
    } else if img == ctx.neg(e) {
        Some(-1)
    } else {
        None
    }
}

fn sign_of(bit: bool) -> i8 {
    if bit {
        -1
    } else {
        1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Signs {
    pub zeta4: Option<i8>,
    pub sqrt2: Option<i8>,
}

/// A functional evaluated at one anchor and compared with a Frobenius sign.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AnchorSign {
    pub node: TreeWord,
    pub functional: &'static str,
    pub value: u8,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LevelCheck {
    pub n: usize,
    #[serde(rename = "D_n")]
    pub d_n: FieldElement,
    pub chi: i8,
    pub parity_xor: u8,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FrobeniusReport {
    pub sigma: TreeAutomorphism,
    pub base_degree: usize,
    pub case: &'static str,
    pub membership: MembershipReport,
    pub signs: Signs,
    pub anchors: Vec<AnchorSign>,
    /// Short tail only: `P^a = P^b = 0` at every anchor.
    pub p_zero: Option<bool>,
    pub levels: Vec<LevelCheck>,
    pub tree_checksum: String,
    pub ok: bool,
}

/// `D_1 = x0 - c`, `D_i = f^i(0) - x0` for `i >= 2`.
pub fn discriminant(ctx: &FieldCtx, c: &FieldElement, x0: &FieldElement, i: usize) -> FieldElement {
    if i == 1 {
        return ctx.sub(x0, c);
    }
    let mut z = ctx.zero();
    for _ in 0..i {
        z = ctx.add(&ctx.square(&z), c);
    }
    ctx.sub(&z, x0)
}

/// Whether the XOR of `sigma`'s parities on level `n - 1` equals the
/// non-square indicator of `D_n` over `F_{p^k}`.
pub fn level_product_character(
    tree: &LabeledTree,
    sigma: &TreeAutomorphism,
    n: usize,
    k: usize,
) -> Result<LevelCheck, ProbeError> {
    if n == 0 || n > tree.depth() || n > sigma.depth() {
        return Err(ProbeError::BadLevel { n, depth: tree.depth() });
    }
    let ctx = tree.ctx();
    let d = discriminant(ctx, tree.c(), tree.x0(), n);
    let chi = ctx.character_over(&d, k)?;
    if chi == 0 {
        return Err(ProbeError::ZeroDiscriminant(n));
    }
    let xor = sigma.level_parity(n - 1);
    Ok(LevelCheck {
        n,
        d_n: d,
        chi,
        parity_xor: xor as u8,
        ok: xor == (chi == -1),
    })
}

/// Extracts the `p^k` Frobenius from a labeled tree and checks it against
/// the case's group, the root-of-unity signs, and the discriminant characters.
pub fn check_embedding(tree: &LabeledTree, k: usize) -> Result<FrobeniusReport, ProbeError> {
    let sigma = frobenius_automorphism(tree, k)?;
    let params = *tree.params();
    let ctx = tree.ctx();
    let n = tree.depth();
    let mship = membership(&sigma, &params);
    let zeta4 = canonical_zeta4(ctx);
    let sqrt2 = canonical_sqrt2(ctx);
    let signs = Signs {
        zeta4: zeta4.as_ref().and_then(|z| frob_sign(ctx, z, k)),
        sqrt2: sqrt2.as_ref().and_then(|s| frob_sign(ctx, s, k)),
    };
    let mut anchors = Vec::new();
    let mut p_zero = None;
    let p_anchors = params.p_max_level(n).into_iter().flat_map(|m| (0..=m).flat_map(TreeWord::level));
    for x in p_anchors {
        let va = p_a(&sigma, x, &params).expect("anchor in range");
        let vb = p_b(&sigma, x, &params).expect("anchor in range");
        match params.case() {
            TailCase::ShortTail => {
                let zero = !va && !vb;
                p_zero = Some(p_zero.unwrap_or(true) && zero);
                anchors.push(AnchorSign { node: x, functional: "P", value: (va || vb) as u8, ok: zero });
            }
            _ => {
                for (name, v) in [("P^a", va), ("P^b", vb)] {
                    anchors.push(AnchorSign {
                        node: x,
                        functional: name,
                        value: v as u8,
                        ok: signs.zeta4 == Some(sign_of(v)),
                    });
                }
            }
        }
    }
    if params.case() != TailCase::LongTail {
        let r_anchors = params.r_max_level(n).into_iter().flat_map(|m| (0..=m).flat_map(TreeWord::level));
        for x in r_anchors {
            let v = r_functional(&sigma, x, &params).expect("anchor in range");
            anchors.push(AnchorSign {
                node: x,
                functional: "R",
                value: v as u8,
                ok: signs.sqrt2 == Some(sign_of(v)),
            });
        }
    }
    let levels = (1..=n)
        .map(|i| level_product_character(tree, &sigma, i, k))
        .collect::<Result<Vec<_>, _>>()?;
    let ok = mship.in_group
        && anchors.iter().all(|a| a.ok)
        && p_zero != Some(false)
        && levels.iter().all(|l| l.ok);
    Ok(FrobeniusReport {
        sigma,
        base_degree: k,
        case: params.case().name(),
        membership: mship,
        signs,
        anchors,
        p_zero,
        levels,
        tree_checksum: tree.checksum(),
        ok,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KummerClass {
    pub label: String,
    pub value: FieldElement,
    pub chi: i8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KummerReport {
    pub r: usize,
    pub s: usize,
    pub case: &'static str,
    pub base_degree: usize,
    #[serde(rename = "D")]
    pub d: Vec<FieldElement>,
    pub classes: Vec<KummerClass>,
    pub rank: usize,
    pub degree: u64,
    pub target_log2: usize,
    pub condition1: bool,
    pub explanation: String,
}

/// Quadratic-class data of `D_1..D_r` and the root-of-unity classes over
/// `F_{p^k}`, with `c` and `x0` in that field.
pub fn kummer_report(
    ctx: &FieldCtx,
    c: &FieldElement,
    x0: &FieldElement,
    params: &PortraitParams,
    k: usize,
) -> Result<KummerReport, ProbeError> {
    if k == 0 || !ctx.degree().is_multiple_of(k) {
        return Err(ProbeError::BadSubfield { k, m: ctx.degree() });
    }
    let r = params.r();
    let mut classes = Vec::new();
    let mut d = Vec::with_capacity(r);
    for i in 1..=r {
        let di = discriminant(ctx, c, x0, i);
        let chi = ctx.character_over(&di, k)?;
        if chi == 0 {
            return Err(ProbeError::ZeroDiscriminant(i));
        }
        classes.push(KummerClass { label: format!("D_{i}"), value: di.clone(), chi });
        d.push(di);
    }
    let extra: &[(&str, i64)] = match params.case() {
        TailCase::LongTail => &[("-1", -1)],
        TailCase::SpecialLongTail => &[("-1", -1), ("2", 2)],
        TailCase::ShortTail => &[("2", 2)],
    };
    for &(label, v) in extra {
        let e = ctx.from_i64(v);
        classes.push(KummerClass { label: label.into(), value: e.clone(), chi: ctx.character_over(&e, k)? });
    }
    // F_q^* / squares has order 2, so the span has rank 0 or 1
    let rank = classes.iter().any(|c| c.chi == -1) as usize;
    let degree = 1u64 << rank;
    let target_log2 = r + params.e();
    let condition1 = rank == target_log2;
    Ok(KummerReport {
        r,
        s: params.s(),
        case: params.case().name(),
        base_degree: k,
        d,
        classes,
        rank,
        degree,
        target_log2,
        condition1,
        explanation: format!(
            "square classes of a finite field form a group of order 2, so the degree is at most 2 < 2^{target_log2}"
        ),
    })
}

/// [`kummer_report`] over `F_p`; the portrait of `c` must be `params`.
pub fn kummer_rank(p: u64, c: u64, x0: u64, params: &PortraitParams) -> Result<KummerReport, ProbeError> {
    let ctx = FieldCtx::new(p, 0)?;
    let (ce, xe) = (ctx.from_u64(c), ctx.from_u64(x0));
    let pt = orbit_portrait(&ctx, &ce).ok_or(ProbeError::BadPortrait)?;
    if (pt.r, pt.s) != (params.r(), params.s()) {
        return Err(ProbeError::BadPortrait);
    }
    kummer_report(&ctx, &ce, &xe, params, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{build_tree, valid_base_points};
    use crate::labeling::label_and_verify;

    fn labeled(p: u64, c: u64, x0: u64, depth: usize) -> LabeledTree {
        label_and_verify(&build_tree(p, c, x0, depth).unwrap()).unwrap().0
    }

    #[test]
    fn depth_one_root_parity() {
        let t = build_tree(7, 1, 4, 1).unwrap();
        let sigma = frobenius_automorphism(&t, 1).unwrap();
        assert!(sigma.par(TreeWord::ROOT).unwrap());
        let lc = level_product_character(&t, &sigma, 1, 1).unwrap();
        assert_eq!((lc.d_n.as_base(), lc.chi, lc.parity_xor, lc.ok), (Some(3), -1, 1, true));
    }

    #[test]
    fn special_instance_embedding() {
        let t = labeled(7, 1, 4, 5);
        let rep = check_embedding(&t, 1).unwrap();
        assert!(rep.ok, "{rep:?}");
        assert!(rep.membership.in_group);
        assert_eq!(rep.membership.p_value, Some(true));
        assert_eq!(rep.membership.r_value, Some(false));
        assert_eq!(rep.signs, Signs { zeta4: Some(-1), sqrt2: Some(1) });
        let d: Vec<_> = rep.levels.iter().take(3).map(|l| l.d_n.as_base().unwrap()).collect();
        assert_eq!(d, [3, 5, 1]);
        assert_eq!(rep.levels[2].parity_xor, 0);
    }

    #[test]
    fn short_and_long_instances() {
        for x0 in valid_base_points(5, 2).unwrap() {
            let rep = check_embedding(&labeled(5, 2, x0, 5), 1).unwrap();
            assert!(rep.ok, "x0={x0} {rep:?}");
            assert_eq!(rep.p_zero, Some(true));
            assert_eq!(rep.membership.p_value, Some(false));
        }
        let x0 = valid_base_points(7, 4).unwrap()[0];
        let rep = check_embedding(&labeled(7, 4, x0, 5), 1).unwrap();
        assert!(rep.ok, "{rep:?}");
        assert_eq!(rep.case, "long");
    }

    #[test]
    fn frobenius_powers_compose() {
        let t = labeled(7, 1, 4, 4);
        let s1 = frobenius_automorphism(&t, 1).unwrap();
        let mut acc = TreeAutomorphism::identity(4).unwrap();
        for j in 1..=16 {
            acc = acc.compose(&s1).unwrap();
            if 16 % j == 0 {
                assert_eq!(frobenius_automorphism(&t, j).unwrap(), acc, "j={j}");
            }
        }
        // p^16 fixes the whole field
        assert!(acc.is_identity());
        let order = (1..=16).find(|&j| {
            (0..j).fold(TreeAutomorphism::identity(4).unwrap(), |a, _| a.compose(&s1).unwrap()).is_identity()
        });
        assert_eq!(16 % order.unwrap(), 0);
    }

    #[test]
    fn fixed_nodes_have_zero_parity() {
        let t = build_tree(7, 1, 4, 3).unwrap();
        let s = frobenius_automorphism(&t, 1).unwrap();
        let ctx = t.ctx();
        for idx in 0..node_count(3) as u64 {
            let w = TreeWord::from_index(idx);
            if ctx.in_subfield(t.value(w.a()), 1) {
                assert!(!s.par(w).unwrap());
            }
        }
        assert!(frobenius_automorphism(&t, 3).is_err());
    }

    #[test]
    fn kummer_examples() {
        let params = PortraitParams::new(3, 2).unwrap();
        let rep = kummer_rank(7, 1, 4, &params).unwrap();
        let d: Vec<_> = rep.d.iter().map(|e| e.as_base().unwrap()).collect();
        assert_eq!(d, [3, 5, 1]);
        let chis: Vec<_> = rep.classes.iter().map(|c| c.chi).collect();
        assert_eq!(chis, [-1, -1, 1, -1, 1]);
        assert_eq!((rep.rank, rep.degree, rep.target_log2, rep.condition1), (1, 2, 5, false));
        let short = PortraitParams::new(3, 1).unwrap();
        let rep = kummer_rank(5, 2, 4, &short).unwrap();
        assert!(rep.rank <= 1 && !rep.condition1);
        assert_eq!(rep.classes.last().unwrap().label, "2");
        assert!(kummer_rank(5, 2, 4, &params).is_err());
    }
}
