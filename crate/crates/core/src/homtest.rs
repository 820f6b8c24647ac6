//! Seeded randomized checks of the cocycle identities behind the subgroup
//! and homomorphism statements, with members drawn from the predicate sets
//! by rejection sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::counting::CompiledPredicate;
use crate::parity::{membership, p_a, p_b, r_functional, r_r1, r32, v32, GroupVariant, PortraitParams};
use crate::tree::{packed, TreeAutomorphism, TreeError, TreeWord};

/// Rejection sampling gives up after this many draws for one member.
pub const MAX_DRAWS: usize = 1 << 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HomTestError {
    #[error("depth {0} outside 1..={max}", max = packed::MAX_PACKED_DEPTH)]
    BadDepth(usize),
    #[error("no member of {0} found after {MAX_DRAWS} draws")]
    SamplingFailed(&'static str),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HomTestReport {
    pub identity: &'static str,
    pub r: Option<usize>,
    pub s: Option<usize>,
    pub depth: usize,
    pub trials: usize,
    /// Individual equalities evaluated (one per anchor node per trial).
    pub checks: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
    pub ok: bool,
}

struct Tally {
    checks: usize,
    failures: usize,
    first: Option<String>,
}

impl Tally {
    fn new() -> Tally {
        Tally { checks: 0, failures: 0, first: None }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures += 1;
            if self.first.is_none() {
                self.first = Some(what());
            }
        }
    }

    fn finish(self, identity: &'static str, params: Option<&PortraitParams>, depth: usize, trials: usize) -> HomTestReport {
        HomTestReport {
            identity,
            r: params.map(|p| p.r()),
            s: params.map(|p| p.s()),
            depth,
            trials,
            checks: self.checks,
            failures: self.failures,
            first_failure: self.first,
            ok: self.failures == 0,
        }
    }
}

fn random_element(rng: &mut ChaCha8Rng, n: usize) -> TreeAutomorphism {
    TreeAutomorphism::from_packed(n, rng.gen::<u64>() & packed::mask(n)).expect("packed depth")
}

/// A uniformly random member of the predicate set.
pub fn sample_member(
    rng: &mut ChaCha8Rng,
    pred: &CompiledPredicate,
    name: &'static str,
) -> Result<TreeAutomorphism, HomTestError> {
    let n = pred.depth();
    let mask = packed::mask(n);
    for _ in 0..MAX_DRAWS {
        let v = rng.gen::<u64>() & mask;
        if pred.eval(v) {
            return Ok(TreeAutomorphism::from_packed(n, v)?);
        }
    }
    Err(HomTestError::SamplingFailed(name))
}

fn check_depth(n: usize) -> Result<(), HomTestError> {
    if n == 0 || n > packed::MAX_PACKED_DEPTH {
        Err(HomTestError::BadDepth(n))
    } else {
        Ok(())
    }
}

fn nodes_up_to(max: Option<usize>) -> Vec<TreeWord> {
    max.into_iter().flat_map(|m| (0..=m).flat_map(TreeWord::level)).collect()
}

fn pair_label(s: &TreeAutomorphism, t: &TreeAutomorphism, x: TreeWord) -> String {
    format!("sigma={s} tau={t} x={x}")
}

/// `Par(στ, x) = Par(σ, τ(x)) + Par(τ, x)` mod 2 on random pairs.
pub fn parity_cocycle_random(n: usize, trials: usize, rng: &mut ChaCha8Rng) -> Result<HomTestReport, HomTestError> {
    check_depth(n)?;
    let mut tally = Tally::new();
    for _ in 0..trials {
        let (s, t) = (random_element(rng, n), random_element(rng, n));
        parity_cocycle_pair(&s, &t, &mut tally)?;
    }
    Ok(tally.finish("parity_cocycle", None, n, trials))
}

fn parity_cocycle_pair(s: &TreeAutomorphism, t: &TreeAutomorphism, tally: &mut Tally) -> Result<(), HomTestError> {
    let st = s.compose(t)?;
    for x in nodes_up_to(Some(s.depth() - 1)) {
        // independent of `compose`: does the composed action flip below x?
        let gx = s.apply(t.apply(x)?)?;
        let by_action = s.apply(t.apply(x.a())?)? != gx.a();
        let rhs = s.par(t.apply(x)?)? ^ t.par(x)?;
        tally.check(st.par(x)? == rhs && by_action == rhs, || pair_label(s, t, x));
    }
    Ok(())
}

/// [`parity_cocycle_random`] over every pair of automorphisms of depth `n <= 3`.
pub fn parity_cocycle_exhaustive(n: usize) -> Result<HomTestReport, HomTestError> {
    if n == 0 || n > 3 {
        return Err(HomTestError::BadDepth(n));
    }
    let size = 1u64 << packed::mask(n).count_ones();
    let mut tally = Tally::new();
    for a in 0..size {
        let s = TreeAutomorphism::from_packed(n, a)?;
        for b in 0..size {
            parity_cocycle_pair(&s, &TreeAutomorphism::from_packed(n, b)?, &mut tally)?;
        }
    }
    Ok(tally.finish("parity_cocycle_exhaustive", None, n, (size * size) as usize))
}

/// `P(σ) + P^t(τ, x) = P^t(στ, x)` for `σ` in `M'` and any `τ`.
pub fn p_cocycle(
    params: &PortraitParams,
    n: usize,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> Result<HomTestReport, HomTestError> {
    check_depth(n)?;
    let pred = CompiledPredicate::new(params, n, GroupVariant::Mp);
    let anchors = nodes_up_to(params.p_max_level(n));
    let mut tally = Tally::new();
    for _ in 0..trials {
        let s = sample_member(rng, &pred, "Mp")?;
        let t = random_element(rng, n);
        let st = s.compose(&t)?;
        let Some(&x0) = anchors.first() else { continue };
        let ps = p_a(&s, x0, params).expect("anchor");
        for &x in &anchors {
            for f in [p_a, p_b] {
                let lhs = ps ^ f(&t, x, params).expect("anchor");
                let rhs = f(&st, x, params).expect("anchor");
                tally.check(lhs == rhs, || pair_label(&s, &t, x));
            }
        }
    }
    Ok(tally.finish("p_cocycle", Some(params), n, trials))
}

/// `R(σ, τ(x)) + R(τ, x) = R(στ, x)` for `σ` in the `(3, 2)` group `M̃'`.
pub fn r32_cocycle(n: usize, trials: usize, rng: &mut ChaCha8Rng) -> Result<HomTestReport, HomTestError> {
    check_depth(n)?;
    let params = PortraitParams::new(3, 2).expect("valid");
    let pred = CompiledPredicate::new(&params, n, GroupVariant::TMp);
    let anchors = nodes_up_to(params.r_max_level(n));
    let mut tally = Tally::new();
    for _ in 0..trials {
        let s = sample_member(rng, &pred, "tMp")?;
        let t = random_element(rng, n);
        let st = s.compose(&t)?;
        for &x in &anchors {
            let lhs = r32(&s, t.apply(x)?).expect("anchor") ^ r32(&t, x).expect("anchor");
            tally.check(lhs == r32(&st, x).expect("anchor"), || pair_label(&s, &t, x));
        }
    }
    Ok(tally.finish("r32_cocycle", Some(&params), n, trials))
}

/// `R(σ) + R(τ, x) = R(στ, x)` for `σ` in the short-tail group `M̃'`.
pub fn r_short_cocycle(
    params: &PortraitParams,
    n: usize,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> Result<HomTestReport, HomTestError> {
    check_depth(n)?;
    let r = params.r();
    let pred = CompiledPredicate::new(params, n, GroupVariant::TMp);
    let anchors = nodes_up_to(params.r_max_level(n));
    let mut tally = Tally::new();
    for _ in 0..trials {
        let s = sample_member(rng, &pred, "tMp")?;
        let t = random_element(rng, n);
        let st = s.compose(&t)?;
        let Some(&x0) = anchors.first() else { continue };
        let rs = r_r1(&s, x0, r).expect("anchor");
        for &x in &anchors {
            let lhs = rs ^ r_r1(&t, x, r).expect("anchor");
            tally.check(lhs == r_r1(&st, x, r).expect("anchor"), || pair_label(&s, &t, x));
        }
    }
    Ok(tally.finish("r_short_cocycle", Some(params), n, trials))
}

/// `V(σ, xta) = V(σ, xtb) = Par(σ, xt'a) + Par(σ, xt'b)` for `σ` in the
/// `(3, 2)` group `M'`.
pub fn v32_pairing(n: usize, trials: usize, rng: &mut ChaCha8Rng) -> Result<HomTestReport, HomTestError> {
    check_depth(n)?;
    let params = PortraitParams::new(3, 2).expect("valid");
    let pred = CompiledPredicate::new(&params, n, GroupVariant::Mp);
    let anchors = nodes_up_to(n.checked_sub(5));
    let mut tally = Tally::new();
    for _ in 0..trials {
        let s = sample_member(rng, &pred, "Mp")?;
        for &x in &anchors {
            for (t, other) in [(x.a(), x.b()), (x.b(), x.a())] {
                let rhs = s.par(other.a())? ^ s.par(other.b())?;
                for y in [t.a(), t.b()] {
                    let lhs = v32(&s, y).expect("anchor");
                    tally.check(lhs == rhs, || format!("sigma={s} y={y}"));
                }
            }
        }
    }
    Ok(tally.finish("v32_pairing", Some(&params), n, trials))
}

/// Products and inverses of members stay in the group, the identity is a
/// member, and the quotient value is additive.
pub fn closure_and_homomorphism(
    params: &PortraitParams,
    variant: GroupVariant,
    n: usize,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> Result<HomTestReport, HomTestError> {
    check_depth(n)?;
    let pred = CompiledPredicate::new(params, n, variant);
    let mut tally = Tally::new();
    tally.check(membership(&TreeAutomorphism::identity(n)?, params).satisfies(variant), || "identity".into());
    for _ in 0..trials {
        let s = sample_member(rng, &pred, variant.name())?;
        let t = sample_member(rng, &pred, variant.name())?;
        let st = s.compose(&t)?;
        let (ms, mt, mst) = (membership(&s, params), membership(&t, params), membership(&st, params));
        tally.check(ms.satisfies(variant) && mt.satisfies(variant), || format!("sampled non-member {s}"));
        tally.check(mst.satisfies(variant), || format!("product {s} {t}"));
        tally.check(membership(&s.invert(), params).satisfies(variant), || format!("inverse {s}"));
        if variant == GroupVariant::TMp || variant == GroupVariant::Mp {
            let bits = |m: &crate::parity::MembershipReport| match variant {
                GroupVariant::Mp => m.p_value.map(|p| vec![p as u8]),
                _ => m.h_value.as_ref().map(|h| h.bits()),
            };
            if let (Some(a), Some(b), Some(c)) = (bits(&ms), bits(&mt), bits(&mst)) {
                let sum: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
                tally.check(sum == c, || format!("homomorphism {s} {t}"));
            }
        }
        if variant == GroupVariant::TMp {
            // the R value of a member agrees with the functional at every anchor
            if let Some(rv) = ms.r_value {
                for x in nodes_up_to(params.r_max_level(n)) {
                    tally.check(r_functional(&s, x, params).expect("anchor") == rv, || format!("R constancy {s}"));
                }
            }
        }
    }
    let name = match variant {
        GroupVariant::Mp => "closure_Mp",
        GroupVariant::Bp => "closure_Bp",
        GroupVariant::TMp => "closure_tMp",
        GroupVariant::TBp => "closure_tBp",
    };
    Ok(tally.finish(name, Some(params), n, trials))
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// The full suite at depth `n`: every identity with its default parameters,
/// each on its own seeded stream, plus the exhaustive `parity_cocycle` check at
/// depths 1 to 3.
pub fn run_all(n: usize, trials: usize, seed: u64) -> Result<Vec<HomTestReport>, HomTestError> {
    check_depth(n)?;
    let p = |r, s| PortraitParams::new(r, s).expect("valid");
    let mut out = Vec::new();
    let mut k = 0u64;
    let mut next = || {
        k += 1;
        stream(seed, k)
    };
    out.push(parity_cocycle_random(n, trials, &mut next())?);
    for d in 1..=3 {
        out.push(parity_cocycle_exhaustive(d)?);
    }
    for params in [p(3, 1), p(3, 2), p(4, 2)] {
        out.push(p_cocycle(&params, n, trials, &mut next())?);
    }
    out.push(r32_cocycle(n, trials, &mut next())?);
    for params in [p(3, 1), p(4, 1)] {
        out.push(r_short_cocycle(&params, n, trials, &mut next())?);
    }
    out.push(v32_pairing(n, trials, &mut next())?);
    for params in [p(3, 1), p(3, 2), p(4, 2)] {
        for variant in GroupVariant::ALL {
            out.push(closure_and_homomorphism(&params, variant, n, trials, &mut next())?);
        }
    }
    Ok(out)
}
