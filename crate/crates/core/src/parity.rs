//! Parity functionals of tree automorphisms and the finite-depth membership
//! tests they define.
//!
//! Every functional is a sum mod 2 of parity bits over a fixed set of nodes,
//! sometimes plus one product of two such sums. [`ParityForm`] records that
//! node data so the same definition serves both the reference evaluator and
//! the bitmask evaluator in [`crate::counting`].

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::tree::{TreeAutomorphism, TreeError, TreeWord};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParityError {
    #[error("unsupported portrait (r, s) = ({r}, {s}); need r > s >= 1, r >= 3")]
    InvalidParams { r: usize, s: usize },
    #[error("node at level {level} is too high for this functional at depth {depth} (max level {max})")]
    LevelTooHigh { level: usize, depth: usize, max: isize },
    #[error("automorphism is not a member of the required group")]
    NotMember,
    #[error("constraints are vacuous at depth {0}")]
    Vacuous(usize),
    #[error("this case has no R functional")]
    NoRFunctional,
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
pub enum TailCase {
    /// r >= 4 and s >= 2.
    LongTail,
    /// (r, s) = (3, 2).
    SpecialLongTail,
    /// s = 1 and r >= 3.
    ShortTail,
}

impl TailCase {
    pub fn name(self) -> &'static str {
        match self {
            TailCase::LongTail => "long",
            TailCase::SpecialLongTail => "special",
            TailCase::ShortTail => "short",
        }
    }
}

/// Critical-orbit shape `f^r(0) = -f^s(0)` together with its case tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct PortraitParams {
    r: usize,
    s: usize,
    case: TailCase,
}

impl PortraitParams {
    pub fn new(r: usize, s: usize) -> Result<PortraitParams, ParityError> {
        if s == 0 || r <= s || !(3..=40).contains(&r) {
            return Err(ParityError::InvalidParams { r, s });
        }
        let case = match (r, s) {
            (3, 2) => TailCase::SpecialLongTail,
            (_, 1) => TailCase::ShortTail,
            _ => TailCase::LongTail,
        };
        Ok(PortraitParams { r, s, case })
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn case(&self) -> TailCase {
        self.case
    }

    pub fn e(&self) -> usize {
        if self.case == TailCase::SpecialLongTail {
            2
        } else {
            1
        }
    }

    /// Highest anchor level of the P functionals at depth `n`, if any.
    pub fn p_max_level(&self, n: usize) -> Option<usize> {
        (n > self.r).then(|| n - 1 - self.r)
    }

    /// Highest anchor level of the R functional at depth `n`, if any.
    pub fn r_max_level(&self, n: usize) -> Option<usize> {
        match self.case {
            TailCase::LongTail => None,
            TailCase::SpecialLongTail => (n >= 5).then(|| n - 5),
            TailCase::ShortTail => (n > self.r).then(|| n - 1 - self.r),
        }
    }
}

/// `Σ linear + Π (Σ left)(Σ right)` over parity bits, all mod 2.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParityForm {
    pub linear: Vec<u64>,
    pub products: Vec<(Vec<u64>, Vec<u64>)>,
}

fn sum_bits(sigma: &TreeAutomorphism, nodes: &[u64]) -> bool {
    nodes.iter().fold(false, |acc, &i| acc ^ sigma.bit(i as usize))
}

impl ParityForm {
    pub fn eval(&self, sigma: &TreeAutomorphism) -> bool {
        let mut v = sum_bits(sigma, &self.linear);
        for (l, r) in &self.products {
            v ^= sum_bits(sigma, l) & sum_bits(sigma, r);
        }
        v
    }

    /// Highest level among the nodes used.
    pub fn max_level(&self) -> usize {
        self.linear
            .iter()
            .chain(self.products.iter().flat_map(|(l, r)| l.iter().chain(r)))
            .map(|&i| TreeWord::from_index(i).len())
            .max()
            .unwrap_or(0)
    }
}

fn ext(x: TreeWord, k: usize) -> Vec<u64> {
    x.extension_range(k).collect()
}

/// `Σ_{|w|=r-1} Par(x·first·w) + Σ_{|w'|=s-1} Par(x·second·w')`.
fn p_form(first: TreeWord, second: TreeWord, r: usize, s: usize) -> ParityForm {
    let mut linear = ext(first, r - 1);
    linear.extend(ext(second, s - 1));
    ParityForm {
        linear,
        products: Vec::new(),
    }
}

pub fn p_a_form(x: TreeWord, params: &PortraitParams) -> ParityForm {
    p_form(x.a(), x.b(), params.r, params.s)
}

pub fn p_b_form(x: TreeWord, params: &PortraitParams) -> ParityForm {
    p_form(x.b(), x.a(), params.r, params.s)
}

pub fn v32_form(y: TreeWord) -> ParityForm {
    let mut linear = ext(y, 2);
    linear.extend(ext(y, 1));
    ParityForm {
        linear,
        products: Vec::new(),
    }
}

pub fn r32_form(x: TreeWord) -> ParityForm {
    let mut linear = Vec::with_capacity(16);
    for w in x.extension_range(2).map(TreeWord::from_index) {
        linear.push(w.index());
        linear.push(w.b().index());
        linear.extend(ext(w.a(), 1));
    }
    let left = vec![x.a().a().index(), x.a().b().index()];
    let right = vec![x.b().a().index(), x.b().b().index()];
    ParityForm {
        linear,
        products: vec![(left, right)],
    }
}

pub fn r_r1_form(x: TreeWord, r: usize) -> ParityForm {
    let mut linear = ext(x.a().b(), r - 2);
    linear.extend(ext(x.b().b(), r - 2));
    ParityForm {
        linear,
        products: vec![(vec![x.a().index()], vec![x.b().index()])],
    }
}

fn check_level(x: TreeWord, depth: usize, max: isize) -> Result<(), ParityError> {
    if (x.len() as isize) > max {
        Err(ParityError::LevelTooHigh {
            level: x.len(),
            depth,
            max,
        })
    } else {
        Ok(())
    }
}

pub fn p_a(sigma: &TreeAutomorphism, x: TreeWord, params: &PortraitParams) -> Result<bool, ParityError> {
    let n = sigma.depth();
    check_level(x, n, n as isize - 1 - params.r as isize)?;
    Ok(p_a_form(x, params).eval(sigma))
}

pub fn p_b(sigma: &TreeAutomorphism, x: TreeWord, params: &PortraitParams) -> Result<bool, ParityError> {
    let n = sigma.depth();
    check_level(x, n, n as isize - 1 - params.r as isize)?;
    Ok(p_b_form(x, params).eval(sigma))
}

pub fn v32(sigma: &TreeAutomorphism, y: TreeWord) -> Result<bool, ParityError> {
    let n = sigma.depth();
    check_level(y, n, n as isize - 3)?;
    Ok(v32_form(y).eval(sigma))
}

pub fn r32(sigma: &TreeAutomorphism, x: TreeWord) -> Result<bool, ParityError> {
    let n = sigma.depth();
    check_level(x, n, n as isize - 5)?;
    Ok(r32_form(x).eval(sigma))
}

pub fn r_r1(sigma: &TreeAutomorphism, x: TreeWord, r: usize) -> Result<bool, ParityError> {
    if r < 2 {
        return Err(ParityError::InvalidParams { r, s: 1 });
    }
    let n = sigma.depth();
    check_level(x, n, n as isize - 1 - r as isize)?;
    Ok(r_r1_form(x, r).eval(sigma))
}

/// The R functional of the case at `x` (none for the long-tail case).
pub fn r_functional(sigma: &TreeAutomorphism, x: TreeWord, params: &PortraitParams) -> Result<bool, ParityError> {
    match params.case {
        TailCase::LongTail => Err(ParityError::NoRFunctional),
        TailCase::SpecialLongTail => r32(sigma, x),
        TailCase::ShortTail => r_r1(sigma, x, params.r),
    }
}

/// Forms of the R functional for every anchor at depth `n`.
pub fn r_forms(params: &PortraitParams, n: usize) -> Vec<(TreeWord, ParityForm)> {
    let Some(max) = params.r_max_level(n) else {
        return Vec::new();
    };
    (0..=max)
        .flat_map(TreeWord::level)
        .map(|x| {
            let f = match params.case {
                TailCase::SpecialLongTail => r32_form(x),
                _ => r_r1_form(x, params.r),
            };
            (x, f)
        })
        .collect()
}

/// Forms `(P^a, P^b)` for every anchor at depth `n`.
pub fn p_forms(params: &PortraitParams, n: usize) -> Vec<(TreeWord, ParityForm, ParityForm)> {
    let Some(max) = params.p_max_level(n) else {
        return Vec::new();
    };
    (0..=max)
        .flat_map(TreeWord::level)
        .map(|x| (x, p_a_form(x, params), p_b_form(x, params)))
        .collect()
}

/// The four finite-depth groups attached to a portrait.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum GroupVariant {
    /// Common P value.
    Mp,
    /// Common P value equal to 0.
    Bp,
    /// `Mp` plus the R condition of the case.
    TMp,
    /// `Bp` plus R = 0.
    TBp,
}

impl GroupVariant {
    pub const ALL: [GroupVariant; 4] = [GroupVariant::Mp, GroupVariant::Bp, GroupVariant::TMp, GroupVariant::TBp];

    pub fn name(self) -> &'static str {
        match self {
            GroupVariant::Mp => "Mp",
            GroupVariant::Bp => "Bp",
            GroupVariant::TMp => "tMp",
            GroupVariant::TBp => "tBp",
        }
    }
}

impl std::str::FromStr for GroupVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        GroupVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown group variant {s:?} (expected Mp, Bp, tMp or tBp)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// `P^a(σ, x) != P^b(σ, x)`.
    PaNePb,
    /// P value at this node differs from the value at the root.
    PInconsistent,
    /// P is constant but equals 1 where 0 is required.
    PNonzero,
    /// R value at this node differs from the value at the root.
    RInconsistent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub node: TreeWord,
    pub kind: ViolationKind,
}

/// Image in the quotient group: P, (P, R) or R depending on the case.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HValue {
    P(bool),
    PR(bool, bool),
    R(bool),
}

impl HValue {
    pub fn bits(&self) -> Vec<u8> {
        match *self {
            HValue::P(p) => vec![p as u8],
            HValue::PR(p, r) => vec![p as u8, r as u8],
            HValue::R(r) => vec![r as u8],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.bits().iter().all(|&b| b == 0)
    }
}

impl Serialize for HValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.bits().serialize(serializer)
    }
}

fn opt_bit<S: Serializer>(v: &Option<bool>, serializer: S) -> Result<S::Ok, S::Error> {
    v.map(|b| b as u8).serialize(serializer)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MembershipReport {
    /// Membership in the case's group (`TMp`).
    pub in_group: bool,
    #[serde(rename = "p", serialize_with = "opt_bit")]
    pub p_value: Option<bool>,
    #[serde(rename = "r", serialize_with = "opt_bit")]
    pub r_value: Option<bool>,
    #[serde(rename = "h")]
    pub h_value: Option<HValue>,
    pub violations: Vec<Violation>,
    pub in_mp: bool,
    pub in_bp: bool,
    pub in_tbp: bool,
    pub p_nonvacuous: bool,
    pub r_nonvacuous: bool,
}

impl MembershipReport {
    pub fn satisfies(&self, variant: GroupVariant) -> bool {
        match variant {
            GroupVariant::Mp => self.in_mp,
            GroupVariant::Bp => self.in_bp,
            GroupVariant::TMp => self.in_group,
            GroupVariant::TBp => self.in_tbp,
        }
    }
}

/// Evaluates every P and R condition of the case at the depth of `sigma`.
pub fn membership(sigma: &TreeAutomorphism, params: &PortraitParams) -> MembershipReport {
    let n = sigma.depth();
    let mut violations = Vec::new();

    let pforms = p_forms(params, n);
    let p_nonvacuous = !pforms.is_empty();
    let mut p_ref = None;
    for (x, fa, fb) in &pforms {
        let (va, vb) = (fa.eval(sigma), fb.eval(sigma));
        let reference = *p_ref.get_or_insert(va);
        if va != vb {
            violations.push(Violation {
                node: *x,
                kind: ViolationKind::PaNePb,
            });
        } else if va != reference {
            violations.push(Violation {
                node: *x,
                kind: ViolationKind::PInconsistent,
            });
        }
    }
    let in_mp = violations.is_empty();
    let p_value = if in_mp { p_ref } else { None };
    let in_bp = in_mp && p_value != Some(true);

    let rforms = r_forms(params, n);
    let r_nonvacuous = !rforms.is_empty();
    let mut r_ref = None;
    let mut r_const = true;
    let mut r_violations = Vec::new();
    for (x, f) in &rforms {
        let v = f.eval(sigma);
        if v != *r_ref.get_or_insert(v) {
            r_const = false;
            r_violations.push(Violation {
                node: *x,
                kind: ViolationKind::RInconsistent,
            });
        }
    }
    let r_value = if r_const { r_ref } else { None };

    let in_group = match params.case {
        TailCase::LongTail => in_mp,
        TailCase::SpecialLongTail => in_mp && r_const,
        TailCase::ShortTail => {
            if in_mp && !in_bp {
                violations.push(Violation {
                    node: TreeWord::ROOT,
                    kind: ViolationKind::PNonzero,
                });
            }
            in_bp && r_const
        }
    };
    violations.extend(r_violations);
    let in_tbp = match params.case {
        TailCase::LongTail => in_bp,
        _ => in_bp && r_const && r_value != Some(true),
    };
    let h_value = if !in_group {
        None
    } else {
        match params.case {
            TailCase::LongTail => p_value.map(HValue::P),
            TailCase::SpecialLongTail => p_value.zip(r_value).map(|(p, r)| HValue::PR(p, r)),
            TailCase::ShortTail => r_value.map(HValue::R),
        }
    };
    MembershipReport {
        in_group,
        p_value,
        r_value,
        h_value,
        violations,
        in_mp,
        in_bp,
        in_tbp,
        p_nonvacuous,
        r_nonvacuous,
    }
}

/// Common P value; requires membership in `Mp` with nonvacuous constraints.
pub fn p_value(sigma: &TreeAutomorphism, params: &PortraitParams) -> Result<bool, ParityError> {
    let rep = membership(sigma, params);
    if !rep.p_nonvacuous {
        return Err(ParityError::Vacuous(sigma.depth()));
    }
    rep.p_value.filter(|_| rep.in_mp).ok_or(ParityError::NotMember)
}

/// Common R value; requires membership in the case's group.
pub fn r_value(sigma: &TreeAutomorphism, params: &PortraitParams) -> Result<bool, ParityError> {
    if params.case == TailCase::LongTail {
        return Err(ParityError::NoRFunctional);
    }
    let rep = membership(sigma, params);
    if !rep.r_nonvacuous {
        return Err(ParityError::Vacuous(sigma.depth()));
    }
    if !rep.in_group {
        return Err(ParityError::NotMember);
    }
    rep.r_value.ok_or(ParityError::NotMember)
}
