//! Cyclic group arithmetic over `Z_M` and the pairwise relation operators
//! `a ⊖ b = (α·a + β·b) mod M` that satisfy two-sided cancellation.

use std::fmt;
use std::str::FromStr;

use num_integer::Integer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Group elements are stored as `u64` regardless of the modulus.
pub type Element = u64;

/// Largest modulus accepted by [`GroupSpec::new`].
pub const MAX_MODULUS: u64 = 1 << 62;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupError {
    #[error("modulus {0} out of range [2, 2^62]")]
    BadModulus(u64),
    #[error("element {element} out of range for modulus {modulus}")]
    OutOfRange { element: Element, modulus: u64 },
    #[error("operator {op} does not satisfy the cancellation axioms over Z_{modulus}")]
    InvalidOp { op: RelationOp, modulus: u64 },
    #[error("cannot parse operator tag {0:?}")]
    BadTag(String),
}

/// Minimal interface of a finite group acting as the value alphabet.
///
/// Only the cyclic group is implemented. Permutation or rotation groups would
/// plug in here; everything quantitative downstream depends only on `order()`.
pub trait FiniteGroup {
    type Elem: Copy + Eq;
    fn order(&self) -> u64;
    fn identity(&self) -> Self::Elem;
    fn compose(&self, a: Self::Elem, b: Self::Elem) -> Self::Elem;
    fn inverse(&self, a: Self::Elem) -> Self::Elem;
}

/// The cyclic group `Z_M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct GroupSpec {
    modulus: u64,
}

impl GroupSpec {
    pub fn new(modulus: u64) -> Result<Self, GroupError> {
        if !(2..=MAX_MODULUS).contains(&modulus) {
            return Err(GroupError::BadModulus(modulus));
        }
        Ok(Self { modulus })
    }

    #[inline]
    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    #[inline]
    pub fn contains(&self, e: Element) -> bool {
        e < self.modulus
    }

    pub fn check(&self, e: Element) -> Result<Element, GroupError> {
        if self.contains(e) {
            Ok(e)
        } else {
            Err(GroupError::OutOfRange {
                element: e,
                modulus: self.modulus,
            })
        }
    }

    /// Reduces an arbitrary signed integer into `[0, M)`.
    pub fn reduce(&self, v: i128) -> Element {
        v.rem_euclid(self.modulus as i128) as Element
    }

    #[inline]
    pub fn add(&self, a: Element, b: Element) -> Element {
        ((a as u128 + b as u128) % self.modulus as u128) as Element
    }

    #[inline]
    pub fn sub(&self, a: Element, b: Element) -> Element {
        if a >= b {
            a - b
        } else {
            self.modulus - (b - a)
        }
    }

    #[inline]
    pub fn neg(&self, a: Element) -> Element {
        if a == 0 {
            0
        } else {
            self.modulus - a
        }
    }

    #[inline]
    pub fn mul(&self, a: Element, b: Element) -> Element {
        ((a as u128 * b as u128) % self.modulus as u128) as Element
    }

    /// Multiplicative inverse of a unit of `Z_M`, `None` when `gcd(a, M) != 1`.
    pub fn inv(&self, a: Element) -> Option<Element> {
        let m = self.modulus as i128;
        let egcd = (a as i128).extended_gcd(&m);
        if egcd.gcd != 1 {
            return None;
        }
        Some(egcd.x.rem_euclid(m) as Element)
    }
}

impl TryFrom<u64> for GroupSpec {
    type Error = GroupError;
    fn try_from(m: u64) -> Result<Self, Self::Error> {
        GroupSpec::new(m)
    }
}

impl From<GroupSpec> for u64 {
    fn from(g: GroupSpec) -> u64 {
        g.modulus
    }
}

impl FiniteGroup for GroupSpec {
    type Elem = Element;
    fn order(&self) -> u64 {
        self.modulus
    }
    fn identity(&self) -> Element {
        0
    }
    fn compose(&self, a: Element, b: Element) -> Element {
        self.add(a, b)
    }
    fn inverse(&self, a: Element) -> Element {
        self.neg(a)
    }
}

/// The pairwise relation `⊖`. The variant tag is kept for reporting even
/// though `Difference` and `Sum` are special affine maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelationOp {
    Difference,
    Sum,
    Affine(i64, i64),
}

impl RelationOp {
    /// Coefficients `(α, β)` reduced into `[0, M)`.
    pub fn coefficients(&self, g: &GroupSpec) -> (Element, Element) {
        match *self {
            RelationOp::Difference => (1 % g.modulus(), g.modulus() - 1),
            RelationOp::Sum => (1 % g.modulus(), 1 % g.modulus()),
            RelationOp::Affine(a, b) => (g.reduce(a as i128), g.reduce(b as i128)),
        }
    }

    pub fn is_difference(&self) -> bool {
        matches!(self, RelationOp::Difference)
    }

    /// Serialization tag with affine coefficients reduced modulo `M`.
    pub fn tag(&self, g: &GroupSpec) -> String {
        match self {
            RelationOp::Difference => "diff".to_string(),
            RelationOp::Sum => "sum".to_string(),
            RelationOp::Affine(..) => {
                let (a, b) = self.coefficients(g);
                format!("affine:{a}:{b}")
            }
        }
    }
}

impl fmt::Display for RelationOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RelationOp::Difference => write!(f, "diff"),
            RelationOp::Sum => write!(f, "sum"),
            RelationOp::Affine(a, b) => write!(f, "affine:{a}:{b}"),
        }
    }
}

impl FromStr for RelationOp {
    type Err = GroupError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "diff" => Ok(RelationOp::Difference),
            "sum" => Ok(RelationOp::Sum),
            _ => {
                let bad = || GroupError::BadTag(s.to_string());
                let rest = s.strip_prefix("affine:").ok_or_else(bad)?;
                let (a, b) = rest.split_once(':').ok_or_else(bad)?;
                let a = a.parse::<i64>().map_err(|_| bad())?;
                let b = b.parse::<i64>().map_err(|_| bad())?;
                Ok(RelationOp::Affine(a, b))
            }
        }
    }
}

impl Serialize for RelationOp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RelationOp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// True iff `op` satisfies both cancellation axioms over `Z_M`, which for
/// affine maps is exactly `gcd(α, M) = gcd(β, M) = 1`.
pub fn validate_op(op: RelationOp, g: GroupSpec) -> bool {
    let (a, b) = op.coefficients(&g);
    a.gcd(&g.modulus()) == 1 && b.gcd(&g.modulus()) == 1
}

/// A relation operator validated against a group, with coefficients and
/// their inverses precomputed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Relation {
    op: RelationOp,
    group: GroupSpec,
    alpha: Element,
    beta: Element,
    alpha_inv: Element,
    beta_inv: Element,
}

impl Relation {
    pub fn new(op: RelationOp, group: GroupSpec) -> Result<Self, GroupError> {
        if !validate_op(op, group) {
            return Err(GroupError::InvalidOp {
                op,
                modulus: group.modulus(),
            });
        }
        let (alpha, beta) = op.coefficients(&group);
        // both are units after validation
        let alpha_inv = group.inv(alpha).expect("unit");
        let beta_inv = group.inv(beta).expect("unit");
        Ok(Self {
            op,
            group,
            alpha,
            beta,
            alpha_inv,
            beta_inv,
        })
    }

    pub fn difference(group: GroupSpec) -> Self {
        Self::new(RelationOp::Difference, group).expect("difference is always valid")
    }

    #[inline]
    pub fn op(&self) -> RelationOp {
        self.op
    }

    #[inline]
    pub fn group(&self) -> GroupSpec {
        self.group
    }

    #[inline]
    pub fn modulus(&self) -> u64 {
        self.group.modulus()
    }

    pub fn coefficients(&self) -> (Element, Element) {
        (self.alpha, self.beta)
    }

    pub fn tag(&self) -> String {
        self.op.tag(&self.group)
    }

    /// `a ⊖ b` without range checks; callers guarantee `a, b < M`.
    #[inline]
    pub fn apply(&self, a: Element, b: Element) -> Element {
        let g = &self.group;
        if self.op.is_difference() {
            return g.sub(a, b);
        }
        g.add(g.mul(self.alpha, a), g.mul(self.beta, b))
    }

    pub fn try_apply(&self, a: Element, b: Element) -> Result<Element, GroupError> {
        self.group.check(a)?;
        self.group.check(b)?;
        Ok(self.apply(a, b))
    }

    /// The unique `b` with `a ⊖ b = y`.
    #[inline]
    pub fn solve_right(&self, a: Element, y: Element) -> Element {
        let g = &self.group;
        if self.op.is_difference() {
            return g.sub(a, y);
        }
        g.mul(self.beta_inv, g.sub(y, g.mul(self.alpha, a)))
    }

    /// The unique `a` with `a ⊖ b = y`.
    #[inline]
    pub fn solve_left(&self, b: Element, y: Element) -> Element {
        let g = &self.group;
        if self.op.is_difference() {
            return g.add(y, b);
        }
        g.mul(self.alpha_inv, g.sub(y, g.mul(self.beta, b)))
    }
}

/// `a ⊖ b` for an unvalidated operator.
pub fn op_apply(
    op: RelationOp,
    g: GroupSpec,
    a: Element,
    b: Element,
) -> Result<Element, GroupError> {
    Relation::new(op, g)?.try_apply(a, b)
}

/// Full `n × n` matrix of pairwise relations `x_i ⊖ x_j`.
pub fn relation_matrix(
    x: &[Element],
    op: RelationOp,
    g: GroupSpec,
) -> Result<Vec<Vec<Element>>, GroupError> {
    let rel = Relation::new(op, g)?;
    for &v in x {
        g.check(v)?;
    }
    Ok(x.iter()
        .map(|&xi| x.iter().map(|&xj| rel.apply(xi, xj)).collect())
        .collect())
}
