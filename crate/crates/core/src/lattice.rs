//! The lattice of task groups ordered by inclusion.
//!
//! A node is a nonempty subset of the `T` tasks, stored as a 64-bit mask. In
//! the normal orientation the ancestors of a group are its nonempty subsets and
//! its descendants are its supersets; the inverted orientation swaps the two,
//! making the full group the root.
//!
//! The closed forms here (interval weight sums and the descendant certificate
//! sum) assume level-decomposable weights `d_v = scale * ratio^{|v|}`; their
//! enumeration twins live in [`crate::oracles`].

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported task count (one bit per task).
pub const MAX_TASKS: usize = 64;

/// A nonempty set of task indices.
///
/// Ordering is by cardinality first, then by mask value, so iteration over a
/// `BTreeSet<TaskGroup>` visits singletons, then pairs, and so on.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskGroup(u64);

impl TaskGroup {
    pub fn from_mask(mask: u64) -> Result<Self> {
        if mask == 0 {
            return Err(Error::Lattice("a task group must be nonempty".into()));
        }
        Ok(TaskGroup(mask))
    }

    pub fn from_tasks<I: IntoIterator<Item = usize>>(tasks: I) -> Result<Self> {
        let mut mask = 0u64;
        for t in tasks {
            if t >= MAX_TASKS {
                return Err(Error::Lattice(format!("task index {t} exceeds {MAX_TASKS}")));
            }
            mask |= 1 << t;
        }
        Self::from_mask(mask)
    }

    pub fn singleton(task: usize) -> Self {
        assert!(task < MAX_TASKS);
        TaskGroup(1 << task)
    }

    /// The group of all `num_tasks` tasks.
    pub fn full(num_tasks: usize) -> Self {
        assert!((1..=MAX_TASKS).contains(&num_tasks));
        TaskGroup(universe_mask(num_tasks))
    }

    #[inline]
    pub fn mask(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Always false; kept for API symmetry with collections.
    #[inline]
    pub fn is_empty(self) -> bool {
        false
    }

    #[inline]
    pub fn contains(self, task: usize) -> bool {
        task < MAX_TASKS && self.0 & (1 << task) != 0
    }

    #[inline]
    pub fn is_subset_of(self, other: TaskGroup) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn members(self) -> impl Iterator<Item = usize> {
        let mut rest = self.0;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let t = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(t)
            }
        })
    }

    /// Largest member index plus one.
    pub fn span(self) -> usize {
        64 - self.0.leading_zeros() as usize
    }

    pub fn with(self, task: usize) -> TaskGroup {
        TaskGroup(self.0 | (1 << task))
    }

    /// Removes `task`; `None` if the result would be empty.
    pub fn without(self, task: usize) -> Option<TaskGroup> {
        let m = self.0 & !(1 << task);
        (m != 0).then_some(TaskGroup(m))
    }
}

impl Ord for TaskGroup {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len().cmp(&other.len()).then(self.0.cmp(&other.0))
    }
}

impl PartialOrd for TaskGroup {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for TaskGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for TaskGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, t) in self.members().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{t}")?;
        }
        f.write_str("}")
    }
}

#[inline]
pub(crate) fn universe_mask(num_tasks: usize) -> u64 {
    if num_tasks >= 64 {
        u64::MAX
    } else {
        (1u64 << num_tasks) - 1
    }
}

/// Iterates every nonempty submask of `mask`.
pub(crate) fn nonempty_submasks(mask: u64) -> impl Iterator<Item = u64> {
    let mut sub = mask;
    let mut done = mask == 0;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        let cur = sub;
        sub = sub.wrapping_sub(1) & mask;
        done = sub == 0;
        Some(cur)
    })
}

/// Whether the level used by a [`GroupWeightScheme`] counts members or non-members.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelCounting {
    /// `d_v = a^{|v|}`.
    Cardinality,
    /// `d_v = a^{T - |v|}` for a fixed task count `T`.
    Complement(usize),
}

/// Node weights `d_v`, a function of `|v|` only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupWeightScheme {
    pub base: f64,
    /// Optional replacement weight per cardinality `|v|` (index 0 unused).
    #[serde(default)]
    pub overrides: Vec<Option<f64>>,
    pub counting: LevelCounting,
}

impl GroupWeightScheme {
    pub fn power(base: f64) -> Self {
        GroupWeightScheme { base, overrides: Vec::new(), counting: LevelCounting::Cardinality }
    }

    pub fn with_override(mut self, cardinality: usize, weight: f64) -> Self {
        if self.overrides.len() <= cardinality {
            self.overrides.resize(cardinality + 1, None);
        }
        self.overrides[cardinality] = Some(weight);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base > 0.0 && self.base.is_finite()) {
            return Err(Error::InvalidParam(format!("weight base must be positive, got {}", self.base)));
        }
        if self.overrides.iter().flatten().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParam("weight overrides must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn has_overrides(&self) -> bool {
        self.overrides.iter().any(Option::is_some)
    }

    /// `d_v` for a group of the given cardinality.
    pub fn weight_for_cardinality(&self, card: usize) -> f64 {
        if let Some(Some(w)) = self.overrides.get(card) {
            return *w;
        }
        let level = match self.counting {
            LevelCounting::Cardinality => card as i32,
            LevelCounting::Complement(t) => t as i32 - card as i32,
        };
        self.base.powi(level)
    }

    /// The scheme as `scale * ratio^{|v|}`; fails when overrides are present.
    pub fn power_form(&self) -> Result<(f64, f64)> {
        if self.has_overrides() {
            return Err(Error::Lattice(
                "closed-form sums need d_v = scale * ratio^|v|; per-level overrides are not supported".into(),
            ));
        }
        Ok(match self.counting {
            LevelCounting::Cardinality => (1.0, self.base),
            LevelCounting::Complement(t) => (self.base.powi(t as i32), 1.0 / self.base),
        })
    }
}

/// `d_v` for group `v`.
pub fn group_weight(v: TaskGroup, scheme: &GroupWeightScheme) -> f64 {
    scheme.weight_for_cardinality(v.len())
}

/// Exact binomial coefficient as f64; zero outside `0 <= k <= n`.
pub fn binomial(n: i64, k: i64) -> f64 {
    if k < 0 || n < 0 || k > n {
        return 0.0;
    }
    let k = k.min(n - k) as u128;
    let n = n as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        // exact: acc * (n - i) is divisible by (i + 1) after the multiply
        acc = acc * (n - i) / (i + 1);
    }
    acc as f64
}

/// Lattice direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Subsets are ancestors; the search starts from singletons.
    #[default]
    Normal,
    /// Supersets are ancestors; the search starts from the full group.
    Inverted,
}

impl std::str::FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Orientation::Normal),
            "inverted" => Ok(Orientation::Inverted),
            _ => Err(Error::InvalidParam(format!("orientation must be normal or inverted, got {s:?}"))),
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::Normal => "normal",
            Orientation::Inverted => "inverted",
        })
    }
}

/// Aggregated per-task and per-pair quantities feeding the certificate sum.
///
/// `pair` is a row-major `T x T` matrix; its diagonal is ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct CertificateBlocks {
    pub diag: Vec<f64>,
    pub pair: Vec<f64>,
}

impl CertificateBlocks {
    pub fn num_tasks(&self) -> usize {
        self.diag.len()
    }

    #[inline]
    pub fn b(&self, t1: usize, t2: usize) -> f64 {
        self.pair[t1 * self.diag.len() + t2]
    }

    /// `sum_{t in w} A_t + sum_{t1 != t2 in w} B_{t1 t2}` over ordered pairs.
    pub fn group_numerator(&self, w: TaskGroup) -> f64 {
        let mut acc = 0.0;
        for t1 in w.members() {
            acc += self.diag[t1];
            for t2 in w.members() {
                if t1 != t2 {
                    acc += self.b(t1, t2);
                }
            }
        }
        acc
    }

    fn check(&self) -> Result<()> {
        let t = self.diag.len();
        if self.pair.len() != t * t {
            return Err(Error::Lattice(format!("pair block has {} entries, expected {}", self.pair.len(), t * t)));
        }
        let scale = self.pair.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..t {
            for j in (i + 1)..t {
                if (self.b(i, j) - self.b(j, i)).abs() > 1e-12 * scale {
                    return Err(Error::Lattice(format!("pair block is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }
}

/// The task-group lattice for a fixed task count and orientation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lattice {
    num_tasks: usize,
    orientation: Orientation,
}

impl Lattice {
    pub fn new(num_tasks: usize, orientation: Orientation) -> Result<Self> {
        if !(1..=MAX_TASKS).contains(&num_tasks) {
            return Err(Error::Lattice(format!("task count must be in 1..={MAX_TASKS}, got {num_tasks}")));
        }
        Ok(Lattice { num_tasks, orientation })
    }

    pub fn normal(num_tasks: usize) -> Result<Self> {
        Self::new(num_tasks, Orientation::Normal)
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn universe(&self) -> TaskGroup {
        TaskGroup::full(self.num_tasks)
    }

    pub fn contains(&self, w: TaskGroup) -> bool {
        w.is_subset_of(self.universe())
    }

    fn check_group(&self, w: TaskGroup) -> Result<()> {
        if self.contains(w) {
            Ok(())
        } else {
            Err(Error::Lattice(format!("group {w} is outside a lattice of {} tasks", self.num_tasks)))
        }
    }

    /// Size of the full lattice, `2^T - 1`.
    pub fn size(&self) -> u128 {
        (1u128 << self.num_tasks) - 1
    }

    /// `a` is in `A(b)` (reflexive).
    #[inline]
    pub fn is_ancestor(&self, a: TaskGroup, b: TaskGroup) -> bool {
        match self.orientation {
            Orientation::Normal => a.is_subset_of(b),
            Orientation::Inverted => b.is_subset_of(a),
        }
    }

    /// `A(w)`, including `w` itself.
    pub fn ancestors(&self, w: TaskGroup) -> Vec<TaskGroup> {
        let mut out: Vec<TaskGroup> = match self.orientation {
            Orientation::Normal => nonempty_submasks(w.mask()).map(TaskGroup).collect(),
            Orientation::Inverted => {
                let free = self.universe().mask() & !w.mask();
                std::iter::once(w.mask())
                    .chain(nonempty_submasks(free).map(|m| m | w.mask()))
                    .map(TaskGroup)
                    .collect()
            }
        };
        out.sort();
        out
    }

    /// `D(w)`, including `w` itself.
    pub fn descendants(&self, w: TaskGroup) -> Vec<TaskGroup> {
        let flipped = Lattice { num_tasks: self.num_tasks, orientation: self.flipped() };
        flipped.ancestors(w)
    }

    fn flipped(&self) -> Orientation {
        match self.orientation {
            Orientation::Normal => Orientation::Inverted,
            Orientation::Inverted => Orientation::Normal,
        }
    }

    /// Immediate predecessors of `w`.
    pub fn parents(&self, w: TaskGroup) -> Vec<TaskGroup> {
        match self.orientation {
            Orientation::Normal => w.members().filter_map(|t| w.without(t)).collect(),
            Orientation::Inverted => (0..self.num_tasks).filter(|&t| !w.contains(t)).map(|t| w.with(t)).collect(),
        }
    }

    /// Nodes without parents: the singletons (normal) or the full group (inverted).
    pub fn roots(&self) -> Vec<TaskGroup> {
        match self.orientation {
            Orientation::Normal => (0..self.num_tasks).map(TaskGroup::singleton).collect(),
            Orientation::Inverted => vec![self.universe()],
        }
    }

    /// The starting active set of the search.
    pub fn initial_active_set(&self) -> BTreeSet<TaskGroup> {
        self.roots().into_iter().collect()
    }

    /// Closure of `set` under ancestors.
    pub fn hull<'a, I>(&self, set: I) -> BTreeSet<TaskGroup>
    where
        I: IntoIterator<Item = &'a TaskGroup>,
    {
        let mut out = BTreeSet::new();
        for &w in set {
            if out.contains(&w) {
                continue;
            }
            out.extend(self.ancestors(w));
        }
        out
    }

    pub fn is_hull(&self, set: &BTreeSet<TaskGroup>) -> bool {
        set.iter().all(|&w| self.parents(w).iter().all(|p| set.contains(p)))
    }

    /// Nodes outside `active` whose parents all lie inside it.
    pub fn sources_of_complement(&self, active: &BTreeSet<TaskGroup>) -> Result<Vec<TaskGroup>> {
        for &w in active {
            self.check_group(w)?;
        }
        if !self.is_hull(active) {
            return Err(Error::Lattice("active set is not closed under ancestors".into()));
        }
        let mut candidates = BTreeSet::new();
        for r in self.roots() {
            if !active.contains(&r) {
                candidates.insert(r);
            }
        }
        for &w in active {
            match self.orientation {
                Orientation::Normal => {
                    for t in 0..self.num_tasks {
                        if !w.contains(t) {
                            candidates.insert(w.with(t));
                        }
                    }
                }
                Orientation::Inverted => {
                    for t in w.members() {
                        if let Some(c) = w.without(t) {
                            candidates.insert(c);
                        }
                    }
                }
            }
        }
        Ok(candidates
            .into_iter()
            .filter(|c| !active.contains(c) && self.parents(*c).iter().all(|p| active.contains(p)))
            .collect())
    }

    /// `sum_{v in A(lower) ∩ D(upper)} d_v` for `upper` an ancestor of `lower`.
    pub fn interval_weight_sum(&self, upper: TaskGroup, lower: TaskGroup, scheme: &GroupWeightScheme) -> Result<f64> {
        self.check_group(upper)?;
        self.check_group(lower)?;
        if !self.is_ancestor(upper, lower) {
            return Err(Error::Lattice(format!("{upper} is not an ancestor of {lower}")));
        }
        let (scale, ratio) = scheme.power_form()?;
        let (small, big) = match self.orientation {
            Orientation::Normal => (upper, lower),
            Orientation::Inverted => (lower, upper),
        };
        Ok(scale * ratio.powi(small.len() as i32) * (1.0 + ratio).powi((big.len() - small.len()) as i32))
    }

    /// Left-hand side of the optimality certificate for source node `s`:
    /// `sum_{w in D(s)} num(w) / (sum_{v in A(w) ∩ D(s)} d_v)^2`, where `num(w)`
    /// is [`CertificateBlocks::group_numerator`]. Runs in `O(T^2)` by counting
    /// how often each task and task pair appears among descendants of each size.
    pub fn descendant_certificate_sum(
        &self,
        s: TaskGroup,
        blocks: &CertificateBlocks,
        scheme: &GroupWeightScheme,
    ) -> Result<f64> {
        self.check_group(s)?;
        if blocks.num_tasks() != self.num_tasks {
            return Err(Error::Lattice(format!(
                "certificate blocks cover {} tasks, lattice has {}",
                blocks.num_tasks(),
                self.num_tasks
            )));
        }
        blocks.check()?;
        let (scale, ratio) = scheme.power_form()?;

        let t = self.num_tasks;
        let (mut in_a, mut in_b, mut out_a, mut cross, mut out_b) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for t1 in 0..t {
            let a_in = s.contains(t1);
            if a_in {
                in_a += blocks.diag[t1];
            } else {
                out_a += blocks.diag[t1];
            }
            for t2 in 0..t {
                if t1 == t2 {
                    continue;
                }
                let b = blocks.b(t1, t2);
                match (a_in, s.contains(t2)) {
                    (true, true) => in_b += b,
                    (false, false) => out_b += b,
                    (true, false) => cross += b,
                    (false, true) => {}
                }
            }
        }

        let k = s.len() as i64;
        let mut total = 0.0;
        match self.orientation {
            Orientation::Normal => {
                // supersets w = s ∪ U, |U| = r, U drawn from the R outside tasks
                let rest = t as i64 - k;
                let base = scale * ratio.powi(k as i32);
                for r in 0..=rest {
                    let numer = binomial(rest, r) * (in_a + in_b)
                        + binomial(rest - 1, r - 1) * (out_a + 2.0 * cross)
                        + binomial(rest - 2, r - 2) * out_b;
                    let denom = base * (1.0 + ratio).powi(r as i32);
                    total += numer / (denom * denom);
                }
            }
            Orientation::Inverted => {
                // nonempty subsets w of s, grouped by |w| = size
                for size in 1..=k {
                    let numer = binomial(k - 1, size - 1) * in_a + binomial(k - 2, size - 2) * in_b;
                    let denom = scale * ratio.powi(size as i32) * (1.0 + ratio).powi((k - size) as i32);
                    total += numer / (denom * denom);
                }
            }
        }
        Ok(total)
    }
}

/// `A(w)` in the normal orientation.
pub fn ancestors(w: TaskGroup) -> Vec<TaskGroup> {
    let lat = Lattice { num_tasks: w.span().max(1), orientation: Orientation::Normal };
    lat.ancestors(w)
}

/// Hull of `set` in the normal orientation.
pub fn hull<'a, I: IntoIterator<Item = &'a TaskGroup>>(set: I) -> BTreeSet<TaskGroup> {
    let lat = Lattice { num_tasks: MAX_TASKS, orientation: Orientation::Normal };
    lat.hull(set)
}

/// Sources of the complement of `active` in the normal lattice over `num_tasks` tasks.
pub fn sources_of_complement(active: &BTreeSet<TaskGroup>, num_tasks: usize) -> Result<Vec<TaskGroup>> {
    Lattice::normal(num_tasks)?.sources_of_complement(active)
}

/// Normal-orientation interval sum `sum_{s ⊆ v ⊆ w} d_v`.
pub fn interval_weight_sum(s: TaskGroup, w: TaskGroup, scheme: &GroupWeightScheme) -> Result<f64> {
    Lattice::normal(w.span().max(s.span()).max(1))?.interval_weight_sum(s, w, scheme)
}

/// Normal-orientation descendant certificate sum.
pub fn descendant_certificate_sum(s: TaskGroup, blocks: &CertificateBlocks, scheme: &GroupWeightScheme) -> Result<f64> {
    Lattice::normal(blocks.num_tasks())?.descendant_certificate_sum(s, blocks, scheme)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(ts: &[usize]) -> TaskGroup {
        TaskGroup::from_tasks(ts.iter().copied()).unwrap()
    }

    fn set(groups: &[&[usize]]) -> BTreeSet<TaskGroup> {
        groups.iter().map(|ts| g(ts)).collect()
    }

    #[test]
    fn empty_group_rejected() {
        assert!(TaskGroup::from_mask(0).is_err());
        assert!(TaskGroup::from_tasks([]).is_err());
    }

    #[test]
    fn ordering_is_cardinality_then_mask() {
        let mut v = vec![g(&[0, 1]), g(&[2]), g(&[0]), g(&[0, 1, 2]), g(&[1, 2])];
        v.sort();
        assert_eq!(v, vec![g(&[0]), g(&[2]), g(&[0, 1]), g(&[1, 2]), g(&[0, 1, 2])]);
    }

    #[test]
    fn ancestors_small_cases() {
        assert_eq!(ancestors(g(&[0])), vec![g(&[0])]);
        assert_eq!(ancestors(g(&[0, 1])), vec![g(&[0]), g(&[1]), g(&[0, 1])]);
        assert_eq!(ancestors(g(&[0, 1, 2])).len(), 7);
    }

    #[test]
    fn hull_small_cases() {
        assert_eq!(hull(&set(&[&[0, 1]])), set(&[&[0], &[1], &[0, 1]]));
        assert!(hull(&BTreeSet::new()).is_empty());
        assert_eq!(hull(&set(&[&[0, 1, 2]])).len(), 7);
    }

    #[test]
    fn sources_small_cases() {
        let w = set(&[&[0], &[1], &[2]]);
        assert_eq!(sources_of_complement(&w, 3).unwrap(), vec![g(&[0, 1]), g(&[0, 2]), g(&[1, 2])]);
        let full = set(&[&[0], &[1], &[0, 1]]);
        assert!(sources_of_complement(&full, 2).unwrap().is_empty());
        assert_eq!(sources_of_complement(&set(&[&[0], &[1]]), 2).unwrap(), vec![g(&[0, 1])]);
    }

    #[test]
    fn sources_include_missing_singletons() {
        assert_eq!(sources_of_complement(&set(&[&[0]]), 2).unwrap(), vec![g(&[1])]);
        assert_eq!(sources_of_complement(&BTreeSet::new(), 2).unwrap(), vec![g(&[0]), g(&[1])]);
    }

    #[test]
    fn sources_reject_non_hull() {
        assert!(sources_of_complement(&set(&[&[0, 1]]), 2).is_err());
    }

    #[test]
    fn group_weights() {
        let s = GroupWeightScheme::power(1.5);
        assert!((group_weight(g(&[0, 1]), &s) - 2.25).abs() < 1e-15);
        assert_eq!(group_weight(g(&[3]), &GroupWeightScheme::power(1.0)), 1.0);
        let o = GroupWeightScheme::power(1.5).with_override(1, 0.0);
        assert_eq!(group_weight(g(&[0]), &o), 0.0);
        assert!((group_weight(g(&[0, 1]), &o) - 2.25).abs() < 1e-15);
    }

    #[test]
    fn scheme_validation() {
        assert!(GroupWeightScheme::power(0.0).validate().is_err());
        assert!(GroupWeightScheme::power(1.0).with_override(2, -1.0).validate().is_err());
        assert!(GroupWeightScheme::power(1.5).with_override(2, 0.0).validate().is_ok());
    }

    #[test]
    fn interval_sums() {
        let s15 = GroupWeightScheme::power(1.5);
        assert!((interval_weight_sum(g(&[0]), g(&[0, 1]), &s15).unwrap() - 3.75).abs() < 1e-12);
        let w = g(&[1, 3]);
        assert!((interval_weight_sum(w, w, &s15).unwrap() - 2.25).abs() < 1e-12);
        let s1 = GroupWeightScheme::power(1.0);
        assert!((interval_weight_sum(g(&[0]), g(&[0, 1, 2]), &s1).unwrap() - 4.0).abs() < 1e-12);
        assert!(interval_weight_sum(g(&[2]), g(&[0, 1]), &s15).is_err());
        assert!(interval_weight_sum(g(&[0]), g(&[0, 1]), &s15.clone().with_override(1, 0.0)).is_err());
    }

    #[test]
    fn certificate_sum_small_cases() {
        let one = CertificateBlocks { diag: vec![3.0], pair: vec![0.0] };
        let v = descendant_certificate_sum(g(&[0]), &one, &GroupWeightScheme::power(1.5)).unwrap();
        assert!((v - 3.0 / 2.25).abs() < 1e-14);

        let two = CertificateBlocks { diag: vec![1.0, 1.0], pair: vec![0.0; 4] };
        let v = descendant_certificate_sum(g(&[0]), &two, &GroupWeightScheme::power(1.0)).unwrap();
        assert!((v - 1.5).abs() < 1e-14);

        let zero = CertificateBlocks { diag: vec![0.0; 3], pair: vec![0.0; 9] };
        assert_eq!(descendant_certificate_sum(g(&[1]), &zero, &GroupWeightScheme::power(1.5)).unwrap(), 0.0);
    }

    #[test]
    fn certificate_sum_rejects_bad_inputs() {
        let asym = CertificateBlocks { diag: vec![1.0, 1.0], pair: vec![0.0, 1.0, 2.0, 0.0] };
        assert!(descendant_certificate_sum(g(&[0]), &asym, &GroupWeightScheme::power(1.5)).is_err());
        let ok = CertificateBlocks { diag: vec![1.0, 1.0], pair: vec![0.0; 4] };
        let over = GroupWeightScheme::power(1.5).with_override(1, 2.0);
        assert!(descendant_certificate_sum(g(&[0]), &ok, &over).is_err());
    }

    #[test]
    fn binomials_exact() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(4, -1), 0.0);
        assert_eq!(binomial(3, 5), 0.0);
        assert_eq!(binomial(64, 32), 1_832_624_140_942_590_534u64 as f64);
        assert_eq!(binomial(0, 0), 1.0);
    }

    #[test]
    fn inverted_orientation_basics() {
        let lat = Lattice::new(2, Orientation::Inverted).unwrap();
        assert_eq!(lat.hull(&set(&[&[0]])), set(&[&[0], &[0, 1]]));
        let lat3 = Lattice::new(3, Orientation::Inverted).unwrap();
        assert_eq!(lat3.initial_active_set(), set(&[&[0, 1, 2]]));
        assert_eq!(lat3.descendants(g(&[0, 1])), vec![g(&[0]), g(&[1]), g(&[0, 1])]);
        let srcs = lat3.sources_of_complement(&set(&[&[0, 1, 2]])).unwrap();
        assert_eq!(srcs, vec![g(&[0, 1]), g(&[0, 2]), g(&[1, 2])]);
        // {0} needs both {0,1} and {0,2} present
        let w = set(&[&[0, 1, 2], &[0, 1]]);
        let srcs = lat3.sources_of_complement(&w).unwrap();
        assert_eq!(srcs, vec![g(&[0, 2]), g(&[1, 2])]);
    }

    #[test]
    fn inverted_interval_sum() {
        let lat = Lattice::new(3, Orientation::Inverted).unwrap();
        let s = GroupWeightScheme::power(1.5);
        // interval between {0,1,2} (ancestor) and {0} (descendant): 1.5 + 2*2.25 + 3.375
        let v = lat.interval_weight_sum(g(&[0, 1, 2]), g(&[0]), &s).unwrap();
        assert!((v - (1.5 + 4.5 + 3.375)).abs() < 1e-12);
        assert!(lat.interval_weight_sum(g(&[0]), g(&[0, 1]), &s).is_err());
    }

    #[test]
    fn complement_counting() {
        let s = GroupWeightScheme { base: 2.0, overrides: vec![], counting: LevelCounting::Complement(3) };
        assert_eq!(group_weight(g(&[0]), &s), 4.0);
        assert_eq!(group_weight(g(&[0, 1, 2]), &s), 1.0);
        let (scale, ratio) = s.power_form().unwrap();
        assert_eq!(scale * ratio.powi(2), 2.0);
    }
}
