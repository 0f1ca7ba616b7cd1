//! Recovery algorithms for the planted assignment.
//!
//! * [`recover_exhaustive`] maximizes the number of satisfied edges exactly.
//! * [`recover_cycle`] keeps only edges lying on a zero-sum `k`-cycle and
//!   integrates the survivors along a spanning tree (difference op only).
//! * [`recover_spectral`] rounds the top eigenvector of the phase matrix and
//!   polishes it with coordinate ascent (difference op only).
//! * [`recover_local_search`] is a general-op baseline: randomized restarts of
//!   coordinate ascent with block moves and majority propagation.
//!
//! All results are compared against the truth with [`success`], which checks
//! equality of the full relation matrices.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::ops::Deref;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::channel::{derive_seed, ObservationSet};
use crate::graphs::Graph;
use crate::group::{Element, GroupError, GroupSpec, Relation, RelationOp};

/// Default cap on enumerated states (exhaustive) and walks (cycle search).
pub const DEFAULT_BUDGET: u64 = 100_000_000;

/// Largest modulus accepted by the roots-of-unity embedding.
pub const SPECTRAL_MAX_MODULUS: u64 = 1 << 20;
pub const POWER_TOLERANCE: f64 = 1e-9;
pub const POWER_MAX_ITERATIONS: usize = 1000;

const LOCAL_SEARCH_DOMAIN: u64 = 0x6c6f_6361_6c5f_7273;
const BLOCK_CANDIDATES: usize = 8;
const ROOT_SCAN_MAX_MODULUS: u64 = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoverError {
    #[error("observations were not taken on this graph")]
    ShapeMismatch,
    #[error("search space {states} exceeds the budget {budget}")]
    SearchSpaceTooLarge { states: String, budget: u64 },
    #[error("operator {0} is not supported by this algorithm (difference only)")]
    UnsupportedOp(RelationOp),
    #[error("cycle enumeration exceeded the walk budget {budget}")]
    BudgetExceeded { budget: u64 },
    #[error("cycle order {0} must be at least 3")]
    InvalidCycleOrder(usize),
    #[error("modulus {modulus} exceeds the spectral limit {limit}")]
    ModulusTooLarge { modulus: u64, limit: u64 },
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// A value per vertex, each in `[0, M)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct Assignment(Vec<Element>);

impl Assignment {
    pub fn new(values: Vec<Element>, group: GroupSpec) -> Result<Self, GroupError> {
        for &v in &values {
            group.check(v)?;
        }
        Ok(Self(values))
    }

    /// Uniform random assignment.
    pub fn random(n: usize, group: GroupSpec, rng: &mut impl Rng) -> Self {
        Self((0..n).map(|_| rng.gen_range(0..group.modulus())).collect())
    }

    pub fn values(&self) -> &[Element] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Element> {
        self.0
    }

    /// For the difference op, shifts all values so that `x_0 = 0`; other ops
    /// are returned unchanged.
    pub fn canonical(mut self, rel: &Relation) -> Self {
        if rel.op().is_difference() {
            if let Some(&x0) = self.0.first() {
                let g = rel.group();
                for v in &mut self.0 {
                    *v = g.sub(*v, x0);
                }
            }
        }
        self
    }

    /// Text form: header `n M`, then one value per line.
    pub fn to_text(&self, group: GroupSpec) -> String {
        let mut s = format!("{} {}\n", self.0.len(), group.modulus());
        for v in &self.0 {
            s.push_str(&format!("{v}\n"));
        }
        s
    }

    pub fn from_text(s: &str) -> Result<(Self, GroupSpec), String> {
        let mut toks = s.split_whitespace();
        let mut next = |what: &str| -> Result<u64, String> {
            toks.next()
                .ok_or_else(|| format!("missing {what}"))?
                .parse::<u64>()
                .map_err(|e| format!("bad {what}: {e}"))
        };
        let n = next("n")? as usize;
        let group = GroupSpec::new(next("M")?).map_err(|e| e.to_string())?;
        let values = (0..n)
            .map(|_| next("value"))
            .collect::<Result<Vec<_>, _>>()?;
        if toks.next().is_some() {
            return Err("trailing data after assignment".into());
        }
        Ok((Self::new(values, group).map_err(|e| e.to_string())?, group))
    }
}

impl Deref for Assignment {
    type Target = [Element];
    fn deref(&self) -> &[Element] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureReason {
    Disconnected,
    Inconsistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryStatus {
    Recovered,
    Failed(FailureReason),
}

impl fmt::Display for RecoveryStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecoveryStatus::Recovered => write!(f, "Recovered"),
            RecoveryStatus::Failed(r) => write!(f, "Failed({r:?})"),
        }
    }
}

impl Serialize for RecoveryStatus {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Multiple maximizers with distinct relation matrices.
    pub tie: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pruned_edges: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycles_found: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub walks: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweeps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryResult {
    pub status: RecoveryStatus,
    pub assignment: Option<Assignment>,
    pub score: u64,
    pub diagnostics: Diagnostics,
}

impl RecoveryResult {
    pub fn is_recovered(&self) -> bool {
        self.status == RecoveryStatus::Recovered
    }

    fn failed(reason: FailureReason, diagnostics: Diagnostics) -> Self {
        Self {
            status: RecoveryStatus::Failed(reason),
            assignment: None,
            score: 0,
            diagnostics,
        }
    }
}

fn check_shape(g: &Graph, obs: &ObservationSet) -> Result<(), RecoverError> {
    if obs.matches(g) {
        Ok(())
    } else {
        Err(RecoverError::ShapeMismatch)
    }
}

fn require_difference(obs: &ObservationSet) -> Result<(), RecoverError> {
    let op = obs.relation().op();
    if op.is_difference() {
        Ok(())
    } else {
        Err(RecoverError::UnsupportedOp(op))
    }
}

/// Number of edges `(i, j)` with `y_ij = x_i ⊖ x_j`.
///
/// # Panics
/// If `obs` was not taken on `g` or `x` has the wrong length.
pub fn compatibility_score(g: &Graph, obs: &ObservationSet, x: &[Element]) -> u64 {
    assert!(obs.matches(g), "observations do not belong to this graph");
    assert_eq!(x.len(), g.n());
    let rel = obs.relation();
    g.edges()
        .iter()
        .zip(obs.values())
        .filter(|(&(i, j), &y)| rel.apply(x[i], x[j]) == y)
        .count() as u64
}

/// True iff both assignments induce the same relation matrix.
pub fn success(xhat: &[Element], xtrue: &[Element], rel: &Relation) -> bool {
    if xhat.len() != xtrue.len() {
        return false;
    }
    let n = xhat.len();
    (0..n).all(|i| (0..n).all(|j| rel.apply(xhat[i], xhat[j]) == rel.apply(xtrue[i], xtrue[j])))
}

// ---------------------------------------------------------------------------
// exhaustive maximum compatibility

fn search_space(modulus: u64, free: usize) -> Option<u128> {
    let mut total: u128 = 1;
    for _ in 0..free {
        total = total.checked_mul(modulus as u128)?;
    }
    Some(total)
}

/// Exact maximizer of [`compatibility_score`] with the default state budget.
pub fn recover_exhaustive(g: &Graph, obs: &ObservationSet) -> Result<RecoveryResult, RecoverError> {
    recover_exhaustive_with(g, obs, DEFAULT_BUDGET)
}

/// Exact maximizer of [`compatibility_score`]. Among maximizers the
/// lexicographically smallest value vector is returned (with `x_0 = 0` for the
/// difference op); `diagnostics.tie` is set when another maximizer has a
/// different relation matrix.
///
/// The nominal search space (`M^(n−1)` for difference, `M^n` otherwise) must
/// not exceed `budget`. The search itself is branch and bound with suffix
/// subproblem bounds, so it usually visits far fewer nodes.
pub fn recover_exhaustive_with(
    g: &Graph,
    obs: &ObservationSet,
    budget: u64,
) -> Result<RecoveryResult, RecoverError> {
    check_shape(g, obs)?;
    let rel = obs.relation();
    let n = g.n();
    let pinned = rel.op().is_difference();
    let free = if pinned { n.saturating_sub(1) } else { n };
    match search_space(rel.modulus(), free) {
        Some(s) if s <= budget as u128 => {}
        other => {
            return Err(RecoverError::SearchSpaceTooLarge {
                states: other
                    .map_or_else(|| format!("{}^{free}", rel.modulus()), |s| s.to_string()),
                budget,
            })
        }
    }
    if n == 0 {
        return Ok(RecoveryResult {
            status: RecoveryStatus::Recovered,
            assignment: Some(Assignment(Vec::new())),
            score: 0,
            diagnostics: Diagnostics {
                budget: Some(budget),
                nodes: Some(0),
                ..Default::default()
            },
        });
    }
    let mut search = BranchAndBound::new(g, obs);
    let (x, score, tie) = search.solve();
    let assignment = Assignment(x).canonical(&rel);
    debug_assert_eq!(compatibility_score(g, obs, &assignment), score);
    Ok(RecoveryResult {
        status: RecoveryStatus::Recovered,
        assignment: Some(assignment),
        score,
        diagnostics: Diagnostics {
            tie,
            nodes: Some(search.nodes),
            budget: Some(budget),
            ..Default::default()
        },
    })
}

struct BranchAndBound {
    n: usize,
    m: usize,
    rel: Relation,
    pinned: bool,
    // later neighbors (w > v) with y_vw
    fwd: Vec<Vec<(usize, Element)>>,
    // cnt[w * m + c]: assigned neighbors consistent with x_w = c
    cnt: Vec<u32>,
    best: Vec<u32>,
    undo: Vec<(usize, u32)>,
    x: Vec<Element>,
    // optimum of the subproblem induced on vertices d..n
    suffix: Vec<u64>,
    nodes: u64,
    // dense tables are only used when n·M is small; otherwise n is tiny
    bounded: bool,
    counts: HashMap<(usize, Element), u32>,
}

enum Mode {
    Value,
    Lex,
}

struct Incumbent {
    score: u64,
    x: Option<Vec<Element>>,
    tie: bool,
}

impl BranchAndBound {
    fn new(g: &Graph, obs: &ObservationSet) -> Self {
        let n = g.n();
        let rel = obs.relation();
        let m = rel.modulus() as usize;
        let mut fwd = vec![Vec::new(); n];
        for (&(i, j), &y) in g.edges().iter().zip(obs.values()) {
            fwd[i].push((j, y));
        }
        let bounded = n.saturating_mul(m) <= 1 << 22;
        Self {
            n,
            m,
            rel,
            pinned: rel.op().is_difference(),
            fwd,
            cnt: if bounded { vec![0; n * m] } else { Vec::new() },
            best: vec![0; n],
            undo: Vec::new(),
            x: vec![0; n],
            suffix: vec![0; n + 1],
            nodes: 0,
            bounded,
            counts: HashMap::new(),
        }
    }

    #[inline]
    fn count(&self, w: usize, c: Element) -> u32 {
        if self.bounded {
            self.cnt[w * self.m + c as usize]
        } else {
            self.counts.get(&(w, c)).copied().unwrap_or(0)
        }
    }

    /// Assigns `x_v = c`; returns the number of `best` increments among later vertices.
    fn assign(&mut self, v: usize, c: Element) -> u64 {
        self.x[v] = c;
        let mut bumped = 0;
        for k in 0..self.fwd[v].len() {
            let (w, y) = self.fwd[v][k];
            let cw = self.rel.solve_right(c, y);
            let slot = if self.bounded {
                let s = &mut self.cnt[w * self.m + cw as usize];
                *s += 1;
                *s
            } else {
                let s = self.counts.entry((w, cw)).or_insert(0);
                *s += 1;
                *s
            };
            self.undo.push((w, self.best[w]));
            if slot > self.best[w] {
                self.best[w] = slot;
                bumped += 1;
            }
        }
        bumped
    }

    fn unassign(&mut self, v: usize) {
        let c = self.x[v];
        for k in (0..self.fwd[v].len()).rev() {
            let (w, y) = self.fwd[v][k];
            let cw = self.rel.solve_right(c, y);
            if self.bounded {
                self.cnt[w * self.m + cw as usize] -= 1;
            } else if let Some(s) = self.counts.get_mut(&(w, cw)) {
                *s -= 1;
                if *s == 0 {
                    self.counts.remove(&(w, cw));
                }
            }
            let (w2, old) = self.undo.pop().expect("undo stack");
            debug_assert_eq!(w, w2);
            self.best[w2] = old;
        }
    }

    fn relation_differs(&self, a: &[Element], b: &[Element], start: usize) -> bool {
        let rel = &self.rel;
        (start..self.n)
            .any(|i| (start..self.n).any(|j| rel.apply(a[i], a[j]) != rel.apply(b[i], b[j])))
    }

    /// Depth-first search over `x_v, x_{v+1}, ...` for the subproblem on `start..n`.
    fn dfs(
        &mut self,
        start: usize,
        v: usize,
        score: u64,
        rest: u64,
        mode: &Mode,
        inc: &mut Incumbent,
    ) {
        self.nodes += 1;
        if v == self.n {
            match mode {
                Mode::Value => {
                    if score > inc.score || inc.x.is_none() {
                        inc.score = score;
                        inc.x = Some(self.x.clone());
                    }
                }
                Mode::Lex => {
                    if score > inc.score || (score == inc.score && inc.x.is_none()) {
                        inc.score = score;
                        inc.x = Some(self.x.clone());
                        inc.tie = false;
                    } else if score == inc.score && !inc.tie {
                        let first = inc.x.as_ref().expect("incumbent");
                        if self.relation_differs(first, &self.x, start) {
                            inc.tie = true;
                        }
                    }
                }
            }
            return;
        }
        let values: u64 = if self.pinned && v == start {
            1
        } else {
            self.m as u64
        };
        let leaving = self.best[v] as u64;
        for c in 0..values {
            let gain = self.count(v, c) as u64;
            let bumped = self.assign(v, c);
            let ub = score + gain + (rest - leaving + bumped) + self.suffix[v + 1];
            let descend = match mode {
                Mode::Value => ub > inc.score || inc.x.is_none(),
                Mode::Lex => ub > inc.score || (ub == inc.score && (inc.x.is_none() || !inc.tie)),
            };
            if descend {
                self.dfs(
                    start,
                    v + 1,
                    score + gain,
                    rest - leaving + bumped,
                    mode,
                    inc,
                );
            }
            self.unassign(v);
        }
    }

    /// Solves the suffix subproblems from the back, then the full problem in
    /// lexicographic mode.
    fn solve(&mut self) -> (Vec<Element>, u64, bool) {
        let n = self.n;
        let mut suffix_x: Vec<Element> = vec![0; n];
        for start in (1..n).rev() {
            let lower = self.suffix[start + 1] + self.extension_gain(start, &suffix_x);
            let mut inc = Incumbent {
                score: lower,
                x: None,
                tie: false,
            };
            self.dfs(start, start, 0, 0, &Mode::Value, &mut inc);
            if let Some(x) = inc.x {
                suffix_x[start..].copy_from_slice(&x[start..]);
                self.suffix[start] = inc.score;
            } else {
                // the bound never beat the constructed solution; build it
                let c = self.best_extension(start, &suffix_x).0;
                suffix_x[start] = c;
                self.suffix[start] = lower;
            }
        }
        let lower = if n > 1 {
            self.suffix[1] + self.extension_gain(0, &suffix_x)
        } else {
            0
        };
        let mut inc = Incumbent {
            score: lower,
            x: None,
            tie: false,
        };
        self.dfs(0, 0, 0, 0, &Mode::Lex, &mut inc);
        let x = inc
            .x
            .expect("the lexicographic pass always reaches a maximizer");
        (x, inc.score, inc.tie)
    }

    /// Best value for `start` given the fixed values of the later vertices.
    fn best_extension(&self, start: usize, later: &[Element]) -> (Element, u64) {
        let mut votes: HashMap<Element, u64> = HashMap::new();
        for &(w, y) in &self.fwd[start] {
            *votes.entry(self.rel.solve_left(later[w], y)).or_insert(0) += 1;
        }
        votes
            .into_iter()
            .max_by_key(|&(c, k)| (k, std::cmp::Reverse(c)))
            .unwrap_or((0, 0))
    }

    fn extension_gain(&self, start: usize, later: &[Element]) -> u64 {
        self.best_extension(start, later).1
    }
}

// ---------------------------------------------------------------------------
// zero-sum cycle pruning

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroSumEdges {
    /// `keep[e]` is set when edge `e` lies on at least one zero-sum `k`-cycle.
    pub keep: Vec<bool>,
    /// Number of `k`-cycles examined.
    pub cycles: u64,
    /// Zero-sum cycles found.
    pub zero_sum: u64,
    /// Walk extensions performed (`k > 3` only).
    pub walks: u64,
}

/// Contribution of traversing edge `e` from `a` to `b`.
#[inline]
fn oriented(obs: &ObservationSet, g: &GroupSpec, e: usize, a: usize, b: usize) -> Element {
    if a < b {
        obs.value(e)
    } else {
        g.neg(obs.value(e))
    }
}

/// Marks every edge that lies on some zero-sum `k`-cycle. Triangles are found
/// by sorted neighbor-list intersection; longer cycles by depth-limited walks
/// rooted at each cycle's smallest vertex, aborting past `walk_budget`.
pub fn zero_sum_edges(
    g: &Graph,
    obs: &ObservationSet,
    k: usize,
    walk_budget: u64,
) -> Result<ZeroSumEdges, RecoverError> {
    check_shape(g, obs)?;
    require_difference(obs)?;
    if k < 3 {
        return Err(RecoverError::InvalidCycleOrder(k));
    }
    let group = obs.group();
    let mut out = ZeroSumEdges {
        keep: vec![false; g.m()],
        cycles: 0,
        zero_sum: 0,
        walks: 0,
    };
    if k == 3 {
        for (e_uv, &(u, v)) in g.edges().iter().enumerate() {
            let (a, b) = (g.neighbors(u), g.neighbors(v));
            let (mut p, mut q) = (
                a.partition_point(|&(w, _)| w <= v),
                b.partition_point(|&(w, _)| w <= v),
            );
            while p < a.len() && q < b.len() {
                match a[p].0.cmp(&b[q].0) {
                    std::cmp::Ordering::Less => p += 1,
                    std::cmp::Ordering::Greater => q += 1,
                    std::cmp::Ordering::Equal => {
                        let (e_uw, e_vw) = (a[p].1, b[q].1);
                        out.cycles += 1;
                        // u -> v -> w -> u
                        let sum =
                            group.sub(group.add(obs.value(e_uv), obs.value(e_vw)), obs.value(e_uw));
                        if sum == 0 {
                            out.zero_sum += 1;
                            out.keep[e_uv] = true;
                            out.keep[e_vw] = true;
                            out.keep[e_uw] = true;
                        }
                        p += 1;
                        q += 1;
                    }
                }
            }
        }
        return Ok(out);
    }
    let mut on_path = vec![false; g.n()];
    let mut path_edges: Vec<usize> = Vec::with_capacity(k);
    for root in 0..g.n() {
        on_path[root] = true;
        let mut walk = CycleWalk {
            g,
            obs,
            group,
            k,
            root,
            budget: walk_budget,
            on_path: &mut on_path,
            path_edges: &mut path_edges,
            out: &mut out,
        };
        walk.extend(root, root, 0)?;
        on_path[root] = false;
    }
    Ok(out)
}

struct CycleWalk<'a> {
    g: &'a Graph,
    obs: &'a ObservationSet,
    group: GroupSpec,
    k: usize,
    root: usize,
    budget: u64,
    on_path: &'a mut [bool],
    path_edges: &'a mut Vec<usize>,
    out: &'a mut ZeroSumEdges,
}

impl CycleWalk<'_> {
    fn extend(&mut self, first: usize, at: usize, sum: Element) -> Result<(), RecoverError> {
        let depth = self.path_edges.len();
        if depth == self.k - 1 {
            // close the cycle; `first < at` picks one of the two orientations
            if first < at {
                if let Some(e) = self.g.edge_index(at, self.root) {
                    self.out.cycles += 1;
                    let total = self
                        .group
                        .add(sum, oriented(self.obs, &self.group, e, at, self.root));
                    if total == 0 {
                        self.out.zero_sum += 1;
                        self.out.keep[e] = true;
                        for &pe in self.path_edges.iter() {
                            self.out.keep[pe] = true;
                        }
                    }
                }
            }
            return Ok(());
        }
        for &(next, e) in self.g.neighbors(at) {
            if next <= self.root || self.on_path[next] {
                continue;
            }
            self.out.walks += 1;
            if self.out.walks > self.budget {
                return Err(RecoverError::BudgetExceeded {
                    budget: self.budget,
                });
            }
            let step = self
                .group
                .add(sum, oriented(self.obs, &self.group, e, at, next));
            self.on_path[next] = true;
            self.path_edges.push(e);
            let first = if depth == 0 { next } else { first };
            let r = self.extend(first, next, step);
            self.path_edges.pop();
            self.on_path[next] = false;
            r?;
        }
        Ok(())
    }
}

/// Zero-sum cycle recovery with the default walk budget.
pub fn recover_cycle(
    g: &Graph,
    obs: &ObservationSet,
    k: usize,
) -> Result<RecoveryResult, RecoverError> {
    recover_cycle_with(g, obs, k, DEFAULT_BUDGET)
}

/// Keeps the edges on zero-sum `k`-cycles, integrates them along a BFS tree
/// rooted at vertex 0 (`x_0 = 0`), and checks every kept non-tree edge.
pub fn recover_cycle_with(
    g: &Graph,
    obs: &ObservationSet,
    k: usize,
    walk_budget: u64,
) -> Result<RecoveryResult, RecoverError> {
    let zs = zero_sum_edges(g, obs, k, walk_budget)?;
    let group = obs.group();
    let kept = zs.keep.iter().filter(|&&b| b).count();
    let kept_graph = Graph::from_edges(
        g.n(),
        g.edges()
            .iter()
            .zip(&zs.keep)
            .filter(|(_, &b)| b)
            .map(|(&e, _)| e),
    )
    .expect("subgraph of a simple graph");
    let (_, components) = kept_graph.components();
    let mut diagnostics = Diagnostics {
        pruned_edges: Some(g.m() - kept),
        components: Some(components),
        cycles_found: Some(zs.zero_sum),
        walks: (k > 3).then_some(zs.walks),
        budget: (k > 3).then_some(walk_budget),
        ..Default::default()
    };
    if g.n() == 0 {
        return Ok(RecoveryResult::failed(
            FailureReason::Disconnected,
            diagnostics,
        ));
    }
    if components != 1 {
        return Ok(RecoveryResult::failed(
            FailureReason::Disconnected,
            diagnostics,
        ));
    }
    let mut x = vec![0; g.n()];
    let mut seen = vec![false; g.n()];
    seen[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &(v, e) in g.neighbors(u) {
            if !zs.keep[e] || seen[v] {
                continue;
            }
            seen[v] = true;
            // x_u − x_v equals the oriented observation u -> v
            x[v] = group.sub(x[u], oriented(obs, &group, e, u, v));
            queue.push_back(v);
        }
    }
    let rel = obs.relation();
    let consistent = g
        .edges()
        .iter()
        .enumerate()
        .filter(|&(e, _)| zs.keep[e])
        .all(|(e, &(i, j))| rel.apply(x[i], x[j]) == obs.value(e));
    if !consistent {
        diagnostics.components = Some(1);
        return Ok(RecoveryResult::failed(
            FailureReason::Inconsistent,
            diagnostics,
        ));
    }
    let score = compatibility_score(g, obs, &x);
    Ok(RecoveryResult {
        status: RecoveryStatus::Recovered,
        assignment: Some(Assignment(x)),
        score,
        diagnostics,
    })
}

// ---------------------------------------------------------------------------
// coordinate ascent

/// Value of `x_v` implied by the edge `e` to neighbor `u`.
#[inline]
fn implied(
    rel: &Relation,
    obs: &ObservationSet,
    x: &[Element],
    v: usize,
    u: usize,
    e: usize,
) -> Element {
    if v < u {
        rel.solve_left(x[u], obs.value(e))
    } else {
        rel.solve_right(x[u], obs.value(e))
    }
}

/// One pass over vertices `0..n`, moving each to the value satisfying the
/// most incident edges when that strictly beats its current value (ties go to
/// the smallest value). Returns whether anything moved.
fn vertex_sweep(
    g: &Graph,
    obs: &ObservationSet,
    x: &mut [Element],
    scratch: &mut Vec<Element>,
) -> bool {
    let rel = obs.relation();
    let mut moved = false;
    for v in 0..g.n() {
        scratch.clear();
        scratch.extend(
            g.neighbors(v)
                .iter()
                .map(|&(u, e)| implied(&rel, obs, x, v, u, e)),
        );
        if scratch.is_empty() {
            continue;
        }
        scratch.sort_unstable();
        let current = scratch.iter().filter(|&&c| c == x[v]).count();
        let (mut best_val, mut best_cnt) = (x[v], current);
        let mut i = 0;
        while i < scratch.len() {
            let mut j = i;
            while j < scratch.len() && scratch[j] == scratch[i] {
                j += 1;
            }
            if j - i > best_cnt {
                best_cnt = j - i;
                best_val = scratch[i];
            }
            i = j;
        }
        if best_cnt > current {
            x[v] = best_val;
            moved = true;
        }
    }
    moved
}

/// Tries to move whole blocks of vertices joined by satisfied edges. Each
/// block is re-solved from a new root value suggested by its boundary edges;
/// the first strictly improving move is applied.
fn block_move(g: &Graph, obs: &ObservationSet, x: &mut [Element]) -> bool {
    let rel = obs.relation();
    let group = rel.group();
    let (alpha, beta) = rel.coefficients();
    let (alpha_inv, beta_inv) = (
        group.inv(alpha).expect("unit"),
        group.inv(beta).expect("unit"),
    );
    let n = g.n();
    let satisfied =
        |e: usize, i: usize, j: usize, x: &[Element]| rel.apply(x[i], x[j]) == obs.value(e);
    let mut block = vec![usize::MAX; n];
    // x_u moves by gain[u] · δ when the block's root moves by δ
    let mut gain = vec![0 as Element; n];
    for root in 0..n {
        if block[root] != usize::MAX {
            continue;
        }
        let mut members = vec![root];
        block[root] = root;
        gain[root] = 1;
        let mut head = 0;
        while head < members.len() {
            let u = members[head];
            head += 1;
            for &(w, e) in g.neighbors(u) {
                if block[w] != usize::MAX || !satisfied(e, u.min(w), u.max(w), x) {
                    continue;
                }
                block[w] = root;
                // α·x_i + β·x_j fixed ⇒ α·Δ_i + β·Δ_j = 0
                gain[w] = if u < w {
                    group.neg(group.mul(group.mul(beta_inv, alpha), gain[u]))
                } else {
                    group.neg(group.mul(group.mul(alpha_inv, beta), gain[u]))
                };
                members.push(w);
            }
        }
        if members.len() == n {
            return false;
        }
        let mut votes: HashMap<Element, usize> = HashMap::new();
        for &u in &members {
            for &(w, e) in g.neighbors(u) {
                if block[w] == root {
                    continue;
                }
                let want = implied(&rel, obs, x, u, w, e);
                let inv = group.inv(gain[u]).expect("unit");
                let delta = group.mul(inv, group.sub(want, x[u]));
                *votes.entry(delta).or_insert(0) += 1;
            }
        }
        let mut cands: Vec<(usize, Element)> = votes.into_iter().map(|(d, c)| (c, d)).collect();
        cands.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        cands.truncate(BLOCK_CANDIDATES);
        let mut touched: Vec<(usize, usize, usize)> = Vec::new();
        for &u in &members {
            for &(w, e) in g.neighbors(u) {
                // each internal edge once
                if block[w] != root || u < w {
                    touched.push((e, u.min(w), u.max(w)));
                }
            }
        }
        let before = touched
            .iter()
            .filter(|&&(e, i, j)| satisfied(e, i, j, x))
            .count();
        let mut trial = x.to_vec();
        for (_, delta) in cands {
            if delta == 0 {
                continue;
            }
            for &u in &members {
                trial[u] = group.add(x[u], group.mul(gain[u], delta));
            }
            let after = touched
                .iter()
                .filter(|&&(e, i, j)| satisfied(e, i, j, &trial))
                .count();
            if after > before {
                x.copy_from_slice(&trial);
                return true;
            }
        }
    }
    false
}

fn ascend_with_blocks(g: &Graph, obs: &ObservationSet, x: &mut [Element]) -> usize {
    let mut scratch = Vec::new();
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        if vertex_sweep(g, obs, x, &mut scratch) {
            continue;
        }
        if !block_move(g, obs, x) && !propagation_move(g, obs, x) {
            return sweeps;
        }
    }
}

/// Fills every unfixed vertex by majority vote of its already fixed
/// neighbors, always extending at the vertex with the most fixed neighbors.
/// Vertices unreachable from the fixed set keep their value in `base`.
fn propagate(g: &Graph, obs: &ObservationSet, base: &[Element], fixed: &[bool]) -> Vec<Element> {
    let rel = obs.relation();
    let n = g.n();
    let mut x = base.to_vec();
    let mut done = fixed.to_vec();
    let mut votes: Vec<HashMap<Element, u32>> = vec![HashMap::new(); n];
    let mut support = vec![0u32; n];
    let cast = |v: usize,
                x: &[Element],
                done: &[bool],
                votes: &mut [HashMap<Element, u32>],
                support: &mut [u32]| {
        for &(w, e) in g.neighbors(v) {
            if !done[w] {
                *votes[w].entry(implied(&rel, obs, x, w, v, e)).or_insert(0) += 1;
                support[w] += 1;
            }
        }
    };
    for v in (0..n).filter(|&v| done[v]) {
        cast(v, &x, &done, &mut votes, &mut support);
    }
    loop {
        let next = (0..n)
            .filter(|&v| !done[v] && support[v] > 0)
            .max_by_key(|&v| (support[v], std::cmp::Reverse(v)));
        let Some(v) = next else { return x };
        x[v] = votes[v]
            .iter()
            .max_by_key(|&(&c, &k)| (k, std::cmp::Reverse(c)))
            .map(|(&c, _)| c)
            .expect("supported vertex has votes");
        done[v] = true;
        cast(v, &x, &done, &mut votes, &mut support);
    }
}

/// Re-solves the graph from a seed: the largest satisfied block at its
/// current values, or vertex 0 at each candidate value. Applies the first
/// strictly improving result.
fn propagation_move(g: &Graph, obs: &ObservationSet, x: &mut [Element]) -> bool {
    let n = g.n();
    if n == 0 {
        return false;
    }
    let rel = obs.relation();
    let current = compatibility_score(g, obs, x);
    let mut seeds: Vec<Vec<bool>> = Vec::new();

    let satisfied_graph = Graph::from_edges(
        n,
        g.edges()
            .iter()
            .zip(obs.values())
            .filter(|(&(i, j), &y)| rel.apply(x[i], x[j]) == y)
            .map(|(&e, _)| e),
    )
    .expect("subgraph of a simple graph");
    let (labels, count) = satisfied_graph.components();
    let mut sizes = vec![0usize; count];
    for &l in &labels {
        sizes[l] += 1;
    }
    if let Some(big) = (0..count).max_by_key(|&l| (sizes[l], std::cmp::Reverse(l))) {
        if sizes[big] > 1 && sizes[big] < n {
            seeds.push(labels.iter().map(|&l| l == big).collect());
        }
    }
    let mut root_values: Vec<Element> = if rel.op().is_difference() {
        // every value of x_0 gives a shift of the same assignment
        vec![x[0]]
    } else if rel.modulus() <= ROOT_SCAN_MAX_MODULUS {
        (0..rel.modulus()).collect()
    } else {
        let mut v: Vec<Element> = g
            .neighbors(0)
            .iter()
            .map(|&(u, e)| implied(&rel, obs, x, 0, u, e))
            .collect();
        v.push(x[0]);
        v
    };
    root_values.sort_unstable();
    root_values.dedup();
    let mut root_only = vec![false; n];
    root_only[0] = true;

    let try_seed = |fixed: &[bool], base: &[Element]| {
        let y = propagate(g, obs, base, fixed);
        let s = compatibility_score(g, obs, &y);
        (s > current).then_some(y)
    };
    for fixed in &seeds {
        if let Some(y) = try_seed(fixed, x) {
            x.copy_from_slice(&y);
            return true;
        }
    }
    let mut base = x.to_vec();
    for c in root_values {
        base[0] = c;
        if let Some(y) = try_seed(&root_only, &base) {
            x.copy_from_slice(&y);
            return true;
        }
    }
    false
}

/// Best of `restarts + 1` ascents from uniform random starts.
pub fn recover_local_search(
    g: &Graph,
    obs: &ObservationSet,
    restarts: usize,
    seed: u64,
) -> Result<RecoveryResult, RecoverError> {
    check_shape(g, obs)?;
    let rel = obs.relation();
    let mut best: Option<(u64, Vec<Element>)> = None;
    let mut sweeps = 0;
    for r in 0..=restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, LOCAL_SEARCH_DOMAIN, r as u64));
        let mut x = Assignment::random(g.n(), rel.group(), &mut rng).into_inner();
        sweeps += ascend_with_blocks(g, obs, &mut x);
        let score = compatibility_score(g, obs, &x);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, x));
        }
    }
    let (score, x) = best.expect("at least one start");
    Ok(RecoveryResult {
        status: RecoveryStatus::Recovered,
        assignment: Some(Assignment(x).canonical(&rel)),
        score,
        diagnostics: Diagnostics {
            sweeps: Some(sweeps),
            restarts: Some(restarts),
            ..Default::default()
        },
    })
}

// ---------------------------------------------------------------------------
// spectral rounding

#[derive(Debug, Clone)]
pub struct PowerIteration {
    pub vector: Vec<Complex64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Top eigenvector of `H + shift·I` for the Hermitian matrix with
/// `H_ij = w_e`, `H_ji = conj(w_e)` on each edge `e = (i, j)`.
pub fn hermitian_power_iteration(
    g: &Graph,
    weights: &[Complex64],
    shift: f64,
    start: Vec<Complex64>,
    tol: f64,
    max_iter: usize,
) -> PowerIteration {
    let n = g.n();
    let normalize = |v: &mut Vec<Complex64>| {
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|z| *z /= norm);
        }
    };
    let mut v = start;
    normalize(&mut v);
    let mut next = vec![Complex64::new(0.0, 0.0); n];
    for it in 1..=max_iter {
        for (i, slot) in next.iter_mut().enumerate() {
            *slot = v[i] * shift;
        }
        for (e, &(i, j)) in g.edges().iter().enumerate() {
            next[i] += weights[e] * v[j];
            next[j] += weights[e].conj() * v[i];
        }
        normalize(&mut next);
        let diff = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        std::mem::swap(&mut v, &mut next);
        if diff < tol {
            return PowerIteration {
                vector: v,
                iterations: it,
                converged: true,
            };
        }
    }
    PowerIteration {
        vector: v,
        iterations: max_iter,
        converged: false,
    }
}

/// Spectral rounding followed by at most `refine_rounds` coordinate-ascent
/// sweeps. Non-convergence of the power iteration is reported in the
/// diagnostics; the rounded result is still returned.
pub fn recover_spectral(
    g: &Graph,
    obs: &ObservationSet,
    refine_rounds: usize,
) -> Result<RecoveryResult, RecoverError> {
    check_shape(g, obs)?;
    require_difference(obs)?;
    let rel = obs.relation();
    let modulus = rel.modulus();
    if modulus > SPECTRAL_MAX_MODULUS {
        return Err(RecoverError::ModulusTooLarge {
            modulus,
            limit: SPECTRAL_MAX_MODULUS,
        });
    }
    let n = g.n();
    if n == 0 {
        return Ok(RecoveryResult {
            status: RecoveryStatus::Recovered,
            assignment: Some(Assignment(Vec::new())),
            score: 0,
            diagnostics: Diagnostics::default(),
        });
    }
    let tau = std::f64::consts::TAU;
    let phase = |y: Element| Complex64::from_polar(1.0, tau * y as f64 / modulus as f64);
    let weights: Vec<Complex64> = obs.values().iter().map(|&y| phase(y)).collect();
    let d_max = (0..n).map(|v| g.degree(v)).max().unwrap_or(0) as f64;
    // warm start: phases integrated along a BFS forest of the observations
    let group = rel.group();
    let mut seed_x = vec![0 as Element; n];
    let mut seen = vec![false; n];
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &(v, e) in g.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    seed_x[v] = group.sub(seed_x[u], oriented(obs, &group, e, u, v));
                    queue.push_back(v);
                }
            }
        }
    }
    let start = seed_x.iter().map(|&x| phase(x)).collect();
    // the shift makes the spectrum nonnegative so the top eigenvalue dominates
    let pi = hermitian_power_iteration(
        g,
        &weights,
        d_max,
        start,
        POWER_TOLERANCE,
        POWER_MAX_ITERATIONS,
    );
    let anchor = pi.vector[0].conj();
    let mut x: Vec<Element> = pi
        .vector
        .iter()
        .map(|z| {
            let theta = (z * anchor).arg().rem_euclid(tau);
            ((theta / tau * modulus as f64).round() as u64) % modulus
        })
        .collect();
    let mut scratch = Vec::new();
    let mut sweeps = 0;
    while sweeps < refine_rounds {
        sweeps += 1;
        if !vertex_sweep(g, obs, &mut x, &mut scratch) {
            break;
        }
    }
    let x = Assignment(x).canonical(&rel);
    let score = compatibility_score(g, obs, &x);
    Ok(RecoveryResult {
        status: RecoveryStatus::Recovered,
        assignment: Some(x),
        score,
        diagnostics: Diagnostics {
            converged: Some(pi.converged),
            iterations: Some(pi.iterations),
            sweeps: Some(sweeps),
            ..Default::default()
        },
    })
}

/// Convenience for callers holding an unvalidated operator.
pub fn relation_for(op: RelationOp, modulus: u64) -> Result<Relation, RecoverError> {
    Ok(Relation::new(op, GroupSpec::new(modulus)?)?)
}
