//! Measurement graphs: the random ensembles used in experiments, structural
//! statistics (degrees, global min-cut, edge expansion) and the plain-text
//! edge-list format.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest vertex count for exact edge expansion.
pub const EXACT_EXPANSION_MAX_N: usize = 24;

/// Resampling attempts for one small-world rewiring before the edge is kept.
pub const REWIRE_RETRIES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("vertex {vertex} out of range for n = {n}")]
    VertexOutOfRange { vertex: usize, n: usize },
    #[error("invalid model parameters: {0}")]
    BadParameters(String),
    #[error("graph has {n} vertices, limit for exact computation is {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Undirected simple graph on vertices `0..n`. Edges are stored as `(i, j)`
/// with `i < j`, sorted, and indexed by position.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    // (neighbor, edge id), sorted by neighbor
    adj: Vec<Vec<(usize, usize)>>,
}

impl Graph {
    /// Builds a graph from an arbitrary list of unordered pairs. Pairs are
    /// normalized to `i < j` and sorted; self-loops and duplicates are errors.
    pub fn from_edges(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        let mut list = Vec::new();
        for (a, b) in edges {
            for v in [a, b] {
                if v >= n {
                    return Err(GraphError::VertexOutOfRange { vertex: v, n });
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            list.push((a.min(b), a.max(b)));
        }
        list.sort_unstable();
        if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::DuplicateEdge(w[0].0, w[0].1));
        }
        Ok(Self::from_sorted(n, list))
    }

    fn from_sorted(n: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut adj = vec![Vec::new(); n];
        for (id, &(i, j)) in edges.iter().enumerate() {
            adj[i].push((j, id));
            adj[j].push((i, id));
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Self { n, edges, adj }
    }

    pub fn empty(n: usize) -> Self {
        Self::from_sorted(n, Vec::new())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.edges.len()
    }

    #[inline]
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Neighbors of `v` with the id of the connecting edge, sorted by neighbor.
    #[inline]
    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adj[v]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.edges.binary_search(&key).ok()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edge_index(i, j).is_some()
    }

    /// Component label per vertex and the number of components.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let mut label = vec![usize::MAX; self.n];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for s in 0..self.n {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = count;
            queue.push_back(s);
            while let Some(v) = queue.pop_front() {
                for &(u, _) in &self.adj[v] {
                    if label[u] == usize::MAX {
                        label[u] = count;
                        queue.push_back(u);
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    pub fn is_connected(&self) -> bool {
        self.components().1 <= 1
    }

    /// Checks that the adjacency index and the edge list describe the same graph.
    pub fn check_consistency(&self) -> bool {
        let sorted = self.edges.windows(2).all(|w| w[0] < w[1]);
        let oriented = self.edges.iter().all(|&(i, j)| i < j && j < self.n);
        let mut rebuilt = BTreeSet::new();
        for (v, list) in self.adj.iter().enumerate() {
            for &(u, id) in list {
                let e = (v.min(u), v.max(u));
                if self.edges.get(id) != Some(&e) {
                    return false;
                }
                rebuilt.insert(e);
            }
        }
        let total: usize = self.adj.iter().map(Vec::len).sum();
        sorted && oriented && total == 2 * self.edges.len() && rebuilt.len() == self.edges.len()
    }

    /// Text form: header `n m`, then one `i j` line per edge.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.n, self.m());
        for &(i, j) in &self.edges {
            s.push_str(&format!("{i} {j}\n"));
        }
        s
    }

    /// Vertex adjacency as bitmasks, for subset enumeration on small graphs.
    pub(crate) fn adjacency_masks(&self) -> Vec<u64> {
        assert!(self.n <= 64);
        self.adj
            .iter()
            .map(|l| l.iter().fold(0u64, |m, &(u, _)| m | (1 << u)))
            .collect()
    }
}

impl fmt::Display for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

pub(crate) fn parse_pair_header(line: &str, lineno: usize) -> Result<Vec<&str>, GraphError> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.is_empty() {
        return Err(GraphError::Parse {
            line: lineno,
            msg: "empty line".into(),
        });
    }
    Ok(parts)
}

pub(crate) fn parse_num<T: FromStr>(tok: &str, lineno: usize) -> Result<T, GraphError> {
    tok.parse().map_err(|_| GraphError::Parse {
        line: lineno,
        msg: format!("bad number {tok:?}"),
    })
}

impl FromStr for Graph {
    type Err = GraphError;

    /// Parses the text form. Edge lines must already be oriented and sorted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut lines = s.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(GraphError::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let h = parse_pair_header(header, 1)?;
        if h.len() != 2 {
            return Err(GraphError::Parse {
                line: 1,
                msg: "header must be `n m`".into(),
            });
        }
        let n: usize = parse_num(h[0], 1)?;
        let m: usize = parse_num(h[1], 1)?;
        let mut edges = Vec::with_capacity(m);
        for (idx, line) in lines {
            let parts = parse_pair_header(line, idx + 1)?;
            if parts.len() != 2 {
                return Err(GraphError::Parse {
                    line: idx + 1,
                    msg: "edge line must be `i j`".into(),
                });
            }
            let i: usize = parse_num(parts[0], idx + 1)?;
            let j: usize = parse_num(parts[1], idx + 1)?;
            if i >= j {
                return Err(GraphError::Parse {
                    line: idx + 1,
                    msg: "edge must satisfy i < j".into(),
                });
            }
            if let Some(&last) = edges.last() {
                if (i, j) <= last {
                    return Err(GraphError::Parse {
                        line: idx + 1,
                        msg: "edges must be strictly sorted".into(),
                    });
                }
            }
            edges.push((i, j));
        }
        if edges.len() != m {
            return Err(GraphError::Parse {
                line: 1,
                msg: format!("header declares {m} edges, found {}", edges.len()),
            });
        }
        Graph::from_edges(n, edges)
    }
}

/// Random and deterministic graph ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum GraphModel {
    #[serde(rename = "er")]
    ErdosRenyi {
        q: f64,
    },
    #[serde(rename = "geo")]
    Geometric {
        r: f64,
    },
    #[serde(rename = "sw")]
    SmallWorld {
        k: usize,
        q: f64,
    },
    Ring,
    Complete,
}

impl GraphModel {
    pub fn tag(&self) -> &'static str {
        match self {
            GraphModel::ErdosRenyi { .. } => "er",
            GraphModel::Geometric { .. } => "geo",
            GraphModel::SmallWorld { .. } => "sw",
            GraphModel::Ring => "ring",
            GraphModel::Complete => "complete",
        }
    }

    /// Model parameter as written in sweep output (`k:q` for small-world).
    pub fn param(&self) -> String {
        match self {
            GraphModel::ErdosRenyi { q } => q.to_string(),
            GraphModel::Geometric { r } => r.to_string(),
            GraphModel::SmallWorld { k, q } => format!("{k}:{q}"),
            GraphModel::Ring | GraphModel::Complete => String::new(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), GraphError> {
        let bad = |s: String| Err(GraphError::BadParameters(s));
        if n < 3 {
            return bad(format!("n = {n}, need n >= 3"));
        }
        match *self {
            GraphModel::ErdosRenyi { q } if !(0.0..=1.0).contains(&q) => {
                bad(format!("q = {q} not in [0, 1]"))
            }
            GraphModel::Geometric { r } if !(r > 0.0 && r.is_finite()) => {
                bad(format!("r = {r} must be positive"))
            }
            GraphModel::SmallWorld { k, q } => {
                if !(0.0..=1.0).contains(&q) {
                    bad(format!("q = {q} not in [0, 1]"))
                } else if k < 2 || k % 2 != 0 || k >= n {
                    bad(format!("k = {k} must be even with 2 <= k < n"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Generates a graph; the output depends only on `(model, n, seed)`.
pub fn gen_graph(model: GraphModel, n: usize, seed: u64) -> Result<Graph, GraphError> {
    model.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<(usize, usize)> = match model {
        GraphModel::Complete => (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect(),
        GraphModel::Ring => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        GraphModel::ErdosRenyi { q } => {
            let mut e = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.gen::<f64>() < q {
                        e.push((i, j));
                    }
                }
            }
            e
        }
        GraphModel::Geometric { r } => {
            let pts: Vec<[f64; 3]> = (0..n).map(|_| sphere_point(&mut rng)).collect();
            let r2 = r * r;
            let mut e = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    let d2: f64 = (0..3).map(|c| (pts[i][c] - pts[j][c]).powi(2)).sum();
                    if d2 <= r2 {
                        e.push((i, j));
                    }
                }
            }
            e
        }
        GraphModel::SmallWorld { k, q } => small_world(n, k, q, &mut rng),
    };
    Graph::from_edges(n, edges)
}

fn sphere_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

fn small_world(n: usize, k: usize, q: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut set = BTreeSet::new();
    let mut lattice = Vec::with_capacity(n * k / 2);
    for hop in 1..=k / 2 {
        for i in 0..n {
            let e = (i, (i + hop) % n);
            lattice.push(e);
            set.insert(key(e.0, e.1));
        }
    }
    // the near endpoint stays, the far one moves
    for (near, far) in lattice {
        if rng.gen::<f64>() >= q {
            continue;
        }
        for _ in 0..REWIRE_RETRIES {
            let w = rng.gen_range(0..n);
            if w == near || set.contains(&key(near, w)) {
                continue;
            }
            set.remove(&key(near, far));
            set.insert(key(near, w));
            break;
        }
    }
    set.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DegreeStats {
    pub d_min: usize,
    pub d_max: usize,
    pub mean: f64,
}

pub fn degree_stats(g: &Graph) -> DegreeStats {
    if g.n() == 0 {
        return DegreeStats {
            d_min: 0,
            d_max: 0,
            mean: 0.0,
        };
    }
    let degs = (0..g.n()).map(|v| g.degree(v));
    DegreeStats {
        d_min: degs.clone().min().unwrap_or(0),
        d_max: degs.max().unwrap_or(0),
        mean: 2.0 * g.m() as f64 / g.n() as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MinCut {
    pub value: usize,
    pub connected: bool,
}

/// Global minimum edge cut by Stoer–Wagner maximum-adjacency contraction.
/// Disconnected graphs report `value = 0` with `connected = false`.
pub fn min_cut(g: &Graph) -> MinCut {
    if g.n() <= 1 {
        return MinCut {
            value: 0,
            connected: true,
        };
    }
    if !g.is_connected() {
        return MinCut {
            value: 0,
            connected: false,
        };
    }
    let n = g.n();
    let mut adj: Vec<BTreeMap<usize, u64>> = vec![BTreeMap::new(); n];
    for &(i, j) in g.edges() {
        adj[i].insert(j, 1);
        adj[j].insert(i, 1);
    }
    let mut active: Vec<usize> = (0..n).collect();
    let mut best = u64::MAX;
    let mut weight = vec![0u64; n];
    let mut added = vec![false; n];
    while active.len() > 1 {
        for &v in &active {
            weight[v] = 0;
            added[v] = false;
        }
        let mut heap: BinaryHeap<(u64, Reverse<usize>)> =
            active.iter().map(|&v| (0, Reverse(v))).collect();
        let (mut prev, mut last) = (usize::MAX, usize::MAX);
        while let Some((w, Reverse(v))) = heap.pop() {
            if added[v] || w != weight[v] {
                continue;
            }
            added[v] = true;
            prev = last;
            last = v;
            for (&u, &c) in &adj[v] {
                if !added[u] {
                    weight[u] += c;
                    heap.push((weight[u], Reverse(u)));
                }
            }
        }
        best = best.min(weight[last]);
        // contract `last` into `prev`
        let merged = std::mem::take(&mut adj[last]);
        for (u, c) in merged {
            adj[u].remove(&last);
            if u == prev {
                continue;
            }
            *adj[prev].entry(u).or_insert(0) += c;
            *adj[u].entry(prev).or_insert(0) += c;
        }
        active.retain(|&v| v != last);
    }
    MinCut {
        value: best as usize,
        connected: true,
    }
}

/// Visits every subset `S` of the vertices selected by `universe` in Gray
/// code order, passing `(S, |S|, |∂S|)` where the boundary is taken inside
/// the subgraph induced by `universe`. The empty set is visited first.
pub(crate) fn walk_subsets(masks: &[u64], universe: u64, mut visit: impl FnMut(u64, u32, usize)) {
    let verts: Vec<usize> = (0..masks.len())
        .filter(|&v| universe >> v & 1 == 1)
        .collect();
    let degree: Vec<i64> = verts
        .iter()
        .map(|&v| (masks[v] & universe).count_ones() as i64)
        .collect();
    let mut set = 0u64;
    let mut boundary: i64 = 0;
    visit(0, 0, 0);
    let total = 1u64 << verts.len();
    for step in 1..total {
        let slot = step.trailing_zeros() as usize;
        let v = verts[slot];
        let bit = 1u64 << v;
        let inside = (masks[v] & set & !bit).count_ones() as i64;
        let delta = degree[slot] - 2 * inside;
        if set & bit == 0 {
            set |= bit;
            boundary += delta;
        } else {
            set &= !bit;
            boundary -= delta;
        }
        visit(set, set.count_ones(), boundary as usize);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EdgeExpansion {
    /// Exact `min |∂S| / |S|` as a reduced fraction.
    Exact { boundary: usize, size: usize },
    /// Spectral lower bound `λ₂(L) / 2`.
    CheegerBound { value: f64 },
}

impl EdgeExpansion {
    pub fn value(&self) -> f64 {
        match *self {
            EdgeExpansion::Exact { boundary, size } => boundary as f64 / size as f64,
            EdgeExpansion::CheegerBound { value } => value,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, EdgeExpansion::Exact { .. })
    }
}

/// Exact edge expansion, falling back to the Cheeger bound above the size guard.
pub fn edge_expansion(g: &Graph) -> Result<EdgeExpansion, GraphError> {
    if g.n() <= EXACT_EXPANSION_MAX_N {
        edge_expansion_exact(g)
    } else {
        Ok(cheeger_lower_bound(g))
    }
}

pub fn edge_expansion_exact(g: &Graph) -> Result<EdgeExpansion, GraphError> {
    let n = g.n();
    if n > EXACT_EXPANSION_MAX_N {
        return Err(GraphError::TooLarge {
            n,
            limit: EXACT_EXPANSION_MAX_N,
        });
    }
    if n < 2 {
        return Err(GraphError::BadParameters(
            "edge expansion needs n >= 2".into(),
        ));
    }
    let masks = g.adjacency_masks();
    let half = (n / 2) as u32;
    let (mut best_b, mut best_s) = (usize::MAX, 1usize);
    walk_subsets(&masks, (1u64 << n) - 1, |_, size, b| {
        if size == 0 || size > half {
            return;
        }
        // b / size < best_b / best_s
        if (b as u128) * (best_s as u128) < (best_b as u128) * (size as u128) {
            best_b = b;
            best_s = size as usize;
        }
    });
    let d = num_integer::gcd(best_b, best_s).max(1);
    Ok(EdgeExpansion::Exact {
        boundary: best_b / d,
        size: best_s / d,
    })
}

/// `λ₂(L) / 2` from the dense Laplacian spectrum.
pub fn cheeger_lower_bound(g: &Graph) -> EdgeExpansion {
    let n = g.n();
    if n < 2 {
        return EdgeExpansion::CheegerBound { value: 0.0 };
    }
    let mut lap = nalgebra::DMatrix::<f64>::zeros(n, n);
    for &(i, j) in g.edges() {
        lap[(i, j)] -= 1.0;
        lap[(j, i)] -= 1.0;
        lap[(i, i)] += 1.0;
        lap[(j, j)] += 1.0;
    }
    let mut eig: Vec<f64> = lap.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    EdgeExpansion::CheegerBound {
        value: (eig[1] / 2.0).max(0.0),
    }
}
