//! The random-outlier measurement channel: each edge independently carries
//! the true relation with probability `p`, otherwise a uniform draw from all
//! `M` symbols (which may coincide with the truth).

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graphs::{parse_num, Graph, GraphError};
use crate::group::{Element, GroupError, GroupSpec, Relation, RelationOp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("probability {0} not in [0, 1]")]
    BadProbability(f64),
    #[error("assignment has length {got}, graph has {expected} vertices")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// SplitMix64 finalizer, used to derive independent seeds from a master seed.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `(parent, index)` under a fixed domain tag.
pub fn derive_seed(parent: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent ^ splitmix64(domain)) ^ index)
}

/// Counter-based stream for one edge: a ChaCha key derived from the master
/// seed, with the edge's endpoints as the stream id.
fn edge_stream(key: [u8; 32], i: usize, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(((i as u64) << 32) | j as u64);
    rng
}

/// One observed value per edge, oriented `y_ij = x_i ⊖ x_j` with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    n: usize,
    edges: Vec<(usize, usize)>,
    values: Vec<Element>,
    relation: Relation,
    p_used: Option<f64>,
}

impl ObservationSet {
    /// Wraps ingested observations; `values[e]` belongs to `graph.edges()[e]`.
    pub fn new(
        graph: &Graph,
        relation: Relation,
        values: Vec<Element>,
    ) -> Result<Self, ChannelError> {
        if values.len() != graph.m() {
            return Err(ChannelError::LengthMismatch {
                expected: graph.m(),
                got: values.len(),
            });
        }
        for &v in &values {
            relation.group().check(v)?;
        }
        Ok(Self {
            n: graph.n(),
            edges: graph.edges().to_vec(),
            values,
            relation,
            p_used: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn values(&self) -> &[Element] {
        &self.values
    }

    #[inline]
    pub fn value(&self, edge: usize) -> Element {
        self.values[edge]
    }

    pub fn relation(&self) -> Relation {
        self.relation
    }

    pub fn group(&self) -> GroupSpec {
        self.relation.group()
    }

    pub fn p_used(&self) -> Option<f64> {
        self.p_used
    }

    /// Whether these observations were taken on exactly this graph.
    pub fn matches(&self, g: &Graph) -> bool {
        self.n == g.n() && self.edges == g.edges()
    }

    /// The graph the observations live on.
    pub fn graph(&self) -> Graph {
        Graph::from_edges(self.n, self.edges.iter().copied())
            .expect("edges were validated on construction")
    }

    /// Text form: header `n m M <op_tag>`, then `i j y` per edge.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} {} {} {}\n",
            self.n,
            self.edges.len(),
            self.relation.modulus(),
            self.relation.tag()
        );
        for (&(i, j), y) in self.edges.iter().zip(&self.values) {
            s.push_str(&format!("{i} {j} {y}\n"));
        }
        s
    }
}

impl FromStr for ObservationSet {
    type Err = ChannelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let perr = |line: usize, msg: &str| {
            ChannelError::Graph(GraphError::Parse {
                line,
                msg: msg.to_string(),
            })
        };
        let mut lines = s.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| perr(1, "missing header"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 {
            return Err(perr(1, "header must be `n m M op`"));
        }
        let n: usize = parse_num(h[0], 1)?;
        let m: usize = parse_num(h[1], 1)?;
        let modulus: u64 = parse_num(h[2], 1)?;
        let op: RelationOp = h[3].parse()?;
        let relation = Relation::new(op, GroupSpec::new(modulus)?)?;
        let mut graph_text = format!("{n} {m}\n");
        let mut values = Vec::with_capacity(m);
        for (idx, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(perr(idx + 1, "observation line must be `i j y`"));
            }
            graph_text.push_str(parts[0]);
            graph_text.push(' ');
            graph_text.push_str(parts[1]);
            graph_text.push('\n');
            values.push(parse_num::<Element>(parts[2], idx + 1)?);
        }
        let graph: Graph = graph_text.parse()?;
        ObservationSet::new(&graph, relation, values)
    }
}

/// Samples one observation per edge of `g`. The corruption mask and outlier
/// symbols depend only on `(seed, i, j)`.
pub fn corrupt(
    x: &[Element],
    relation: Relation,
    g: &Graph,
    p: f64,
    seed: u64,
) -> Result<ObservationSet, ChannelError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ChannelError::BadProbability(p));
    }
    if x.len() != g.n() {
        return Err(ChannelError::LengthMismatch {
            expected: g.n(),
            got: x.len(),
        });
    }
    let group = relation.group();
    for &v in x {
        group.check(v)?;
    }
    let key = ChaCha8Rng::seed_from_u64(seed).get_seed();
    let m = group.modulus();
    let values = g
        .edges()
        .iter()
        .map(|&(i, j)| {
            let mut rng = edge_stream(key, i, j);
            let keep = rng.gen::<f64>() < p;
            let outlier = rng.gen_range(0..m);
            if keep {
                relation.apply(x[i], x[j])
            } else {
                outlier
            }
        })
        .collect();
    Ok(ObservationSet {
        n: g.n(),
        edges: g.edges().to_vec(),
        values,
        relation,
        p_used: Some(p),
    })
}

/// Probability that an observed edge equals the truth: `p + (1 − p) / M`.
pub fn effective_accuracy(p: f64, modulus: u64) -> f64 {
    p + (1.0 - p) / modulus as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{gen_graph, GraphModel};

    fn truth(n: usize, m: u64, seed: u64) -> Vec<Element> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(0..m)).collect()
    }

    fn matching_fraction(obs: &ObservationSet, x: &[Element]) -> f64 {
        let rel = obs.relation();
        let hits = obs
            .edges()
            .iter()
            .zip(obs.values())
            .filter(|(&(i, j), &y)| rel.apply(x[i], x[j]) == y)
            .count();
        hits as f64 / obs.edges().len() as f64
    }

    #[test]
    fn accuracy_formula() {
        assert_eq!(effective_accuracy(1.0, 17), 1.0);
        assert_eq!(effective_accuracy(0.0, 2), 0.5);
        assert!((effective_accuracy(0.3, 4) - 0.475).abs() < 1e-15);
    }

    #[test]
    fn noiseless_channel_is_exact() {
        let g = gen_graph(GraphModel::ErdosRenyi { q: 0.3 }, 40, 1).unwrap();
        let rel = Relation::new(RelationOp::Affine(2, 3), GroupSpec::new(7).unwrap()).unwrap();
        let x = truth(40, 7, 2);
        let obs = corrupt(&x, rel, &g, 1.0, 3).unwrap();
        assert_eq!(matching_fraction(&obs, &x), 1.0);
        assert_eq!(obs.p_used(), Some(1.0));
    }

    #[test]
    fn pure_noise_binary() {
        let g = gen_graph(GraphModel::Complete, 142, 0).unwrap();
        assert!(g.m() >= 10_000);
        let rel = Relation::difference(GroupSpec::new(2).unwrap());
        let x = truth(142, 2, 5);
        let f = matching_fraction(&corrupt(&x, rel, &g, 0.0, 9).unwrap(), &x);
        assert!((f - 0.5).abs() < 0.02, "{f}");
    }

    #[test]
    fn partial_noise_includes_collisions() {
        let g = gen_graph(GraphModel::Complete, 142, 0).unwrap();
        let rel = Relation::difference(GroupSpec::new(4).unwrap());
        let x = truth(142, 4, 5);
        let f = matching_fraction(&corrupt(&x, rel, &g, 0.3, 10).unwrap(), &x);
        assert!((f - 0.475).abs() < 0.02, "{f}");
    }

    #[test]
    fn mask_independent_of_truth() {
        let g = gen_graph(GraphModel::ErdosRenyi { q: 0.5 }, 30, 1).unwrap();
        let rel = Relation::difference(GroupSpec::new(1 << 40).unwrap());
        let a = truth(30, 1 << 40, 1);
        let b = truth(30, 1 << 40, 2);
        let oa = corrupt(&a, rel, &g, 0.5, 77).unwrap();
        let ob = corrupt(&b, rel, &g, 0.5, 77).unwrap();
        for (e, &(i, j)) in g.edges().iter().enumerate() {
            let ca = oa.value(e) == rel.apply(a[i], a[j]);
            let cb = ob.value(e) == rel.apply(b[i], b[j]);
            assert_eq!(ca, cb);
            if !ca {
                // same outlier symbol too
                assert_eq!(oa.value(e), ob.value(e));
            }
        }
    }

    #[test]
    fn edge_values_survive_subsetting() {
        let g = gen_graph(GraphModel::ErdosRenyi { q: 0.6 }, 25, 4).unwrap();
        let sub = Graph::from_edges(25, g.edges().iter().copied().step_by(3)).unwrap();
        let rel = Relation::difference(GroupSpec::new(11).unwrap());
        let x = truth(25, 11, 8);
        let full = corrupt(&x, rel, &g, 0.4, 123).unwrap();
        let part = corrupt(&x, rel, &sub, 0.4, 123).unwrap();
        for (e, &(i, j)) in sub.edges().iter().enumerate() {
            let idx = g.edge_index(i, j).unwrap();
            assert_eq!(part.value(e), full.value(idx));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = gen_graph(GraphModel::Ring, 5, 0).unwrap();
        let rel = Relation::difference(GroupSpec::new(3).unwrap());
        assert!(corrupt(&[0; 5], rel, &g, 1.5, 0).is_err());
        assert!(corrupt(&[0; 4], rel, &g, 0.5, 0).is_err());
        assert!(corrupt(&[0, 0, 0, 0, 3], rel, &g, 0.5, 0).is_err());
    }

    #[test]
    fn text_round_trip() {
        let g = gen_graph(GraphModel::ErdosRenyi { q: 0.4 }, 15, 2).unwrap();
        let rel = Relation::new(RelationOp::Affine(-1, 4), GroupSpec::new(9).unwrap()).unwrap();
        let obs = corrupt(&truth(15, 9, 3), rel, &g, 0.5, 4).unwrap();
        let text = obs.to_text();
        assert!(text.starts_with(&format!("15 {} 9 affine:8:4\n", g.m())));
        let back: ObservationSet = text.parse().unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.values(), obs.values());
        assert_eq!(back.p_used(), None);
        assert!(back.matches(&g));
        assert!("3 1 2 diff\n0 1 2\n".parse::<ObservationSet>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn correct_fraction_concentrates(p in 0.0f64..=1.0, m in 2u64..50, seed in any::<u64>()) {
                let g = gen_graph(GraphModel::ErdosRenyi { q: 0.3 }, 60, seed).unwrap();
                let rel = Relation::difference(GroupSpec::new(m).unwrap());
                let trials = 20u64;
                let mut hits = 0.0;
                for t in 0..trials {
                    let x = truth(60, m, seed ^ t);
                    let obs = corrupt(&x, rel, &g, p, derive_seed(seed, 1, t)).unwrap();
                    hits += matching_fraction(&obs, &x);
                }
                let mean = hits / trials as f64;
                let tol = 4.0 / ((trials as f64) * g.m() as f64).sqrt();
                prop_assert!((mean - effective_accuracy(p, m)).abs() <= tol, "mean {} vs {}", mean, effective_accuracy(p, m));
            }

            #[test]
            fn mask_ignores_truth(p in 0.0f64..=1.0, seed in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
                let g = gen_graph(GraphModel::ErdosRenyi { q: 0.4 }, 25, seed).unwrap();
                let rel = Relation::difference(GroupSpec::new(1 << 40).unwrap());
                let (xa, xb) = (truth(25, 1 << 40, a), truth(25, 1 << 40, b));
                let oa = corrupt(&xa, rel, &g, p, seed).unwrap();
                let ob = corrupt(&xb, rel, &g, p, seed).unwrap();
                for (e, &(i, j)) in g.edges().iter().enumerate() {
                    // with M = 2^40 an outlier hits the truth with negligible probability
                    let ca = oa.value(e) == rel.apply(xa[i], xa[j]);
                    let cb = ob.value(e) == rel.apply(xb[i], xb[j]);
                    prop_assert_eq!(ca, cb);
                }
            }
        }
    }
}
