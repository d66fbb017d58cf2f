//! Dinic max-flow with weights as integer capacities.
//!
//! The residual network is built from the digraph's edge list, which is
//! sorted by `(src, dst)` code order, so BFS levels and the DFS augmenting
//! order are fully determined by the graph. Max flows are not unique; the one
//! returned here is the canonical solution for that ordering.

use std::collections::{BTreeMap, VecDeque};

use crate::graph::{GraphError, WeightedDigraph};

struct Arc {
    to: usize,
    cap: u64,
    rev: usize,
}

/// Residual network; the forward arc for graph edge `k` is `arcs[tail][slot[k]]`.
struct Residual {
    arcs: Vec<Vec<Arc>>,
    slot: Vec<(usize, usize)>,
    level: Vec<i64>,
    iter: Vec<usize>,
}

impl Residual {
    fn new(g: &WeightedDigraph) -> Self {
        let n = g.node_count();
        let mut arcs: Vec<Vec<Arc>> = (0..n).map(|_| Vec::new()).collect();
        let mut slot = Vec::with_capacity(g.edge_count());
        for e in g.edges() {
            let fwd = arcs[e.src].len();
            let bwd = arcs[e.dst].len();
            arcs[e.src].push(Arc { to: e.dst, cap: e.weight, rev: bwd });
            arcs[e.dst].push(Arc { to: e.src, cap: 0, rev: fwd });
            slot.push((e.src, fwd));
        }
        Residual { arcs, slot, level: vec![-1; n], iter: vec![0; n] }
    }

    fn bfs(&mut self, s: usize) {
        self.level.iter_mut().for_each(|l| *l = -1);
        self.level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for a in &self.arcs[v] {
                if a.cap > 0 && self.level[a.to] < 0 {
                    self.level[a.to] = self.level[v] + 1;
                    queue.push_back(a.to);
                }
            }
        }
    }

    fn dfs(&mut self, v: usize, t: usize, limit: u64) -> u64 {
        if v == t {
            return limit;
        }
        while self.iter[v] < self.arcs[v].len() {
            let i = self.iter[v];
            let (to, cap) = (self.arcs[v][i].to, self.arcs[v][i].cap);
            if cap > 0 && self.level[v] < self.level[to] {
                let pushed = self.dfs(to, t, limit.min(cap));
                if pushed > 0 {
                    let rev = self.arcs[v][i].rev;
                    self.arcs[v][i].cap -= pushed;
                    self.arcs[to][rev].cap += pushed;
                    return pushed;
                }
            }
            self.iter[v] += 1;
        }
        0
    }

    fn run(&mut self, s: usize, t: usize) -> u64 {
        let mut total = 0;
        loop {
            self.bfs(s);
            if self.level[t] < 0 {
                return total;
            }
            self.iter.iter_mut().for_each(|i| *i = 0);
            loop {
                let f = self.dfs(s, t, u64::MAX);
                if f == 0 {
                    break;
                }
                total += f;
            }
        }
    }

    /// Flow on every graph edge.
    fn edge_flows(&self, g: &WeightedDigraph) -> Vec<u64> {
        g.edges()
            .iter()
            .zip(&self.slot)
            .map(|(e, &(u, i))| e.weight - self.arcs[u][i].cap)
            .collect()
    }
}

/// Max-flow value and per-edge flows (indexed like `g.edges()`) between node
/// indices `s` and `t`. Caller guarantees `s != t`.
pub fn max_flow_indexed(g: &WeightedDigraph, s: usize, t: usize) -> (u64, Vec<u64>) {
    debug_assert_ne!(s, t);
    let mut r = Residual::new(g);
    let value = r.run(s, t);
    (value, r.edge_flows(g))
}

/// Result of [`max_flow`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaxFlow {
    pub value: f64,
    pub edge_flows: BTreeMap<(String, String), f64>,
}

pub fn max_flow(g: &WeightedDigraph, s: &str, t: &str) -> Result<MaxFlow, GraphError> {
    let si = g.index_of(s)?;
    let ti = g.index_of(t)?;
    if si == ti {
        return Err(GraphError::SameEndpoints(s.to_string()));
    }
    let (value, flows) = max_flow_indexed(g, si, ti);
    let edge_flows = g
        .edges()
        .iter()
        .zip(flows)
        .map(|(e, f)| ((g.code(e.src).to_string(), g.code(e.dst).to_string()), f as f64))
        .collect();
    Ok(MaxFlow { value: value as f64, edge_flows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::digraph;
    use airhold_oracles::brute_force_min_cut;
    use proptest::prelude::*;

    #[test]
    fn single_edge() {
        let g = digraph(&["a", "b"], &[("a", "b", 7)]);
        assert_eq!(max_flow(&g, "a", "b").unwrap().value, 7.0);
    }

    #[test]
    fn two_routes() {
        let g = digraph(&["a", "b", "c"], &[("a", "b", 3), ("a", "c", 2), ("c", "b", 2)]);
        let f = max_flow(&g, "a", "b").unwrap();
        assert_eq!(f.value, 5.0);
        assert_eq!(f.edge_flows[&("a".into(), "c".into())], 2.0);
    }

    #[test]
    fn no_path_means_zero_flow() {
        let g = digraph(&["a", "b", "c"], &[("b", "a", 3), ("a", "c", 2)]);
        let f = max_flow(&g, "a", "b").unwrap();
        assert_eq!(f.value, 0.0);
        assert!(f.edge_flows.values().all(|&x| x == 0.0));
    }

    #[test]
    fn argument_errors() {
        let g = digraph(&["a", "b"], &[("a", "b", 1)]);
        assert!(matches!(max_flow(&g, "a", "a"), Err(GraphError::SameEndpoints(_))));
        assert!(matches!(max_flow(&g, "a", "z"), Err(GraphError::UnknownNode(_))));
    }

    fn random_case() -> impl Strategy<Value = (usize, Vec<(usize, usize, u64)>, usize, usize)> {
        (2usize..=6).prop_flat_map(|n| {
            let pairs: Vec<(usize, usize)> =
                (0..n).flat_map(|u| (0..n).filter(move |&v| v != u).map(move |v| (u, v))).collect();
            let m = pairs.len();
            (
                Just(n),
                Just(pairs),
                proptest::collection::vec((any::<bool>(), 1u64..=5), m),
                0..n,
                1..n,
            )
        })
        .prop_map(|(n, pairs, picks, s, off)| {
            let edges = pairs
                .into_iter()
                .zip(picks)
                .filter(|(_, (keep, _))| *keep)
                .map(|((u, v), (_, w))| (u, v, w))
                .collect();
            (n, edges, s, (s + off) % n)
        })
    }

    proptest! {
        #[test]
        fn equals_min_cut_and_is_feasible((n, edges, s, t) in random_case()) {
            let codes: Vec<String> = (0..n).map(|i| format!("N{i}")).collect();
            let refs: Vec<&str> = codes.iter().map(|c| c.as_str()).collect();
            let named: Vec<_> = edges.iter().map(|&(u, v, w)| (refs[u], refs[v], w)).collect();
            let g = digraph(&refs, &named);
            let (value, flows) = max_flow_indexed(&g, s, t);
            let indexed: Vec<_> = g.edges().iter().map(|e| (e.src, e.dst, e.weight)).collect();
            prop_assert_eq!(value, brute_force_min_cut(n, &indexed, s, t));

            let mut net = vec![0i64; n];
            for (e, &f) in g.edges().iter().zip(&flows) {
                prop_assert!(f <= e.weight);
                net[e.src] -= f as i64;
                net[e.dst] += f as i64;
            }
            for (v, &x) in net.iter().enumerate() {
                if v == s {
                    prop_assert_eq!(x, -(value as i64));
                } else if v == t {
                    prop_assert_eq!(x, value as i64);
                } else {
                    prop_assert_eq!(x, 0);
                }
            }
        }
    }
}
