//! Exact min-cost flow by successive shortest paths with node potentials.
//!
//! Capacities and costs are integers, so the optimum is exact up to the
//! scaling used to integerize probability masses.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    cap: i64,
    cost: i64,
}

#[derive(Debug, Clone)]
pub struct MinCostFlow {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
}

/// Capacity used for arcs without a limit.
pub const UNBOUNDED: i64 = i64::MAX / 4;

impl MinCostFlow {
    pub fn new(nodes: usize) -> Self {
        Self {
            arcs: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    /// Adds the arc `from -> to` and its residual twin. Costs must be nonnegative.
    pub fn add_arc(&mut self, from: usize, to: usize, cap: i64, cost: i64) {
        debug_assert!(cost >= 0 && cap >= 0);
        self.adj[from].push(self.arcs.len());
        self.arcs.push(Arc { to, cap, cost });
        self.adj[to].push(self.arcs.len());
        self.arcs.push(Arc {
            to: from,
            cap: 0,
            cost: -cost,
        });
    }

    /// Sends as much flow as possible (up to `limit`) from `source` to
    /// `sink` at minimum cost; returns `(flow, cost)`.
    pub fn solve(&mut self, source: usize, sink: usize, limit: i64) -> (i64, i128) {
        let n = self.node_count();
        let mut potential = vec![0i64; n];
        let mut dist = vec![i64::MAX; n];
        let mut prev_arc = vec![usize::MAX; n];
        let mut flow = 0i64;
        let mut cost = 0i128;
        while flow < limit {
            dist.iter_mut().for_each(|d| *d = i64::MAX);
            dist[source] = 0;
            let mut heap = BinaryHeap::new();
            heap.push(Reverse((0i64, source)));
            while let Some(Reverse((d, u))) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for &a in &self.adj[u] {
                    let arc = &self.arcs[a];
                    if arc.cap <= 0 {
                        continue;
                    }
                    let nd = d + arc.cost + potential[u] - potential[arc.to];
                    if nd < dist[arc.to] {
                        dist[arc.to] = nd;
                        prev_arc[arc.to] = a;
                        heap.push(Reverse((nd, arc.to)));
                    }
                }
            }
            if dist[sink] == i64::MAX {
                break;
            }
            for v in 0..n {
                if dist[v] != i64::MAX {
                    potential[v] += dist[v];
                }
            }
            let mut push = limit - flow;
            let mut v = sink;
            while v != source {
                let a = prev_arc[v];
                push = push.min(self.arcs[a].cap);
                v = self.arcs[a ^ 1].to;
            }
            let mut v = sink;
            while v != source {
                let a = prev_arc[v];
                self.arcs[a].cap -= push;
                self.arcs[a ^ 1].cap += push;
                cost += i128::from(push) * i128::from(self.arcs[a].cost);
                v = self.arcs[a ^ 1].to;
            }
            flow += push;
        }
        (flow, cost)
    }
}

/// Round nonnegative masses summing to one onto integers summing to `scale`.
pub(crate) fn integerize(p: &[f64], scale: i64) -> Vec<i64> {
    let mut out: Vec<i64> = p.iter().map(|&v| (v.max(0.0) * scale as f64).round() as i64).collect();
    let total: i64 = out.iter().sum();
    let fix = scale - total;
    if fix != 0 {
        let (idx, _) = out.iter().enumerate().max_by_key(|(_, &v)| v).expect("nonempty");
        out[idx] += fix;
    }
    out
}
