//! Exact minimum-degradation transport between `H` and `F` for small
//! instances on a rational grid. Solved as min-cost flow with successive
//! shortest paths; independent of the aligner.

use super::OdaError;
use crate::degradation::DegradationTable;

pub const ORACLE_MAX_LEVELS: usize = 8;
pub const ORACLE_MAX_DENOMINATOR: u64 = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// `flow[source][target]` as probability mass.
    pub flow: Vec<Vec<f64>>,
    pub degradation: f64,
    pub denominator: u64,
}

/// Smallest common denominator that puts every value on an integer grid.
fn common_denominator(values: &[f64]) -> Option<u64> {
    (1..=ORACLE_MAX_DENOMINATOR).find(|&d| {
        values.iter().all(|v| {
            let scaled = v * d as f64;
            (scaled - scaled.round()).abs() < 1e-7
        })
    })
}

struct Edge {
    to: usize,
    cap: i64,
    cost: f64,
}

struct Graph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl Graph {
    fn new(nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: i64, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap, cost });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge { to: from, cap: 0, cost: -cost });
    }

    /// Successive shortest paths with Bellman-Ford; returns total flow.
    fn min_cost_flow(&mut self, s: usize, t: usize) -> i64 {
        let n = self.adj.len();
        let mut total = 0;
        loop {
            let mut dist = vec![f64::INFINITY; n];
            let mut prev: Vec<Option<usize>> = vec![None; n];
            dist[s] = 0.0;
            for _ in 0..n {
                let mut changed = false;
                for u in 0..n {
                    if dist[u].is_infinite() {
                        continue;
                    }
                    for &e in &self.adj[u] {
                        let edge = &self.edges[e];
                        if edge.cap > 0 && dist[u] + edge.cost < dist[edge.to] - 1e-12 {
                            dist[edge.to] = dist[u] + edge.cost;
                            prev[edge.to] = Some(e);
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            if dist[t].is_infinite() {
                return total;
            }
            let mut push = i64::MAX;
            let mut v = t;
            while let Some(e) = prev[v] {
                push = push.min(self.edges[e].cap);
                v = self.edges[e ^ 1].to;
            }
            let mut v = t;
            while let Some(e) = prev[v] {
                self.edges[e].cap -= push;
                self.edges[e ^ 1].cap += push;
                v = self.edges[e ^ 1].to;
            }
            total += push;
        }
    }
}

/// Minimum of `sum_{s,t} X(s,t) D(t,s)` over couplings `X` of `h` and `f`.
pub fn min_degradation_oracle(h: &[f64], f: &[f64], d: &DegradationTable) -> Result<TransportPlan, OdaError> {
    let n = h.len();
    if f.len() != n {
        return Err(OdaError::LengthMismatch { h: n, f: f.len() });
    }
    if n > ORACLE_MAX_LEVELS {
        return Err(OdaError::TooLarge(n));
    }
    let all: Vec<f64> = h.iter().chain(f).copied().collect();
    let den = common_denominator(&all).ok_or(OdaError::OffGrid("H or F"))?;
    let units = |x: f64| (x * den as f64).round() as i64;
    let supply: Vec<i64> = h.iter().map(|&x| units(x)).collect();
    let demand: Vec<i64> = f.iter().map(|&x| units(x)).collect();
    if supply.iter().sum::<i64>() != demand.iter().sum::<i64>() {
        return Err(OdaError::NotDistribution {
            which: "F",
            sum: f.iter().sum(),
        });
    }

    // 0 = source, 1..=n sources levels, n+1..=2n target levels, 2n+1 = sink
    let sink = 2 * n + 1;
    let mut g = Graph::new(2 * n + 2);
    for i in 0..n {
        g.add(0, 1 + i, supply[i], 0.0);
        g.add(1 + n + i, sink, demand[i], 0.0);
    }
    let mut cross = vec![vec![0usize; n]; n];
    for s in 0..n {
        for t in 0..n {
            cross[s][t] = g.edges.len();
            let cost = if t > s { d.get(t, s) } else { 0.0 };
            g.add(1 + s, 1 + n + t, i64::MAX / 4, cost);
        }
    }
    g.min_cost_flow(0, sink);

    let mut flow = vec![vec![0.0; n]; n];
    let mut degradation = 0.0;
    for s in 0..n {
        for t in 0..n {
            let units = g.edges[cross[s][t] ^ 1].cap;
            let mass = units as f64 / den as f64;
            flow[s][t] = mass;
            if t > s {
                degradation += mass * d.get(t, s);
            }
        }
    }
    Ok(TransportPlan {
        flow,
        degradation,
        denominator: den,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oda::{compute_pasm, expected_degradation};

    fn convex(n: usize) -> DegradationTable {
        DegradationTable::from_fn(n, |to, from| ((to - from) as f64).powi(2))
    }

    #[test]
    fn grid_detection() {
        assert_eq!(common_denominator(&[0.5, 0.25]), Some(4));
        assert_eq!(common_denominator(&[1.0 / 3.0, 2.0 / 3.0]), Some(3));
        assert_eq!(common_denominator(&[0.1234567]), None);
    }

    #[test]
    fn two_level_example() {
        let d = DegradationTable::from_fn(2, |_, _| 1.0);
        let plan = min_degradation_oracle(&[0.7, 0.3], &[0.5, 0.5], &d).unwrap();
        assert!((plan.degradation - 0.2).abs() < 1e-12);
        assert!((plan.flow[0][1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn prefers_short_shifts() {
        // mass at level 0 and 1 must supply level 2; taking from 1 is cheaper
        let d = convex(3);
        let plan = min_degradation_oracle(&[0.4, 0.4, 0.2], &[0.4, 0.2, 0.4], &d).unwrap();
        assert!((plan.degradation - 0.2).abs() < 1e-12);
        let pasm = compute_pasm(&[0.4, 0.4, 0.2], &[0.4, 0.2, 0.4]).unwrap();
        assert!((expected_degradation(&pasm, &[0.4, 0.4, 0.2], &d) - plan.degradation).abs() < 1e-12);
    }

    #[test]
    fn limits() {
        let d = convex(9);
        let h = vec![1.0 / 9.0; 9];
        assert_eq!(min_degradation_oracle(&h, &h, &d).unwrap_err(), OdaError::TooLarge(9));
        let d = convex(2);
        assert_eq!(
            min_degradation_oracle(&[0.1234567, 0.8765433], &[0.5, 0.5], &d).unwrap_err(),
            OdaError::OffGrid("H or F")
        );
    }
}
