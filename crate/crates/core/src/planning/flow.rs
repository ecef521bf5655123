//! Splitting a flow into a circulation and an acyclic remainder by repeated
//! cycle cancellation.

use serde::{Deserialize, Serialize};

/// A directed edge with its flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowEdge {
    pub from: usize,
    pub to: usize,
    pub flow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDecomposition {
    /// Circulation part, per edge.
    pub circulation: Vec<f64>,
    /// Acyclic part, per edge.
    pub dag: Vec<f64>,
    pub cycles_cancelled: usize,
}

fn find_cycle(m: usize, edges: &[FlowEdge], rem: &[f64]) -> Option<Vec<usize>> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (e, edge) in edges.iter().enumerate() {
        if rem[e] > 0.0 {
            adj[edge.from].push(e);
        }
    }
    let mut color = vec![0u8; m];
    for start in 0..m {
        if color[start] != 0 {
            continue;
        }
        color[start] = 1;
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        let mut path: Vec<usize> = Vec::new();
        while let Some(top) = stack.last_mut() {
            let u = top.0;
            if top.1 < adj[u].len() {
                let e = adj[u][top.1];
                top.1 += 1;
                let v = edges[e].to;
                match color[v] {
                    1 => {
                        let idx = stack.iter().position(|s| s.0 == v).unwrap();
                        let mut cycle = path[idx..].to_vec();
                        cycle.push(e);
                        return Some(cycle);
                    }
                    0 => {
                        color[v] = 1;
                        stack.push((v, 0));
                        path.push(e);
                    }
                    _ => {}
                }
            } else {
                color[u] = 2;
                stack.pop();
                path.pop();
            }
        }
    }
    None
}

/// Decomposes `edges` on `m` nodes into a circulation plus an acyclic flow.
pub fn flow_decompose(m: usize, edges: &[FlowEdge]) -> FlowDecomposition {
    let mut rem: Vec<f64> = edges.iter().map(|e| e.flow.max(0.0)).collect();
    let mut circ = vec![0.0; edges.len()];
    let mut cancelled = 0;
    for (e, edge) in edges.iter().enumerate() {
        if edge.from == edge.to && rem[e] > 0.0 {
            circ[e] = rem[e];
            rem[e] = 0.0;
            cancelled += 1;
        }
    }
    while let Some(cycle) = find_cycle(m, edges, &rem) {
        let u = cycle.iter().map(|&e| rem[e]).fold(f64::INFINITY, f64::min);
        for &e in &cycle {
            if rem[e] == u {
                circ[e] += rem[e];
                rem[e] = 0.0;
            } else {
                circ[e] += u;
                rem[e] -= u;
            }
        }
        cancelled += 1;
    }
    // negative inputs are not flows; keep them in the remainder so the parts still add up
    for (e, edge) in edges.iter().enumerate() {
        if edge.flow < 0.0 {
            rem[e] = edge.flow;
        }
    }
    FlowDecomposition {
        circulation: circ,
        dag: rem,
        cycles_cancelled: cancelled,
    }
}

/// Net outflow per node.
pub fn net_outflow(m: usize, edges: &[FlowEdge], flows: &[f64]) -> Vec<f64> {
    let mut net = vec![0.0; m];
    for (e, f) in edges.iter().zip(flows) {
        net[e.from] += f;
        net[e.to] -= f;
    }
    net
}

/// Topological order of the positive-flow support, if one exists.
pub fn topological_order(m: usize, edges: &[FlowEdge], flows: &[f64]) -> Option<Vec<usize>> {
    let mut indeg = vec![0usize; m];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (e, &f) in edges.iter().zip(flows) {
        if f > 0.0 {
            if e.from == e.to {
                return None;
            }
            adj[e.from].push(e.to);
            indeg[e.to] += 1;
        }
    }
    let mut ready: Vec<usize> = (0..m).filter(|&j| indeg[j] == 0).collect();
    let mut order = Vec::with_capacity(m);
    while let Some(u) = ready.pop() {
        order.push(u);
        for &v in &adj[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                ready.push(v);
            }
        }
    }
    (order.len() == m).then_some(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(from: usize, to: usize, flow: f64) -> FlowEdge {
        FlowEdge { from, to, flow }
    }

    #[test]
    fn circulation_is_kept() {
        let edges = vec![e(0, 1, 0.3), e(1, 2, 0.3), e(2, 0, 0.3)];
        let d = flow_decompose(3, &edges);
        assert_eq!(d.circulation, vec![0.3; 3]);
        assert!(d.dag.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn acyclic_is_untouched() {
        let edges = vec![e(0, 1, 0.3), e(1, 2, 0.2), e(0, 2, 0.1)];
        let d = flow_decompose(3, &edges);
        assert!(d.circulation.iter().all(|&x| x == 0.0));
        assert_eq!(d.dag, vec![0.3, 0.2, 0.1]);
    }

    #[test]
    fn circulation_plus_path() {
        let edges = vec![e(0, 1, 0.3), e(1, 2, 0.3), e(2, 0, 0.3), e(1, 3, 0.2)];
        let d = flow_decompose(4, &edges);
        let want_c = [0.3, 0.3, 0.3, 0.0];
        let want_d = [0.0, 0.0, 0.0, 0.2];
        for i in 0..4 {
            assert!((d.circulation[i] - want_c[i]).abs() < 1e-12);
            assert!((d.dag[i] - want_d[i]).abs() < 1e-12);
        }
        assert!(topological_order(4, &edges, &d.dag).is_some());
    }

    #[test]
    fn self_loops_go_to_circulation() {
        let edges = vec![e(1, 1, 0.4), e(0, 1, 0.1)];
        let d = flow_decompose(2, &edges);
        assert_eq!(d.circulation, vec![0.4, 0.0]);
        assert_eq!(d.dag, vec![0.0, 0.1]);
    }
}
