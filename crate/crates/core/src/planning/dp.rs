//! Exact finite-horizon optimal values by backward induction over the state
//! lattice. Only practical for small networks and K.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::network::{DemandModel, NetworkSpec, Scale, Setting};

/// Every state of the lattice with its index.
pub struct StateSpace {
    pub states: Vec<Vec<usize>>,
    index: HashMap<Vec<usize>, usize>,
}

impl StateSpace {
    pub fn new(scale: &Scale) -> StateSpace {
        let m = scale.caps.len();
        let mut states = Vec::new();
        let mut cur = vec![0usize; m];
        fn rec(j: usize, left: usize, caps: &[usize], cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if j + 1 == caps.len() {
                if left <= caps[j] {
                    cur[j] = left;
                    out.push(cur.clone());
                }
                return;
            }
            for x in 0..=left.min(caps[j]) {
                cur[j] = x;
                rec(j + 1, left - x, caps, cur, out);
            }
        }
        rec(0, scale.k, &scale.caps, &mut cur, &mut states);
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        StateSpace { states, index }
    }

    pub fn index_of(&self, q: &[usize]) -> Option<usize> {
        self.index.get(q).copied()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Optimal expected total payoff over `start..start + horizon` from every state.
pub struct OptimalValues {
    pub space: StateSpace,
    pub values: Vec<f64>,
    pub start: usize,
    pub horizon: usize,
}

impl OptimalValues {
    /// Optimal average payoff per period from `q`.
    pub fn average(&self, q: &[usize]) -> Option<f64> {
        self.space
            .index_of(q)
            .map(|i| self.values[i] / self.horizon as f64)
    }
}

/// Backward induction for entry and assignment control (normalized payoffs).
pub fn optimal_values(
    spec: &NetworkSpec,
    scale: &Scale,
    demand: &DemandModel,
    start: usize,
    horizon: usize,
    max_states: usize,
) -> Result<OptimalValues> {
    if !matches!(spec.setting, Setting::EntryControl | Setting::Jea | Setting::Scrip) {
        return Err(Error::InvalidConfig("dynamic programming supports entry and assignment only".into()));
    }
    demand.validate(spec.num_types())?;
    let space = StateSpace::new(scale);
    if space.len() > max_states {
        return Err(Error::InvalidConfig(format!(
            "{} states exceed the limit of {max_states}",
            space.len()
        )));
    }
    // options[s][tau]: (payoff, next state) for every feasible serve
    let mut options: Vec<Vec<Vec<(f64, usize)>>> = Vec::with_capacity(space.len());
    for q in &space.states {
        let mut per_type = Vec::with_capacity(spec.num_types());
        for t in &spec.demand_types {
            let mut opts = Vec::new();
            for (j, k, w) in t.pairs() {
                if q[j] == 0 || (j != k && q[k] >= scale.caps[k]) {
                    continue;
                }
                let mut next = q.clone();
                next[j] -= 1;
                next[k] += 1;
                opts.push((w, space.index_of(&next).expect("state in lattice")));
            }
            per_type.push(opts);
        }
        options.push(per_type);
    }
    let n = space.len();
    let mut v = vec![0.0; n];
    let mut nv = vec![0.0; n];
    let mut phi = Vec::new();
    for t in (start..start + horizon).rev() {
        demand.phi_into(t, &mut phi);
        for s in 0..n {
            let stay = v[s];
            let mut acc = 0.0;
            for (tau, &p) in phi.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let best = options[s][tau]
                    .iter()
                    .map(|&(w, next)| w + v[next])
                    .fold(stay, f64::max);
                acc += p * best;
            }
            nv[s] = acc;
        }
        std::mem::swap(&mut v, &mut nv);
    }
    Ok(OptimalValues {
        space,
        values: v,
        start,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, simple_type, RawInstance};

    #[test]
    fn lattice_size() {
        let sc = Scale::new(4, vec![4, 4, 4], vec![1.0; 3]);
        assert_eq!(StateSpace::new(&sc).len(), 15);
        let sc = Scale::new(4, vec![1, 4, 4], vec![0.25, 1.0, 1.0]);
        assert_eq!(StateSpace::new(&sc).len(), 9);
    }

    #[test]
    fn one_step_value() {
        let spec = build_network(RawInstance {
            nodes: 2,
            buffers: None,
            setting: None,
            demand_types: vec![simple_type("12", 0, 1, 1.0), simple_type("21", 1, 0, 0.5)],
            arrival: None,
        })
        .unwrap();
        let sc = spec.at_scale(1).unwrap();
        let d = DemandModel::stationary(vec![0.5, 0.5]);
        let v = optimal_values(&spec, &sc, &d, 0, 1, 100).unwrap();
        assert!((v.average(&[1, 0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((v.average(&[0, 1]).unwrap() - 0.25).abs() < 1e-15);
        // 0.5 * max(0.5, 1 + 0.25) + 0.5 * 0.5
        let v = optimal_values(&spec, &sc, &d, 0, 2, 100).unwrap();
        assert!((v.values[v.space.index_of(&[1, 0]).unwrap()] - 0.875).abs() < 1e-15);
    }
}
