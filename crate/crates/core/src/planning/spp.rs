//! Static planning problems, dual objectives and upper bounds.

use serde::{Deserialize, Serialize};

use super::flow::{flow_decompose, FlowDecomposition, FlowEdge};
use super::lp::{LinearProgram, LpStatus, RowKind};
use crate::error::{Error, Result};
use crate::network::{l1_distance, NetworkSpec, Setting};
use crate::simulator::TravelTimes;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SppSolution {
    pub status: LpStatus,
    pub objective: f64,
    /// Flow rate per demand type and (pickup, dropoff) pair, row-major as in `DemandType::values`.
    pub z: Vec<Vec<f64>>,
    /// Node prices `y` with the last node pinned to 0.
    pub duals: Vec<f64>,
    /// Price of the supply (Little's law) row when present.
    pub supply_dual: Option<f64>,
    pub phi: Vec<f64>,
}

impl SppSolution {
    /// Fraction of type `tau` demand served through pair `pair`.
    pub fn x(&self, tau: usize, pair: usize) -> f64 {
        if self.phi[tau] > 0.0 {
            self.z[tau][pair] / self.phi[tau]
        } else {
            0.0
        }
    }

    /// Net outflow per node.
    pub fn imbalance(&self, spec: &NetworkSpec) -> Vec<f64> {
        let mut net = vec![0.0; spec.nodes];
        for (t, zs) in spec.demand_types.iter().zip(&self.z) {
            for ((j, k, _), &z) in t.pairs().zip(zs) {
                net[j] += z;
                net[k] -= z;
            }
        }
        net
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Column layout: (type, pair) -> variable index.
fn offsets(spec: &NetworkSpec) -> (Vec<usize>, usize) {
    let mut off = Vec::with_capacity(spec.num_types());
    let mut n = 0;
    for t in &spec.demand_types {
        off.push(n);
        n += t.values.len();
    }
    (off, n)
}

fn flow_rows(spec: &NetworkSpec, weight: &[f64], n: usize, off: &[usize]) -> Vec<Vec<f64>> {
    let m = spec.nodes;
    // the last balance row is implied by the others and is dropped
    let mut rows = vec![vec![0.0; n]; m - 1];
    for (ti, t) in spec.demand_types.iter().enumerate() {
        for (p, (j, k, _)) in t.pairs().enumerate() {
            if j == k {
                continue;
            }
            let col = off[ti] + p;
            if j < m - 1 {
                rows[j][col] += weight[ti];
            }
            if k < m - 1 {
                rows[k][col] -= weight[ti];
            }
        }
    }
    rows
}

/// Solves the linear static planning problem for `phi`, optionally with a
/// supply row `sum D z <= cap` (travel times in periods).
pub fn solve_spp(
    spec: &NetworkSpec,
    phi: &[f64],
    supply: Option<(&TravelTimes, f64)>,
) -> Result<SppSolution> {
    if spec.setting == Setting::Jpa {
        return Err(Error::InvalidConfig(
            "pricing instances use solve_spp_jpa".into(),
        ));
    }
    spec.check_phi(phi)?;
    let m = spec.nodes;
    let (off, n) = offsets(spec);
    let mut obj = vec![0.0; n];
    for (ti, t) in spec.demand_types.iter().enumerate() {
        obj[off[ti]..off[ti] + t.values.len()].copy_from_slice(&t.values);
    }
    let mut lp = LinearProgram::new(obj);
    let ones = vec![1.0; spec.num_types()];
    for r in flow_rows(spec, &ones, n, &off) {
        lp.add_row(r, RowKind::Eq, 0.0);
    }
    for (ti, t) in spec.demand_types.iter().enumerate() {
        let mut r = vec![0.0; n];
        for p in 0..t.values.len() {
            r[off[ti] + p] = 1.0;
        }
        lp.add_row(r, RowKind::Le, phi[ti]);
    }
    if let Some((travel, cap)) = supply {
        let mut r = vec![0.0; n];
        for (ti, t) in spec.demand_types.iter().enumerate() {
            for (p, (j, k, _)) in t.pairs().enumerate() {
                r[off[ti] + p] = travel.total(j, t, k) as f64;
            }
        }
        lp.add_row(r, RowKind::Le, cap);
    }
    let sol = lp.solve()?;
    let mut z = Vec::with_capacity(spec.num_types());
    for (ti, t) in spec.demand_types.iter().enumerate() {
        z.push(sol.x[off[ti]..off[ti] + t.values.len()].to_vec());
    }
    let mut duals: Vec<f64> = sol.duals[..m - 1].iter().map(|d| -d).collect();
    duals.push(0.0);
    let supply_dual = supply.map(|_| *sol.duals.last().unwrap());
    Ok(SppSolution {
        status: sol.status,
        objective: sol.objective,
        z,
        duals,
        supply_dual,
        phi: phi.to_vec(),
    })
}

/// Best score over pairs of a type at prices `y`: max_{j,k} (value + y_j - y_k), with
/// the value negated for costs.
fn best_pair_score(t: &crate::network::DemandType, y: &[f64], costs: bool) -> f64 {
    t.pairs()
        .map(|(j, k, v)| if costs { -v } else { v } + y[j] - y[k])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Partial dual g(y).
pub fn eval_dual(spec: &NetworkSpec, phi: &[f64], y: &[f64]) -> f64 {
    let pricing = spec.setting == Setting::Jpa;
    spec.demand_types
        .iter()
        .zip(phi)
        .map(|(t, &p)| {
            if p == 0.0 {
                return 0.0;
            }
            let s = best_pair_score(t, y, pricing);
            if pricing {
                let w = t.wtp.as_ref().expect("pricing type without wtp");
                let mu = w.optimal_fraction(s);
                p * (w.revenue(mu) + mu * s).max(0.0)
            } else {
                p * s.max(0.0)
            }
        })
        .sum()
}

/// Dual with the supply row priced at `v`.
pub fn eval_dual_supply(
    spec: &NetworkSpec,
    phi: &[f64],
    y: &[f64],
    v: f64,
    travel: &TravelTimes,
    cap: f64,
) -> f64 {
    let inner: f64 = spec
        .demand_types
        .iter()
        .zip(phi)
        .map(|(t, &p)| {
            let s = t
                .pairs()
                .map(|(j, k, w)| w + y[j] - y[k] - v * travel.total(j, t, k) as f64)
                .fold(f64::NEG_INFINITY, f64::max);
            p * s.max(0.0)
        })
        .sum();
    inner + v * cap
}

/// Finite-horizon upper bound W + m K / T.
pub fn payoff_upper_bound(w_spp: f64, m: usize, k: usize, t: usize) -> f64 {
    w_spp + m as f64 * k as f64 / t as f64
}

/// Flow decomposition of an SPP solution over its (pickup, dropoff) edges.
pub fn decompose_solution(spec: &NetworkSpec, sol: &SppSolution) -> (Vec<FlowEdge>, FlowDecomposition) {
    let mut edges = Vec::new();
    for (t, zs) in spec.demand_types.iter().zip(&sol.z) {
        for ((j, k, _), &z) in t.pairs().zip(zs) {
            edges.push(FlowEdge {
                from: j,
                to: k,
                flow: z,
            });
        }
    }
    let d = flow_decompose(spec.nodes, &edges);
    (edges, d)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AveragedSppCheck {
    pub w_t: f64,
    pub w_bar: f64,
    pub eta: f64,
    pub horizon: usize,
    pub margin: f64,
}

/// Compares the SPP at `phis[t]` with the SPP at the window average.
pub fn averaged_spp_gap_check(spec: &NetworkSpec, phis: &[Vec<f64>], t: usize) -> Result<AveragedSppCheck> {
    if phis.is_empty() || t >= phis.len() {
        return Err(Error::InvalidConfig("period outside the sequence".into()));
    }
    let horizon = phis.len();
    let n = spec.num_types();
    let mut avg = vec![0.0; n];
    for p in phis {
        for (a, b) in avg.iter_mut().zip(p) {
            *a += b / horizon as f64;
        }
    }
    let eta = phis
        .windows(2)
        .map(|w| l1_distance(&w[0], &w[1]))
        .fold(0.0, f64::max);
    let w_t = solve_spp(spec, &phis[t], None)?.objective;
    let w_bar = solve_spp(spec, &avg, None)?.objective;
    let margin = w_t - (w_bar - eta * horizon as f64 * spec.nodes as f64 / 2.0);
    Ok(AveragedSppCheck {
        w_t,
        w_bar,
        eta,
        horizon,
        margin,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JpaSolution {
    pub objective: f64,
    /// Per type and pair: fraction of type demand served through the pair.
    pub x: Vec<Vec<f64>>,
    /// Fraction of each type's demand that buys.
    pub mu: Vec<f64>,
    pub iterations: usize,
    /// Final Frank-Wolfe duality gap (upper bound on suboptimality).
    pub fw_gap: f64,
}

fn jpa_objective(spec: &NetworkSpec, phi: &[f64], x: &[f64], off: &[usize]) -> f64 {
    spec.demand_types
        .iter()
        .enumerate()
        .map(|(ti, t)| {
            let xs = &x[off[ti]..off[ti] + t.values.len()];
            let mu: f64 = xs.iter().sum();
            let cost: f64 = xs.iter().zip(&t.values).map(|(a, c)| a * c).sum();
            phi[ti] * (t.wtp.as_ref().unwrap().revenue(mu.min(1.0)) - cost)
        })
        .sum()
}

fn jpa_gradient(spec: &NetworkSpec, phi: &[f64], x: &[f64], off: &[usize], out: &mut [f64]) {
    for (ti, t) in spec.demand_types.iter().enumerate() {
        let xs = &x[off[ti]..off[ti] + t.values.len()];
        let mu: f64 = xs.iter().sum::<f64>().min(1.0);
        let dr = t.wtp.as_ref().unwrap().revenue_derivative(mu);
        for (p, c) in t.values.iter().enumerate() {
            out[off[ti] + p] = phi[ti] * (dr - c);
        }
    }
}

/// Pricing SPP by Frank-Wolfe over the flow polytope.
pub fn solve_spp_jpa(spec: &NetworkSpec, phi: &[f64]) -> Result<JpaSolution> {
    if spec.setting != Setting::Jpa {
        return Err(Error::InvalidConfig("solve_spp_jpa needs a pricing instance".into()));
    }
    spec.check_phi(phi)?;
    for t in &spec.demand_types {
        t.wtp.as_ref().unwrap().validate(&t.id)?;
    }
    let (off, n) = offsets(spec);
    let mut base = LinearProgram::new(vec![0.0; n]);
    for r in flow_rows(spec, phi, n, &off) {
        base.add_row(r, RowKind::Eq, 0.0);
    }
    for (ti, t) in spec.demand_types.iter().enumerate() {
        let mut r = vec![0.0; n];
        for p in 0..t.values.len() {
            r[off[ti] + p] = 1.0;
        }
        // types without demand carry no flow
        let cap = if phi[ti] > 0.0 { 1.0 } else { 0.0 };
        base.add_row(r, RowKind::Le, cap);
    }
    let mut x = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let mut value = jpa_objective(spec, phi, &x, &off);
    for it in 0..10_000 {
        iterations = it + 1;
        jpa_gradient(spec, phi, &x, &off, &mut grad);
        base.objective.copy_from_slice(&grad);
        let s = base.solve()?;
        if s.status != LpStatus::Optimal {
            return Err(Error::SolverStall(it));
        }
        let d: Vec<f64> = s.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        gap = grad.iter().zip(&d).map(|(g, di)| g * di).sum();
        if gap <= 1e-10 * value.abs().max(1.0) {
            break;
        }
        // exact line search: the objective is concave along d
        let slope = |gamma: f64, buf: &mut Vec<f64>| -> f64 {
            let y: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + gamma * b).collect();
            jpa_gradient(spec, phi, &y, &off, buf);
            buf.iter().zip(&d).map(|(g, di)| g * di).sum()
        };
        let mut buf = vec![0.0; n];
        let gamma = if slope(1.0, &mut buf) >= 0.0 {
            1.0
        } else {
            let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if slope(mid, &mut buf) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        for (a, b) in x.iter_mut().zip(&d) {
            *a = (*a + gamma * b).max(0.0);
        }
        let next = jpa_objective(spec, phi, &x, &off);
        let improvement = next - value;
        value = next;
        if improvement.abs() <= 1e-14 * value.abs().max(1.0) && gap <= 1e-8 * value.abs().max(1.0) {
            break;
        }
    }
    let mut xs = Vec::with_capacity(spec.num_types());
    let mut mu = Vec::with_capacity(spec.num_types());
    for (ti, t) in spec.demand_types.iter().enumerate() {
        let v = x[off[ti]..off[ti] + t.values.len()].to_vec();
        mu.push(v.iter().sum());
        xs.push(v);
    }
    Ok(JpaSolution {
        objective: value,
        x: xs,
        mu,
        iterations,
        fw_gap: gap.max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, simple_type, PairValues, RawDemandType, RawInstance, RawWtp};

    pub fn example_one(eps: f64, w: f64) -> (NetworkSpec, Vec<f64>) {
        let spec = build_network(RawInstance {
            nodes: 3,
            buffers: None,
            setting: None,
            demand_types: vec![
                simple_type("12", 0, 1, w / 2.0),
                simple_type("21", 1, 0, w / 2.0),
                simple_type("23", 1, 2, w),
                simple_type("32", 2, 1, w / 2.0),
            ],
            arrival: None,
        })
        .unwrap();
        let third = 1.0 / 3.0;
        (spec, vec![eps, third - eps, third + eps, third - eps])
    }

    #[test]
    fn example_one_closed_form() {
        let (spec, phi) = example_one(0.1, 2.0);
        assert!((spec.scale_factor - 0.5).abs() < 1e-15);
        let s = solve_spp(&spec, &phi, None).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x(1, 0) - 3.0 / 7.0).abs() < 1e-9);
        assert!((s.x(2, 0) - 7.0 / 13.0).abs() < 1e-9);
        assert!((s.x(0, 0) - 1.0).abs() < 1e-9);
        assert!((s.x(3, 0) - 1.0).abs() < 1e-9);
        assert!((s.objective - 0.45).abs() < 1e-12);
        assert!((eval_dual(&spec, &phi, &s.duals) - s.objective).abs() < 1e-10);
        // dual family (a, a - 1/2, a + 1/2)
        for a in [-3.0, 0.0, 1.7] {
            let y = [a, a - 0.5, a + 0.5];
            assert!((eval_dual(&spec, &phi, &y) - 0.45).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_two_node() {
        let spec = build_network(RawInstance {
            nodes: 2,
            buffers: None,
            setting: None,
            demand_types: vec![simple_type("12", 0, 1, 0.2), simple_type("21", 1, 0, 0.2)],
            arrival: None,
        })
        .unwrap();
        let phi = [0.5, 0.5];
        let s = solve_spp(&spec, &phi, None).unwrap();
        assert!((spec.unnormalize(s.objective) - 0.2).abs() < 1e-12);
        assert!((s.z[0][0] - 0.5).abs() < 1e-12 && (s.z[1][0] - 0.5).abs() < 1e-12);
        assert!((spec.unnormalize(eval_dual(&spec, &phi, &[0.0, 0.0])) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn upper_bound_formula() {
        assert!((payoff_upper_bound(0.45, 3, 100, 100_000) - 0.453).abs() < 1e-12);
    }

    #[test]
    fn symmetric_jpa() {
        let t = |id: &str, a: usize, b: usize| RawDemandType {
            id: Some(id.into()),
            pickup: vec![a],
            dropoff: vec![b],
            payoff: None,
            cost: Some(PairValues::Scalar(0.0)),
            price_bounds: Some((0.0, 1.0)),
            wtp: Some(RawWtp::Uniform),
            origin: None,
            destination: None,
        };
        let spec = build_network(RawInstance {
            nodes: 2,
            buffers: None,
            setting: None,
            demand_types: vec![t("12", 0, 1), t("21", 1, 0)],
            arrival: None,
        })
        .unwrap();
        let s = solve_spp_jpa(&spec, &[0.5, 0.5]).unwrap();
        assert!((s.objective - 0.25).abs() < 1e-9, "{}", s.objective);
        assert!((s.mu[0] - 0.5).abs() < 1e-6);
    }
}
