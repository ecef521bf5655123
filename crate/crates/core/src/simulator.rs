//! Slotted-time dynamics of the closed network: one demand per period.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::congestion::Congestion;
use crate::error::{Error, Result};
use crate::network::{
    balanced_state, corner_state, sample_state, DemandModel, DemandSampler, DemandType,
    NetworkSpec, Scale, Setting,
};
use crate::planning::{solve_spp, SppSolution};
use crate::policies::{build_policy, Decision, DropReason, Policy, PolicyConfig, PolicyKind, StateView};

/// Pickup times `pickup[i][j]` (unit at i to origin j) and trip times
/// `trip[j][k]`, both in periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelTimes {
    pub pickup: Vec<Vec<u64>>,
    pub trip: Vec<Vec<u64>>,
}

impl TravelTimes {
    pub fn zero(m: usize) -> TravelTimes {
        TravelTimes {
            pickup: vec![vec![0; m]; m],
            trip: vec![vec![0; m]; m],
        }
    }

    /// Total delay for a unit at `i` serving type `t` towards `k`.
    #[inline]
    pub fn total(&self, i: usize, t: &DemandType, k: usize) -> u64 {
        self.pickup[i][t.origin] + self.trip[t.origin][k]
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        let ok = |mat: &Vec<Vec<u64>>| mat.len() == m && mat.iter().all(|r| r.len() == m);
        if !ok(&self.pickup) || !ok(&self.trip) {
            return Err(Error::InvalidConfig(format!("travel matrices must be {m}x{m}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum InitialState {
    Uniform,
    Balanced,
    Explicit { q: Vec<usize> },
    /// All supply on one node (spilling over if its buffer is small).
    Corner { node: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub k: usize,
    pub horizon: usize,
    pub seed: u64,
    pub policy: PolicyConfig,
    #[serde(default = "default_initial")]
    pub initial: InitialState,
    /// Periods simulated before measurement starts.
    #[serde(default)]
    pub warmup: usize,
    #[serde(default)]
    pub record_payoffs: bool,
    #[serde(default)]
    pub record_lyapunov: bool,
    #[serde(default)]
    pub record_trace: bool,
    /// Also average the exact conditional expected payoff E[v | q[t]] over periods.
    #[serde(default)]
    pub expected_payoff: bool,
}

fn default_initial() -> InitialState {
    InitialState::Balanced
}

impl RunConfig {
    pub fn new(k: usize, horizon: usize, seed: u64, policy: PolicyConfig) -> RunConfig {
        RunConfig {
            k,
            horizon,
            seed,
            policy,
            initial: InitialState::Balanced,
            warmup: 0,
            record_payoffs: false,
            record_lyapunov: false,
            record_trace: false,
            expected_payoff: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub demand_type: String,
    pub action: String,
    pub pickup: Option<usize>,
    pub dropoff: Option<usize>,
    pub payoff: f64,
    #[serde(rename = "F_lyap")]
    pub f_lyap: f64,
    pub v_shadow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub k: usize,
    pub horizon: usize,
    /// Sum of normalized payoffs over the measured periods.
    pub total_payoff: f64,
    /// W_T in normalized units.
    pub avg_payoff: f64,
    /// W_T in raw units.
    pub avg_payoff_raw: f64,
    /// Average of E[v[t] | q[t]] (normalized), when requested.
    pub avg_expected_payoff: Option<f64>,
    /// Expected payoff with the Lyapunov drift used as a control variate:
    /// mean of E[v|q] + V1(q), minus K̃ (F(q̄[0]) - F(q̄[T])) / T. Same mean, less noise.
    pub avg_corrected_payoff: Option<f64>,
    pub served: u64,
    pub underflow_blocks: u64,
    pub buffer_blocks: u64,
    pub score_drops: u64,
    pub declined: u64,
    pub price_violations: u64,
    /// State at the start of the measured window (after warm-up).
    pub initial_state: Vec<usize>,
    pub final_state: Vec<usize>,
    /// Largest on-node count seen per node.
    pub peak_queue: Vec<usize>,
    pub payoffs: Option<Vec<f64>>,
    pub lyapunov: Option<Vec<f64>>,
    pub max_in_transit: Option<usize>,
    pub mean_in_transit: Option<f64>,
    pub mean_shadow_price: Option<f64>,
    #[serde(skip)]
    pub trace: Option<Vec<TraceRecord>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueState {
    pub q: Vec<usize>,
}

impl QueueState {
    /// Applies a decision; drops leave the state unchanged.
    pub fn step(&self, caps: &[usize], decision: &Decision) -> Result<QueueState> {
        let mut q = self.q.clone();
        match *decision {
            Decision::Drop(_) => {}
            Decision::Serve { pickup, dropoff, .. } | Decision::Offer { pickup, dropoff, .. } => {
                apply_move(&mut q, caps, pickup, dropoff)?
            }
        }
        Ok(QueueState { q })
    }
}

/// Moves one unit from `j` to `k`.
pub fn apply_move(q: &mut [usize], caps: &[usize], j: usize, k: usize) -> Result<()> {
    if q[j] == 0 {
        return Err(Error::InfeasibleDecision(format!("node {j} is empty")));
    }
    if j != k && q[k] >= caps[k] {
        return Err(Error::InfeasibleDecision(format!("node {k} is full")));
    }
    q[j] -= 1;
    q[k] += 1;
    Ok(())
}

fn initial_state(rule: &InitialState, scale: &Scale, seed: u64) -> Result<Vec<usize>> {
    let q = match rule {
        InitialState::Balanced => balanced_state(&scale.caps, scale.k),
        InitialState::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a17_u64);
            sample_state(&scale.caps, scale.k, 0.0, &mut rng)
        }
        InitialState::Explicit { q } => q.clone(),
        InitialState::Corner { node } => {
            if *node >= scale.caps.len() {
                return Err(Error::InvalidConfig(format!("corner node {node} out of range")));
            }
            corner_state(&scale.caps, scale.k, *node)
        }
    };
    scale.check_state(&q)?;
    Ok(q)
}

fn stationary_phi(demand: &DemandModel) -> Result<&[f64]> {
    match demand {
        DemandModel::Stationary { phi } => Ok(phi),
        _ => Err(Error::InvalidConfig(
            "the static fluid policy needs stationary demand".into(),
        )),
    }
}

fn prepare(
    spec: &NetworkSpec,
    demand: &DemandModel,
    config: &RunConfig,
    fluid: Option<&SppSolution>,
) -> Result<(Scale, Box<dyn Policy>)> {
    if config.horizon == 0 {
        return Err(Error::InvalidConfig("T must be at least 1".into()));
    }
    demand.validate(spec.num_types())?;
    let scale = spec.at_scale(config.k)?;
    let owned;
    let fluid = match (config.policy.kind, fluid) {
        (PolicyKind::StaticFluid, None) => {
            owned = solve_spp(spec, stationary_phi(demand)?, None)?;
            Some(&owned)
        }
        (_, f) => f,
    };
    let policy = build_policy(&config.policy, spec, &scale, demand, fluid)?;
    Ok((scale, policy))
}

/// Simulates `config.horizon` measured periods (after the warm-up).
pub fn run(spec: &NetworkSpec, demand: &DemandModel, config: &RunConfig) -> Result<RunMetrics> {
    let (scale, mut policy) = prepare(spec, demand, config, None)?;
    run_with_policy(spec, demand, config, &scale, policy.as_mut())
}

/// Like [`run`] with a precomputed fluid solution for the static policy.
pub fn run_with_fluid(
    spec: &NetworkSpec,
    demand: &DemandModel,
    config: &RunConfig,
    fluid: &SppSolution,
) -> Result<RunMetrics> {
    let (scale, mut policy) = prepare(spec, demand, config, Some(fluid))?;
    run_with_policy(spec, demand, config, &scale, policy.as_mut())
}

struct Recorder {
    metrics: RunMetrics,
    lyap: Option<Congestion>,
}

impl Recorder {
    fn new(spec: &NetworkSpec, config: &RunConfig, q0: &[usize], policy: &dyn Policy) -> Recorder {
        let lyap = if config.record_lyapunov || config.record_trace {
            Some(
                policy
                    .congestion()
                    .cloned()
                    .unwrap_or_else(|| Congestion::inverse_sqrt(spec.nodes)),
            )
        } else {
            None
        };
        Recorder {
            metrics: RunMetrics {
                k: config.k,
                horizon: config.horizon,
                total_payoff: 0.0,
                avg_payoff: 0.0,
                avg_payoff_raw: 0.0,
                avg_expected_payoff: None,
                avg_corrected_payoff: None,
                served: 0,
                underflow_blocks: 0,
                buffer_blocks: 0,
                score_drops: 0,
                declined: 0,
                price_violations: 0,
                initial_state: q0.to_vec(),
                final_state: Vec::new(),
                peak_queue: q0.to_vec(),
                payoffs: config.record_payoffs.then(|| Vec::with_capacity(config.horizon)),
                lyapunov: config.record_lyapunov.then(|| Vec::with_capacity(config.horizon)),
                max_in_transit: None,
                mean_in_transit: None,
                mean_shadow_price: None,
                trace: config.record_trace.then(Vec::new),
            },
            lyap,
        }
    }
}

/// Resolves a decision into (payoff, move) and applies it; returns the moved pair if served.
#[allow(clippy::too_many_arguments)]
fn resolve(
    spec: &NetworkSpec,
    tau: usize,
    decision: Decision,
    rng: &mut ChaCha8Rng,
    m: &mut RunMetrics,
    measure: bool,
) -> (f64, Option<(usize, usize)>, &'static str) {
    let t = &spec.demand_types[tau];
    match decision {
        Decision::Drop(r) => {
            if measure {
                match r {
                    DropReason::Underflow => m.underflow_blocks += 1,
                    DropReason::BufferFull => m.buffer_blocks += 1,
                    DropReason::Score => m.score_drops += 1,
                    DropReason::Declined => m.declined += 1,
                    DropReason::Sampled => {}
                }
            }
            (0.0, None, "drop")
        }
        Decision::Serve { pickup, dropoff, pair } => {
            let w = if spec.setting == Setting::Jpa { -t.values[pair] } else { t.values[pair] };
            (w, Some((pickup, dropoff)), "serve")
        }
        Decision::Offer {
            pickup,
            dropoff,
            pair,
            price,
            ..
        } => {
            let wtp = t.wtp.as_ref().expect("pricing type without wtp");
            if measure && (price < wtp.p_min() - 1e-12 || price > wtp.p_max() + 1e-12) {
                m.price_violations += 1;
            }
            let u: f64 = rng.gen();
            if wtp.inverse_survival(u) >= price {
                (price - t.values[pair], Some((pickup, dropoff)), "serve")
            } else {
                if measure {
                    m.declined += 1;
                }
                (0.0, None, "declined")
            }
        }
    }
}

fn finish(mut m: RunMetrics, spec: &NetworkSpec, q: Vec<usize>) -> RunMetrics {
    m.avg_payoff = m.total_payoff / m.horizon as f64;
    m.avg_payoff_raw = spec.unnormalize(m.avg_payoff);
    m.final_state = q;
    m
}

/// Simulation loop with a caller-supplied policy.
pub fn run_with_policy(
    spec: &NetworkSpec,
    demand: &DemandModel,
    config: &RunConfig,
    scale: &Scale,
    policy: &mut dyn Policy,
) -> Result<RunMetrics> {
    let mut q = initial_state(&config.initial, scale, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sampler = DemandSampler::new(demand)?;
    let mut rec = Recorder::new(spec, config, &q, policy);
    let total = config.warmup + config.horizon;
    let mut phi_t = Vec::new();
    let mut expected = KahanSum::default();
    let mut drift = KahanSum::default();
    let mut outs = Vec::new();
    let control = policy.congestion().cloned();
    let mut f_start = None;
    for t in 0..total {
        let measure = t >= config.warmup;
        if t == config.warmup {
            rec.metrics.initial_state = q.clone();
        }
        if measure && config.expected_payoff {
            demand.phi_into(t, &mut phi_t);
            let view = StateView {
                spec,
                q: &q,
                caps: &scale.caps,
                scale,
                travel: None,
            };
            let mut e = 0.0;
            let mut v1 = 0.0;
            for (tau, &p) in phi_t.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                outs.clear();
                policy.outcomes(&view, tau, &mut outs);
                for &(prob, payoff, j, k) in &outs {
                    e += p * prob * payoff;
                    if let (Some(c), true) = (&control, j != k) {
                        v1 += p * prob * move_drop(c, scale, &q, j, k);
                    }
                }
            }
            expected.add(e);
            drift.add(v1);
            if let (Some(c), None) = (&control, f_start) {
                f_start = Some(c.lyapunov(&scale.normalize(&q).values));
            }
        }
        let tau = sampler.sample(t, &mut rng);
        let f_before = match (&rec.lyap, measure) {
            (Some(c), true) => c.lyapunov(&scale.normalize(&q).values),
            _ => 0.0,
        };
        let decision = {
            let view = StateView {
                spec,
                q: &q,
                caps: &scale.caps,
                scale,
                travel: None,
            };
            policy.decide(&view, tau, &mut rng)
        };
        let (payoff, moved, action) = resolve(spec, tau, decision, &mut rng, &mut rec.metrics, measure);
        if let Some((j, k)) = moved {
            apply_move(&mut q, &scale.caps, j, k)?;
        }
        debug_assert_eq!(q.iter().sum::<usize>(), scale.k);
        policy.end_period(moved.map(|_| 0));
        if measure {
            let m = &mut rec.metrics;
            if moved.is_some() {
                m.served += 1;
                m.total_payoff += payoff;
                if let Some((_, k)) = moved {
                    m.peak_queue[k] = m.peak_queue[k].max(q[k]);
                }
            }
            if let Some(p) = m.payoffs.as_mut() {
                p.push(payoff);
            }
            if let Some(l) = m.lyapunov.as_mut() {
                l.push(f_before);
            }
            if let Some(tr) = m.trace.as_mut() {
                tr.push(TraceRecord {
                    t: t - config.warmup,
                    demand_type: spec.demand_types[tau].id.clone(),
                    action: action.to_string(),
                    pickup: moved.map(|x| x.0),
                    dropoff: moved.map(|x| x.1),
                    payoff: spec.unnormalize(payoff),
                    f_lyap: f_before,
                    v_shadow: policy.shadow_price().unwrap_or(0.0),
                });
            }
        }
    }
    let mut metrics = rec.metrics;
    if config.expected_payoff {
        let h = config.horizon as f64;
        metrics.avg_expected_payoff = Some(expected.value() / h);
        if let (Some(c), Some(f0)) = (&control, f_start) {
            let f_end = c.lyapunov(&scale.normalize(&q).values);
            let boundary = scale.k_tilde * (f0 - f_end);
            metrics.avg_corrected_payoff = Some((expected.value() + drift.value() - boundary) / h);
        }
    }
    Ok(finish(metrics, spec, q))
}

/// K̃ (F(q̄) - F(q̄')) for a move of one unit from `j` to `k`.
fn move_drop(c: &Congestion, scale: &Scale, q: &[usize], j: usize, k: usize) -> f64 {
    let (xj, xk) = (scale.qbar(j, q[j]), scale.qbar(k, q[k]));
    let step = 1.0 / scale.k_tilde;
    scale.k_tilde
        * (c.antiderivative(j, xj) - c.antiderivative(j, xj - step) + c.antiderivative(k, xk)
            - c.antiderivative(k, xk + step))
}

/// Neumaier running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// Simulation with travel delays: a dispatched unit leaves its node at once
/// and becomes available at the start of period `t + D`.
pub fn run_with_travel_times(
    spec: &NetworkSpec,
    demand: &DemandModel,
    config: &RunConfig,
    travel: &TravelTimes,
) -> Result<RunMetrics> {
    travel.validate(spec.nodes)?;
    if spec.has_buffers() {
        return Err(Error::InvalidConfig("travel-time runs need unbuffered nodes".into()));
    }
    if spec.setting == Setting::Jpa {
        return Err(Error::InvalidConfig("travel-time runs support entry and assignment only".into()));
    }
    match config.policy.kind {
        PolicyKind::SupplyAwareMbp | PolicyKind::Greedy | PolicyKind::StaticFluid | PolicyKind::Mbp => {}
        k => {
            return Err(Error::InvalidConfig(format!(
                "policy {k:?} is not supported with travel times"
            )))
        }
    }
    let (scale, mut policy) = prepare(spec, demand, config, None)?;
    let m = spec.nodes;
    let mut q = initial_state(&config.initial, &scale, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sampler = DemandSampler::new(demand)?;
    let mut rec = Recorder::new(spec, config, &q, policy.as_ref());
    let mut transit: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    let mut max_transit = 0usize;
    let mut transit_sum = 0.0;
    let mut v_sum = 0.0;
    let total = config.warmup + config.horizon;
    for t in 0..total {
        let measure = t >= config.warmup;
        if t == config.warmup {
            rec.metrics.initial_state = q.clone();
        }
        while let Some(Reverse((at, node))) = transit.peek().copied() {
            if at > t as u64 {
                break;
            }
            transit.pop();
            q[node] += 1;
        }
        let tau = sampler.sample(t, &mut rng);
        let free: usize = q.iter().sum();
        let (decision, f_before) = if free == 0 {
            (Decision::Drop(DropReason::Underflow), 0.0)
        } else {
            // queues are normalized by the supply currently on nodes
            // supply-aware MBP normalizes by its free-car target (1 - utilization) K,
            // the other policies by the supply currently on nodes
            let norm = if config.policy.kind == PolicyKind::SupplyAwareMbp {
                (((1.0 - config.policy.utilization) * scale.k as f64).round() as usize).max(1)
            } else {
                free
            };
            let free_scale = if norm == scale.k {
                scale.clone()
            } else {
                Scale::new(norm, vec![scale.k; m], vec![1.0; m])
            };
            let f_before = match (&rec.lyap, measure) {
                (Some(c), true) => c.lyapunov(&free_scale.normalize(&q).values),
                _ => 0.0,
            };
            let view = StateView {
                spec,
                q: &q,
                caps: &scale.caps,
                scale: &free_scale,
                travel: Some(travel),
            };
            (policy.decide(&view, tau, &mut rng), f_before)
        };
        let (payoff, moved, action) = resolve(spec, tau, decision, &mut rng, &mut rec.metrics, measure);
        let mut delay = None;
        if let Some((j, k)) = moved {
            let d = travel.total(j, &spec.demand_types[tau], k);
            delay = Some(d);
            if d == 0 {
                apply_move(&mut q, &scale.caps, j, k)?;
            } else {
                if q[j] == 0 {
                    return Err(Error::InfeasibleDecision(format!("node {j} is empty")));
                }
                q[j] -= 1;
                transit.push(Reverse((t as u64 + d, k)));
            }
        }
        let on_node: usize = q.iter().sum();
        if on_node + transit.len() != scale.k {
            return Err(Error::InfeasibleDecision("supply not conserved".into()));
        }
        policy.end_period(delay);
        if measure {
            let mm = &mut rec.metrics;
            max_transit = max_transit.max(transit.len());
            transit_sum += transit.len() as f64;
            v_sum += policy.shadow_price().unwrap_or(0.0);
            if moved.is_some() {
                mm.served += 1;
                mm.total_payoff += payoff;
            }
            for j in 0..m {
                mm.peak_queue[j] = mm.peak_queue[j].max(q[j]);
            }
            if let Some(p) = mm.payoffs.as_mut() {
                p.push(payoff);
            }
            if let Some(l) = mm.lyapunov.as_mut() {
                l.push(f_before);
            }
            if let Some(tr) = mm.trace.as_mut() {
                tr.push(TraceRecord {
                    t: t - config.warmup,
                    demand_type: spec.demand_types[tau].id.clone(),
                    action: action.to_string(),
                    pickup: moved.map(|x| x.0),
                    dropoff: moved.map(|x| x.1),
                    payoff: spec.unnormalize(payoff),
                    f_lyap: f_before,
                    v_shadow: policy.shadow_price().unwrap_or(0.0),
                });
            }
        }
    }
    let mut metrics = rec.metrics;
    metrics.max_in_transit = Some(max_transit);
    metrics.mean_in_transit = Some(transit_sum / config.horizon as f64);
    if policy.shadow_price().is_some() {
        metrics.mean_shadow_price = Some(v_sum / config.horizon as f64);
    }
    Ok(finish(metrics, spec, q))
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, simple_type, RawInstance};

    #[test]
    fn step_examples() {
        let s = QueueState { q: vec![2, 3] };
        let caps = [5, 5];
        let serve = Decision::Serve {
            pickup: 0,
            dropoff: 1,
            pair: 0,
        };
        assert_eq!(s.step(&caps, &serve).unwrap().q, vec![1, 4]);
        assert_eq!(s.step(&caps, &Decision::Drop(DropReason::Score)).unwrap().q, vec![2, 3]);
        let s = QueueState { q: vec![0, 5] };
        assert!(matches!(s.step(&caps, &serve), Err(Error::InfeasibleDecision(_))));
    }

    #[test]
    fn accept_all_single_type() {
        let spec = build_network(RawInstance {
            nodes: 2,
            buffers: None,
            setting: None,
            demand_types: vec![simple_type("11", 0, 0, 0.7), simple_type("21", 1, 0, 0.7)],
            arrival: None,
        })
        .unwrap();
        let demand = DemandModel::stationary(vec![1.0, 0.0]);
        let cfg = RunConfig::new(10, 10, 1, PolicyConfig::new(PolicyKind::Greedy));
        let m = run(&spec, &demand, &cfg).unwrap();
        assert!((m.avg_payoff_raw - 0.7).abs() < 1e-12);
        assert_eq!(m.served, 10);
    }
}
