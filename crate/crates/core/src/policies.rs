//! Online decision rules. None of the decide paths below see the arrival
//! rates except the static fluid policy, which is built from an SPP solution.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::congestion::{Congestion, CongestionKind};
use crate::error::{Error, Result};
use crate::network::{connectivity_alpha, DemandModel, DemandType, NetworkSpec, Scale, Setting};
use crate::planning::SppSolution;
use crate::simulator::TravelTimes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Best score was negative.
    Score,
    /// Chosen pickup node was empty.
    Underflow,
    /// Chosen dropoff buffer was full.
    BufferFull,
    /// The customer declined the posted price.
    Declined,
    /// A randomized policy chose not to serve.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Decision {
    Drop(DropReason),
    Serve {
        pickup: usize,
        dropoff: usize,
        /// Index of (pickup, dropoff) in the type's value table.
        pair: usize,
    },
    /// Pricing decision: serve through the pair if the customer pays `price`.
    Offer {
        pickup: usize,
        dropoff: usize,
        pair: usize,
        price: f64,
        mu: f64,
    },
}

impl Decision {
    pub fn is_serve(&self) -> bool {
        matches!(self, Decision::Serve { .. })
    }
}

/// What a policy may look at when deciding.
pub struct StateView<'a> {
    pub spec: &'a NetworkSpec,
    /// On-node supply counts.
    pub q: &'a [usize],
    pub caps: &'a [usize],
    /// Normalization applied to `q`.
    pub scale: &'a Scale,
    pub travel: Option<&'a TravelTimes>,
}

impl StateView<'_> {
    #[inline]
    pub fn qbar(&self, j: usize) -> f64 {
        self.scale.qbar(j, self.q[j])
    }

    /// Reason a move would be infeasible, if any.
    #[inline]
    pub fn blocked(&self, j: usize, k: usize) -> Option<DropReason> {
        if self.q[j] == 0 {
            Some(DropReason::Underflow)
        } else if j != k && self.q[k] >= self.caps[k] {
            Some(DropReason::BufferFull)
        } else {
            None
        }
    }
}

pub trait Policy: Send {
    fn decide(&mut self, view: &StateView, tau: usize, rng: &mut dyn RngCore) -> Decision;

    /// Called once per period after the decision was applied; `dispatched` is
    /// the travel time of the dispatched unit, if any.
    fn end_period(&mut self, _dispatched: Option<u64>) {}

    fn shadow_price(&self) -> Option<f64> {
        None
    }

    fn congestion(&self) -> Option<&Congestion> {
        None
    }

    /// Serve outcomes `(probability, payoff, pickup, dropoff)` of the decision
    /// for type `tau`, without touching the policy's random stream.
    fn outcomes(&mut self, view: &StateView, tau: usize, out: &mut Vec<(f64, f64, usize, usize)>) {
        let mut probe = rand::rngs::mock::StepRng::new(0, 0);
        let d = self.decide(view, tau, &mut probe);
        match d {
            Decision::Drop(_) => {}
            Decision::Serve { pickup, dropoff, .. } => {
                out.push((1.0, decision_value(view.spec, tau, &d), pickup, dropoff))
            }
            Decision::Offer {
                pickup,
                dropoff,
                pair,
                price,
                mu,
            } => out.push((mu, price - view.spec.demand_types[tau].values[pair], pickup, dropoff)),
        }
    }
}

/// Expected normalized payoff of a decision (offers are bought with probability `mu`).
pub fn decision_value(spec: &NetworkSpec, tau: usize, d: &Decision) -> f64 {
    let t = &spec.demand_types[tau];
    match *d {
        Decision::Drop(_) => 0.0,
        Decision::Serve { pair, .. } => {
            if spec.setting == Setting::Jpa {
                -t.values[pair]
            } else {
                t.values[pair]
            }
        }
        Decision::Offer { pair, price, mu, .. } => mu * (price - t.values[pair]),
    }
}

fn serve_or_block(view: &StateView, j: usize, k: usize, pair: usize) -> Decision {
    match view.blocked(j, k) {
        Some(r) => Decision::Drop(r),
        None => Decision::Serve {
            pickup: j,
            dropoff: k,
            pair,
        },
    }
}

/// Entry control: accept iff `w + f(q̄_j) - f(q̄_k) >= 0` and the origin is nonempty.
pub fn mbp_entry_decide(view: &StateView, tau: usize, cong: &Congestion) -> Decision {
    let t = &view.spec.demand_types[tau];
    let (j, k) = (t.pickup[0], t.dropoff[0]);
    if let Some(r) = view.blocked(j, k) {
        return Decision::Drop(r);
    }
    let score = t.values[0] + cong.eval(j, view.qbar(j)) - cong.eval(k, view.qbar(k));
    if score >= 0.0 {
        serve_or_block(view, j, k, 0)
    } else {
        Decision::Drop(DropReason::Score)
    }
}

/// Argmax over the type's pairs of `sign * value + f_j - f_k` (lowest index wins ties).
/// With `feasible_only`, infeasible pairs are skipped.
fn best_pair(
    view: &StateView,
    t: &DemandType,
    cong: &Congestion,
    sign: f64,
    feasible_only: bool,
) -> Option<(usize, usize, usize, f64)> {
    let nd = t.dropoff.len();
    let fk: Vec<f64> = t.dropoff.iter().map(|&k| cong.eval(k, view.qbar(k))).collect();
    let mut best: Option<(usize, usize, usize, f64)> = None;
    for (a, &j) in t.pickup.iter().enumerate() {
        let fj = cong.eval(j, view.qbar(j));
        for (b, &k) in t.dropoff.iter().enumerate() {
            if feasible_only && view.blocked(j, k).is_some() {
                continue;
            }
            let pair = a * nd + b;
            let s = sign * t.values[pair] + fj - fk[b];
            if best.is_none_or(|bb| s > bb.3) {
                best = Some((j, k, pair, s));
            }
        }
    }
    best
}

/// Joint entry-assignment. Literal rule: only the argmax pair is checked for
/// feasibility; `fallback` instead takes the best feasible pair.
pub fn mbp_jea_decide(view: &StateView, tau: usize, cong: &Congestion, fallback: bool) -> Decision {
    let t = &view.spec.demand_types[tau];
    match best_pair(view, t, cong, 1.0, fallback) {
        None => Decision::Drop(DropReason::Underflow),
        Some((j, k, pair, s)) => {
            if s >= 0.0 {
                serve_or_block(view, j, k, pair)
            } else {
                Decision::Drop(DropReason::Score)
            }
        }
    }
}

/// Joint pricing-assignment: pick the pair, then the buying fraction and its price.
pub fn mbp_jpa_decide(view: &StateView, tau: usize, cong: &Congestion) -> Decision {
    let t = &view.spec.demand_types[tau];
    let (j, k, pair, delta) = best_pair(view, t, cong, -1.0, false).expect("nonempty neighborhoods");
    if let Some(r) = view.blocked(j, k) {
        return Decision::Drop(r);
    }
    let wtp = t.wtp.as_ref().expect("pricing type without wtp");
    let mu = wtp.optimal_fraction(delta);
    Decision::Offer {
        pickup: j,
        dropoff: k,
        pair,
        price: wtp.inverse_survival(mu),
        mu,
    }
}

/// Scrip systems: the provider is the least congested node in the provider set.
pub fn scrip_decide(view: &StateView, tau: usize, cong: &Congestion) -> Decision {
    let t = &view.spec.demand_types[tau];
    let j = t.pickup[0];
    let mut best = (0usize, f64::INFINITY);
    for (b, &k) in t.dropoff.iter().enumerate() {
        let f = cong.eval(k, view.qbar(k));
        if f < best.1 {
            best = (b, f);
        }
    }
    let (b, fk) = best;
    let k = t.dropoff[b];
    if let Some(r) = view.blocked(j, k) {
        return Decision::Drop(r);
    }
    let score = t.values[b] + cong.eval(j, view.qbar(j)) - fk;
    if score >= 0.0 {
        serve_or_block(view, j, k, b)
    } else {
        Decision::Drop(DropReason::Score)
    }
}

/// Backpressure with prices proportional to normalized queues, `y = c q̄`.
pub fn bp_decide(view: &StateView, tau: usize, c: f64) -> Decision {
    let t = &view.spec.demand_types[tau];
    let (j, k) = (t.pickup[0], t.dropoff[0]);
    if t.values[0] + c * view.qbar(j) - c * view.qbar(k) >= 0.0 {
        serve_or_block(view, j, k, 0)
    } else {
        Decision::Drop(DropReason::Score)
    }
}

/// Serve whenever possible, preferring the highest payoff.
pub fn greedy_decide(view: &StateView, tau: usize) -> Decision {
    let t = &view.spec.demand_types[tau];
    let nd = t.dropoff.len();
    let mut best: Option<(usize, usize, usize, f64, u64)> = None;
    let mut reason = DropReason::Underflow;
    for (a, &j) in t.pickup.iter().enumerate() {
        for (b, &k) in t.dropoff.iter().enumerate() {
            if let Some(r) = view.blocked(j, k) {
                if r == DropReason::BufferFull {
                    reason = r;
                }
                continue;
            }
            let pair = a * nd + b;
            let w = t.values[pair];
            let pickup_time = view.travel.map_or(0, |tr| tr.pickup[j][t.origin]);
            let better = match best {
                None => true,
                Some((_, _, _, bw, bt)) => w > bw || (w == bw && pickup_time < bt),
            };
            if better {
                best = Some((j, k, pair, w, pickup_time));
            }
        }
    }
    match best {
        Some((j, k, pair, _, _)) => Decision::Serve {
            pickup: j,
            dropoff: k,
            pair,
        },
        None => Decision::Drop(reason),
    }
}

/// Shadow-price step for the tightened supply row, in units where travel
/// times are measured relative to K.
pub fn update_shadow_price(v: f64, dispatched: Option<u64>, k: usize, utilization: f64) -> f64 {
    let kf = k as f64;
    let used = dispatched.map_or(0.0, |d| d as f64) / kf;
    (v + (used - utilization) / kf).max(0.0)
}

/// Supply-aware MBP: the MBP score minus `v * D / K` for the unit's travel time `D`.
pub fn supply_aware_decide(view: &StateView, tau: usize, cong: &Congestion, v: f64, k: usize) -> Decision {
    let t = &view.spec.demand_types[tau];
    let nd = t.dropoff.len();
    let kf = k as f64;
    let mut best: Option<(usize, usize, usize, f64)> = None;
    for (a, &j) in t.pickup.iter().enumerate() {
        let fj = cong.eval(j, view.qbar(j));
        for (b, &dest) in t.dropoff.iter().enumerate() {
            let pair = a * nd + b;
            let d = view.travel.map_or(0, |tr| tr.total(j, t, dest)) as f64;
            let s = t.values[pair] + fj - cong.eval(dest, view.qbar(dest)) - v * d / kf;
            if best.is_none_or(|bb| s > bb.3) {
                best = Some((j, dest, pair, s));
            }
        }
    }
    let (j, dest, pair, s) = best.expect("nonempty neighborhoods");
    if s >= 0.0 {
        serve_or_block(view, j, dest, pair)
    } else {
        Decision::Drop(DropReason::Score)
    }
}

pub struct Mbp {
    pub cong: Congestion,
    pub fallback_assignment: bool,
}

impl Policy for Mbp {
    fn decide(&mut self, view: &StateView, tau: usize, _rng: &mut dyn RngCore) -> Decision {
        let t = &view.spec.demand_types[tau];
        match view.spec.setting {
            Setting::Jpa => mbp_jpa_decide(view, tau, &self.cong),
            Setting::EntryControl if t.pickup.len() == 1 && t.dropoff.len() == 1 => {
                mbp_entry_decide(view, tau, &self.cong)
            }
            _ => mbp_jea_decide(view, tau, &self.cong, self.fallback_assignment),
        }
    }

    fn congestion(&self) -> Option<&Congestion> {
        Some(&self.cong)
    }
}

pub struct ScripMbp {
    pub cong: Congestion,
}

impl Policy for ScripMbp {
    fn decide(&mut self, view: &StateView, tau: usize, _rng: &mut dyn RngCore) -> Decision {
        scrip_decide(view, tau, &self.cong)
    }

    fn congestion(&self) -> Option<&Congestion> {
        Some(&self.cong)
    }
}

pub struct Greedy;

impl Policy for Greedy {
    fn decide(&mut self, view: &StateView, tau: usize, _rng: &mut dyn RngCore) -> Decision {
        greedy_decide(view, tau)
    }
}

pub struct StaticFluid {
    /// Per type: (pickup, dropoff, pair, probability).
    table: Vec<Vec<(usize, usize, usize, f64)>>,
}

impl StaticFluid {
    pub fn new(spec: &NetworkSpec, sol: &SppSolution) -> Result<StaticFluid> {
        if sol.z.len() != spec.num_types() {
            return Err(Error::SolutionMismatch("wrong number of demand types".into()));
        }
        let mut table = Vec::with_capacity(spec.num_types());
        for (ti, t) in spec.demand_types.iter().enumerate() {
            let phi = sol.phi[ti];
            let total: f64 = sol.z[ti].iter().sum();
            if total > phi * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::SolutionMismatch(format!(
                    "type `{}` flow {total} exceeds its rate {phi}",
                    t.id
                )));
            }
            let row = t
                .pairs()
                .zip(&sol.z[ti])
                .enumerate()
                .filter(|(_, (_, &z))| z > 0.0 && phi > 0.0)
                .map(|(p, ((j, k, _), &z))| (j, k, p, z / phi))
                .collect();
            table.push(row);
        }
        Ok(StaticFluid { table })
    }
}

impl Policy for StaticFluid {
    fn decide(&mut self, view: &StateView, tau: usize, rng: &mut dyn RngCore) -> Decision {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(j, k, pair, p) in &self.table[tau] {
            acc += p;
            if u < acc {
                return serve_or_block(view, j, k, pair);
            }
        }
        Decision::Drop(DropReason::Sampled)
    }

    fn outcomes(&mut self, view: &StateView, tau: usize, out: &mut Vec<(f64, f64, usize, usize)>) {
        let t = &view.spec.demand_types[tau];
        for &(j, k, pair, p) in &self.table[tau] {
            if view.blocked(j, k).is_none() {
                out.push((p, t.values[pair], j, k));
            }
        }
    }
}

pub struct SupplyAwareMbp {
    pub cong: Congestion,
    pub v: f64,
    pub utilization: f64,
    pub k: usize,
    v_sum: f64,
    periods: u64,
}

impl SupplyAwareMbp {
    pub fn new(cong: Congestion, k: usize, utilization: f64, v0: f64) -> SupplyAwareMbp {
        SupplyAwareMbp {
            cong,
            v: v0.max(0.0),
            utilization,
            k,
            v_sum: 0.0,
            periods: 0,
        }
    }

    pub fn mean_shadow_price(&self) -> f64 {
        if self.periods == 0 {
            self.v
        } else {
            self.v_sum / self.periods as f64
        }
    }
}

impl Policy for SupplyAwareMbp {
    fn decide(&mut self, view: &StateView, tau: usize, _rng: &mut dyn RngCore) -> Decision {
        supply_aware_decide(view, tau, &self.cong, self.v, self.k)
    }

    fn end_period(&mut self, dispatched: Option<u64>) {
        self.v = update_shadow_price(self.v, dispatched, self.k, self.utilization);
        self.v_sum += self.v;
        self.periods += 1;
    }

    fn shadow_price(&self) -> Option<f64> {
        Some(self.v)
    }

    fn congestion(&self) -> Option<&Congestion> {
        Some(&self.cong)
    }
}

pub struct Backpressure {
    pub c: f64,
    cong: Congestion,
}

impl Policy for Backpressure {
    fn decide(&mut self, view: &StateView, tau: usize, _rng: &mut dyn RngCore) -> Decision {
        let t = &view.spec.demand_types[tau];
        if t.pickup.len() == 1 && t.dropoff.len() == 1 && !view.spec.has_buffers() {
            bp_decide(view, tau, self.c)
        } else {
            mbp_jea_decide(view, tau, &self.cong, false)
        }
    }

    fn congestion(&self) -> Option<&Congestion> {
        Some(&self.cong)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Mbp,
    Bp,
    Greedy,
    StaticFluid,
    SupplyAwareMbp,
    ScripMbp,
}

/// Congestion selection in configs; missing `c` falls back to the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CongestionConfig {
    InvSqrt,
    InvSqrtBuffered,
    Log {
        #[serde(default)]
        c: Option<f64>,
    },
    Linear {
        #[serde(default)]
        c: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    #[serde(default)]
    pub congestion: Option<CongestionConfig>,
    #[serde(default)]
    pub fallback_assignment: bool,
    #[serde(default = "default_utilization")]
    pub utilization: f64,
    #[serde(default)]
    pub initial_shadow_price: f64,
}

fn default_utilization() -> f64 {
    0.95
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> PolicyConfig {
        PolicyConfig {
            kind,
            congestion: None,
            fallback_assignment: false,
            utilization: default_utilization(),
            initial_shadow_price: 0.0,
        }
    }

    pub fn mbp() -> PolicyConfig {
        PolicyConfig::new(PolicyKind::Mbp)
    }

    pub fn with_congestion(mut self, c: CongestionConfig) -> PolicyConfig {
        self.congestion = Some(c);
        self
    }
}

/// Rates used only to pick default congestion scales.
pub fn reference_phi(demand: &DemandModel) -> Vec<f64> {
    match demand {
        DemandModel::Stationary { phi } => phi.clone(),
        DemandModel::Sinusoid { base, .. } => base.clone(),
        DemandModel::Sequence { phis, .. } => {
            let n = phis.len() as f64;
            let mut avg = vec![0.0; phis[0].len()];
            for p in phis {
                for (a, b) in avg.iter_mut().zip(p) {
                    *a += b / n;
                }
            }
            avg
        }
    }
}

pub fn resolve_congestion(
    cfg: Option<CongestionConfig>,
    spec: &NetworkSpec,
    demand: &DemandModel,
) -> Result<CongestionKind> {
    let alpha = || -> Result<f64> {
        let a = connectivity_alpha(spec, &reference_phi(demand))?;
        if a <= 0.0 {
            return Err(Error::InvalidConfig(
                "default congestion scale needs a connected demand pattern".into(),
            ));
        }
        Ok(a)
    };
    Ok(match cfg {
        None if spec.has_buffers() => CongestionKind::InverseSqrtBuffered,
        None | Some(CongestionConfig::InvSqrt) => CongestionKind::InverseSqrt,
        Some(CongestionConfig::InvSqrtBuffered) => CongestionKind::InverseSqrtBuffered,
        Some(CongestionConfig::Log { c: Some(c) }) => CongestionKind::Logarithmic { c },
        Some(CongestionConfig::Log { c: None }) => CongestionKind::log_default(spec.nodes, alpha()?),
        Some(CongestionConfig::Linear { c: Some(c) }) => CongestionKind::Linear { c },
        Some(CongestionConfig::Linear { c: None }) => {
            CongestionKind::linear_default(spec.nodes, alpha()?)
        }
    })
}

/// Builds a policy; `fluid` is required for the static fluid policy only.
pub fn build_policy(
    cfg: &PolicyConfig,
    spec: &NetworkSpec,
    scale: &Scale,
    demand: &DemandModel,
    fluid: Option<&SppSolution>,
) -> Result<Box<dyn Policy>> {
    Ok(match cfg.kind {
        PolicyKind::Mbp => {
            let kind = resolve_congestion(cfg.congestion, spec, demand)?;
            Box::new(Mbp {
                cong: Congestion::new(kind, spec, scale)?,
                fallback_assignment: cfg.fallback_assignment,
            })
        }
        PolicyKind::Bp => {
            let kind = match cfg.congestion {
                Some(CongestionConfig::Linear { .. }) | None => resolve_congestion(
                    Some(cfg.congestion.unwrap_or(CongestionConfig::Linear { c: None })),
                    spec,
                    demand,
                )?,
                _ => {
                    return Err(Error::InvalidConfig(
                        "backpressure uses a linear congestion function".into(),
                    ))
                }
            };
            let CongestionKind::Linear { c } = kind else { unreachable!() };
            Box::new(Backpressure {
                c,
                cong: Congestion::new(kind, spec, scale)?,
            })
        }
        PolicyKind::Greedy => {
            if spec.setting == Setting::Jpa {
                return Err(Error::InvalidConfig("greedy is not defined for pricing".into()));
            }
            Box::new(Greedy)
        }
        PolicyKind::StaticFluid => {
            let sol = fluid.ok_or_else(|| {
                Error::InvalidConfig("static fluid policy needs an SPP solution".into())
            })?;
            Box::new(StaticFluid::new(spec, sol)?)
        }
        PolicyKind::SupplyAwareMbp => {
            let kind = resolve_congestion(cfg.congestion, spec, demand)?;
            if !(cfg.utilization > 0.0 && cfg.utilization <= 1.0) {
                return Err(Error::InvalidConfig("utilization must lie in (0, 1]".into()));
            }
            Box::new(SupplyAwareMbp::new(
                Congestion::new(kind, spec, scale)?,
                scale.k,
                cfg.utilization,
                cfg.initial_shadow_price,
            ))
        }
        PolicyKind::ScripMbp => {
            if spec
                .demand_types
                .iter()
                .any(|t| t.pickup.len() != 1 || t.dropoff.contains(&t.pickup[0]))
            {
                return Err(Error::InvalidConfig(
                    "scrip types need one requestor outside the provider set".into(),
                ));
            }
            let kind = resolve_congestion(cfg.congestion, spec, demand)?;
            Box::new(ScripMbp {
                cong: Congestion::new(kind, spec, scale)?,
            })
        }
    })
}
