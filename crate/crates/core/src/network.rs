//! Problem instances: nodes, demand types, buffers, arrival processes and
//! the queue normalization shared by policies and diagnostics.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    EntryControl,
    Jea,
    Jpa,
    Scrip,
}

/// Willingness-to-pay distribution of one demand type.
///
/// Revenue is parametrized by the fraction `mu` of customers that buy:
/// `p(mu)` is the inverse survival function and `r(mu) = mu * p(mu)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WtpModel {
    Uniform { p_min: f64, p_max: f64 },
    /// Knots `(price, cdf)` with cdf rising from 0 at the first knot to 1 at the last.
    PiecewiseLinearCdf { knots: Vec<(f64, f64)> },
}

impl WtpModel {
    pub fn p_min(&self) -> f64 {
        match self {
            WtpModel::Uniform { p_min, .. } => *p_min,
            WtpModel::PiecewiseLinearCdf { knots } => knots[0].0,
        }
    }

    pub fn p_max(&self) -> f64 {
        match self {
            WtpModel::Uniform { p_max, .. } => *p_max,
            WtpModel::PiecewiseLinearCdf { knots } => knots[knots.len() - 1].0,
        }
    }

    pub fn validate(&self, id: &str) -> Result<()> {
        match self {
            WtpModel::Uniform { p_min, p_max } => {
                if !(p_min.is_finite() && p_max.is_finite() && p_min < p_max) {
                    return Err(Error::InvalidInstance(format!(
                        "type `{id}`: price bounds must satisfy p_min < p_max"
                    )));
                }
            }
            WtpModel::PiecewiseLinearCdf { knots } => {
                if knots.len() < 2 {
                    return Err(Error::InvalidInstance(format!(
                        "type `{id}`: need at least two cdf knots"
                    )));
                }
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if first.1.abs() > PROB_TOL || (last.1 - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidInstance(format!(
                        "type `{id}`: cdf must run from 0 to 1"
                    )));
                }
                for w in knots.windows(2) {
                    if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) {
                        return Err(Error::InvalidInstance(format!(
                            "type `{id}`: cdf knots must be strictly increasing"
                        )));
                    }
                }
                // p(mu) must be concave in mu, i.e. dp/dF nonincreasing in the knot index.
                let slopes: Vec<f64> = knots
                    .windows(2)
                    .map(|w| (w[1].0 - w[0].0) / (w[1].1 - w[0].1))
                    .collect();
                for s in slopes.windows(2) {
                    if s[1] > s[0] * (1.0 + 1e-12) {
                        return Err(Error::NonConcaveRevenue(id.to_string()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Probability that a customer's willingness-to-pay is at least `p`.
    pub fn survival(&self, p: f64) -> f64 {
        match self {
            WtpModel::Uniform { p_min, p_max } => ((p_max - p) / (p_max - p_min)).clamp(0.0, 1.0),
            WtpModel::PiecewiseLinearCdf { knots } => {
                if p <= knots[0].0 {
                    return 1.0;
                }
                if p >= knots[knots.len() - 1].0 {
                    return 0.0;
                }
                let i = knots.partition_point(|kn| kn.0 <= p) - 1;
                let (p0, f0) = knots[i];
                let (p1, f1) = knots[i + 1];
                1.0 - (f0 + (f1 - f0) * (p - p0) / (p1 - p0))
            }
        }
    }

    /// Segment of the piecewise cdf containing cdf level `f`.
    fn segment(knots: &[(f64, f64)], f: f64) -> usize {
        let i = knots.partition_point(|kn| kn.1 <= f);
        i.clamp(1, knots.len() - 1) - 1
    }

    /// Price at which exactly a fraction `mu` of customers buys.
    pub fn inverse_survival(&self, mu: f64) -> f64 {
        let mu = mu.clamp(0.0, 1.0);
        match self {
            WtpModel::Uniform { p_min, p_max } => p_max - mu * (p_max - p_min),
            WtpModel::PiecewiseLinearCdf { knots } => {
                let f = 1.0 - mu;
                let i = Self::segment(knots, f);
                let (p0, f0) = knots[i];
                let (p1, f1) = knots[i + 1];
                p0 + (p1 - p0) * (f - f0) / (f1 - f0)
            }
        }
    }

    pub fn revenue(&self, mu: f64) -> f64 {
        mu * self.inverse_survival(mu)
    }

    /// Derivative of the revenue in `mu` (one-sided at knots).
    pub fn revenue_derivative(&self, mu: f64) -> f64 {
        match self {
            WtpModel::Uniform { p_min, p_max } => p_max - 2.0 * mu * (p_max - p_min),
            WtpModel::PiecewiseLinearCdf { knots } => {
                let f = 1.0 - mu;
                let i = Self::segment(knots, f);
                let (p0, f0) = knots[i];
                let (p1, f1) = knots[i + 1];
                let dp_dmu = -(p1 - p0) / (f1 - f0);
                self.inverse_survival(mu) + mu * dp_dmu
            }
        }
    }

    /// argmax over mu in [0,1] of r(mu) + mu * delta.
    pub fn optimal_fraction(&self, delta: f64) -> f64 {
        match self {
            WtpModel::Uniform { p_min, p_max } => {
                ((p_max + delta) / (2.0 * (p_max - p_min))).clamp(0.0, 1.0)
            }
            WtpModel::PiecewiseLinearCdf { .. } => {
                let g = |mu: f64| self.revenue_derivative(mu) + delta;
                if g(0.0) <= 0.0 {
                    return 0.0;
                }
                if g(1.0) >= 0.0 {
                    return 1.0;
                }
                let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                for _ in 0..200 {
                    if hi - lo < 1e-10 {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    if g(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    fn scaled(&self, s: f64) -> WtpModel {
        match self {
            WtpModel::Uniform { p_min, p_max } => WtpModel::Uniform {
                p_min: p_min * s,
                p_max: p_max * s,
            },
            WtpModel::PiecewiseLinearCdf { knots } => WtpModel::PiecewiseLinearCdf {
                knots: knots.iter().map(|&(p, f)| (p * s, f)).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandType {
    pub id: String,
    /// Sorted, distinct pickup nodes.
    pub pickup: Vec<usize>,
    /// Sorted, distinct dropoff nodes.
    pub dropoff: Vec<usize>,
    /// Payoff `w` (or cost `c` in the pricing setting) per (pickup, dropoff) pair, row-major.
    pub values: Vec<f64>,
    pub wtp: Option<WtpModel>,
    /// Representative origin/destination used for travel times.
    pub origin: usize,
    pub destination: usize,
}

impl DemandType {
    #[inline]
    pub fn value(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.dropoff.len() + b]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let nd = self.dropoff.len();
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &v)| (self.pickup[i / nd], self.dropoff[i % nd], v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub nodes: usize,
    /// Scaled buffer sizes in (0, 1]; 1 means unconstrained.
    pub buffers: Vec<f64>,
    pub demand_types: Vec<DemandType>,
    pub setting: Setting,
    /// Normalized value = raw value * scale_factor.
    pub scale_factor: f64,
}

impl NetworkSpec {
    #[inline]
    pub fn is_buffered(&self, j: usize) -> bool {
        self.buffers[j] < 1.0
    }

    pub fn has_buffers(&self) -> bool {
        self.buffers.iter().any(|&b| b < 1.0)
    }

    pub fn num_types(&self) -> usize {
        self.demand_types.len()
    }

    pub fn type_index(&self, id: &str) -> Option<usize> {
        self.demand_types.iter().position(|t| t.id == id)
    }

    /// Converts a normalized payoff back to raw units.
    pub fn unnormalize(&self, v: f64) -> f64 {
        v / self.scale_factor
    }

    /// Integer buffer sizes and normalization constants at total supply `k`.
    pub fn at_scale(&self, k: usize) -> Result<Scale> {
        if k == 0 {
            return Err(Error::InvalidConfig("K must be positive".into()));
        }
        let caps: Vec<usize> = self
            .buffers
            .iter()
            .map(|&b| if b < 1.0 { (b * k as f64).round() as usize } else { k })
            .collect();
        let total: usize = caps.iter().sum();
        if total < k + 1 {
            return Err(Error::BufferInfeasible(total as f64 / k as f64));
        }
        let dbar: Vec<f64> = self
            .buffers
            .iter()
            .zip(&caps)
            .map(|(&b, &d)| if b < 1.0 { d as f64 / k as f64 } else { 1.0 })
            .collect();
        Ok(Scale::new(k, caps, dbar))
    }

    /// Checks `phi` is a probability vector over the demand types.
    pub fn check_phi(&self, phi: &[f64]) -> Result<()> {
        check_probability(phi, self.num_types())
    }
}

fn check_probability(phi: &[f64], n: usize) -> Result<()> {
    if phi.len() != n {
        return Err(Error::NonProbabilityDemand(format!(
            "expected {n} entries, got {}",
            phi.len()
        )));
    }
    if phi.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::NonProbabilityDemand("negative or non-finite entry".into()));
    }
    let s: f64 = phi.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::NonProbabilityDemand(format!("entries sum to {s}")));
    }
    Ok(())
}

/// Integer capacities and normalization at a fixed total supply.
#[derive(Debug, Clone, PartialEq)]
pub struct Scale {
    pub k: usize,
    pub delta: f64,
    pub k_tilde: f64,
    pub caps: Vec<usize>,
    /// Effective scaled buffers `d_j / K` (1 for unbuffered nodes).
    pub dbar: Vec<f64>,
}

impl Scale {
    pub fn new(k: usize, caps: Vec<usize>, dbar: Vec<f64>) -> Scale {
        let delta = (k as f64).sqrt();
        let k_tilde = k as f64 + dbar.iter().sum::<f64>() * delta;
        Scale {
            k,
            delta,
            k_tilde,
            caps,
            dbar,
        }
    }

    #[inline]
    pub fn qbar(&self, j: usize, qj: usize) -> f64 {
        (qj as f64 + self.dbar[j] * self.delta) / self.k_tilde
    }

    pub fn normalize(&self, q: &[usize]) -> NormalizedQueues {
        NormalizedQueues {
            values: q.iter().enumerate().map(|(j, &x)| self.qbar(j, x)).collect(),
            delta: self.delta,
            k_tilde: self.k_tilde,
        }
    }

    /// Smallest normalized value a queue can take (empty queue, unit buffer).
    pub fn eps(&self) -> f64 {
        self.delta / self.k_tilde
    }

    pub fn is_boundary(&self, q: &[usize]) -> bool {
        q.iter().zip(&self.caps).any(|(&x, &d)| x == 0 || x == d)
    }

    pub fn check_state(&self, q: &[usize]) -> Result<()> {
        if q.len() != self.caps.len() {
            return Err(Error::InvalidConfig("state has wrong length".into()));
        }
        if q.iter().sum::<usize>() != self.k {
            return Err(Error::InvalidConfig(format!(
                "state sums to {}, expected K = {}",
                q.iter().sum::<usize>(),
                self.k
            )));
        }
        if q.iter().zip(&self.caps).any(|(&x, &d)| x > d) {
            return Err(Error::InvalidConfig("state exceeds a buffer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedQueues {
    pub values: Vec<f64>,
    pub delta: f64,
    pub k_tilde: f64,
}

pub fn normalize_queues(q: &[usize], scale: &Scale) -> NormalizedQueues {
    scale.normalize(q)
}

/// Per-period arrival distribution over demand types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DemandModel {
    Stationary {
        phi: Vec<f64>,
    },
    /// `phi^t = base + amplitude * sin(2 pi t / period) * direction`.
    Sinusoid {
        base: Vec<f64>,
        direction: Vec<f64>,
        amplitude: f64,
        period: f64,
        eta: f64,
    },
    /// Explicit sequence; the last entry is held after the end.
    Sequence { phis: Vec<Vec<f64>>, eta: f64 },
}

impl DemandModel {
    pub fn stationary(phi: Vec<f64>) -> DemandModel {
        DemandModel::Stationary { phi }
    }

    pub fn is_stationary(&self) -> bool {
        matches!(self, DemandModel::Stationary { .. })
    }

    pub fn num_types(&self) -> usize {
        match self {
            DemandModel::Stationary { phi } => phi.len(),
            DemandModel::Sinusoid { base, .. } => base.len(),
            DemandModel::Sequence { phis, .. } => phis.first().map_or(0, |p| p.len()),
        }
    }

    pub fn declared_eta(&self) -> f64 {
        match self {
            DemandModel::Stationary { .. } => 0.0,
            DemandModel::Sinusoid { eta, .. } | DemandModel::Sequence { eta, .. } => *eta,
        }
    }

    /// Largest possible one-period change in total variation.
    pub fn eta_bound(&self) -> f64 {
        match self {
            DemandModel::Stationary { .. } => 0.0,
            DemandModel::Sinusoid {
                direction,
                amplitude,
                period,
                ..
            } => {
                let l1: f64 = direction.iter().map(|d| d.abs()).sum();
                amplitude * l1 * 2.0 * (std::f64::consts::PI / period).sin().abs()
            }
            DemandModel::Sequence { phis, .. } => phis
                .windows(2)
                .map(|w| l1_distance(&w[0], &w[1]))
                .fold(0.0, f64::max),
        }
    }

    pub fn validate(&self, n_types: usize) -> Result<()> {
        match self {
            DemandModel::Stationary { phi } => check_probability(phi, n_types)?,
            DemandModel::Sinusoid {
                base,
                direction,
                amplitude,
                period,
                ..
            } => {
                check_probability(base, n_types)?;
                if direction.len() != n_types {
                    return Err(Error::NonProbabilityDemand(
                        "direction has the wrong length".into(),
                    ));
                }
                if direction.iter().sum::<f64>().abs() > 1e-12 {
                    return Err(Error::NonProbabilityDemand(
                        "direction must sum to zero".into(),
                    ));
                }
                if !(*period > 0.0) {
                    return Err(Error::NonProbabilityDemand("period must be positive".into()));
                }
                if base
                    .iter()
                    .zip(direction)
                    .any(|(b, d)| b - amplitude.abs() * d.abs() < -PROB_TOL)
                {
                    return Err(Error::NonProbabilityDemand(
                        "amplitude drives a rate negative".into(),
                    ));
                }
            }
            DemandModel::Sequence { phis, .. } => {
                if phis.is_empty() {
                    return Err(Error::NonProbabilityDemand("empty sequence".into()));
                }
                for p in phis {
                    check_probability(p, n_types)?;
                }
            }
        }
        let measured = self.eta_bound();
        let declared = self.declared_eta();
        if measured > declared * (1.0 + 1e-12) + 1e-15 {
            return Err(Error::EtaViolation { measured, declared });
        }
        Ok(())
    }

    /// Writes `phi^t` into `out`.
    pub fn phi_into(&self, t: usize, out: &mut Vec<f64>) {
        out.clear();
        match self {
            DemandModel::Stationary { phi } => out.extend_from_slice(phi),
            DemandModel::Sinusoid {
                base,
                direction,
                amplitude,
                period,
                ..
            } => {
                let s = amplitude * (2.0 * std::f64::consts::PI * t as f64 / period).sin();
                out.extend(base.iter().zip(direction).map(|(b, d)| (b + s * d).max(0.0)));
            }
            DemandModel::Sequence { phis, .. } => {
                out.extend_from_slice(&phis[t.min(phis.len() - 1)]);
            }
        }
    }

    pub fn phi_at(&self, t: usize) -> Vec<f64> {
        let mut v = Vec::new();
        self.phi_into(t, &mut v);
        v
    }

    /// Time-average of `phi^t` over `0..horizon`.
    pub fn average_phi(&self, horizon: usize) -> Vec<f64> {
        match self {
            DemandModel::Stationary { phi } => phi.clone(),
            _ => {
                let n = self.num_types();
                let mut acc = vec![0.0; n];
                let mut buf = Vec::with_capacity(n);
                for t in 0..horizon.max(1) {
                    self.phi_into(t, &mut buf);
                    for (a, b) in acc.iter_mut().zip(&buf) {
                        *a += b;
                    }
                }
                acc.iter().map(|a| a / horizon.max(1) as f64).collect()
            }
        }
    }
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Draws demand types period by period; a single uniform draw per period.
pub struct DemandSampler<'a> {
    model: &'a DemandModel,
    weighted: Option<WeightedIndex<f64>>,
    buf: Vec<f64>,
}

impl<'a> DemandSampler<'a> {
    pub fn new(model: &'a DemandModel) -> Result<DemandSampler<'a>> {
        let weighted = match model {
            DemandModel::Stationary { phi } => Some(
                WeightedIndex::new(phi)
                    .map_err(|e| Error::NonProbabilityDemand(e.to_string()))?,
            ),
            _ => None,
        };
        Ok(DemandSampler {
            model,
            weighted,
            buf: Vec::new(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, t: usize, rng: &mut R) -> usize {
        if let Some(w) = &self.weighted {
            return w.sample(rng);
        }
        self.model.phi_into(t, &mut self.buf);
        let total: f64 = self.buf.iter().sum();
        let u = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in self.buf.iter().enumerate() {
            if p > 0.0 {
                last = i;
                acc += p;
                if u < acc {
                    return i;
                }
            }
        }
        last
    }
}

pub fn sample_demand<R: Rng + ?Sized>(model: &DemandModel, t: usize, rng: &mut R) -> Result<usize> {
    Ok(DemandSampler::new(model)?.sample(t, rng))
}

fn check_nodes(m: usize) -> Result<()> {
    if m > 20 {
        return Err(Error::TooManyNodes(m));
    }
    Ok(())
}

fn mask_of(nodes: &[usize]) -> u32 {
    nodes.iter().fold(0u32, |acc, &j| acc | (1 << j))
}

/// Demand able to move supply out of `s` (mu) and into `s` (lambda).
pub fn cut_flows(spec: &NetworkSpec, phi: &[f64], s: u32) -> (f64, f64) {
    let full = (1u32 << spec.nodes) - 1;
    let rest = full & !s;
    let mut out = 0.0;
    let mut inn = 0.0;
    for (t, &p) in spec.demand_types.iter().zip(phi) {
        let pm = mask_of(&t.pickup);
        let dm = mask_of(&t.dropoff);
        if pm & s != 0 && dm & rest != 0 {
            out += p;
        }
        if pm & rest != 0 && dm & s != 0 {
            inn += p;
        }
    }
    (out, inn)
}

/// Minimum demand crossing any node cut.
pub fn connectivity_alpha(spec: &NetworkSpec, phi: &[f64]) -> Result<f64> {
    check_nodes(spec.nodes)?;
    let full = (1u32 << spec.nodes) - 1;
    let mut best = f64::INFINITY;
    for s in 1..full {
        best = best.min(cut_flows(spec, phi, s).0);
    }
    Ok(best)
}

/// Returns a nonempty proper subset whose outgoing demand is at least its incoming demand.
pub fn crp_witness(spec: &NetworkSpec, phi: &[f64]) -> Result<Vec<usize>> {
    check_nodes(spec.nodes)?;
    let full = (1u32 << spec.nodes) - 1;
    for s in 1..full {
        let (mu, lambda) = cut_flows(spec, phi, s);
        if mu >= lambda {
            return Ok((0..spec.nodes).filter(|j| s & (1 << j) != 0).collect());
        }
    }
    unreachable!("a set and its complement cannot both have mu < lambda")
}

pub fn subset_mask(nodes: &[usize]) -> u32 {
    mask_of(nodes)
}

/// Uniform lattice point of {q >= 0, sum q = k}.
pub fn uniform_composition<R: Rng + ?Sized>(k: usize, m: usize, rng: &mut R) -> Vec<usize> {
    if m == 1 {
        return vec![k];
    }
    let mut bars = rand::seq::index::sample(rng, k + m - 1, m - 1).into_vec();
    bars.sort_unstable();
    let mut q = Vec::with_capacity(m);
    let mut prev = 0usize;
    for (i, &b) in bars.iter().enumerate() {
        let start = if i == 0 { 0 } else { prev + 1 };
        q.push(b - start);
        prev = b;
    }
    let start = prev + 1;
    q.push(k + m - 1 - start);
    q
}

/// Uniform state respecting caps; with probability `boundary_mass` one node is
/// forced empty or full first.
pub fn sample_state<R: Rng + ?Sized>(
    caps: &[usize],
    k: usize,
    boundary_mass: f64,
    rng: &mut R,
) -> Vec<usize> {
    let m = caps.len();
    loop {
        if boundary_mass > 0.0 && rng.gen::<f64>() < boundary_mass {
            let j = rng.gen_range(0..m);
            let fill = if caps[j] < k && rng.gen::<bool>() { caps[j] } else { 0 };
            let rest_caps: Vec<usize> = (0..m).filter(|&i| i != j).map(|i| caps[i]).collect();
            let remaining = k - fill.min(k);
            if rest_caps.iter().sum::<usize>() < remaining {
                continue;
            }
            let sub = uniform_composition(remaining, m - 1, rng);
            if sub.iter().zip(&rest_caps).any(|(x, c)| x > c) {
                continue;
            }
            let mut q = Vec::with_capacity(m);
            let mut it = sub.into_iter();
            for i in 0..m {
                q.push(if i == j { fill } else { it.next().unwrap() });
            }
            return q;
        }
        let q = uniform_composition(k, m, rng);
        if q.iter().zip(caps).all(|(x, c)| x <= c) {
            return q;
        }
    }
}

/// Round-robin placement of `k` units, skipping full nodes.
pub fn balanced_state(caps: &[usize], k: usize) -> Vec<usize> {
    let m = caps.len();
    let mut q = vec![0usize; m];
    let mut left = k;
    while left > 0 {
        let mut placed = false;
        for j in 0..m {
            if left == 0 {
                break;
            }
            if q[j] < caps[j] {
                q[j] += 1;
                left -= 1;
                placed = true;
            }
        }
        assert!(placed, "capacities cannot hold K units");
    }
    q
}

/// All mass on node `j`, spilling over to later nodes if its buffer is too small.
pub fn corner_state(caps: &[usize], k: usize, j: usize) -> Vec<usize> {
    let m = caps.len();
    let mut q = vec![0usize; m];
    let mut left = k;
    for i in (0..m).map(|i| (i + j) % m) {
        let x = left.min(caps[i]);
        q[i] = x;
        left -= x;
    }
    q
}

// ---------------------------------------------------------------------------
// Declarative instance files

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairValues {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RawWtp {
    Uniform,
    PiecewiseLinearCdf { knots: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawDemandType {
    #[serde(default)]
    pub id: Option<String>,
    pub pickup: Vec<usize>,
    pub dropoff: Vec<usize>,
    #[serde(default)]
    pub payoff: Option<PairValues>,
    #[serde(default)]
    pub cost: Option<PairValues>,
    #[serde(default)]
    pub price_bounds: Option<(f64, f64)>,
    #[serde(default)]
    pub wtp: Option<RawWtp>,
    #[serde(default)]
    pub origin: Option<usize>,
    #[serde(default)]
    pub destination: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawInstance {
    pub nodes: usize,
    #[serde(default)]
    pub buffers: Option<Vec<f64>>,
    #[serde(default)]
    pub setting: Option<Setting>,
    pub demand_types: Vec<RawDemandType>,
    #[serde(default)]
    pub arrival: Option<DemandModel>,
}

/// A validated network together with its (optional) arrival process.
#[derive(Debug, Clone)]
pub struct Instance {
    pub spec: NetworkSpec,
    pub demand: Option<DemandModel>,
}

impl Instance {
    pub fn from_json(text: &str) -> Result<Instance> {
        let raw: RawInstance = serde_json::from_str(text)?;
        Instance::from_raw(raw)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Instance> {
        Instance::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn demand(&self) -> Result<&DemandModel> {
        self.demand
            .as_ref()
            .ok_or_else(|| Error::InvalidInstance("instance has no `arrival` section".into()))
    }

    pub fn from_raw(raw: RawInstance) -> Result<Instance> {
        let arrival = raw.arrival.clone();
        let spec = build_network(raw)?;
        if let Some(d) = &arrival {
            d.validate(spec.num_types())?;
        }
        Ok(Instance {
            spec,
            demand: arrival,
        })
    }
}

fn expand_values(v: &PairValues, np: usize, nd: usize, id: &str) -> Result<Vec<Vec<f64>>> {
    match v {
        PairValues::Scalar(x) => Ok(vec![vec![*x; nd]; np]),
        PairValues::Matrix(rows) => {
            if rows.len() != np || rows.iter().any(|r| r.len() != nd) {
                return Err(Error::InvalidInstance(format!(
                    "type `{id}`: value matrix must be {np}x{nd}"
                )));
            }
            Ok(rows.clone())
        }
    }
}

/// Validates a declarative instance and normalizes its payoffs.
pub fn build_network(raw: RawInstance) -> Result<NetworkSpec> {
    let m = raw.nodes;
    if m < 2 {
        return Err(Error::InvalidInstance("need at least two nodes".into()));
    }
    let buffers = raw.buffers.clone().unwrap_or_else(|| vec![1.0; m]);
    if buffers.len() != m {
        return Err(Error::InvalidInstance("buffers must have one entry per node".into()));
    }
    if buffers.iter().any(|&b| !(b > 0.0 && b <= 1.0)) {
        return Err(Error::InvalidInstance("scaled buffers must lie in (0, 1]".into()));
    }
    let bsum: f64 = buffers.iter().sum();
    if bsum <= 1.0 {
        return Err(Error::BufferInfeasible(bsum));
    }
    if raw.demand_types.is_empty() {
        return Err(Error::InvalidInstance("no demand types".into()));
    }
    let pricing = raw
        .demand_types
        .iter()
        .any(|t| t.wtp.is_some() || t.cost.is_some());
    let setting = raw.setting.unwrap_or_else(|| {
        if pricing {
            Setting::Jpa
        } else if raw
            .demand_types
            .iter()
            .all(|t| t.pickup.len() == 1 && t.dropoff.len() == 1)
        {
            Setting::EntryControl
        } else {
            Setting::Jea
        }
    });

    let mut types = Vec::with_capacity(raw.demand_types.len());
    let mut seen = BTreeMap::new();
    for (idx, rt) in raw.demand_types.iter().enumerate() {
        let id = rt.id.clone().unwrap_or_else(|| idx.to_string());
        if seen.insert(id.clone(), idx).is_some() {
            return Err(Error::InvalidInstance(format!("duplicate demand type id `{id}`")));
        }
        if rt.pickup.is_empty() || rt.dropoff.is_empty() {
            return Err(Error::EmptyNeighborhood(id));
        }
        if rt.pickup.iter().chain(&rt.dropoff).any(|&j| j >= m) {
            return Err(Error::InvalidInstance(format!("type `{id}` references a missing node")));
        }
        let raw_vals = if setting == Setting::Jpa {
            rt.cost.as_ref().cloned().unwrap_or(PairValues::Scalar(0.0))
        } else {
            rt.payoff.clone().ok_or_else(|| {
                Error::InvalidInstance(format!("type `{id}` has no payoff"))
            })?
        };
        let matrix = expand_values(&raw_vals, rt.pickup.len(), rt.dropoff.len(), &id)?;
        // sort and dedupe neighborhoods, carrying the value matrix along
        let mut pick: Vec<(usize, usize)> = rt.pickup.iter().copied().zip(0..).collect();
        pick.sort_unstable();
        pick.dedup_by_key(|p| p.0);
        let mut drop: Vec<(usize, usize)> = rt.dropoff.iter().copied().zip(0..).collect();
        drop.sort_unstable();
        drop.dedup_by_key(|p| p.0);
        let mut values = Vec::with_capacity(pick.len() * drop.len());
        for &(_, a) in &pick {
            for &(_, b) in &drop {
                let v = matrix[a][b];
                if !v.is_finite() {
                    return Err(Error::InvalidInstance(format!("type `{id}` has a non-finite value")));
                }
                values.push(v);
            }
        }
        let wtp = if setting == Setting::Jpa {
            let model = match (&rt.wtp, rt.price_bounds) {
                (Some(RawWtp::PiecewiseLinearCdf { knots }), _) => {
                    WtpModel::PiecewiseLinearCdf { knots: knots.clone() }
                }
                (Some(RawWtp::Uniform), Some((a, b))) | (None, Some((a, b))) => {
                    WtpModel::Uniform { p_min: a, p_max: b }
                }
                _ => {
                    return Err(Error::InvalidInstance(format!(
                        "type `{id}` needs price_bounds or a cdf"
                    )))
                }
            };
            model.validate(&id)?;
            Some(model)
        } else {
            None
        };
        let pickup: Vec<usize> = pick.iter().map(|p| p.0).collect();
        let dropoff: Vec<usize> = drop.iter().map(|p| p.0).collect();
        if setting == Setting::Scrip && (pickup.len() != 1 || dropoff.contains(&pickup[0])) {
            return Err(Error::InvalidInstance(format!(
                "scrip type `{id}` needs one requestor outside its provider set"
            )));
        }
        let origin = rt.origin.unwrap_or(pickup[0]);
        let destination = rt.destination.unwrap_or(dropoff[0]);
        if origin >= m || destination >= m {
            return Err(Error::InvalidInstance(format!("type `{id}` has a bad origin/destination")));
        }
        types.push(DemandType {
            id,
            pickup,
            dropoff,
            values,
            wtp,
            origin,
            destination,
        });
    }

    let norm = if setting == Setting::Jpa {
        let pmax = types
            .iter()
            .filter_map(|t| t.wtp.as_ref().map(|w| w.p_max()))
            .fold(0.0, f64::max);
        let cmax = types
            .iter()
            .flat_map(|t| t.values.iter().map(|c| c.abs()))
            .fold(0.0, f64::max);
        pmax + cmax
    } else {
        types
            .iter()
            .flat_map(|t| t.values.iter().map(|w| w.abs()))
            .fold(0.0, f64::max)
    };
    let scale_factor = if norm > 0.0 { 1.0 / norm } else { 1.0 };
    for t in &mut types {
        for v in &mut t.values {
            *v *= scale_factor;
        }
        if let Some(w) = &t.wtp {
            t.wtp = Some(w.scaled(scale_factor));
        }
    }
    Ok(NetworkSpec {
        nodes: m,
        buffers,
        demand_types: types,
        setting,
        scale_factor,
    })
}

/// Helper for building instances in code: single-pickup/single-dropoff types.
pub fn simple_type(id: &str, from: usize, to: usize, payoff: f64) -> RawDemandType {
    RawDemandType {
        id: Some(id.to_string()),
        pickup: vec![from],
        dropoff: vec![to],
        payoff: Some(PairValues::Scalar(payoff)),
        cost: None,
        price_bounds: None,
        wtp: None,
        origin: None,
        destination: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_node() -> NetworkSpec {
        build_network(RawInstance {
            nodes: 2,
            buffers: None,
            setting: None,
            demand_types: vec![simple_type("12", 0, 1, 0.2), simple_type("21", 1, 0, 0.2)],
            arrival: None,
        })
        .unwrap()
    }

    #[test]
    fn normalization_examples() {
        let spec = two_node();
        assert_eq!(spec.setting, Setting::EntryControl);
        assert!((spec.scale_factor - 5.0).abs() < 1e-12);
        let sc = spec.at_scale(100).unwrap();
        assert_eq!(sc.delta, 10.0);
        assert_eq!(sc.k_tilde, 120.0);
        let n = sc.normalize(&[60, 40]);
        assert!((n.values[0] - 70.0 / 120.0).abs() < 1e-15);
        assert!((n.values[1] - 50.0 / 120.0).abs() < 1e-15);
        let n = sc.normalize(&[100, 0]);
        assert!((n.values[1] - 10.0 / 120.0).abs() < 1e-15);
    }

    #[test]
    fn buffered_normalization() {
        let mut spec = two_node();
        spec.buffers = vec![0.5, 1.0];
        let sc = spec.at_scale(100).unwrap();
        assert!((sc.k_tilde - 115.0).abs() < 1e-12);
        let n = sc.normalize(&[50, 50]);
        assert!((n.values[0] - 55.0 / 115.0).abs() < 1e-15);
        assert!((n.values[1] - 60.0 / 115.0).abs() < 1e-15);
        assert!((n.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_neighborhood_rejected() {
        let mut t = simple_type("x", 0, 1, 1.0);
        t.pickup.clear();
        let err = build_network(RawInstance {
            nodes: 2,
            buffers: None,
            setting: None,
            demand_types: vec![t],
            arrival: None,
        })
        .unwrap_err();
        assert!(matches!(err, Error::EmptyNeighborhood(_)));
    }

    #[test]
    fn buffer_infeasible_rejected() {
        let err = build_network(RawInstance {
            nodes: 2,
            buffers: Some(vec![0.5, 0.5]),
            setting: None,
            demand_types: vec![simple_type("12", 0, 1, 1.0)],
            arrival: None,
        })
        .unwrap_err();
        assert!(matches!(err, Error::BufferInfeasible(_)));
    }

    #[test]
    fn compositions_are_uniform_lattice_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = BTreeMap::new();
        for _ in 0..60_000 {
            let q = uniform_composition(2, 3, &mut rng);
            assert_eq!(q.iter().sum::<usize>(), 2);
            *counts.entry(q).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            assert!((*c as f64 - 10_000.0).abs() < 500.0);
        }
    }

    #[test]
    fn states_respect_caps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let caps = [40, 40, 100];
        let mut saw_full = false;
        for _ in 0..2000 {
            let q = sample_state(&caps, 100, 0.1, &mut rng);
            assert_eq!(q.iter().sum::<usize>(), 100);
            assert!(q.iter().zip(&caps).all(|(x, c)| x <= c));
            saw_full |= q[0] == 40 || q[1] == 40;
        }
        assert!(saw_full);
        assert_eq!(balanced_state(&caps, 100), vec![34, 33, 33]);
        assert_eq!(balanced_state(&[10, 100], 50), vec![10, 40]);
        assert_eq!(corner_state(&[10, 100, 100], 50, 0), vec![10, 40, 0]);
    }

    #[test]
    fn wtp_inverse_and_concavity() {
        let w = WtpModel::PiecewiseLinearCdf {
            knots: vec![(0.0, 0.0), (0.5, 0.25), (1.0, 1.0)],
        };
        w.validate("t").unwrap();
        for mu in [0.0, 0.1, 0.5, 0.75, 0.9, 1.0] {
            let p = w.inverse_survival(mu);
            assert!((w.survival(p) - mu).abs() < 1e-12);
        }
        let bad = WtpModel::PiecewiseLinearCdf {
            knots: vec![(0.0, 0.0), (0.5, 0.75), (1.0, 1.0)],
        };
        assert!(matches!(bad.validate("b"), Err(Error::NonConcaveRevenue(_))));
    }
}
