//! Exact one-period drift decomposition, dual-suboptimality bounds and
//! related numeric checks on concrete states.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::congestion::{Congestion, CongestionKind};
use crate::error::{Error, Result};
use crate::network::{connectivity_alpha, sample_state, DemandModel, NetworkSpec, Scale, Setting};
use crate::planning::{eval_dual, solve_spp, solve_spp_jpa};
use crate::policies::{Decision, Mbp, Policy, PolicyConfig, PolicyKind, StateView};
use crate::simulator::{run, KahanSum, RunConfig};

/// One possible result of a period: probability, normalized payoff, move.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub prob: f64,
    pub payoff: f64,
    pub moved: Option<(usize, usize)>,
}

/// All outcomes of one period from state `q` by enumeration over types.
/// The policy must not consume randomness (every MBP variant qualifies).
pub fn enumerate_outcomes(
    spec: &NetworkSpec,
    scale: &Scale,
    phi: &[f64],
    q: &[usize],
    policy: &mut dyn Policy,
) -> Vec<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let view = StateView {
        spec,
        q,
        caps: &scale.caps,
        scale,
        travel: None,
    };
    let mut out = Vec::new();
    for (tau, &p) in phi.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let t = &spec.demand_types[tau];
        match policy.decide(&view, tau, &mut rng as &mut dyn RngCore) {
            Decision::Drop(_) => out.push(Outcome {
                prob: p,
                payoff: 0.0,
                moved: None,
            }),
            Decision::Serve { pickup, dropoff, pair } => out.push(Outcome {
                prob: p,
                payoff: t.values[pair],
                moved: Some((pickup, dropoff)),
            }),
            Decision::Offer {
                pickup,
                dropoff,
                pair,
                price,
                mu,
            } => {
                out.push(Outcome {
                    prob: p * mu,
                    payoff: price - t.values[pair],
                    moved: Some((pickup, dropoff)),
                });
                out.push(Outcome {
                    prob: p * (1.0 - mu),
                    payoff: 0.0,
                    moved: None,
                });
            }
        }
    }
    out
}

fn moved_state(q: &[usize], mv: Option<(usize, usize)>) -> Vec<usize> {
    let mut q = q.to_vec();
    if let Some((j, k)) = mv {
        q[j] -= 1;
        q[k] += 1;
    }
    q
}

/// Everything needed to evaluate the drift terms on many states of one instance.
pub struct LemmaContext<'a> {
    pub spec: &'a NetworkSpec,
    pub scale: Scale,
    pub phi: Vec<f64>,
    pub w_spp: f64,
    pub alpha: f64,
    pub cong: Congestion,
    pub fallback_assignment: bool,
}

impl<'a> LemmaContext<'a> {
    pub fn new(spec: &'a NetworkSpec, k: usize, phi: &[f64], kind: CongestionKind) -> Result<LemmaContext<'a>> {
        spec.check_phi(phi)?;
        let scale = spec.at_scale(k)?;
        let w_spp = if spec.setting == Setting::Jpa {
            solve_spp_jpa(spec, phi)?.objective
        } else {
            solve_spp(spec, phi, None)?.objective
        };
        let alpha = connectivity_alpha(spec, phi)?;
        let cong = Congestion::new(kind, spec, &scale)?;
        Ok(LemmaContext {
            spec,
            scale,
            phi: phi.to_vec(),
            w_spp,
            alpha,
            cong,
            fallback_assignment: false,
        })
    }

    fn policy(&self) -> Mbp {
        Mbp {
            cong: self.cong.clone(),
            fallback_assignment: self.fallback_assignment,
        }
    }

    fn f_values(&self, q: &[usize]) -> Vec<f64> {
        self.cong.values(&self.scale.normalize(q).values)
    }
}

/// Stationary distribution of the MBP chain (power iteration) and its exact
/// long-run payoff gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryGap {
    pub k: usize,
    pub states: usize,
    pub iterations: usize,
    pub residual: f64,
    pub payoff: f64,
    pub gap: f64,
}

pub fn stationary_gap(ctx: &LemmaContext, tol: f64, max_iter: usize) -> StationaryGap {
    let space = crate::planning::StateSpace::new(&ctx.scale);
    let n = space.len();
    let mut policy = ctx.policy();
    let mut reward = vec![0.0; n];
    // (from, to, prob) for every moving outcome; the rest stays put
    let mut moves: Vec<(u32, u32, f64)> = Vec::new();
    let mut stay = vec![0.0; n];
    for (s, q) in space.states.iter().enumerate() {
        let mut left = 1.0;
        for o in enumerate_outcomes(ctx.spec, &ctx.scale, &ctx.phi, q, &mut policy) {
            reward[s] += o.prob * o.payoff;
            if o.moved.is_some() {
                let t = space.index_of(&moved_state(q, o.moved)).expect("state in lattice");
                moves.push((s as u32, t as u32, o.prob));
                left -= o.prob;
            }
        }
        stay[s] = left;
    }
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter && residual > tol {
        for _ in 0..64 {
            for s in 0..n {
                next[s] = stay[s] * pi[s];
            }
            for &(a, b, p) in &moves {
                next[b as usize] += p * pi[a as usize];
            }
            std::mem::swap(&mut pi, &mut next);
        }
        iterations += 64;
        residual = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
    }
    let payoff = compensated_sum(pi.iter().zip(&reward).map(|(p, r)| p * r));
    StationaryGap {
        k: ctx.scale.k,
        states: n,
        iterations,
        residual,
        payoff,
        gap: ctx.w_spp - payoff,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftTerms {
    pub v1: f64,
    /// Curvature term as printed: max_j |f_j'(q̄_j)| / (2 K̃).
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
    pub lhs: f64,
    /// Exact second-order term K̃ E[D_F(q̄[t+1], q̄[t])].
    pub remainder: f64,
}

impl DriftTerms {
    pub fn printed_bound(&self) -> f64 {
        self.v1 + self.v2 + self.v3 + self.v4
    }

    /// Bound with the curvature term replaced by its exact value.
    pub fn exact_bound(&self) -> f64 {
        self.v1 + self.remainder + self.v3 + self.v4
    }
}

/// Exact drift decomposition of the MBP policy at state `q`.
pub fn drift_terms(ctx: &LemmaContext, q: &[usize]) -> DriftTerms {
    let scale = &ctx.scale;
    let qbar = scale.normalize(q).values;
    let cong = &ctx.cong;
    let f0 = cong.lyapunov(&qbar);
    let mut policy = ctx.policy();
    let outcomes = enumerate_outcomes(ctx.spec, scale, &ctx.phi, q, &mut policy);
    let mut ef1 = 0.0;
    let mut ev = 0.0;
    let mut ebreg = 0.0;
    for o in &outcomes {
        ev += o.prob * o.payoff;
        if o.moved.is_some() {
            let next = scale.normalize(&moved_state(q, o.moved)).values;
            ef1 += o.prob * cong.lyapunov(&next);
            ebreg += o.prob * cong.bregman(&next, &qbar);
        } else {
            ef1 += o.prob * f0;
        }
    }
    let kt = scale.k_tilde;
    let max_slope = (0..q.len())
        .map(|j| cong.derivative(j, qbar[j]).abs())
        .fold(0.0, f64::max);
    let y = cong.values(&qbar);
    DriftTerms {
        v1: kt * (f0 - ef1),
        v2: max_slope / (2.0 * kt),
        v3: ctx.w_spp - eval_dual(ctx.spec, &ctx.phi, &y),
        v4: if scale.is_boundary(q) { 1.0 } else { 0.0 },
        lhs: ctx.w_spp - ev,
        remainder: kt * ebreg,
    }
}

/// Returns `(V3, -alpha [max f - min f - 2m]^+)`.
pub fn dual_subopt_bound(ctx: &LemmaContext, q: &[usize]) -> (f64, f64) {
    let y = ctx.f_values(q);
    let v3 = ctx.w_spp - eval_dual(ctx.spec, &ctx.phi, &y);
    let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let bound = -ctx.alpha * (hi - lo - 2.0 * ctx.spec.nodes as f64).max(0.0);
    (v3, bound)
}

/// Bregman divergence in the printed convention F(a) - F(b) - <f(a), a - b>.
pub fn bregman_printed(cong: &Congestion, a: &[f64], b: &[f64]) -> f64 {
    let fa = cong.values(a);
    let inner: f64 = fa.iter().zip(a.iter().zip(b)).map(|(f, (x, y))| f * (x - y)).sum();
    cong.lyapunov(a) - cong.lyapunov(b) - inner
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub states: usize,
    pub boundary_states: usize,
    /// States where lhs > V1 + exact remainder + V3 + V4 + tol.
    pub lemma1_failures: usize,
    pub lemma1_worst_slack: f64,
    /// States where the printed curvature term is too small (reported only).
    pub printed_v2_violations: usize,
    pub printed_v2_worst_slack: f64,
    pub lemma2_failures: usize,
    pub lemma2_worst_slack: f64,
    pub v2_negative: usize,
    pub v3_positive: usize,
}

/// Checks both lemmas on `samples` random states (10% forced boundary mass).
pub fn verify_lemmas(ctx: &LemmaContext, samples: usize, seed: u64, tol: f64) -> LemmaReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<Vec<usize>> = (0..samples)
        .map(|_| sample_state(&ctx.scale.caps, ctx.scale.k, 0.1, &mut rng))
        .collect();
    let rows: Vec<(DriftTerms, (f64, f64))> = states
        .par_iter()
        .map(|q| (drift_terms(ctx, q), dual_subopt_bound(ctx, q)))
        .collect();
    let mut r = LemmaReport {
        states: samples,
        lemma1_worst_slack: f64::INFINITY,
        printed_v2_worst_slack: f64::INFINITY,
        lemma2_worst_slack: f64::INFINITY,
        ..Default::default()
    };
    for (d, (v3, bound)) in rows {
        if d.v4 > 0.0 {
            r.boundary_states += 1;
        }
        let s1 = d.exact_bound() - d.lhs;
        r.lemma1_worst_slack = r.lemma1_worst_slack.min(s1);
        if s1 < -tol {
            r.lemma1_failures += 1;
        }
        let sp = d.printed_bound() - d.lhs;
        r.printed_v2_worst_slack = r.printed_v2_worst_slack.min(sp);
        if sp < -tol {
            r.printed_v2_violations += 1;
        }
        let s2 = bound - v3;
        r.lemma2_worst_slack = r.lemma2_worst_slack.min(s2);
        if s2 < -tol {
            r.lemma2_failures += 1;
        }
        if d.v2 < 0.0 {
            r.v2_negative += 1;
        }
        if d.v3 > tol {
            r.v3_positive += 1;
        }
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgradientReport {
    pub states: usize,
    pub directions: usize,
    pub worst_slack: f64,
}

/// Expected one-period outflow per node, sum of prob * (e_j - e_k) over serves.
pub fn expected_outflow(ctx: &LemmaContext, q: &[usize]) -> Vec<f64> {
    let mut policy = ctx.policy();
    let mut s = vec![0.0; q.len()];
    for o in enumerate_outcomes(ctx.spec, &ctx.scale, &ctx.phi, q, &mut policy) {
        if let Some((j, k)) = o.moved {
            s[j] += o.prob;
            s[k] -= o.prob;
        }
    }
    s
}

/// Checks g(y') >= g(y) + s (y' - y) with y = f(q̄) and s the expected outflow,
/// at interior states and random y'.
pub fn subgradient_check(ctx: &LemmaContext, states: usize, directions: usize, seed: u64) -> SubgradientReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut done = 0;
    while done < states {
        let q = sample_state(&ctx.scale.caps, ctx.scale.k, 0.0, &mut rng);
        if ctx.scale.is_boundary(&q) {
            continue;
        }
        done += 1;
        let y = ctx.f_values(&q);
        let g0 = eval_dual(ctx.spec, &ctx.phi, &y);
        let s = expected_outflow(ctx, &q);
        for _ in 0..directions {
            let radius = 10f64.powf(rng.gen_range(-3.0..0.5));
            let y2: Vec<f64> = y.iter().map(|v| v + radius * rng.gen_range(-1.0..1.0)).collect();
            let lin: f64 = s.iter().zip(y2.iter().zip(&y)).map(|(a, (b, c))| a * (b - c)).sum();
            let slack = eval_dual(ctx.spec, &ctx.phi, &y2) - g0 - lin;
            worst = worst.min(slack);
        }
    }
    SubgradientReport {
        states,
        directions,
        worst_slack: worst,
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = KahanSum::default();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelescopingReport {
    pub periods: usize,
    /// Sum of realized V1 increments along the trajectory.
    pub sum_v1: f64,
    /// K̃ (F(q̄[0]) - F(q̄[T])).
    pub direct: f64,
    pub abs_err: f64,
}

/// Simulates MBP and compares the summed realized V1 terms with the endpoint difference.
pub fn telescoping_check(spec: &NetworkSpec, demand: &DemandModel, config: &RunConfig) -> Result<TelescopingReport> {
    let mut cfg = config.clone();
    cfg.record_lyapunov = true;
    cfg.warmup = 0;
    if !matches!(cfg.policy.kind, PolicyKind::Mbp) {
        return Err(Error::InvalidConfig("telescoping check runs the MBP policy".into()));
    }
    let metrics = run(spec, demand, &cfg)?;
    let scale = spec.at_scale(cfg.k)?;
    let kind = crate::policies::resolve_congestion(cfg.policy.congestion, spec, demand)?;
    let cong = Congestion::new(kind, spec, &scale)?;
    let mut f = metrics.lyapunov.unwrap();
    f.push(cong.lyapunov(&scale.normalize(&metrics.final_state).values));
    let kt = scale.k_tilde;
    let sum_v1 = compensated_sum(f.windows(2).map(|w| kt * (w[0] - w[1])));
    let direct = kt * (f[0] - f[f.len() - 1]);
    Ok(TelescopingReport {
        periods: cfg.horizon,
        sum_v1,
        direct,
        abs_err: (sum_v1 - direct).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaRow {
    pub k: usize,
    pub k_tilde: f64,
    /// max over sampled states of (V2 + V3 + V4) K̃.
    pub kappa: f64,
}

/// Empirical constant in V2 + V3 + V4 <= kappa / K̃, for each K.
pub fn kappa_report(
    spec: &NetworkSpec,
    phi: &[f64],
    kind: CongestionKind,
    ks: &[usize],
    samples: usize,
    seed: u64,
) -> Result<Vec<KappaRow>> {
    ks.iter()
        .map(|&k| {
            let ctx = LemmaContext::new(spec, k, phi, kind)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ k as u64);
            let mut kappa = f64::NEG_INFINITY;
            for _ in 0..samples {
                let q = sample_state(&ctx.scale.caps, k, 0.1, &mut rng);
                let d = drift_terms(&ctx, &q);
                kappa = kappa.max((d.v2 + d.v3 + d.v4) * ctx.scale.k_tilde);
            }
            Ok(KappaRow {
                k,
                k_tilde: ctx.scale.k_tilde,
                kappa,
            })
        })
        .collect()
}

/// Equilibrium normalized queue of node 2 under linear prices `c q̄` on the
/// three-node counterexample, in units of the top payoff: (2c - 3w) / (6c).
pub fn bp_equilibrium_q2(c: f64, w: f64) -> f64 {
    (2.0 * c - 3.0 * w) / (6.0 * c)
}

/// Three-node instance: demand 1->2 at rate eps, 2->3 at 1/3 + eps,
/// 2->1 and 3->2 at 1/3 - eps; payoff `w` on 2->3 and `w/2` elsewhere.
pub fn three_node_instance(eps: f64, w: f64) -> Result<(NetworkSpec, Vec<f64>)> {
    use crate::network::{build_network, simple_type, RawInstance};
    let spec = build_network(RawInstance {
        nodes: 3,
        buffers: None,
        setting: None,
        demand_types: vec![
            simple_type("12", 0, 1, w / 2.0),
            simple_type("23", 1, 2, w),
            simple_type("21", 1, 0, w / 2.0),
            simple_type("32", 2, 1, w / 2.0),
        ],
        arrival: None,
    })?;
    let third = 1.0 / 3.0;
    Ok((spec, vec![eps, third + eps, third - eps, third - eps]))
}

/// Exact expected change of |q/K - target|^2 under linear-price backpressure at `q`.
pub fn bp_quadratic_drift(spec: &NetworkSpec, phi: &[f64], q: &[usize], c: f64, target: &[f64]) -> Result<f64> {
    let k: usize = q.iter().sum();
    let scale = spec.at_scale(k)?;
    let mut policy = crate::policies::build_policy(
        &PolicyConfig::new(PolicyKind::Bp).with_congestion(crate::policies::CongestionConfig::Linear { c: Some(c) }),
        spec,
        &scale,
        &DemandModel::stationary(phi.to_vec()),
        None,
    )?;
    let lyap = |q: &[usize]| -> f64 {
        q.iter()
            .zip(target)
            .map(|(&x, t)| (x as f64 / k as f64 - t).powi(2))
            .sum()
    };
    let l0 = lyap(q);
    Ok(enumerate_outcomes(spec, &scale, phi, q, policy.as_mut())
        .iter()
        .map(|o| o.prob * (lyap(&moved_state(q, o.moved)) - l0))
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpCounterexample {
    /// (c / w, q̄*_2 from the formula, q̄*_2 from the LP duals).
    pub equilibria: Vec<(f64, f64, f64)>,
    pub drift_eps: f64,
    pub drift_c_over_w: f64,
    pub drift: f64,
    pub k: usize,
    pub horizon: usize,
    pub w_spp: f64,
    pub bp_gap: f64,
    pub bp_gap_se: f64,
    pub mbp_gap: f64,
    pub mbp_gap_se: f64,
    /// (K, BP gap, MBP gap) of the stationary chains, no sampling error.
    pub exact_gaps: Vec<(usize, f64, f64)>,
    /// BP with c below w/2, where the 2->1 score can never turn negative.
    pub weak_c_over_w: f64,
    pub weak_bp_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpSuiteConfig {
    pub eps: f64,
    pub k: usize,
    pub horizon: usize,
    pub warmup: usize,
    pub reps: usize,
    pub seed: u64,
    pub exact_ks: [usize; 3],
}

impl Default for BpSuiteConfig {
    fn default() -> Self {
        BpSuiteConfig {
            eps: 0.05,
            k: 400,
            horizon: 1_000_000,
            warmup: 100_000,
            reps: 4,
            seed: 7,
            exact_ks: [50, 100, 200],
        }
    }
}

/// Linear-price backpressure on the three-node instance: equilibrium sign,
/// drift at (2/3, 0, 1/3), and simulated gap against MBP with c = w.
pub fn bp_counterexample_suite(cfg: &BpSuiteConfig) -> Result<BpCounterexample> {
    let (spec, phi) = three_node_instance(cfg.eps, 1.0)?;
    let sol = solve_spp(&spec, &phi, None)?;
    let y = &sol.duals;
    let mean = y.iter().sum::<f64>() / 3.0;
    let equilibria = [1.0, 1.5, 3.0]
        .iter()
        .map(|&c| (c, bp_equilibrium_q2(c, 1.0), 1.0 / 3.0 + (y[1] - mean) / c))
        .collect();

    let drift_eps = 0.01;
    let c_over_w = 2.0;
    let (s2, p2) = three_node_instance(drift_eps, 1.0)?;
    let target = [
        1.0 / 3.0,
        bp_equilibrium_q2(c_over_w, 1.0),
        1.0 - 1.0 / 3.0 - bp_equilibrium_q2(c_over_w, 1.0),
    ];
    let drift = bp_quadratic_drift(&s2, &p2, &[200, 0, 100], c_over_w, &target)?;

    let demand = DemandModel::stationary(phi.clone());
    let gap = |policy: PolicyConfig| -> Result<(f64, f64)> {
        let vals: Vec<f64> = (0..cfg.reps)
            .into_par_iter()
            .map(|r| {
                let mut rc = RunConfig::new(cfg.k, cfg.horizon, cfg.seed + r as u64, policy.clone());
                rc.warmup = cfg.warmup;
                rc.expected_payoff = true;
                run(&spec, &demand, &rc).map(|m| sol.objective - crate::harness::payoff_estimate(&m))
            })
            .collect::<Result<_>>()?;
        Ok(crate::harness::mean_se(&vals))
    };
    let linear = |c: f64| {
        PolicyConfig::new(PolicyKind::Bp).with_congestion(crate::policies::CongestionConfig::Linear { c: Some(c) })
    };
    let (bp_gap, bp_gap_se) = gap(linear(1.0))?;
    let (mbp_gap, mbp_gap_se) = gap(PolicyConfig::mbp())?;
    let weak_c_over_w = 0.45;
    let (weak_bp_gap, _) = gap(linear(weak_c_over_w))?;
    let mut exact_gaps = Vec::new();
    for k in cfg.exact_ks {
        let exact = |kind| -> Result<f64> {
            let ctx = LemmaContext::new(&spec, k, &phi, kind)?;
            Ok(stationary_gap(&ctx, 1e-13, 1 << 22).gap)
        };
        exact_gaps.push((k, exact(CongestionKind::Linear { c: 1.0 })?, exact(CongestionKind::InverseSqrt)?));
    }
    Ok(BpCounterexample {
        equilibria,
        drift_eps,
        drift_c_over_w: c_over_w,
        drift,
        k: cfg.k,
        horizon: cfg.horizon,
        w_spp: sol.objective,
        bp_gap,
        bp_gap_se,
        mbp_gap,
        mbp_gap_se,
        exact_gaps,
        weak_c_over_w,
        weak_bp_gap,
    })
}
