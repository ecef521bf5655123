//! Replicated experiments, gap reports and the scaling checks.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::three_node_instance;
use crate::error::{Error, Result};
use crate::network::{sample_state, DemandModel, Instance, NetworkSpec, Setting};
use crate::planning::{payoff_upper_bound, solve_spp, solve_spp_jpa};
use crate::policies::{PolicyConfig, PolicyKind};
use crate::simulator::{run, run_with_travel_times, InitialState, RunConfig, RunMetrics, TravelTimes};

pub const DEFAULT_REPLICATIONS: usize = 50;
/// Two-sided 90% normal quantile.
pub const Z90: f64 = 1.6448536269514722;

/// Worker count from `NUM_WORKERS`, else rayon's default.
pub fn num_workers() -> usize {
    std::env::var("NUM_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or_else(num_workers))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum HorizonRule {
    Absolute { periods: usize },
    /// `T = multiple * K`.
    PerK { multiple: f64 },
}

impl HorizonRule {
    pub fn periods(&self, k: usize) -> usize {
        match *self {
            HorizonRule::Absolute { periods } => periods,
            HorizonRule::PerK { multiple } => (multiple * k as f64).round().max(1.0) as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(flatten)]
    pub config: PolicyConfig,
}

impl PolicyEntry {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| {
            serde_json::to_value(self.config.kind)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default()
        })
    }
}

fn default_reps() -> usize {
    DEFAULT_REPLICATIONS
}

fn default_random_initial() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub instance: PathBuf,
    pub policies: Vec<PolicyEntry>,
    pub k: Vec<usize>,
    pub horizon: HorizonRule,
    #[serde(default)]
    pub warmup: Option<HorizonRule>,
    #[serde(default = "default_reps")]
    pub replications: usize,
    /// Explicit per-replication seeds; otherwise `base_seed + r`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "balanced")]
    pub initial: InitialState,
    /// Also estimate the worst gap over corner and random initial states.
    #[serde(default)]
    pub worst_initial: bool,
    #[serde(default = "default_random_initial")]
    pub random_initial_states: usize,
    #[serde(default)]
    pub travel_times: Option<TravelTimes>,
    #[serde(default)]
    pub output_csv: Option<PathBuf>,
    #[serde(default)]
    pub output_json: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn balanced() -> InitialState {
    InitialState::Balanced
}

impl Experiment {
    pub fn from_path(path: &Path) -> Result<Experiment> {
        let text = fs::read_to_string(path)?;
        let mut e: Experiment = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [Some(&mut e.instance), e.output_csv.as_mut(), e.output_json.as_mut()]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(e)
    }

    pub fn seed_list(&self) -> Vec<u64> {
        self.seeds
            .clone()
            .unwrap_or_else(|| (0..self.replications as u64).map(|r| self.base_seed + r).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() || self.k.is_empty() {
            return Err(Error::InvalidConfig("policy and K grids must be nonempty".into()));
        }
        let seeds = self.seed_list();
        if seeds.len() < 2 {
            return Err(Error::InvalidConfig("need at least 2 replications".into()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(Error::InvalidConfig("seeds must be distinct".into()));
        }
        if self.k.iter().any(|&k| k == 0) {
            return Err(Error::InvalidConfig("K must be positive".into()));
        }
        Ok(())
    }
}

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// SPP value for a fixed rate vector, dispatching on the setting.
pub fn spp_value(spec: &NetworkSpec, phi: &[f64], supply: Option<(&TravelTimes, f64)>) -> Result<f64> {
    if spec.setting == Setting::Jpa {
        Ok(solve_spp_jpa(spec, phi)?.objective)
    } else {
        Ok(solve_spp(spec, phi, supply)?.objective)
    }
}

/// Average of the per-period SPP values over `start..start + horizon`, by a
/// midpoint rule with at most `nodes` evaluations for time-varying demand.
pub fn average_spp(
    spec: &NetworkSpec,
    demand: &DemandModel,
    start: usize,
    horizon: usize,
    nodes: usize,
) -> Result<f64> {
    match demand {
        DemandModel::Stationary { phi } => spp_value(spec, phi, None),
        _ => {
            let n = horizon.min(nodes.max(1));
            let mut acc = 0.0;
            for i in 0..n {
                let t = start + ((i as f64 + 0.5) * horizon as f64 / n as f64) as usize;
                acc += spp_value(spec, &demand.phi_at(t), None)?;
            }
            Ok(acc / n as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub policy: String,
    pub k: usize,
    pub horizon: usize,
    pub initial: String,
    pub replication: usize,
    pub seed: u64,
    pub w_t: f64,
    pub w_t_raw: f64,
    pub w_t_estimate: f64,
    pub served: u64,
    pub underflow_blocks: u64,
    pub buffer_blocks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub policy: String,
    pub k: usize,
    pub horizon: usize,
    pub replications: usize,
    /// Mean realized W_T (normalized).
    pub mean_w: f64,
    pub se: f64,
    pub ci90: f64,
    pub w_spp: f64,
    pub upper_bound: f64,
    /// W^SPP minus the low-variance payoff estimate.
    pub gap: f64,
    pub gap_se: f64,
    /// W^SPP + mK/T - W_T.
    pub gap_surrogate: f64,
    pub worst_gap: Option<f64>,
    pub worst_initial: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub instance: String,
    pub scale_factor: f64,
    pub cells: Vec<CellSummary>,
}

/// Payoff estimate used for gaps: the drift-corrected conditional mean when
/// available, otherwise the realized average.
pub fn payoff_estimate(m: &RunMetrics) -> f64 {
    m.avg_corrected_payoff
        .or(m.avg_expected_payoff)
        .unwrap_or(m.avg_payoff)
}

/// Runs one replication.
pub fn run_one(
    spec: &NetworkSpec,
    demand: &DemandModel,
    cfg: &RunConfig,
    travel: Option<&TravelTimes>,
) -> Result<RunMetrics> {
    match travel {
        Some(tr) => run_with_travel_times(spec, demand, cfg, tr),
        None => run(spec, demand, cfg),
    }
}

fn cell_seed(seed: u64, cell: usize, init: usize) -> u64 {
    seed.wrapping_add((cell as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((init as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Executes an experiment in memory and returns per-replication rows and the summary.
pub fn execute(exp: &Experiment, inst: &Instance) -> Result<(Vec<ReplicationRow>, GapReport)> {
    exp.validate()?;
    let spec = &inst.spec;
    let demand = inst.demand()?;
    let seeds = exp.seed_list();
    let m = spec.nodes;

    struct Task {
        cell: usize,
        init: usize,
        rep: usize,
        cfg: RunConfig,
    }
    let mut cells = Vec::new();
    let mut inits: BTreeMap<usize, Vec<(String, InitialState)>> = BTreeMap::new();
    for pe in &exp.policies {
        for &k in &exp.k {
            cells.push((pe, k));
        }
    }
    let mut tasks = Vec::new();
    for (ci, &(pe, k)) in cells.iter().enumerate() {
        let horizon = exp.horizon.periods(k);
        let warmup = exp.warmup.map_or(0, |w| w.periods(k));
        let list = inits.entry(k).or_insert_with(|| {
            let mut v = vec![("default".to_string(), exp.initial.clone())];
            if exp.worst_initial {
                if let Ok(scale) = spec.at_scale(k) {
                    for j in 0..m {
                        v.push((format!("corner{j}"), InitialState::Corner { node: j }));
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(exp.base_seed ^ k as u64);
                    for i in 0..exp.random_initial_states {
                        let q = sample_state(&scale.caps, k, 0.0, &mut rng);
                        v.push((format!("random{i}"), InitialState::Explicit { q }));
                    }
                }
            }
            v
        });
        for (ii, (_, init)) in list.iter().enumerate() {
            for (r, &s) in seeds.iter().enumerate() {
                let mut cfg = RunConfig::new(k, horizon, cell_seed(s, ci, ii), pe.config.clone());
                cfg.warmup = warmup;
                cfg.initial = init.clone();
                cfg.expected_payoff = exp.travel_times.is_none();
                tasks.push(Task {
                    cell: ci,
                    init: ii,
                    rep: r,
                    cfg,
                });
            }
        }
    }

    let travel = exp.travel_times.as_ref();
    let results: Vec<Result<RunMetrics>> = pool(exp.workers)?.install(|| {
        tasks
            .par_iter()
            .map(|t| run_one(spec, demand, &t.cfg, travel))
            .collect()
    });

    let mut spp_cache: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rows = Vec::with_capacity(tasks.len());
    let mut per_cell: BTreeMap<(usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for (t, res) in tasks.iter().zip(results) {
        let mtr = res?;
        let (pe, k) = cells[t.cell];
        rows.push(ReplicationRow {
            policy: pe.label(),
            k,
            horizon: t.cfg.horizon,
            initial: inits[&k][t.init].0.clone(),
            replication: t.rep,
            seed: t.cfg.seed,
            w_t: mtr.avg_payoff,
            w_t_raw: mtr.avg_payoff_raw,
            w_t_estimate: payoff_estimate(&mtr),
            served: mtr.served,
            underflow_blocks: mtr.underflow_blocks,
            buffer_blocks: mtr.buffer_blocks,
        });
        per_cell
            .entry((t.cell, t.init))
            .or_default()
            .push((mtr.avg_payoff, payoff_estimate(&mtr)));
    }

    let mut summaries = Vec::new();
    for (ci, &(pe, k)) in cells.iter().enumerate() {
        let horizon = exp.horizon.periods(k);
        let warmup = exp.warmup.map_or(0, |w| w.periods(k));
        let w_spp = match spp_cache.get(&(warmup, horizon)) {
            Some(&v) => v,
            None => {
                let v = match travel {
                    Some(tr) if demand.is_stationary() => {
                        spp_value(spec, &crate::policies::reference_phi(demand), Some((tr, k as f64)))?
                    }
                    _ => average_spp(spec, demand, warmup, horizon, 4096)?,
                };
                spp_cache.insert((warmup, horizon), v);
                v
            }
        };
        let base = &per_cell[&(ci, 0)];
        let realized: Vec<f64> = base.iter().map(|x| x.0).collect();
        let est: Vec<f64> = base.iter().map(|x| x.1).collect();
        let (mean_w, se) = mean_se(&realized);
        let (mean_e, se_e) = mean_se(&est);
        let upper = payoff_upper_bound(w_spp, m, k, horizon);
        let (worst_gap, worst_initial) = if exp.worst_initial {
            let mut worst = (f64::NEG_INFINITY, 0usize);
            for ii in 0..inits[&k].len() {
                let e: Vec<f64> = per_cell[&(ci, ii)].iter().map(|x| x.1).collect();
                let g = w_spp - mean_se(&e).0;
                if g > worst.0 {
                    worst = (g, ii);
                }
            }
            let scale = spec.at_scale(k)?;
            let q = match &inits[&k][worst.1].1 {
                InitialState::Explicit { q } => q.clone(),
                InitialState::Corner { node } => crate::network::corner_state(&scale.caps, k, *node),
                InitialState::Balanced => crate::network::balanced_state(&scale.caps, k),
                InitialState::Uniform => Vec::new(),
            };
            (Some(worst.0), Some(q))
        } else {
            (None, None)
        };
        summaries.push(CellSummary {
            policy: pe.label(),
            k,
            horizon,
            replications: realized.len(),
            mean_w,
            se,
            ci90: Z90 * se,
            w_spp,
            upper_bound: upper,
            gap: w_spp - mean_e,
            gap_se: se_e,
            gap_surrogate: upper - mean_w,
            worst_gap,
            worst_initial,
        });
    }
    Ok((
        rows,
        GapReport {
            instance: exp.instance.display().to_string(),
            scale_factor: spec.scale_factor,
            cells: summaries,
        },
    ))
}

pub fn write_rows_csv(path: &Path, rows: &[ReplicationRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Loads the experiment at `path`, runs it and writes its outputs.
pub fn run_experiment(path: &Path) -> Result<GapReport> {
    let exp = Experiment::from_path(path)?;
    let inst = Instance::from_path(&exp.instance)?;
    let (rows, report) = execute(&exp, &inst)?;
    if let Some(p) = &exp.output_csv {
        write_rows_csv(p, &rows)?;
    }
    if let Some(p) = &exp.output_json {
        write_json(p, &report)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Scaling checks on the three-node instance

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    /// K, T or eta depending on the check.
    pub param: f64,
    pub k: usize,
    pub horizon: usize,
    pub w_spp: f64,
    pub mean_w: f64,
    pub se: f64,
    pub gap: f64,
    pub gap_se: f64,
    pub upper_bound: f64,
}

impl ScalingRow {
    /// Realized mean within the finite-horizon bound plus three standard errors.
    pub fn within_upper_bound(&self) -> bool {
        self.mean_w <= self.upper_bound + 3.0 * self.se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub rows: Vec<ScalingRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub reps: usize,
    pub seed: u64,
    /// Multiplies every horizon (1.0 for the full checks).
    pub horizon_scale: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            reps: 20,
            seed: 2024,
            horizon_scale: 1.0,
        }
    }
}

struct CellSpec<'a> {
    spec: &'a NetworkSpec,
    demand: &'a DemandModel,
    policy: PolicyConfig,
    k: usize,
    horizon: usize,
    warmup: usize,
    initial: InitialState,
}

/// Replicates one cell; returns (realized W_T values, estimates).
fn replicate(c: &CellSpec, reps: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let out: Vec<Result<(f64, f64)>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut cfg = RunConfig::new(c.k, c.horizon, seed.wrapping_add(r as u64), c.policy.clone());
            cfg.warmup = c.warmup;
            cfg.initial = c.initial.clone();
            cfg.expected_payoff = true;
            let m = run(c.spec, c.demand, &cfg)?;
            Ok((m.avg_payoff, payoff_estimate(&m)))
        })
        .collect();
    let mut a = Vec::with_capacity(reps);
    let mut b = Vec::with_capacity(reps);
    for x in out {
        let (p, e) = x?;
        a.push(p);
        b.push(e);
    }
    Ok((a, b))
}

fn row(param: f64, c: &CellSpec, w_spp: f64, realized: &[f64], est: &[f64]) -> ScalingRow {
    let (mean_w, se) = mean_se(realized);
    let (mean_e, gap_se) = mean_se(est);
    ScalingRow {
        param,
        k: c.k,
        horizon: c.horizon,
        w_spp,
        mean_w,
        se,
        gap: w_spp - mean_e,
        gap_se,
        upper_bound: payoff_upper_bound(w_spp, c.spec.nodes, c.k, c.horizon),
    }
}

fn scaled(t: usize, opts: &SuiteOptions) -> usize {
    ((t as f64 * opts.horizon_scale).round() as usize).max(1)
}

/// Greedy on the three-node instance (eps = 0.05): per-customer payoff stays
/// below 0.95 W^SPP at every K.
pub fn greedy_loss_check(ks: &[usize], t_per_k: usize, opts: &SuiteOptions) -> Result<ScalingCheck> {
    let (spec, phi) = three_node_instance(0.05, 1.0)?;
    let w_spp = spp_value(&spec, &phi, None)?;
    let demand = DemandModel::stationary(phi);
    let mut rows = Vec::new();
    for &k in ks {
        let c = CellSpec {
            spec: &spec,
            demand: &demand,
            policy: PolicyConfig::new(PolicyKind::Greedy),
            k,
            horizon: scaled(t_per_k * k, opts),
            warmup: 0,
            initial: InitialState::Balanced,
        };
        let (a, b) = replicate(&c, opts.reps, opts.seed ^ k as u64)?;
        rows.push(row(k as f64, &c, w_spp, &a, &b));
    }
    let passed = rows.iter().all(|r| r.mean_w <= 0.95 * r.w_spp);
    let detail = rows
        .iter()
        .map(|r| format!("K={} W_T/W^SPP={:.4}", r.k, r.mean_w / r.w_spp))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(ScalingCheck {
        name: "greedy loss".into(),
        passed,
        detail,
        rows,
    })
}

/// Steady-state gap of MBP falls with K: positive, decreasing, and
/// gap(K_max) <= gap(K_min) / 4.
pub fn steady_state_check(ks: &[usize], t_per_k: usize, opts: &SuiteOptions) -> Result<ScalingCheck> {
    let (spec, phi) = three_node_instance(0.05, 1.0)?;
    let w_spp = spp_value(&spec, &phi, None)?;
    let demand = DemandModel::stationary(phi);
    let mut rows = Vec::new();
    for &k in ks {
        let c = CellSpec {
            spec: &spec,
            demand: &demand,
            policy: PolicyConfig::mbp(),
            k,
            horizon: scaled(t_per_k * k, opts),
            warmup: scaled(100 * k, opts),
            initial: InitialState::Balanced,
        };
        let (a, b) = replicate(&c, opts.reps, opts.seed ^ k as u64)?;
        rows.push(row(k as f64, &c, w_spp, &a, &b));
    }
    // The true gap at large K can sit far below Monte Carlo resolution, so sign
    // and order are judged up to three standard errors.
    let positive = rows.iter().all(|r| r.gap > -3.0 * r.gap_se);
    let decreasing = rows
        .windows(2)
        .all(|w| w[1].gap < w[0].gap + 3.0 * w[0].gap_se.hypot(w[1].gap_se));
    let strict = rows.iter().all(|r| r.gap > 0.0) && rows.windows(2).all(|w| w[1].gap < w[0].gap);
    let ratio = rows.last().unwrap().gap <= rows[0].gap / 4.0;
    let mut detail = rows
        .iter()
        .map(|r| format!("K={} gap={:.3e}±{:.1e}", r.k, r.gap, r.gap_se))
        .collect::<Vec<_>>()
        .join(", ");
    if !strict {
        detail.push_str(" (strict sign/order not resolved by sampling)");
    }
    Ok(ScalingCheck {
        name: "steady-state 1/K".into(),
        passed: positive && decreasing && ratio,
        detail,
        rows,
    })
}

/// Worst-initial-state gap at fixed K over horizons: decreasing in T and
/// gap(T_max) <= gap(T_min) / 3.
pub fn transient_check(k: usize, t_multiples: &[usize], random_states: usize, opts: &SuiteOptions) -> Result<ScalingCheck> {
    let (spec, phi) = three_node_instance(0.05, 1.0)?;
    let w_spp = spp_value(&spec, &phi, None)?;
    let demand = DemandModel::stationary(phi);
    let scale = spec.at_scale(k)?;
    let mut starts: Vec<InitialState> = (0..spec.nodes).map(|node| InitialState::Corner { node }).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..random_states {
        starts.push(InitialState::Explicit {
            q: sample_state(&scale.caps, k, 0.0, &mut rng),
        });
    }
    let mut rows = Vec::new();
    for &mult in t_multiples {
        let mut worst: Option<ScalingRow> = None;
        for (i, init) in starts.iter().enumerate() {
            let c = CellSpec {
                spec: &spec,
                demand: &demand,
                policy: PolicyConfig::mbp(),
                k,
                horizon: mult * k,
                warmup: 0,
                initial: init.clone(),
            };
            let (a, b) = replicate(&c, opts.reps, opts.seed.wrapping_add(1000 * i as u64))?;
            let r = row(mult as f64, &c, w_spp, &a, &b);
            if worst.as_ref().is_none_or(|w| r.gap > w.gap) {
                worst = Some(r);
            }
        }
        rows.push(worst.unwrap());
    }
    let decreasing = rows.windows(2).all(|w| w[1].gap < w[0].gap);
    let ratio = rows.last().unwrap().gap <= rows[0].gap / 3.0;
    let detail = rows
        .iter()
        .map(|r| format!("T={}K gap={:.3e}", r.param, r.gap))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(ScalingCheck {
        name: "transient K/T".into(),
        passed: decreasing && ratio,
        detail,
        rows,
    })
}

/// Two nodes, 1->2 paying 1 and 2->1 paying 1/2. Which direction is rationed
/// (and hence the optimal prices) flips as the 1->2 rate crosses 1/2.
pub fn two_node_instance() -> Result<NetworkSpec> {
    use crate::network::{build_network, simple_type, RawInstance};
    build_network(RawInstance {
        nodes: 2,
        buffers: None,
        setting: None,
        demand_types: vec![simple_type("12", 0, 1, 1.0), simple_type("21", 1, 0, 0.5)],
        arrival: None,
    })
}

/// Amplitude of the sinusoid in the time-varying check.
pub const TV_AMPLITUDE: f64 = 0.02;

/// Sinusoid around (1/2, 1/2) along (1, -1) with one-period variation exactly `eta`.
pub fn sinusoid_with_eta(eta: f64, amplitude: f64) -> DemandModel {
    let direction = vec![1.0, -1.0];
    let period = std::f64::consts::PI / (eta / (4.0 * amplitude)).asin();
    DemandModel::Sinusoid {
        base: vec![0.5, 0.5],
        direction,
        amplitude,
        period,
        eta,
    }
}

/// Regret of MBP against the exact optimal policy (backward induction) on the
/// two-node instance under sinusoidal demand: gap / sqrt(eta) stays within a
/// factor 3. Every eta uses the same horizon, two periods of the slowest
/// sinusoid, after a warm-up of one own period.
pub fn time_varying_check(k: usize, etas: &[f64], amplitude: f64, opts: &SuiteOptions) -> Result<ScalingCheck> {
    let spec = two_node_instance()?;
    let scale = spec.at_scale(k)?;
    let slowest = etas.iter().cloned().fold(f64::INFINITY, f64::min);
    let DemandModel::Sinusoid { period: p_max, .. } = sinusoid_with_eta(slowest, amplitude) else {
        unreachable!()
    };
    let horizon = scaled((2.0 * p_max).round() as usize, opts);
    let mut rows = Vec::new();
    for &eta in etas {
        let demand = sinusoid_with_eta(eta, amplitude);
        let DemandModel::Sinusoid { period, .. } = demand else { unreachable!() };
        let warmup = period.round() as usize;
        let opt = crate::planning::optimal_values(&spec, &scale, &demand, warmup, horizon, 1 << 20)?;
        let w_bar = spp_value(&spec, &demand.average_phi(warmup + horizon)[..], None)?;
        let out: Vec<Result<(f64, f64)>> = (0..opts.reps)
            .into_par_iter()
            .map(|r| {
                let mut cfg = RunConfig::new(k, horizon, opts.seed.wrapping_add(r as u64) ^ eta.to_bits(), PolicyConfig::mbp());
                cfg.warmup = warmup;
                cfg.expected_payoff = true;
                let m = run(&spec, &demand, &cfg)?;
                let best = opt.average(&m.initial_state).expect("state in lattice");
                Ok((m.avg_payoff, best - payoff_estimate(&m)))
            })
            .collect();
        let mut realized = Vec::new();
        let mut regret = Vec::new();
        for x in out {
            let (a, b) = x?;
            realized.push(a);
            regret.push(b);
        }
        let (mean_w, se) = mean_se(&realized);
        let (gap, gap_se) = mean_se(&regret);
        rows.push(ScalingRow {
            param: eta,
            k,
            horizon,
            w_spp: w_bar,
            mean_w,
            se,
            gap,
            gap_se,
            upper_bound: payoff_upper_bound(w_bar, spec.nodes, k, horizon),
        });
    }
    let norm: Vec<f64> = rows.iter().map(|r| r.gap / r.param.sqrt()).collect();
    let hi = norm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = norm.iter().cloned().fold(f64::INFINITY, f64::min);
    let passed = lo > 0.0 && hi <= 3.0 * lo;
    let detail = rows
        .iter()
        .zip(&norm)
        .map(|(r, n)| format!("eta={:.1e} regret={:.3e} regret/sqrt(eta)={:.3}", r.param, r.gap, n))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(ScalingCheck {
        name: "time-varying sqrt(eta K)".into(),
        passed,
        detail,
        rows,
    })
}

/// Synthetic ring city: every ordered pair of `m` nodes is a demand type paying
/// more for longer trips, mildly unbalanced rates, trip time `trip_scale` per
/// ring hop and no pickup delay.
pub fn ring_city(m: usize, trip_scale: u64) -> Result<(NetworkSpec, Vec<f64>, TravelTimes)> {
    use crate::network::{build_network, simple_type, RawInstance};
    let dist = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        d.min(m - d)
    };
    let mut types = Vec::new();
    let mut phi = Vec::new();
    for j in 0..m {
        for k in 0..m {
            if j != k {
                types.push(simple_type(&format!("{j}-{k}"), j, k, 0.3 + 0.2 * dist(j, k) as f64));
                phi.push(1.0 + 0.3 * ((j + 2 * k) % 3) as f64);
            }
        }
    }
    let total: f64 = phi.iter().sum();
    phi.iter_mut().for_each(|p| *p /= total);
    let spec = build_network(RawInstance {
        nodes: m,
        buffers: None,
        setting: None,
        demand_types: types,
        arrival: None,
    })?;
    let travel = TravelTimes {
        pickup: vec![vec![0; m]; m],
        trip: (0..m)
            .map(|a| (0..m).map(|b| trip_scale * dist(a, b) as u64).collect())
            .collect(),
    };
    Ok((spec, phi, travel))
}

/// Cars needed to run the fluid optimum (Little's law): sum of z* times the trip delay.
pub fn fluid_requirement(spec: &NetworkSpec, phi: &[f64], travel: &TravelTimes) -> Result<f64> {
    let sol = solve_spp(spec, phi, None)?;
    Ok(spec
        .demand_types
        .iter()
        .zip(&sol.z)
        .map(|(t, z)| {
            t.pairs()
                .zip(z)
                .map(|((j, k, _), z)| z * travel.total(j, t, k) as f64)
                .sum::<f64>()
        })
        .sum())
}

/// The three scaling checks at the acceptance parameters (horizons scaled by `opts`).
pub fn gap_scaling_suite(opts: &SuiteOptions) -> Result<Vec<ScalingCheck>> {
    Ok(vec![
        steady_state_check(&[50, 200, 800], 10_000, opts)?,
        transient_check(200, &[1, 10, 1000], 20, opts)?,
        time_varying_check(400, &[1e-6, 4e-6, 1.6e-5], TV_AMPLITUDE, opts)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horizon_rules() {
        assert_eq!(HorizonRule::PerK { multiple: 5000.0 }.periods(50), 250_000);
        assert_eq!(HorizonRule::Absolute { periods: 7 }.periods(50), 7);
    }

    #[test]
    fn mean_and_se() {
        let (m, se) = mean_se(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sinusoid_eta_is_exact() {
        for eta in [1e-6, 4e-6, 1.6e-5] {
            let d = sinusoid_with_eta(eta, TV_AMPLITUDE);
            assert!((d.eta_bound() - eta).abs() < 1e-15);
            d.validate(2).unwrap();
        }
    }
}
