//! Congestion functions f_j, their antiderivatives F and a numeric check of
//! the growth condition.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{connectivity_alpha, sample_state, NetworkSpec, Scale};

const DOMAIN_SLACK: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CongestionKind {
    #[serde(rename = "inv_sqrt")]
    InverseSqrt,
    #[serde(rename = "inv_sqrt_buffered")]
    InverseSqrtBuffered,
    #[serde(rename = "log")]
    Logarithmic { c: f64 },
    #[serde(rename = "linear")]
    Linear { c: f64 },
}

impl CongestionKind {
    /// Logarithmic with the default scale `max(8m, 2/alpha)`.
    pub fn log_default(m: usize, alpha: f64) -> CongestionKind {
        CongestionKind::Logarithmic {
            c: (8.0 * m as f64).max(2.0 / alpha),
        }
    }

    /// Linear with the default scale `4m^2 + 2m/alpha`.
    pub fn linear_default(m: usize, alpha: f64) -> CongestionKind {
        let m = m as f64;
        CongestionKind::Linear {
            c: 4.0 * m * m + 2.0 * m / alpha,
        }
    }
}

/// Normalizing constants for buffered nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferConstants {
    pub c_b: f64,
    pub d_b: f64,
    pub eps: f64,
}

#[derive(Clone, Copy)]
enum Family {
    InvSqrt,
    Log,
}

fn h(fam: Family, x: f64) -> f64 {
    match fam {
        Family::InvSqrt => -x.powf(-0.5),
        Family::Log => x.ln(),
    }
}

fn h_b(fam: Family, x: f64) -> f64 {
    match fam {
        Family::InvSqrt => (1.0 - x).powf(-0.5) - x.powf(-0.5),
        Family::Log => x.ln() - (1.0 - x).ln(),
    }
}

fn constants(fam: Family, dbar_sum: f64, k: usize) -> Result<BufferConstants> {
    let delta = (k as f64).sqrt();
    let k_tilde = k as f64 + dbar_sum * delta;
    let eps = delta / k_tilde;
    let s = 1.0 / dbar_sum;
    if k < 4 || eps >= s {
        return Err(Error::DegenerateEps { eps, bound: s, k });
    }
    let c_b = (h(fam, eps) - h(fam, s)) / (h_b(fam, eps) - h_b(fam, s));
    let d_b = h_b(fam, s) - h(fam, s) / c_b;
    if !(c_b.is_finite() && c_b > 0.0 && d_b.is_finite()) {
        return Err(Error::DegenerateEps { eps, bound: s, k });
    }
    Ok(BufferConstants { c_b, d_b, eps })
}

/// Constants of the buffered inverse-square-root function at total supply `k`.
pub fn buffer_constants(spec: &NetworkSpec, k: usize) -> Result<BufferConstants> {
    constants(Family::InvSqrt, spec.buffers.iter().sum(), k)
}

/// Same construction for the logarithmic family.
pub fn log_buffer_constants(spec: &NetworkSpec, k: usize) -> Result<BufferConstants> {
    constants(Family::Log, spec.buffers.iter().sum(), k)
}

/// A congestion function bound to a network at a fixed scale.
#[derive(Debug, Clone)]
pub struct Congestion {
    pub kind: CongestionKind,
    sqrt_m: f64,
    dbar: Vec<f64>,
    buffered: Vec<bool>,
    consts: Option<BufferConstants>,
}

impl Congestion {
    pub fn new(kind: CongestionKind, spec: &NetworkSpec, scale: &Scale) -> Result<Congestion> {
        let m = spec.nodes;
        let buffered: Vec<bool> = (0..m).map(|j| spec.is_buffered(j)).collect();
        let dsum: f64 = scale.dbar.iter().sum();
        let consts = match kind {
            CongestionKind::InverseSqrtBuffered if buffered.iter().any(|&b| b) => {
                Some(constants(Family::InvSqrt, dsum, scale.k)?)
            }
            CongestionKind::Logarithmic { .. } if buffered.iter().any(|&b| b) => {
                Some(constants(Family::Log, dsum, scale.k)?)
            }
            _ => None,
        };
        if let CongestionKind::Logarithmic { c } | CongestionKind::Linear { c } = kind {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidConfig("congestion scale c must be positive".into()));
            }
        }
        Ok(Congestion {
            kind,
            sqrt_m: (m as f64).sqrt(),
            dbar: scale.dbar.clone(),
            buffered,
            consts,
        })
    }

    /// Unbuffered inverse-square-root function on `m` nodes (no network needed).
    pub fn inverse_sqrt(m: usize) -> Congestion {
        Congestion {
            kind: CongestionKind::InverseSqrt,
            sqrt_m: (m as f64).sqrt(),
            dbar: vec![1.0; m],
            buffered: vec![false; m],
            consts: None,
        }
    }

    pub fn constants(&self) -> Option<BufferConstants> {
        self.consts
    }

    pub fn nodes(&self) -> usize {
        self.dbar.len()
    }

    #[inline]
    fn uses_buffer(&self, j: usize) -> bool {
        self.consts.is_some() && self.buffered[j]
    }

    pub fn in_domain(&self, j: usize, x: f64) -> bool {
        if !(x > 0.0 && x < 1.0 + DOMAIN_SLACK) {
            return false;
        }
        if self.uses_buffer(j) {
            let u = x / self.dbar[j];
            return u > 0.0 && u < 1.0;
        }
        true
    }

    /// f_j(x) with a domain check.
    pub fn eval_checked(&self, j: usize, x: f64) -> Result<f64> {
        if !self.in_domain(j, x) {
            return Err(Error::DomainError { node: j, value: x });
        }
        Ok(self.eval(j, x))
    }

    /// f_j(x); callers guarantee `x` lies in the domain.
    #[inline]
    pub fn eval(&self, j: usize, x: f64) -> f64 {
        match self.kind {
            CongestionKind::InverseSqrt => -self.sqrt_m / x.sqrt(),
            CongestionKind::InverseSqrtBuffered => {
                if self.uses_buffer(j) {
                    let b = self.consts.unwrap();
                    let u = x / self.dbar[j];
                    self.sqrt_m * b.c_b * (h_b(Family::InvSqrt, u) - b.d_b)
                } else {
                    -self.sqrt_m / x.sqrt()
                }
            }
            CongestionKind::Logarithmic { c } => {
                if self.uses_buffer(j) {
                    let b = self.consts.unwrap();
                    let u = x / self.dbar[j];
                    c * b.c_b * (h_b(Family::Log, u) - b.d_b)
                } else {
                    c * x.ln()
                }
            }
            CongestionKind::Linear { c } => c * x / self.dbar[j],
        }
    }

    pub fn derivative(&self, j: usize, x: f64) -> f64 {
        match self.kind {
            CongestionKind::InverseSqrt => 0.5 * self.sqrt_m * x.powf(-1.5),
            CongestionKind::InverseSqrtBuffered => {
                if self.uses_buffer(j) {
                    let b = self.consts.unwrap();
                    let d = self.dbar[j];
                    let u = x / d;
                    self.sqrt_m * b.c_b * 0.5 / d * ((1.0 - u).powf(-1.5) + u.powf(-1.5))
                } else {
                    0.5 * self.sqrt_m * x.powf(-1.5)
                }
            }
            CongestionKind::Logarithmic { c } => {
                if self.uses_buffer(j) {
                    let b = self.consts.unwrap();
                    let d = self.dbar[j];
                    c * b.c_b * (1.0 / x + 1.0 / (d - x))
                } else {
                    c / x
                }
            }
            CongestionKind::Linear { c } => c / self.dbar[j],
        }
    }

    /// Antiderivative F_j with F_j' = f_j.
    pub fn antiderivative(&self, j: usize, x: f64) -> f64 {
        match self.kind {
            CongestionKind::InverseSqrt => -2.0 * self.sqrt_m * x.sqrt(),
            CongestionKind::InverseSqrtBuffered => {
                if self.uses_buffer(j) {
                    let b = self.consts.unwrap();
                    let d = self.dbar[j];
                    let u = x / d;
                    self.sqrt_m
                        * b.c_b
                        * (-2.0 * d * (1.0 - u).sqrt() - 2.0 * d * u.sqrt() - b.d_b * x)
                } else {
                    -2.0 * self.sqrt_m * x.sqrt()
                }
            }
            CongestionKind::Logarithmic { c } => {
                if self.uses_buffer(j) {
                    let b = self.consts.unwrap();
                    let d = self.dbar[j];
                    let u = x / d;
                    let v = 1.0 - u;
                    c * b.c_b * (x * u.ln() - x + d * (v * v.ln() - v) - b.d_b * x)
                } else {
                    c * (x * x.ln() - x)
                }
            }
            CongestionKind::Linear { c } => 0.5 * c * x * x / self.dbar[j],
        }
    }

    pub fn values(&self, qbar: &[f64]) -> Vec<f64> {
        qbar.iter().enumerate().map(|(j, &x)| self.eval(j, x)).collect()
    }

    /// Lyapunov function F(q̄) = sum_j F_j(q̄_j).
    pub fn lyapunov(&self, qbar: &[f64]) -> f64 {
        qbar.iter()
            .enumerate()
            .map(|(j, &x)| self.antiderivative(j, x))
            .sum()
    }

    pub fn lyapunov_checked(&self, qbar: &[f64]) -> Result<f64> {
        for (j, &x) in qbar.iter().enumerate() {
            if !self.in_domain(j, x) {
                return Err(Error::DomainError { node: j, value: x });
            }
        }
        Ok(self.lyapunov(qbar))
    }

    /// Bregman divergence F(a) - F(b) - <f(b), a - b>.
    pub fn bregman(&self, a: &[f64], b: &[f64]) -> f64 {
        let lin: f64 = a
            .iter()
            .zip(b)
            .enumerate()
            .map(|(j, (&x, &y))| self.eval(j, y) * (x - y))
            .sum();
        self.lyapunov(a) - self.lyapunov(b) - lin
    }
}

pub fn eval_congestion(cong: &Congestion, j: usize, x: f64) -> Result<f64> {
    cong.eval_checked(j, x)
}

pub fn eval_lyapunov(cong: &Congestion, qbar: &[f64]) -> Result<f64> {
    cong.lyapunov_checked(qbar)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthReport {
    pub holds: bool,
    /// Smallest slack over all checked inequalities (negative means violated).
    pub worst_margin: f64,
    pub samples: usize,
    pub outside_b: usize,
    pub ordering_violations: usize,
    pub boundary_inside_b: usize,
}

/// Numerically checks the growth condition on states sampled from Ω_K.
///
/// Checks (1) the orderings at empty queues and full buffers, (2a) the
/// drift inequality outside B(f), and that boundary states lie outside B(f).
pub fn growth_condition_check<R: Rng + ?Sized>(
    cong: &Congestion,
    spec: &NetworkSpec,
    scale: &Scale,
    phi: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<GrowthReport> {
    let alpha = connectivity_alpha(spec, phi)?;
    let m = spec.nodes;
    let dsum: f64 = scale.dbar.iter().sum();
    let reference: Vec<f64> = (0..m).map(|j| cong.eval(j, scale.dbar[j] / dsum)).collect();
    let mut report = GrowthReport {
        holds: true,
        worst_margin: f64::INFINITY,
        samples,
        outside_b: 0,
        ordering_violations: 0,
        boundary_inside_b: 0,
    };
    let note = |r: &mut GrowthReport, margin: f64| {
        if margin < r.worst_margin {
            r.worst_margin = margin;
        }
        if margin < -1e-9 {
            r.holds = false;
        }
    };
    for _ in 0..samples {
        let q = sample_state(&scale.caps, scale.k, 0.1, rng);
        let qb = scale.normalize(&q).values;
        let f: Vec<f64> = (0..m).map(|j| cong.eval(j, qb[j])).collect();
        let fmax = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let fmin = f.iter().cloned().fold(f64::INFINITY, f64::min);
        let boundary = scale.is_boundary(&q);
        // point 1 orderings
        for j in 0..m {
            if q[j] == 0 {
                let margin = fmin - f[j];
                if margin < -1e-9 {
                    report.ordering_violations += 1;
                }
                note(&mut report, margin.min(0.0));
            }
            if spec.is_buffered(j) && q[j] == scale.caps[j] {
                let margin = f[j] - fmax;
                if margin < -1e-9 {
                    report.ordering_violations += 1;
                }
                note(&mut report, margin.min(0.0));
            }
        }
        let spread = (0..m)
            .map(|j| (reference[j] - f[j]).abs())
            .fold(0.0, f64::max);
        let inside_b = spread <= 4.0 * m as f64;
        if inside_b {
            if boundary {
                report.boundary_inside_b += 1;
                note(&mut report, spread - 4.0 * m as f64);
            }
            continue;
        }
        report.outside_b += 1;
        let fprime = (0..m)
            .map(|j| cong.derivative(j, qb[j]).abs())
            .fold(0.0, f64::max);
        let lhs = alpha * (spread - 2.0 * m as f64).max(0.0);
        let rhs = fprime / (2.0 * scale.k_tilde) + if boundary { 1.0 } else { 0.0 };
        note(&mut report, lhs - rhs);
    }
    if report.worst_margin == f64::INFINITY {
        report.worst_margin = 0.0;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, simple_type, RawInstance};

    fn spec(buffers: Vec<f64>) -> NetworkSpec {
        let m = buffers.len();
        let mut types = Vec::new();
        for j in 0..m {
            types.push(simple_type(&format!("t{j}"), j, (j + 1) % m, 1.0));
        }
        build_network(RawInstance {
            nodes: m,
            buffers: Some(buffers),
            setting: None,
            demand_types: types,
            arrival: None,
        })
        .unwrap()
    }

    #[test]
    fn symmetric_points() {
        let c = Congestion::inverse_sqrt(3);
        assert!((c.eval(0, 1.0 / 3.0) + 3.0).abs() < 1e-12);
        let c = Congestion::inverse_sqrt(4);
        assert!((c.eval(0, 0.25) + 4.0).abs() < 1e-12);
        let c = Congestion::inverse_sqrt(2);
        assert!((c.lyapunov(&[0.5, 0.5]) + 4.0).abs() < 1e-12);
        let c = Congestion::inverse_sqrt(3);
        assert!((c.lyapunov(&[1.0 / 3.0; 3]) + 6.0).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        let c = Congestion::inverse_sqrt(2);
        assert!(c.eval_checked(0, 0.0).is_err());
        assert!(c.eval_checked(0, 1.5).is_err());
        assert!(c.eval_checked(0, 0.3).is_ok());
    }

    #[test]
    fn buffered_equalization() {
        let s = spec(vec![0.5, 1.0]);
        for k in [100usize, 10_000] {
            let sc = s.at_scale(k).unwrap();
            for kind in [
                CongestionKind::InverseSqrtBuffered,
                CongestionKind::Logarithmic { c: 3.0 },
            ] {
                let c = Congestion::new(kind, &s, &sc).unwrap();
                assert!(c.constants().unwrap().c_b > 0.0);
                let dsum: f64 = sc.dbar.iter().sum();
                let a = c.eval(0, sc.dbar[0] / dsum);
                let b = c.eval(1, sc.dbar[1] / dsum);
                assert!((a - b).abs() < 1e-9, "{a} {b}");
                let e0 = c.eval(0, sc.qbar(0, 0));
                let e1 = c.eval(1, sc.qbar(1, 0));
                assert!((e0 - e1).abs() < 1e-9 * e0.abs().max(1.0), "{e0} {e1}");
            }
        }
    }

    #[test]
    fn degenerate_eps() {
        let s = spec(vec![0.5, 0.55]);
        assert!(matches!(buffer_constants(&s, 3), Err(Error::DegenerateEps { .. })));
        assert!(buffer_constants(&s, 4).is_ok());
    }
}
