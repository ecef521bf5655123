//! Dense two-phase primal simplex with Bland's rule.
//!
//! Maximizes `c x` subject to row constraints and `x >= 0`. After the final
//! pivot the basic solution and the row duals are recomputed from the
//! original data with a partial-pivoting solve, which keeps residuals near
//! machine precision on the small programs used here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub kinds: Vec<RowKind>,
    pub rhs: Vec<f64>,
    /// Optional finite upper bound per variable (added as extra rows).
    pub upper: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Dual value of each user row: d(objective)/d(rhs).
    pub duals: Vec<f64>,
    pub iterations: usize,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> LinearProgram {
        let n = objective.len();
        LinearProgram {
            objective,
            rows: Vec::new(),
            kinds: Vec::new(),
            rhs: Vec::new(),
            upper: vec![None; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, kind: RowKind, rhs: f64) {
        assert_eq!(coeffs.len(), self.num_vars(), "row length mismatch");
        self.rows.push(coeffs);
        self.kinds.push(kind);
        self.rhs.push(rhs);
    }

    pub fn solve(&self) -> Result<LpSolution> {
        solve_lp(self)
    }
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;
const MAX_ITERS: usize = 200_000;

struct Tableau {
    /// rows x (cols + 1); last column is the rhs
    a: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.a[r][c];
        for v in self.a[r].iter_mut() {
            *v /= p;
        }
        self.a[r][c] = 1.0;
        let pivot_row = self.a[r].clone();
        for (i, row) in self.a.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, &pr) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pr;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Runs simplex iterations maximizing `cost`; columns with `allowed[j] == false` never enter.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool], iters: &mut usize) -> Result<bool> {
        let n = self.cols;
        loop {
            // reduced costs r_j = c_j - c_B B^-1 A_j
            let mut entering = None;
            for j in 0..n {
                if !allowed[j] || self.basis.contains(&j) {
                    continue;
                }
                let mut r = cost[j];
                for (i, row) in self.a.iter().enumerate() {
                    r -= cost[self.basis[i]] * row[j];
                }
                if r > COST_TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(c) = entering else { return Ok(true) };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.a.iter().enumerate() {
                let aij = row[c];
                if aij > PIVOT_TOL {
                    let ratio = row[n] / aij;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-12
                                || (ratio <= lr + 1e-12 && self.basis[i] < self.basis[li])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, _)) = leave else { return Ok(false) };
            self.pivot(r, c);
            *iters += 1;
            if *iters > MAX_ITERS {
                return Err(Error::SolverStall(MAX_ITERS));
            }
        }
    }
}

/// Solves `m x m` system `a x = b` by Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for i in col + 1..n {
            let f = a[i][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[i][k] -= f * a[col][k];
                }
                b[i] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[i][k] * x[k];
        }
        x[i] = s / a[i][i];
    }
    Some(x)
}

pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    let nv = lp.num_vars();
    // gather rows, including upper bounds
    let mut rows: Vec<Vec<f64>> = lp.rows.clone();
    let mut kinds = lp.kinds.clone();
    let mut rhs = lp.rhs.clone();
    for (j, ub) in lp.upper.iter().enumerate() {
        if let Some(u) = ub {
            let mut r = vec![0.0; nv];
            r[j] = 1.0;
            rows.push(r);
            kinds.push(RowKind::Le);
            rhs.push(*u);
        }
    }
    if rows
        .iter()
        .flatten()
        .chain(&rhs)
        .chain(&lp.objective)
        .any(|v| !v.is_finite())
    {
        return Err(Error::InvalidConfig("linear program has non-finite data".into()));
    }
    let m = rows.len();
    let mut flipped = vec![false; m];
    for i in 0..m {
        if rhs[i] < 0.0 {
            flipped[i] = true;
            rhs[i] = -rhs[i];
            for v in rows[i].iter_mut() {
                *v = -*v;
            }
            kinds[i] = match kinds[i] {
                RowKind::Le => RowKind::Ge,
                RowKind::Ge => RowKind::Le,
                RowKind::Eq => RowKind::Eq,
            };
        }
    }
    // column layout: structural | slack/surplus | artificial
    let n_slack = kinds.iter().filter(|k| **k != RowKind::Eq).count();
    let n_art = kinds.iter().filter(|k| **k != RowKind::Le).count();
    let cols = nv + n_slack + n_art;
    let mut a = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0usize; m];
    // identity column of each row (slack for <=, artificial otherwise)
    let mut unit_col = vec![0usize; m];
    let mut is_art = vec![false; cols];
    let (mut s_idx, mut a_idx) = (nv, nv + n_slack);
    for i in 0..m {
        a[i][..nv].copy_from_slice(&rows[i]);
        a[i][cols] = rhs[i];
        match kinds[i] {
            RowKind::Le => {
                a[i][s_idx] = 1.0;
                basis[i] = s_idx;
                unit_col[i] = s_idx;
                s_idx += 1;
            }
            RowKind::Ge => {
                a[i][s_idx] = -1.0;
                s_idx += 1;
                a[i][a_idx] = 1.0;
                basis[i] = a_idx;
                unit_col[i] = a_idx;
                is_art[a_idx] = true;
                a_idx += 1;
            }
            RowKind::Eq => {
                a[i][a_idx] = 1.0;
                basis[i] = a_idx;
                unit_col[i] = a_idx;
                is_art[a_idx] = true;
                a_idx += 1;
            }
        }
    }
    let mut tab = Tableau { a, basis, cols };
    let mut iters = 0usize;

    if n_art > 0 {
        let cost1: Vec<f64> = (0..cols).map(|j| if is_art[j] { -1.0 } else { 0.0 }).collect();
        let allowed = vec![true; cols];
        tab.optimize(&cost1, &allowed, &mut iters)?;
        let infeas: f64 = tab
            .basis
            .iter()
            .enumerate()
            .filter(|(_, &b)| is_art[b])
            .map(|(i, _)| tab.a[i][cols])
            .sum();
        let scale = 1.0 + rhs.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
        if infeas > 1e-9 * scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: vec![0.0; nv],
                objective: f64::NAN,
                duals: vec![0.0; lp.rows.len()],
                iterations: iters,
            });
        }
        // drive zero-level artificials out of the basis where possible
        for i in 0..m {
            if is_art[tab.basis[i]] {
                if let Some(c) = (0..cols).find(|&j| !is_art[j] && tab.a[i][j].abs() > 1e-9) {
                    tab.pivot(i, c);
                }
            }
        }
    }

    let mut cost2 = vec![0.0; cols];
    cost2[..nv].copy_from_slice(&lp.objective);
    let allowed: Vec<bool> = (0..cols).map(|j| !is_art[j]).collect();
    if !tab.optimize(&cost2, &allowed, &mut iters)? {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: vec![0.0; nv],
            objective: f64::INFINITY,
            duals: vec![0.0; lp.rows.len()],
            iterations: iters,
        });
    }

    // Recompute basic values and duals from the original (flipped) data.
    let column = |j: usize| -> Vec<f64> {
        if j < nv {
            (0..m).map(|i| rows[i][j]).collect()
        } else {
            (0..m).map(|i| tab_col_orig(&kinds, j, i, nv, n_slack)).collect()
        }
    };
    let bmat: Vec<Vec<f64>> = {
        let cols_b: Vec<Vec<f64>> = tab.basis.iter().map(|&j| column(j)).collect();
        (0..m).map(|i| cols_b.iter().map(|c| c[i]).collect()).collect()
    };
    let mut x_full = vec![0.0; cols];
    let mut y = vec![0.0; m];
    let refined = dense_solve(bmat.clone(), rhs.clone()).and_then(|xb| {
        let bt: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|k| bmat[k][i]).collect()).collect();
        let cb: Vec<f64> = tab.basis.iter().map(|&j| cost2[j]).collect();
        dense_solve(bt, cb).map(|yy| (xb, yy))
    });
    match refined {
        Some((xb, yy)) => {
            for (i, &b) in tab.basis.iter().enumerate() {
                x_full[b] = xb[i].max(0.0);
            }
            y = yy;
        }
        None => {
            // singular basis (redundant rows): fall back to tableau values
            for (i, &b) in tab.basis.iter().enumerate() {
                x_full[b] = tab.a[i][cols].max(0.0);
            }
            for i in 0..m {
                let j = unit_col[i];
                let mut r = cost2[j];
                for (k, row) in tab.a.iter().enumerate() {
                    r -= cost2[tab.basis[k]] * row[j];
                }
                y[i] = -r;
            }
        }
    }
    let x: Vec<f64> = x_full[..nv].to_vec();
    let objective = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
    let duals = (0..lp.rows.len())
        .map(|i| if flipped[i] { -y[i] } else { y[i] })
        .collect();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        duals,
        iterations: iters,
    })
}

/// Entry of a slack/surplus/artificial column `j` in row `i` of the initial tableau.
fn tab_col_orig(kinds: &[RowKind], j: usize, i: usize, nv: usize, n_slack: usize) -> f64 {
    let mut s_idx = nv;
    let mut a_idx = nv + n_slack;
    for (r, k) in kinds.iter().enumerate() {
        match k {
            RowKind::Le => {
                if s_idx == j {
                    return if r == i { 1.0 } else { 0.0 };
                }
                s_idx += 1;
            }
            RowKind::Ge => {
                if s_idx == j {
                    return if r == i { -1.0 } else { 0.0 };
                }
                s_idx += 1;
                if a_idx == j {
                    return if r == i { 1.0 } else { 0.0 };
                }
                a_idx += 1;
            }
            RowKind::Eq => {
                if a_idx == j {
                    return if r == i { 1.0 } else { 0.0 };
                }
                a_idx += 1;
            }
        }
    }
    0.0
}
