//! Benchmarks: static planning problems, duals, upper bounds and flow decomposition.

pub mod dp;
pub mod flow;
pub mod lp;
pub mod spp;

pub use dp::{optimal_values, OptimalValues, StateSpace};
pub use flow::{flow_decompose, net_outflow, topological_order, FlowDecomposition, FlowEdge};
pub use lp::{solve_lp, LinearProgram, LpSolution, LpStatus, RowKind};
pub use spp::{
    averaged_spp_gap_check, decompose_solution, eval_dual, eval_dual_supply, payoff_upper_bound,
    solve_spp, solve_spp_jpa, AveragedSppCheck, JpaSolution, SppSolution,
};
