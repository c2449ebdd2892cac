//! Transmit power policies: branch probabilities, outage bounds, the per-round Lagrangian
//! optimizer and the reference rules.

mod policy;
mod probs;
mod solver;

pub use policy::{constant_policy, PolicyScheme, PowerPolicy};
pub use probs::{approx_branch_probs, branch_split, default_power_grid, outage_bound, BranchRow, BranchTable};
pub use solver::{allocate_round, appendix_b_policy, expected_round_power, solve_eq28, Allocation, RoundBranch};
