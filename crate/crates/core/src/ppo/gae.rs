use super::Trajectory;
use crate::error::{Error, Result};

/// Generalized advantage estimates and value targets for a trajectory whose
/// only reward arrives at the final step. The state after the last action is
/// terminal and bootstraps to zero.
pub fn compute_gae(traj: &Trajectory, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = traj.actions.len();
    if traj.values.len() != n {
        return Err(Error::LengthMismatch {
            what: "values",
            expected: n,
            actual: traj.values.len(),
        });
    }
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let reward = if t + 1 == n { traj.terminal_reward } else { 0.0 };
        let next_value = if t + 1 == n { 0.0 } else { traj.values[t + 1] };
        let delta = reward + gamma * next_value - traj.values[t];
        running = delta + gamma * lambda * running;
        advantages[t] = running;
    }
    let targets = advantages.iter().zip(&traj.values).map(|(a, v)| a + v).collect();
    Ok((advantages, targets))
}
