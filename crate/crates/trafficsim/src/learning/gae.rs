//! Factorized value targets and generalized advantage estimation, both
//! computed per agent from per-agent rewards.

/// Discounted return from the rollout start, one scalar per agent.
/// `rewards[t][i]` is agent `i`'s reward at tick `t`.
pub fn compute_value_targets(rewards: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards[0].len();
    let mut targets = vec![0.0; n];
    for (t, row) in rewards.iter().enumerate() {
        let g = gamma.powi(t as i32);
        for (i, r) in row.iter().enumerate() {
            targets[i] += g * r;
        }
    }
    targets
}

/// Standard GAE recursion for one agent:
/// `delta_t = r_t + gamma V_{t+1} - V_t`, `A_t = delta_t + gamma lambda A_{t+1}`.
/// `values` covers ticks `0..=T`; the caller supplies 0 at `T` for terminal
/// infractions and the bootstrap estimate otherwise.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, gae_lambda: f64) -> Vec<f64> {
    let t_len = rewards.len();
    assert_eq!(values.len(), t_len + 1, "values must cover ticks 0..=T");
    let mut adv = vec![0.0; t_len];
    let mut acc = 0.0;
    for t in (0..t_len).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * gae_lambda * acc;
        adv[t] = acc;
    }
    adv
}
