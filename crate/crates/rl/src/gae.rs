//! Generalized advantage estimation over contiguous complete episodes.

/// Returns `(advantages, returns)`. `values[t]` is the behaviour-time state
/// value; the bootstrap value after step `t` is `values[t + 1]` unless
/// `dones[t]`, in which case it is zero.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "gae inputs differ in length");
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (next_value, carry) = if dones[t] || t + 1 == n {
            (0.0, 0.0)
        } else {
            (values[t + 1], running)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * carry;
        advantages[t] = running;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}
