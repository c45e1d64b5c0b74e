use super::RewardError;

pub const DEFAULT_ADVANTAGE_EPSILON: f64 = 1e-8;

/// Group-relative advantages `(r - mean) / (std + epsilon)` using the
/// population standard deviation. A group of identical rewards has no signal
/// and maps to all zeros.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(RewardError::NonFiniteReward);
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + epsilon;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}
