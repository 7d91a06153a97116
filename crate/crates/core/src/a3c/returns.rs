use std::sync::Arc;

use super::A3cError;
use crate::nn::{ForwardCache, Scalar};

/// One decision of one agent. The cache holds the observation, the goal
/// mask and the policy/value outputs used to act.
#[derive(Clone, Debug)]
pub struct RolloutStep<S = f32> {
    pub cache: Arc<ForwardCache<S>>,
    pub action: usize,
    /// Environment reward plus goal bonus.
    pub reward: f64,
    pub value: f64,
}

impl<S: Scalar> RolloutStep<S> {
    pub fn probs(&self) -> &[S] {
        &self.cache.probs
    }
}

/// Up to `t_max` consecutive steps of one agent.
#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer<S = f32> {
    pub steps: Vec<RolloutStep<S>>,
    /// Value estimate of the state after the last step; unused when terminal.
    pub bootstrap: f64,
    pub terminal: bool,
}

impl<S: Scalar> RolloutBuffer<S> {
    pub fn new() -> Self {
        RolloutBuffer {
            steps: Vec::new(),
            bootstrap: 0.0,
            terminal: false,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn clear(&mut self) {
        self.steps.clear();
        self.bootstrap = 0.0;
        self.terminal = false;
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.value).collect()
    }
}

/// `R_t = r_t + γ R_{t+1}`, seeded with 0 on terminal and `bootstrap`
/// otherwise.
pub fn discounted_returns(rewards: &[f64], bootstrap: f64, terminal: bool, gamma: f64) -> Result<Vec<f64>, A3cError> {
    if rewards.is_empty() {
        return Err(A3cError::EmptyBuffer);
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = if terminal { 0.0 } else { bootstrap };
    for (o, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    Ok(out)
}

/// Returns and advantages `A_t = R_t − V(s_t)`.
pub fn compute_returns<S: Scalar>(buffer: &RolloutBuffer<S>, gamma: f64) -> Result<(Vec<f64>, Vec<f64>), A3cError> {
    let returns = discounted_returns(&buffer.rewards(), buffer.bootstrap, buffer.terminal, gamma)?;
    let adv = returns.iter().zip(&buffer.steps).map(|(r, s)| r - s.value).collect();
    Ok((returns, adv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn terminal_recursion() {
        let r = discounted_returns(&[0.0, 0.0, 10.0], 123.0, true, 0.99).unwrap();
        assert!(close(&r, &[9.801, 9.9, 10.0]));
    }

    #[test]
    fn bootstrapped_recursion() {
        let r = discounted_returns(&[1.0], 5.0, false, 0.5).unwrap();
        assert!(close(&r, &[3.5]));
    }

    #[test]
    fn zero_gamma_gives_rewards() {
        let rewards = [1.0, -2.0, 3.0];
        assert!(close(&discounted_returns(&rewards, 9.0, false, 0.0).unwrap(), &rewards));
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(discounted_returns(&[], 0.0, true, 0.9), Err(A3cError::EmptyBuffer)));
    }
}
