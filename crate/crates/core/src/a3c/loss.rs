use std::sync::Arc;

use super::returns::{discounted_returns, RolloutBuffer, RolloutStep};
use super::{A3cError, Hyperparams};
use crate::nn::{
    backward_batch_factored, backward_batch_into, forward, log_softmax, FactoredGrads, ForwardCache, Gradients, NetInput,
    NetworkParams, Objective, Scalar,
};

/// Loss components summed over a rollout.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    /// `Σ −log π(a_t|s_t)·A_t`.
    pub policy: f64,
    /// `Σ c·(R_t − V(s_t))²`.
    pub value: f64,
    /// `Σ H(π(·|s_t))`, before multiplying by β.
    pub entropy: f64,
    pub total: f64,
    pub steps: usize,
}

impl LossTerms {
    pub fn add(&mut self, other: &LossTerms) {
        self.policy += other.policy;
        self.value += other.value;
        self.entropy += other.entropy;
        self.total += other.total;
        self.steps += other.steps;
    }

    pub fn is_finite(&self) -> bool {
        self.policy.is_finite() && self.value.is_finite() && self.entropy.is_finite() && self.total.is_finite()
    }
}

/// Shannon entropy in nats. Zero-probability entries contribute nothing.
pub fn entropy<S: Scalar>(probs: &[S]) -> f64 {
    -probs
        .iter()
        .map(|p| p.as_f64())
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

struct StepLoss<S> {
    terms: LossTerms,
    grad_logits: Vec<S>,
    grad_value: S,
}

fn step_loss<S: Scalar>(logits: &[S], value: S, action: usize, ret: f64, adv: f64, hp: &Hyperparams) -> StepLoss<S> {
    let logp: Vec<f64> = log_softmax(logits).iter().map(|v| v.as_f64()).collect();
    let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let h = -p.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
    let v = value.as_f64();
    let beta = hp.entropy_beta;
    let c = hp.value_loss_coeff;
    let grad_logits = (0..p.len())
        .map(|j| {
            let onehot = if j == action { 1.0 } else { 0.0 };
            S::of(adv * (p[j] - onehot) + beta * p[j] * (logp[j] + h))
        })
        .collect();
    let policy = -logp[action] * adv;
    let value_loss = c * (ret - v) * (ret - v);
    StepLoss {
        terms: LossTerms {
            policy,
            value: value_loss,
            entropy: h,
            total: policy + value_loss - beta * h,
            steps: 1,
        },
        grad_logits,
        grad_value: S::of(-2.0 * c * (ret - v)),
    }
}

/// Adds the gradient of
/// `Σ_t −log π(a_t|s_t)·A_t + c·(R_t − V(s_t))² − β·H(π(·|s_t))`
/// to `grads`, treating advantages and returns as constants. Clipping is
/// left to the caller so several rollouts can share one network update.
pub fn loss_and_grads<S: Scalar>(
    params: &NetworkParams<S>,
    buffer: &RolloutBuffer<S>,
    returns: &[f64],
    advantages: &[f64],
    hp: &Hyperparams,
    grads: &mut Gradients<S>,
) -> Result<LossTerms, A3cError> {
    let (total, upstream) = upstream(buffer, returns, advantages, hp)?;
    backward_batch_into(params, &batch(buffer, &upstream), grads)?;
    Ok(total)
}

/// As [`loss_and_grads`], accumulating into factored gradients.
pub fn loss_and_factored_grads<S: Scalar>(
    params: &NetworkParams<S>,
    buffer: &RolloutBuffer<S>,
    returns: &[f64],
    advantages: &[f64],
    hp: &Hyperparams,
    grads: &mut FactoredGrads<S>,
) -> Result<LossTerms, A3cError> {
    let (total, upstream) = upstream(buffer, returns, advantages, hp)?;
    backward_batch_factored(params, &batch(buffer, &upstream), grads)?;
    Ok(total)
}

type Upstream<S> = Vec<(Vec<S>, S)>;

fn upstream<S: Scalar>(
    buffer: &RolloutBuffer<S>,
    returns: &[f64],
    advantages: &[f64],
    hp: &Hyperparams,
) -> Result<(LossTerms, Upstream<S>), A3cError> {
    if buffer.is_empty() {
        return Err(A3cError::EmptyBuffer);
    }
    for len in [returns.len(), advantages.len()] {
        if len != buffer.len() {
            return Err(A3cError::Misaligned {
                returns: len,
                steps: buffer.len(),
            });
        }
    }
    let mut total = LossTerms::default();
    let mut upstream = Vec::with_capacity(buffer.len());
    for ((step, &ret), &adv) in buffer.steps.iter().zip(returns).zip(advantages) {
        let sl = step_loss(&step.cache.logits, step.cache.value, step.action, ret, adv, hp);
        total.add(&sl.terms);
        upstream.push((sl.grad_logits, sl.grad_value));
    }
    Ok((total, upstream))
}

fn batch<'a, S: Scalar>(buffer: &'a RolloutBuffer<S>, upstream: &'a Upstream<S>) -> Vec<(&'a ForwardCache<S>, &'a [S], S)> {
    buffer
        .steps
        .iter()
        .zip(upstream)
        .map(|(step, (gl, gv))| (&*step.cache, gl.as_slice(), *gv))
        .collect()
}

/// Network input and chosen action for a hand-built rollout.
#[derive(Clone, Debug)]
pub struct SyntheticStep<S> {
    pub state: Vec<S>,
    pub mask: Option<Vec<S>>,
    pub action: usize,
    pub reward: f64,
}

/// The full actor-critic loss as a function of the parameters, with returns
/// and advantages frozen at the parameters it was built from.
pub struct A3cObjective<S> {
    steps: Vec<SyntheticStep<S>>,
    returns: Vec<f64>,
    advantages: Vec<f64>,
    hp: Hyperparams,
}

impl<S: Scalar> A3cObjective<S> {
    pub fn new(
        params: &NetworkParams<S>,
        steps: Vec<SyntheticStep<S>>,
        bootstrap: f64,
        terminal: bool,
        hp: &Hyperparams,
    ) -> Result<Self, A3cError> {
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        let returns = discounted_returns(&rewards, bootstrap, terminal, hp.gamma)?;
        let mut advantages = Vec::with_capacity(steps.len());
        for (s, r) in steps.iter().zip(&returns) {
            let (out, _) = forward(params, Self::input(s))?;
            advantages.push(r - out.value.as_f64());
        }
        Ok(A3cObjective {
            steps,
            returns,
            advantages,
            hp: hp.clone(),
        })
    }

    fn input(s: &SyntheticStep<S>) -> NetInput<'_, S> {
        NetInput {
            state: &s.state,
            mask: s.mask.as_deref(),
        }
    }

    fn caches(&self, params: &NetworkParams<S>) -> RolloutBuffer<S> {
        let steps = self
            .steps
            .iter()
            .map(|s| {
                let (out, cache): (_, ForwardCache<S>) = forward(params, Self::input(s)).expect("synthetic input matches the network");
                RolloutStep {
                    cache: Arc::new(cache),
                    action: s.action,
                    reward: s.reward,
                    value: out.value.as_f64(),
                }
            })
            .collect();
        RolloutBuffer {
            steps,
            bootstrap: 0.0,
            terminal: true,
        }
    }

    pub fn terms(&self, params: &NetworkParams<S>) -> LossTerms {
        let mut total = LossTerms::default();
        for ((s, &ret), &adv) in self.steps.iter().zip(&self.returns).zip(&self.advantages) {
            let (out, _) = forward(params, Self::input(s)).expect("synthetic input matches the network");
            total.add(&step_loss::<S>(&out.logits, out.value, s.action, ret, adv, &self.hp).terms);
        }
        total
    }
}

impl<S: Scalar> Objective<S> for A3cObjective<S> {
    fn loss(&self, params: &NetworkParams<S>) -> f64 {
        self.terms(params).total
    }

    fn gradient(&self, params: &NetworkParams<S>) -> Gradients<S> {
        let buffer = self.caches(params);
        let mut grads = params.zeros_like();
        loss_and_grads(params, &buffer, &self.returns, &self.advantages, &self.hp, &mut grads)
            .expect("buffer built from this objective");
        grads
    }
}
