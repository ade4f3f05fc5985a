//! Reward-modulated STDP on sign-split synapse row pairs.

use rand::Rng;
use rand_distr::Normal;

use super::{PlasticityContext, PlasticityKernel, PpuError};
use crate::synarray::{RowSign, SynapseArray, MAX_WEIGHT};

const W_CLIP: f64 = MAX_WEIGHT as f64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RstdpParams {
    pub gamma: f64,
    pub eta: f64,
    pub xi_sigma: f64,
}

/// One logical input realized by an excitatory and an inhibitory row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowPair {
    pub excitatory: usize,
    pub inhibitory: usize,
}

/// Learner state held in PPU memory. Signed weights are stored input-major:
/// the weights of input `j` onto all neurons form one contiguous row.
#[derive(Debug, Clone, PartialEq)]
pub struct RstdpState {
    pub expected_reward: Vec<f64>,
    pub gamma: f64,
    pub eta: f64,
    pub xi_sigma: f64,
    n_neurons: usize,
    n_inputs: usize,
    weights: Vec<f64>,
}

impl RstdpState {
    pub fn new(n_neurons: usize, n_inputs: usize, params: RstdpParams) -> Result<Self, PpuError> {
        if !(params.gamma > 0.0 && params.gamma <= 1.0) {
            return Err(PpuError::Config(format!(
                "gamma must be in (0, 1], got {}",
                params.gamma
            )));
        }
        if !params.eta.is_finite() || !(params.xi_sigma >= 0.0 && params.xi_sigma.is_finite()) {
            return Err(PpuError::Config(
                "eta must be finite and xi_sigma >= 0".into(),
            ));
        }
        Ok(Self {
            expected_reward: vec![0.0; n_neurons],
            gamma: params.gamma,
            eta: params.eta,
            xi_sigma: params.xi_sigma,
            n_neurons,
            n_inputs,
            weights: vec![0.0; n_neurons * n_inputs],
        })
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    /// Signed weight of input `j` onto neuron `i`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[j * self.n_neurons + i]
    }

    pub fn set_weight(&mut self, i: usize, j: usize, w: f64) {
        self.weights[j * self.n_neurons + i] = w.clamp(-W_CLIP, W_CLIP);
    }

    /// Input-major signed weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn update_expected_reward(&mut self, rewards: &[f64]) {
        debug_assert_eq!(rewards.len(), self.n_neurons);
        for (e, r) in self.expected_reward.iter_mut().zip(rewards) {
            *e += self.gamma * (r - *e);
        }
    }

    /// One exploration sample per synapse, in storage order.
    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        if self.xi_sigma == 0.0 {
            return vec![0.0; self.weights.len()];
        }
        let normal = Normal::new(0.0, self.xi_sigma).expect("sigma validated");
        (0..self.weights.len())
            .map(|_| rng.sample(normal))
            .collect()
    }

    /// Applies the weight change with the current expected reward as the
    /// baseline, clips, then advances the expected reward. `traces` and
    /// `noise` are input-major like the weights.
    pub fn apply_update(&mut self, traces: &[f64], rewards: &[f64], noise: &[f64]) {
        let n = self.n_neurons;
        assert_eq!(traces.len(), self.weights.len());
        assert_eq!(noise.len(), self.weights.len());
        assert_eq!(rewards.len(), n);
        let gain: Vec<f64> = rewards
            .iter()
            .zip(&self.expected_reward)
            .map(|(r, e)| self.eta * (r - e))
            .collect();
        for ((w_row, e_row), xi_row) in self
            .weights
            .chunks_exact_mut(n)
            .zip(traces.chunks_exact(n))
            .zip(noise.chunks_exact(n))
        {
            for i in 0..n {
                w_row[i] = (w_row[i] + gain[i] * e_row[i] + xi_row[i]).clamp(-W_CLIP, W_CLIP);
            }
        }
        self.update_expected_reward(rewards);
    }

    pub fn rstdp_weight_update<R: Rng + ?Sized>(
        &mut self,
        traces: &[f64],
        rewards: &[f64],
        rng: &mut R,
    ) {
        let noise = self.draw_noise(rng);
        self.apply_update(traces, rewards, &noise);
    }

    /// Checks that `pairs` assigns one excitatory and one inhibitory row of
    /// `array` to every input.
    pub fn validate_pairs(&self, array: &SynapseArray, pairs: &[RowPair]) -> Result<(), PpuError> {
        if pairs.len() != self.n_inputs {
            return Err(PpuError::Config(format!(
                "{} row pairs for {} inputs",
                pairs.len(),
                self.n_inputs
            )));
        }
        if array.cols() < self.n_neurons {
            return Err(PpuError::Config(format!(
                "array has {} columns for {} neurons",
                array.cols(),
                self.n_neurons
            )));
        }
        let mut seen = vec![false; array.rows()];
        for (j, p) in pairs.iter().enumerate() {
            for (row, want) in [
                (p.excitatory, RowSign::Excitatory),
                (p.inhibitory, RowSign::Inhibitory),
            ] {
                if array.row_sign(row)? != want {
                    return Err(PpuError::Config(format!(
                        "input {j}: row {row} is not {want:?}"
                    )));
                }
                if std::mem::replace(&mut seen[row], true) {
                    return Err(PpuError::Config(format!("row {row} is paired twice")));
                }
            }
        }
        Ok(())
    }

    /// Quantizes the signed weights and writes each magnitude to the row
    /// carrying its sign; the partner synapse is cleared.
    pub fn write_signed_weights(
        &self,
        array: &mut SynapseArray,
        pairs: &[RowPair],
    ) -> Result<(), PpuError> {
        self.validate_pairs(array, pairs)?;
        for (j, p) in pairs.iter().enumerate() {
            for i in 0..self.n_neurons {
                let w = self.weight(i, j);
                let q = w.abs().round().min(W_CLIP) as u32;
                let (exc, inh) = if w >= 0.0 { (q, 0) } else { (0, q) };
                array.set_weight(p.excitatory, i, exc)?;
                array.set_weight(p.inhibitory, i, inh)?;
            }
        }
        Ok(())
    }
}

/// Supplies per-neuron rewards for a kernel invocation given which neurons
/// fired since the previous one.
pub trait RewardSource {
    fn rewards(&mut self, invocation: u64, fired: &[bool]) -> Vec<f64>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RstdpLog {
    pub invocation: Vec<u64>,
    /// Expected reward after the update.
    pub expected_reward: Vec<Vec<f64>>,
    pub rewards: Vec<Vec<f64>>,
    /// Signed weights after the update, input-major.
    pub weights: Vec<Vec<f64>>,
    /// Row pairs with two nonzero weights, checked after every write.
    pub dale_violations: u64,
}

pub struct RstdpKernel<S: RewardSource> {
    pub state: RstdpState,
    pub pairs: Vec<RowPair>,
    pub reward: S,
    /// Record after every `log_every` invocations; 0 disables logging.
    pub log_every: u64,
    pub log: RstdpLog,
}

impl<S: RewardSource> RstdpKernel<S> {
    pub fn new(state: RstdpState, pairs: Vec<RowPair>, reward: S, log_every: u64) -> Self {
        Self {
            state,
            pairs,
            reward,
            log_every,
            log: RstdpLog::default(),
        }
    }
}

impl<S: RewardSource> PlasticityKernel for RstdpKernel<S> {
    fn invoke(&mut self, ctx: &mut PlasticityContext<'_>) -> Result<(), PpuError> {
        let n = self.state.n_neurons;
        let counts = ctx.spike_counts();
        let fired: Vec<bool> = counts[..n].iter().map(|&c| c > 0).collect();
        let rewards = self.reward.rewards(ctx.invocation(), &fired);

        let params = *ctx.synapses().params();
        let mut traces = Vec::with_capacity(self.state.weights.len());
        for p in &self.pairs {
            let codes = ctx.cadc_read(p.excitatory)?;
            ctx.cadc_read(p.inhibitory)?;
            traces.extend(codes[..n].iter().map(|&c| params.code_to_trace(c)));
        }

        self.state.rstdp_weight_update(&traces, &rewards, ctx.rng());
        self.state
            .write_signed_weights(ctx.synapses_mut(), &self.pairs)?;

        let array = ctx.synapses();
        for p in &self.pairs {
            for i in 0..n {
                if array.weight(p.excitatory, i)? != 0 && array.weight(p.inhibitory, i)? != 0 {
                    self.log.dale_violations += 1;
                }
            }
        }
        ctx.reset_spike_counts();

        if self.log_every > 0 && (ctx.invocation() + 1).is_multiple_of(self.log_every) {
            self.log.invocation.push(ctx.invocation());
            self.log
                .expected_reward
                .push(self.state.expected_reward.clone());
            self.log.rewards.push(rewards);
            self.log.weights.push(self.state.weights.clone());
        }
        Ok(())
    }
}
