//! Langevin kernels (MALA, ULA) with acceptance-driven step adaptation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{fill_standard_normal, StreamRng};
use crate::targets::LogDensity;

/// Geometric step-size controller, applied after every MALA proposal (see
/// [`adapt_step_prob`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepController {
    pub target_rate: f64,
    pub adjust_factor: f64,
}

impl Default for StepController {
    fn default() -> Self {
        StepController {
            target_rate: 0.75,
            adjust_factor: 1.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub position: Vec<f64>,
    pub step_size: f64,
    pub rng: StreamRng,
    pub accepts: u64,
    pub proposals: u64,
    /// Proposals rejected because the density or gradient was not finite.
    pub non_finite: u64,
    /// Sum of MH acceptance probabilities, for the mean acceptance rate.
    pub accept_prob_sum: f64,
    log_density: f64,
    grad: Vec<f64>,
    cached: bool,
}

impl ChainState {
    pub fn new(position: Vec<f64>, step_size: f64, rng: StreamRng) -> Self {
        assert!(step_size > 0.0, "step size must be positive");
        let d = position.len();
        ChainState {
            position,
            step_size,
            rng,
            accepts: 0,
            proposals: 0,
            non_finite: 0,
            accept_prob_sum: 0.0,
            log_density: f64::NAN,
            grad: vec![0.0; d],
            cached: false,
        }
    }

    /// Moves the chain, invalidating the cached density (the target may
    /// change between uses of a persistent chain, so callers re-point it).
    pub fn invalidate(&mut self) {
        self.cached = false;
    }

    pub fn reset_counters(&mut self) {
        self.accepts = 0;
        self.proposals = 0;
        self.non_finite = 0;
        self.accept_prob_sum = 0.0;
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepts as f64 / self.proposals as f64
        }
    }

    pub fn mean_accept_prob(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accept_prob_sum / self.proposals as f64
        }
    }

    fn refresh<T: LogDensity + ?Sized>(&mut self, target: &T) {
        if !self.cached {
            self.log_density = target.log_density_and_grad(&self.position, &mut self.grad);
            self.cached = true;
        }
    }

    pub fn current_log_density<T: LogDensity + ?Sized>(&mut self, target: &T) -> f64 {
        self.refresh(target);
        self.log_density
    }
}

/// Outcome of one MALA transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MalaOutcome {
    pub accepted: bool,
    /// `min(1, MH ratio)`; zero for non-finite proposals.
    pub accept_prob: f64,
}

fn log_q(to: &[f64], from: &[f64], grad_from: &[f64], step: f64) -> f64 {
    let ss: f64 = to
        .iter()
        .zip(from)
        .zip(grad_from)
        .map(|((t, f), g)| {
            let r = t - f - step * g;
            r * r
        })
        .sum();
    -ss / (4.0 * step)
}

/// MALA transition driven by explicit noise `xi` and uniform `u`.
pub fn mala_step_with<T: LogDensity + ?Sized>(
    target: &T,
    state: &mut ChainState,
    xi: &[f64],
    u: f64,
) -> MalaOutcome {
    state.refresh(target);
    let step = state.step_size;
    let scale = (2.0 * step).sqrt();
    let proposal: Vec<f64> = state
        .position
        .iter()
        .zip(&state.grad)
        .zip(xi)
        .map(|((x, g), z)| x + step * g + scale * z)
        .collect();
    let mut grad_y = vec![0.0; proposal.len()];
    let lp_y = target.log_density_and_grad(&proposal, &mut grad_y);
    state.proposals += 1;
    let finite = lp_y.is_finite() && grad_y.iter().all(|g| g.is_finite()) && proposal.iter().all(|v| v.is_finite());
    if !finite {
        state.non_finite += 1;
        return MalaOutcome {
            accepted: false,
            accept_prob: 0.0,
        };
    }
    let log_ratio = lp_y - state.log_density + log_q(&state.position, &proposal, &grad_y, step)
        - log_q(&proposal, &state.position, &state.grad, step);
    let accept_prob = if log_ratio >= 0.0 { 1.0 } else { log_ratio.exp() };
    state.accept_prob_sum += accept_prob;
    let accepted = u < accept_prob;
    if accepted {
        state.position = proposal;
        state.grad = grad_y;
        state.log_density = lp_y;
        state.accepts += 1;
    }
    MalaOutcome {
        accepted,
        accept_prob,
    }
}

pub fn mala_step<T: LogDensity + ?Sized>(target: &T, state: &mut ChainState) -> MalaOutcome {
    let mut xi = vec![0.0; state.position.len()];
    fill_standard_normal(&mut state.rng, &mut xi);
    let u: f64 = state.rng.random();
    mala_step_with(target, state, &xi, u)
}

/// ULA transition with explicit noise.
pub fn ula_step_with<T: LogDensity + ?Sized>(target: &T, state: &mut ChainState, xi: &[f64]) {
    state.refresh(target);
    let step = state.step_size;
    let scale = (2.0 * step).sqrt();
    for ((x, g), z) in state.position.iter_mut().zip(&state.grad).zip(xi) {
        *x += step * g + scale * z;
    }
    state.cached = false;
}

pub fn ula_step<T: LogDensity + ?Sized>(target: &T, state: &mut ChainState) {
    let mut xi = vec![0.0; state.position.len()];
    fill_standard_normal(&mut state.rng, &mut xi);
    ula_step_with(target, state, &xi);
}

/// Multiplies the step by the controller factor when `above_target`,
/// divides otherwise.
pub fn adapt_step(controller: &StepController, state: &mut ChainState, above_target: bool) {
    if above_target {
        state.step_size *= controller.adjust_factor;
    } else {
        state.step_size /= controller.adjust_factor;
    }
}

/// Geometric update driven by the MH acceptance probability `a`: the step is
/// multiplied by `adjust_factor^((a - r) / (1 - r))` for target rate `r`, so
/// a certain accept scales it by the factor and the log-step drift vanishes
/// exactly when the mean acceptance probability equals `r`.
pub fn adapt_step_prob(controller: &StepController, state: &mut ChainState, accept_prob: f64) {
    let r = controller.target_rate;
    let a = if accept_prob.is_finite() { accept_prob.clamp(0.0, 1.0) } else { 0.0 };
    state.step_size *= controller.adjust_factor.powf((a - r) / (1.0 - r));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Mala,
    Ula,
}

/// Options of [`run_chain`].
#[derive(Debug, Clone, Copy)]
pub struct ChainOptions {
    pub kernel: Kernel,
    pub burn_frac: f64,
    /// `None` keeps the step fixed.
    pub controller: Option<StepController>,
    /// Stop adapting once samples are being retained.
    pub freeze_after_burn: bool,
}

impl Default for ChainOptions {
    fn default() -> Self {
        ChainOptions {
            kernel: Kernel::Mala,
            burn_frac: 0.5,
            controller: Some(StepController::default()),
            freeze_after_burn: false,
        }
    }
}

/// Number of positions kept out of `n_steps` after discarding `burn_frac`.
pub fn retained_count(n_steps: usize, burn_frac: f64) -> usize {
    let r = ((1.0 - burn_frac) * n_steps as f64 - 1e-9).ceil() as usize;
    r.clamp(1, n_steps)
}

/// Advances `state` by `n_steps` and returns the retained tail of positions.
pub fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    state: &mut ChainState,
    n_steps: usize,
    opts: &ChainOptions,
) -> Vec<Vec<f64>> {
    let keep = retained_count(n_steps, opts.burn_frac);
    let mut out = Vec::with_capacity(keep);
    run_chain_with(target, state, n_steps, opts, |_, x| {
        if out.len() < keep {
            out.push(x.to_vec())
        }
    });
    out
}

/// Advances `state` and feeds each retained position to `sink` (with its
/// index among retained positions), avoiding per-step allocation.
pub fn run_chain_with<T: LogDensity + ?Sized, F: FnMut(usize, &[f64])>(
    target: &T,
    state: &mut ChainState,
    n_steps: usize,
    opts: &ChainOptions,
    mut sink: F,
) {
    assert!(n_steps >= 1, "chain needs at least one step");
    assert!((0.0..1.0).contains(&opts.burn_frac), "burn_frac must lie in [0, 1)");
    let keep = retained_count(n_steps, opts.burn_frac);
    let first_kept = n_steps - keep;
    for i in 0..n_steps {
        match opts.kernel {
            Kernel::Mala => {
                let out = mala_step(target, state);
                let frozen = opts.freeze_after_burn && i >= first_kept;
                if let (Some(c), false) = (opts.controller, frozen) {
                    adapt_step_prob(&c, state, out.accept_prob);
                }
            }
            Kernel::Ula => ula_step(target, state),
        }
        if i >= first_kept {
            sink(i - first_kept, &state.position);
        }
    }
}
