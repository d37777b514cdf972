//! SGD-with-momentum and Nesterov optimizers with externally owned momentum
//! buffers, plus step-wise momentum fusion with polynomial staleness
//! weighting.
//!
//! The momentum convention throughout: the buffer accumulates raw gradients
//! (`m <- beta * m_in + g`, no dampening) and the update subtracts
//! `eta * m`. Weight decay enters as an L2 gradient term before the buffer
//! update. All operations are pure; summation order inside `fuse_momentum`
//! is fixed (ascending client id) so results are schedule-independent.

use crate::error::{Error, Result};
use crate::nn::ParamVector;

/// Optimizer family. NAG expects gradients evaluated at the lookahead point
/// `params - eta * beta * buffer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimVariant {
    Sgdm,
    Nag,
}

/// Hyperparameters of a local optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    /// Learning rate for the current round (schedules are applied by the
    /// experiment loop, which hands each round an already-decayed rate).
    pub eta: f64,
    /// Momentum coefficient in `[0, 1)`.
    pub beta: f64,
    /// L2 weight decay, folded into the gradient before the buffer update.
    pub weight_decay: f64,
    /// Per-communication-round multiplicative learning-rate decay in `(0, 1]`.
    pub lr_decay_per_round: f64,
    pub variant: OptimVariant,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            eta: 0.05,
            beta: 0.9,
            weight_decay: 0.0005,
            lr_decay_per_round: 0.998,
            variant: OptimVariant::Sgdm,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::config(format!(
                "optim.eta: learning rate must be > 0, got {}",
                self.eta
            )));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::config(format!(
                "optim.beta: momentum must be in [0, 1), got {}",
                self.beta
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config(format!(
                "optim.weight_decay: must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.lr_decay_per_round > 0.0 && self.lr_decay_per_round <= 1.0) {
            return Err(Error::config(format!(
                "optim.lr_decay_per_round: must be in (0, 1], got {}",
                self.lr_decay_per_round
            )));
        }
        Ok(())
    }

    /// Effective learning rate at communication round `n` (1-based).
    pub fn eta_at_round(&self, round: usize) -> f64 {
        self.eta * self.lr_decay_per_round.powi(round.saturating_sub(1) as i32)
    }
}

/// A momentum buffer, shaped like the submodel it constrains.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumBuffer {
    pub values: ParamVector,
    /// Client id owning this buffer; `None` for a fused buffer.
    pub owner: Option<usize>,
    /// Step index at which the buffer was produced.
    pub step_created: usize,
}

impl MomentumBuffer {
    pub fn zeros_like(shape: &ParamVector, owner: Option<usize>) -> Self {
        MomentumBuffer {
            values: shape.zeros_like(),
            owner,
            step_created: 0,
        }
    }
}

/// A finished client's final momentum buffer plus the step it finished at.
#[derive(Debug, Clone)]
pub struct HistoryEntry {
    pub buffer: MomentumBuffer,
    /// The finished client's local step count `T_j` (1-based step index of
    /// its last step).
    pub finish_step: usize,
}

/// The server's per-round fusion state: the aligned buffer that seeds every
/// server-side update of the next step, plus the history set of finished
/// clients' final buffers. Reset at round start (aligned buffer zero,
/// history empty).
#[derive(Debug, Clone)]
pub struct FusionState {
    pub aligned: MomentumBuffer,
    pub history: Vec<HistoryEntry>,
}

impl FusionState {
    pub fn new(server_shape: &ParamVector) -> Self {
        FusionState {
            aligned: MomentumBuffer::zeros_like(server_shape, None),
            history: Vec::new(),
        }
    }

    /// Records a finished client's final buffer; called once per client, at
    /// its last step.
    pub fn record_finished(&mut self, buffer: MomentumBuffer, finish_step: usize) {
        self.history.push(HistoryEntry {
            buffer,
            finish_step,
        });
    }

    /// Replaces the aligned buffer with the fusion of `active` and the
    /// recorded history at step `tau`.
    pub fn fuse(&mut self, active: &[MomentumBuffer], tau: usize, alpha: f64) -> Result<()> {
        self.aligned = fuse_momentum(active, &self.history, tau, alpha)?;
        Ok(())
    }
}

fn effective_grads(params: &ParamVector, grads: &ParamVector, cfg: &OptimConfig) -> Result<ParamVector> {
    if cfg.weight_decay == 0.0 {
        Ok(grads.clone())
    } else {
        grads.add_scaled(params, cfg.weight_decay)
    }
}

/// One SGDM step: `m_out = beta * m_in + (g + wd * params)`,
/// `params_out = params - eta * m_out`. Inputs are unmodified.
pub fn sgdm_step(
    params: &ParamVector,
    grads: &ParamVector,
    buffer_in: &MomentumBuffer,
    cfg: &OptimConfig,
) -> Result<(ParamVector, MomentumBuffer)> {
    if !params.same_shape(grads) || !params.same_shape(&buffer_in.values) {
        return Err(Error::usage("sgdm_step: params, grads, buffer shapes differ"));
    }
    let g = effective_grads(params, grads, cfg)?;
    // m <- beta * m_in + g, evaluated in exactly that order per element
    let mut values = buffer_in.values.clone();
    for (v, gi) in values.values_mut().iter_mut().zip(g.values()) {
        *v = cfg.beta * *v + gi;
    }
    let params_out = params.add_scaled(&values, -cfg.eta)?;
    Ok((
        params_out,
        MomentumBuffer {
            values,
            owner: buffer_in.owner,
            step_created: buffer_in.step_created + 1,
        },
    ))
}

/// One SGDM step seeded from a fused (aligned) buffer instead of the
/// client's own: `m_out = beta * m_aligned + g`. Shape contract and output
/// are identical to `sgdm_step`.
pub fn aligned_sgdm_step(
    params: &ParamVector,
    grads: &ParamVector,
    aligned_buffer: &MomentumBuffer,
    cfg: &OptimConfig,
) -> Result<(ParamVector, MomentumBuffer)> {
    sgdm_step(params, grads, aligned_buffer, cfg)
}

/// The lookahead point `params - eta * beta * buffer` at which NAG gradients
/// must be evaluated.
pub fn nag_lookahead(
    params: &ParamVector,
    buffer: &MomentumBuffer,
    cfg: &OptimConfig,
) -> Result<ParamVector> {
    params.add_scaled(&buffer.values, -cfg.eta * cfg.beta)
}

/// One Nesterov step. `grads_at_lookahead` must have been evaluated at
/// `nag_lookahead(params, buffer_in, cfg)`. Buffer contract matches
/// `sgdm_step`, so NAG buffers fuse via `fuse_momentum` identically.
pub fn nag_step(
    params: &ParamVector,
    grads_at_lookahead: &ParamVector,
    buffer_in: &MomentumBuffer,
    cfg: &OptimConfig,
) -> Result<(ParamVector, MomentumBuffer)> {
    sgdm_step(params, grads_at_lookahead, buffer_in, cfg)
}

/// Polynomial staleness weight `(tau - finish_step + 1)^alpha` for a client
/// that finished at `finish_step`, consulted at step `tau >= finish_step`.
/// Equals exactly 1 at the finish step and decays as `tau` grows (`alpha < 0`).
pub fn staleness(tau: usize, finish_step: usize, alpha: f64) -> Result<f64> {
    if alpha >= 0.0 {
        return Err(Error::usage(format!(
            "staleness exponent must be negative, got {alpha}"
        )));
    }
    if tau < finish_step {
        return Err(Error::usage(format!(
            "staleness consulted at step {tau} before the client finished at {finish_step}"
        )));
    }
    Ok(((tau - finish_step + 1) as f64).powf(alpha))
}

/// Fuses the momentum buffers of all server-side optimizers at step `tau`:
/// active buffers weigh 1, historical buffers weigh their staleness, and the
/// sum is divided by the total contributor count. Summation runs in
/// ascending owner id (active first, then history), so the result does not
/// depend on scheduling.
pub fn fuse_momentum(
    active: &[MomentumBuffer],
    history: &[HistoryEntry],
    tau: usize,
    alpha: f64,
) -> Result<MomentumBuffer> {
    if active.is_empty() && history.is_empty() {
        return Err(Error::usage("fuse_momentum: no buffers to fuse"));
    }
    let shape = match active.first() {
        Some(b) => &b.values,
        None => &history[0].buffer.values,
    };
    let mut sum = shape.zeros_like();

    let mut active_sorted: Vec<&MomentumBuffer> = active.iter().collect();
    active_sorted.sort_by_key(|b| b.owner);
    for b in active_sorted {
        sum.add_scaled_assign(&b.values, 1.0)
            .map_err(|_| Error::usage("fuse_momentum: active buffer shape mismatch"))?;
    }

    let mut history_sorted: Vec<&HistoryEntry> = history.iter().collect();
    history_sorted.sort_by_key(|h| h.buffer.owner);
    for h in history_sorted {
        let w = staleness(tau, h.finish_step, alpha)?;
        sum.add_scaled_assign(&h.buffer.values, w)
            .map_err(|_| Error::usage("fuse_momentum: history buffer shape mismatch"))?;
    }

    let count = (active.len() + history.len()) as f64;
    sum.scale_assign(1.0 / count);
    Ok(MomentumBuffer {
        values: sum,
        owner: None,
        step_created: tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::new(values.to_vec(), vec![0, values.len()]).unwrap()
    }

    fn buf(values: &[f64], owner: usize) -> MomentumBuffer {
        MomentumBuffer {
            values: pv(values),
            owner: Some(owner),
            step_created: 0,
        }
    }

    fn cfg(eta: f64, beta: f64) -> OptimConfig {
        OptimConfig {
            eta,
            beta,
            weight_decay: 0.0,
            lr_decay_per_round: 1.0,
            variant: OptimVariant::Sgdm,
        }
    }

    #[test]
    fn sgdm_zero_buffer_case() {
        let (w, m) = sgdm_step(&pv(&[0.0, 0.0]), &pv(&[1.0, 2.0]), &buf(&[0.0, 0.0], 0), &cfg(0.1, 0.9)).unwrap();
        assert_eq!(m.values.values(), &[1.0, 2.0]);
        assert_eq!(w.values(), &[-0.1, -0.2]);
        assert_eq!(m.step_created, 1);
    }

    #[test]
    fn sgdm_pure_momentum_coast() {
        let (_, m) = sgdm_step(&pv(&[1.0]), &pv(&[0.0]), &buf(&[2.0], 0), &cfg(0.1, 0.9)).unwrap();
        assert_eq!(m.values.values(), &[0.9 * 2.0]);
    }

    #[test]
    fn sgdm_two_steps_constant_grad() {
        let c = cfg(0.05, 0.9);
        let g = pv(&[3.0]);
        let (w1, m1) = sgdm_step(&pv(&[0.0]), &g, &buf(&[0.0], 0), &c).unwrap();
        let (_, m2) = sgdm_step(&w1, &g, &m1, &c).unwrap();
        // unrolled by hand: m2 = beta * g + g = (1 + beta) g
        assert_eq!(m2.values.values(), &[0.9 * 3.0 + 3.0]);
        assert!((m2.values.values()[0] - (1.0 + 0.9) * 3.0).abs() < 1e-12);
        assert_eq!(m2.step_created, 2);
    }

    #[test]
    fn sgdm_rejects_shape_mismatch() {
        let err = sgdm_step(&pv(&[0.0]), &pv(&[1.0, 2.0]), &buf(&[0.0], 0), &cfg(0.1, 0.9));
        assert!(err.is_err());
    }

    #[test]
    fn weight_decay_enters_gradient() {
        let mut c = cfg(0.1, 0.0);
        c.weight_decay = 0.5;
        let (w, m) = sgdm_step(&pv(&[2.0]), &pv(&[1.0]), &buf(&[0.0], 0), &c).unwrap();
        assert_eq!(m.values.values(), &[1.0 + 0.5 * 2.0]);
        assert_eq!(w.values(), &[2.0 - 0.1 * 2.0]);
    }

    #[test]
    fn aligned_step_examples() {
        // aligned buffer identical to own previous buffer -> same as sgdm_step
        let c = cfg(0.1, 0.9);
        let own = buf(&[0.4, -0.2], 3);
        let (w_a, m_a) = aligned_sgdm_step(&pv(&[1.0, 1.0]), &pv(&[0.3, 0.7]), &own, &c).unwrap();
        let (w_b, m_b) = sgdm_step(&pv(&[1.0, 1.0]), &pv(&[0.3, 0.7]), &own, &c).unwrap();
        assert_eq!(w_a, w_b);
        assert_eq!(m_a.values, m_b.values);

        // zero aligned buffer -> plain SGD step
        let (w, _) = aligned_sgdm_step(&pv(&[0.0]), &pv(&[2.0]), &buf(&[0.0], 0), &cfg(0.25, 0.9)).unwrap();
        assert_eq!(w.values(), &[-0.5]);

        // direct evaluation
        let (_, m) = aligned_sgdm_step(&pv(&[0.0, 0.0]), &pv(&[0.0, 1.0]), &buf(&[1.0, 0.0], 0), &cfg(1.0, 0.5)).unwrap();
        assert_eq!(m.values.values(), &[0.5, 1.0]);
    }

    #[test]
    fn staleness_values_and_errors() {
        assert_eq!(staleness(3, 3, -0.5).unwrap(), 1.0);
        assert_eq!(staleness(4, 3, -1.0).unwrap(), 0.5);
        // frozen from direct evaluation of (4)^(-0.1)
        let s = staleness(6, 3, -0.1).unwrap();
        assert!((s - 0.8705505632961241).abs() < 1e-15);
        assert!(staleness(2, 3, -1.0).is_err());
        assert!(staleness(3, 3, 0.1).is_err());
    }

    #[test]
    fn staleness_is_monotone_in_tau() {
        let mut prev = staleness(5, 5, -0.3).unwrap();
        assert_eq!(prev, 1.0);
        for tau in 6..30 {
            let s = staleness(tau, 5, -0.3).unwrap();
            assert!(s < prev);
            prev = s;
        }
    }

    #[test]
    fn fuse_plain_mean_without_history() {
        let fused = fuse_momentum(&[buf(&[1.0, 0.0], 0), buf(&[0.0, 1.0], 1)], &[], 1, -0.1).unwrap();
        assert_eq!(fused.values.values(), &[0.5, 0.5]);
    }

    #[test]
    fn fuse_with_history_hand_example() {
        // ([1,1] + 0.5*[2,2]) / 2 = [1,1]
        let history = vec![HistoryEntry {
            buffer: buf(&[2.0, 2.0], 1),
            finish_step: 3,
        }];
        let fused = fuse_momentum(&[buf(&[1.0, 1.0], 0)], &history, 4, -1.0).unwrap();
        assert_eq!(fused.values.values(), &[1.0, 1.0]);
    }

    #[test]
    fn fuse_single_buffer_is_identity() {
        let fused = fuse_momentum(&[buf(&[0.25, -3.5], 7)], &[], 2, -0.1).unwrap();
        assert_eq!(fused.values.values(), &[0.25, -3.5]);
        assert_eq!(fused.owner, None);
    }

    #[test]
    fn fuse_rejects_empty_and_mismatched() {
        assert!(fuse_momentum(&[], &[], 1, -0.1).is_err());
        let err = fuse_momentum(&[buf(&[1.0], 0), buf(&[1.0, 2.0], 1)], &[], 1, -0.1);
        assert!(err.is_err());
    }

    #[test]
    fn fuse_order_is_by_owner_id() {
        let a = [buf(&[0.1], 2), buf(&[0.2], 0), buf(&[0.3], 1)];
        let b = [buf(&[0.2], 0), buf(&[0.3], 1), buf(&[0.1], 2)];
        let fa = fuse_momentum(&a, &[], 1, -0.1).unwrap();
        let fb = fuse_momentum(&b, &[], 1, -0.1).unwrap();
        assert_eq!(fa.values, fb.values);
    }

    #[test]
    fn nag_degenerate_cases() {
        // zero buffer: lookahead = params, step = plain SGD
        let c = cfg(0.1, 0.9);
        let params = pv(&[1.0]);
        let b = buf(&[0.0], 0);
        let look = nag_lookahead(&params, &b, &c).unwrap();
        assert_eq!(look, params);
        let (w, _) = nag_step(&params, &pv(&[2.0]), &b, &c).unwrap();
        assert_eq!(w.values(), &[1.0 - 0.1 * 2.0]);

        // beta = 0: identical to sgdm with beta = 0
        let c0 = cfg(0.1, 0.0);
        let b1 = buf(&[5.0], 0);
        let (w_nag, m_nag) = nag_step(&params, &pv(&[2.0]), &b1, &c0).unwrap();
        let (w_sgd, m_sgd) = sgdm_step(&params, &pv(&[2.0]), &b1, &c0).unwrap();
        assert_eq!(w_nag, w_sgd);
        assert_eq!(m_nag.values, m_sgd.values);
    }

    #[test]
    fn nag_two_step_unroll_on_quadratic() {
        // f(w) = w^2, grad 2w, eta=0.1, beta=0.9, from w=1.
        // frozen trace: v1=2, w1=0.8, lookahead2=0.62, v2=3.04, w2=0.496
        let c = cfg(0.1, 0.9);
        let mut w = pv(&[1.0]);
        let mut b = buf(&[0.0], 0);
        for _ in 0..2 {
            let look = nag_lookahead(&w, &b, &c).unwrap();
            let g = look.scaled(2.0);
            let (w2, b2) = nag_step(&w, &g, &b, &c).unwrap();
            w = w2;
            b = b2;
        }
        assert!((w.values()[0] - 0.496).abs() < 1e-15);
        assert!((b.values.values()[0] - 3.04).abs() < 1e-15);
    }

    #[test]
    fn eta_schedule_decays_per_round() {
        let c = OptimConfig::default();
        assert_eq!(c.eta_at_round(1), 0.05);
        assert!((c.eta_at_round(2) - 0.05 * 0.998).abs() < 1e-15);
    }
}
