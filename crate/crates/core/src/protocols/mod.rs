//! Round-level state machines for split federated training: SMoFi's
//! step-wise momentum fusion plus the FedAvg, SFLV1, and SFLV2 baselines,
//! with global-momentum aggregation and an optional FedProx proximal term.

mod rounds;

pub use rounds::{
    run_fedavg_round, run_round, run_sflv1_round, run_sflv2_round, run_smofi_round, ClientStepEvent,
    Participant, RoundCtx, RoundOutcome, RoundTrace, StepTrace,
};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{self, Shard};
use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::seeds;

/// Training method for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Smofi,
    Fedavg,
    Sflv1,
    Sflv2,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Smofi => "smofi",
            Method::Fedavg => "fedavg",
            Method::Sflv1 => "sflv1",
            Method::Sflv2 => "sflv2",
        }
    }
}

/// Server-side aggregation period for SFLV1, in local steps. `RoundEnd`
/// defers everything to the ordinary end-of-round aggregation, which makes
/// SFLV1 coincide with FedAvg.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sflv1Period {
    EveryStep,
    /// One aggregation per local epoch, resolved per round as the largest
    /// per-epoch step count in the cohort.
    EveryEpoch,
    RoundEnd,
    Steps(usize),
}

/// Cohort selection mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Each client participates independently with probability theta;
    /// resampled if the draw comes up empty.
    Bernoulli,
    /// Uniform sample of `ceil(theta * |J|)` clients without replacement.
    FixedFraction,
}

/// Round-level hyperparameters shared by all methods.
#[derive(Debug, Clone)]
pub struct RoundConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub selection_rate: f64,
    pub selection_mode: SelectionMode,
    pub staleness_alpha: f64,
    pub global_momentum: f64,
    pub method: Method,
    pub sflv1_period: Sflv1Period,
    pub fedprox_mu: f64,
    /// Carry client-side momentum buffers across rounds instead of resetting
    /// them at round start.
    pub persist_client_momentum: bool,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            rounds: 1,
            local_epochs: 5,
            batch_size: 32,
            selection_rate: 0.2,
            selection_mode: SelectionMode::FixedFraction,
            staleness_alpha: -0.1,
            global_momentum: 0.3,
            method: Method::Smofi,
            sflv1_period: Sflv1Period::RoundEnd,
            fedprox_mu: 0.0,
            persist_client_momentum: false,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::config("rounds.local_epochs: must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("rounds.batch_size: must be >= 1"));
        }
        if !(self.selection_rate > 0.0 && self.selection_rate <= 1.0) {
            return Err(Error::config(format!(
                "rounds.selection_rate: must be in (0, 1], got {}",
                self.selection_rate
            )));
        }
        if self.staleness_alpha >= 0.0 {
            return Err(Error::config(format!(
                "rounds.staleness_alpha: must be < 0, got {}",
                self.staleness_alpha
            )));
        }
        if !(0.0..1.0).contains(&self.global_momentum) {
            return Err(Error::config(format!(
                "rounds.global_momentum: must be in [0, 1), got {}",
                self.global_momentum
            )));
        }
        if self.fedprox_mu < 0.0 {
            return Err(Error::config(format!(
                "rounds.fedprox_mu: must be >= 0, got {}",
                self.fedprox_mu
            )));
        }
        if let Sflv1Period::Steps(0) = self.sflv1_period {
            return Err(Error::config("rounds.sflv1_period: must be >= 1"));
        }
        Ok(())
    }
}

/// Global model state carried across communication rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub params: ParamVector,
    pub momentum: ParamVector,
    /// Communication rounds completed so far.
    pub round: usize,
}

impl GlobalState {
    pub fn new(params: ParamVector) -> Self {
        let momentum = params.zeros_like();
        GlobalState {
            params,
            momentum,
            round: 0,
        }
    }
}

/// One selected client's view of a round.
#[derive(Debug, Clone)]
pub struct CohortClient {
    pub id: usize,
    /// Aggregation weight `p_j`, renormalized over the cohort.
    pub weight: f64,
    /// Local step count `T_j`.
    pub steps: usize,
    pub shard_size: usize,
    /// Per-step dataset indices, precomputed so execution stays RNG-free.
    pub batches: Vec<Vec<usize>>,
    /// Class histogram of the client's shard (for heterogeneity metrics).
    pub class_histogram: Vec<f64>,
    /// Starting client-side momentum buffer when persisted across rounds.
    pub initial_client_buffer: Option<ParamVector>,
}

/// The clients participating in one round, in ascending id order.
#[derive(Debug, Clone, Default)]
pub struct RoundCohort {
    pub clients: Vec<CohortClient>,
}

impl RoundCohort {
    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }
}

/// Randomly selects the round's client ids. Bernoulli mode redraws until the
/// selection is nonempty; fixed-fraction mode picks exactly
/// `ceil(theta * |J|)` clients uniformly without replacement. Deterministic
/// per seed; the result is sorted ascending.
pub fn select_cohort(
    client_count: usize,
    theta: f64,
    mode: SelectionMode,
    seed: u64,
) -> Result<Vec<usize>> {
    if client_count == 0 {
        return Err(Error::usage("cannot select from zero clients"));
    }
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::usage(format!(
            "selection rate must be in (0, 1], got {theta}"
        )));
    }
    let mut rng = seeds::rng(seed);
    match mode {
        SelectionMode::Bernoulli => loop {
            let picked: Vec<usize> = (0..client_count)
                .filter(|_| rng.gen::<f64>() < theta)
                .collect();
            if !picked.is_empty() {
                return Ok(picked);
            }
        },
        SelectionMode::FixedFraction => {
            let k = ((theta * client_count as f64).ceil() as usize)
                .clamp(1, client_count);
            let mut ids: Vec<usize> = (0..client_count).collect();
            // partial Fisher-Yates: the first k entries are the sample
            for i in 0..k {
                let j = rng.gen_range(i..client_count);
                ids.swap(i, j);
            }
            let mut picked = ids[..k].to_vec();
            picked.sort_unstable();
            Ok(picked)
        }
    }
}

/// Builds the round cohort from selected ids: computes `T_j`, skips clients
/// whose shard is smaller than one batch (with a logged warning), renormalizes
/// aggregation weights over the kept clients, and precomputes every client's
/// batch sequence from the batching seed stream.
#[allow(clippy::too_many_arguments)]
pub fn build_cohort(
    selected: &[usize],
    shards: &[Shard],
    ds_class_count: usize,
    class_histograms: &[Vec<f64>],
    local_epochs: usize,
    batch_size: usize,
    batching_seed: u64,
    round: usize,
) -> Result<RoundCohort> {
    let _ = ds_class_count;
    let mut clients = Vec::new();
    let mut kept_total = 0usize;
    for &id in selected {
        let shard = shards
            .get(id)
            .ok_or_else(|| Error::usage(format!("selected client {id} has no shard")))?;
        let steps = data::local_steps(shard.indices.len(), local_epochs, batch_size);
        if steps == 0 {
            log::warn!(
                "round {round}: client {id} shard ({} samples) smaller than one batch of {batch_size}; skipped",
                shard.indices.len()
            );
            continue;
        }
        kept_total += shard.indices.len();
        let seed = seeds::derive(batching_seed, &[round as u64, id as u64]);
        clients.push(CohortClient {
            id,
            weight: 0.0,
            steps,
            shard_size: shard.indices.len(),
            batches: data::batch_plan(&shard.indices, local_epochs, batch_size, seed),
            class_histogram: class_histograms[id].clone(),
            initial_client_buffer: None,
        });
    }
    for c in &mut clients {
        c.weight = c.shard_size as f64 / kept_total as f64;
    }
    clients.sort_by_key(|c| c.id);
    Ok(RoundCohort { clients })
}

/// Elementwise weighted average `sum_j p_j W_j`. Weights must sum to 1
/// within 1e-12; summation runs in the order given.
pub fn aggregate_weighted(models: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    if models.is_empty() || models.len() != weights.len() {
        return Err(Error::usage(
            "aggregate_weighted: need equally many models and weights, at least one",
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::usage(format!(
            "aggregation weights must sum to 1, got {total}"
        )));
    }
    let mut out = models[0].zeros_like();
    for (m, &w) in models.iter().zip(weights) {
        out.add_scaled_assign(m, w)
            .map_err(|_| Error::usage("aggregate_weighted: model shapes differ"))?;
    }
    Ok(out)
}

/// Applies the round-level global momentum update:
/// `m_g <- beta_g * m_g + (W_prev - W_agg)`, `W <- W_prev - m_g`.
/// With `beta_g = 0` and zero prior momentum this reduces algebraically to
/// `W <- W_agg`, and the implementation takes that branch so plain averaging
/// is reproduced bit-exactly.
pub fn global_momentum_update(
    state: &GlobalState,
    aggregated: &ParamVector,
    beta_g: f64,
) -> Result<GlobalState> {
    if !state.params.same_shape(aggregated) {
        return Err(Error::usage(
            "global_momentum_update: aggregated model shape differs from global model",
        ));
    }
    let delta = state.params.sub(aggregated)?;
    let momentum = delta.add_scaled(&state.momentum, beta_g)?;
    // with beta_g = 0 the recurrences collapse algebraically to W <- W_agg;
    // taking that branch keeps plain averaging bit-exact
    let params = if beta_g == 0.0 {
        aggregated.clone()
    } else {
        state.params.sub(&momentum)?
    };
    Ok(GlobalState {
        params,
        momentum,
        round: state.round + 1,
    })
}

/// FedProx proximal gradient `mu * (local - anchor)`, added to local
/// gradients each step when enabled.
pub fn fedprox_penalty_grad(
    local: &ParamVector,
    anchor: &ParamVector,
    mu: f64,
) -> Result<ParamVector> {
    if !local.same_shape(anchor) {
        return Err(Error::usage(
            "fedprox_penalty_grad: local and anchor shapes differ",
        ));
    }
    if mu < 0.0 {
        return Err(Error::usage("fedprox_penalty_grad: mu must be >= 0"));
    }
    Ok(local.sub(anchor)?.scaled(mu))
}

/// The per-round client visit order for SFLV2: a fresh seeded shuffle of the
/// cohort positions.
pub fn sflv2_order(cohort_len: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cohort_len).collect();
    order.shuffle(&mut seeds::rng(seed));
    order
}
