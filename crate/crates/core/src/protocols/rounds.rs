//! Execution engines for the four training methods.
//!
//! All engines share the same per-step client/server arithmetic
//! (`split_client_step`) and the same end-of-round path (join, weighted
//! averaging, global momentum), so degeneracies between methods hold
//! bit-exactly. Batch sequences are precomputed per cohort, which keeps the
//! step loops RNG-free and schedule-independent; per-step results are
//! reduced in ascending client id regardless of worker count.

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::nn::{self, BackSignal, ParamVector};
use crate::optim::{
    nag_lookahead, sgdm_step, staleness, FusionState, MomentumBuffer, OptimConfig, OptimVariant,
};
use crate::protocols::{
    aggregate_weighted, fedprox_penalty_grad, global_momentum_update, sflv2_order, GlobalState,
    Method, RoundCohort, RoundConfig, Sflv1Period,
};
use crate::split::{SplitModel, SubmodelPair};

/// Everything a round engine needs besides the global state and cohort. The
/// optimizer config carries the learning rate already scheduled for this
/// round; schedules live in the experiment loop.
pub struct RoundCtx<'a> {
    pub model: &'a SplitModel,
    pub data: &'a Dataset,
    pub optim: &'a OptimConfig,
    pub cfg: &'a RoundConfig,
    pub exec: &'a Executor,
}

/// Per-client summary of a finished round.
#[derive(Debug, Clone)]
pub struct Participant {
    pub id: usize,
    pub steps: usize,
    pub weight: f64,
    /// Final client-side momentum buffer, for optional persistence across
    /// rounds.
    pub final_client_buffer: ParamVector,
}

/// What a round reports back to the harness.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    /// True when the cohort was empty and the round was skipped.
    pub skipped: bool,
    pub cohort_size: usize,
    pub max_steps: usize,
    pub mean_loss: f64,
    pub participants: Vec<Participant>,
}

impl RoundOutcome {
    fn skipped_round() -> Self {
        RoundOutcome {
            skipped: true,
            cohort_size: 0,
            max_steps: 0,
            mean_loss: f64::NAN,
            participants: Vec::new(),
        }
    }
}

/// One client's observable interaction in one step: which samples it batched
/// and the shape of the cut-layer gradient it received.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientStepEvent {
    pub client: usize,
    pub batch: Vec<usize>,
    pub cut_grad_shape: (usize, usize),
}

/// Audit data for one global step.
#[derive(Debug, Clone)]
pub struct StepTrace {
    /// 1-based index of the step just completed; also the `tau` passed to
    /// the fusion that produces the buffer consumed at step `tau + 1`.
    pub tau: usize,
    /// Clients contributing current buffers to the fusion after this step.
    pub fusion_active: usize,
    /// History entries contributing to the fusion after this step.
    pub fusion_history: usize,
    /// Cohort size the two counts must add up to.
    pub cohort_size: usize,
    /// `(client id, finish_step, staleness weight)` per history entry.
    pub staleness_weights: Vec<(usize, usize, f64)>,
    /// Values of the fused (aligned) buffer produced after this step; empty
    /// for methods without fusion.
    pub fused: Vec<f64>,
    pub events: Vec<ClientStepEvent>,
}

/// Step-by-step audit of a round, filled only when requested.
#[derive(Debug, Clone, Default)]
pub struct RoundTrace {
    pub steps: Vec<StepTrace>,
}

struct SplitClientState {
    id: usize,
    weight: f64,
    steps: usize,
    batches: Vec<Vec<usize>>,
    client_params: ParamVector,
    server_params: ParamVector,
    client_buffer: MomentumBuffer,
    /// Per-client surrogate server-side buffer. SFLV1/SFLV2 read and write
    /// it; SMoFi only parks each step's freshly produced buffer here so the
    /// fusion can pick it up.
    server_buffer: MomentumBuffer,
    loss_sum: f64,
    loss_count: usize,
}

fn make_split_states(
    state: &GlobalState,
    cohort: &RoundCohort,
    model: &SplitModel,
) -> Result<(SubmodelPair, Vec<SplitClientState>)> {
    let anchor = model.split(&state.params)?;
    let mut states = Vec::with_capacity(cohort.len());
    for c in &cohort.clients {
        let pair = model.split(&state.params)?;
        let client_buffer = match &c.initial_client_buffer {
            Some(values) => {
                if !values.same_shape(&pair.client) {
                    return Err(Error::usage(format!(
                        "persisted client buffer for client {} has the wrong shape",
                        c.id
                    )));
                }
                MomentumBuffer {
                    values: values.clone(),
                    owner: Some(c.id),
                    step_created: 0,
                }
            }
            None => MomentumBuffer::zeros_like(&pair.client, Some(c.id)),
        };
        let server_buffer = MomentumBuffer::zeros_like(&pair.server, Some(c.id));
        states.push(SplitClientState {
            id: c.id,
            weight: c.weight,
            steps: c.steps,
            batches: c.batches.clone(),
            client_params: pair.client,
            server_params: pair.server,
            client_buffer,
            server_buffer,
            loss_sum: 0.0,
            loss_count: 0,
        });
    }
    Ok((anchor, states))
}

struct StepOut {
    server_buffer: MomentumBuffer,
    loss: f64,
    cut_grad_shape: (usize, usize),
}

/// One collaborative step for one client: client forward to the cut, server
/// forward + backward, server update seeded from `server_buffer_in`, cut
/// gradient back to the client, client backward and its own momentum update.
/// Returns the freshly produced server-side buffer so the caller decides
/// where it lives (per-client slot, fusion input, or the shared SFLV2
/// optimizer).
#[allow(clippy::too_many_arguments)]
fn split_client_step(
    model: &SplitModel,
    data: &Dataset,
    optim_cfg: &OptimConfig,
    fedprox_mu: f64,
    anchor: &SubmodelPair,
    client_params: &mut ParamVector,
    client_buffer: &mut MomentumBuffer,
    server_params: &mut ParamVector,
    server_buffer_in: &MomentumBuffer,
    batch_indices: &[usize],
    round: usize,
) -> Result<StepOut> {
    let spec = model.spec();
    let (c_from, c_to) = model.client_range();
    let (s_from, s_to) = model.server_range();
    let batch = data.gather(batch_indices)?;

    // NAG evaluates gradients at the lookahead point of both submodels.
    let (c_look, s_look);
    let (c_eval, s_eval): (&ParamVector, &ParamVector) = match optim_cfg.variant {
        OptimVariant::Sgdm => (client_params, server_params),
        OptimVariant::Nag => {
            c_look = nag_lookahead(client_params, client_buffer, optim_cfg)?;
            s_look = nag_lookahead(server_params, server_buffer_in, optim_cfg)?;
            (&c_look, &s_look)
        }
    };

    let client_pass = nn::forward(spec, c_eval, &batch.inputs, c_from, c_to)?;
    let server_pass = nn::forward(spec, s_eval, &client_pass.output, s_from, s_to)?;
    let server_back =
        nn::backward(spec, s_eval, &server_pass, &BackSignal::Labels(&batch.labels))?;
    let loss = server_back.loss.expect("server range ends at the loss head");
    if !loss.is_finite() {
        return Err(Error::Diverged {
            round,
            detail: format!("non-finite training loss {loss}"),
        });
    }

    let mut server_grads = server_back.param_grads;
    if fedprox_mu > 0.0 {
        let prox = fedprox_penalty_grad(server_params, &anchor.server, fedprox_mu)?;
        server_grads.add_scaled_assign(&prox, 1.0)?;
    }
    let (new_server_params, new_server_buffer) =
        sgdm_step(server_params, &server_grads, server_buffer_in, optim_cfg)?;

    let cut_grad = server_back.input_grad;
    let cut_grad_shape = cut_grad.shape();
    let client_back = nn::backward(spec, c_eval, &client_pass, &BackSignal::Upstream(&cut_grad))?;
    let mut client_grads = client_back.param_grads;
    if fedprox_mu > 0.0 {
        let prox = fedprox_penalty_grad(client_params, &anchor.client, fedprox_mu)?;
        client_grads.add_scaled_assign(&prox, 1.0)?;
    }
    let (new_client_params, new_client_buffer) =
        sgdm_step(client_params, &client_grads, client_buffer, optim_cfg)?;

    *client_params = new_client_params;
    *client_buffer = new_client_buffer;
    *server_params = new_server_params;
    Ok(StepOut {
        server_buffer: new_server_buffer,
        loss,
        cut_grad_shape,
    })
}

/// Joins every participant's submodels, averages them by weight in ascending
/// client id, and applies the global momentum update.
fn finish_split_round(
    state: &GlobalState,
    ctx: &RoundCtx<'_>,
    states: &[SplitClientState],
) -> Result<GlobalState> {
    let mut models = Vec::with_capacity(states.len());
    let mut weights = Vec::with_capacity(states.len());
    for st in states {
        models.push(ctx.model.join(&SubmodelPair {
            client: st.client_params.clone(),
            server: st.server_params.clone(),
        })?);
        weights.push(st.weight);
    }
    let aggregated = aggregate_weighted(&models, &weights)?;
    global_momentum_update(state, &aggregated, ctx.cfg.global_momentum)
}

fn outcome_from_split_states(states: Vec<SplitClientState>, max_steps: usize) -> RoundOutcome {
    let total_loss: f64 = states.iter().map(|s| s.loss_sum).sum();
    let total_count: usize = states.iter().map(|s| s.loss_count).sum();
    RoundOutcome {
        skipped: false,
        cohort_size: states.len(),
        max_steps,
        mean_loss: if total_count == 0 {
            f64::NAN
        } else {
            total_loss / total_count as f64
        },
        participants: states
            .into_iter()
            .map(|s| Participant {
                id: s.id,
                steps: s.steps,
                weight: s.weight,
                final_client_buffer: s.client_buffer.values,
            })
            .collect(),
    }
}

fn first_error<T>(results: Vec<Option<Result<T>>>) -> Result<Vec<Option<T>>> {
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Some(Ok(v)) => out.push(Some(v)),
            Some(Err(e)) => return Err(e),
            None => out.push(None),
        }
    }
    Ok(out)
}

/// One SMoFi round: at every step each active client's server-side update is
/// seeded from the shared aligned buffer, finished clients park their final
/// buffer in the history set, and the fusion of current buffers plus
/// staleness-weighted history produces the aligned buffer for the next step.
/// The round ends with weighted averaging and the global momentum update.
pub fn run_smofi_round(
    state: &GlobalState,
    cohort: &RoundCohort,
    ctx: &RoundCtx<'_>,
    mut trace: Option<&mut RoundTrace>,
) -> Result<(GlobalState, RoundOutcome)> {
    if cohort.is_empty() {
        let mut next = state.clone();
        next.round += 1;
        return Ok((next, RoundOutcome::skipped_round()));
    }
    let round = state.round + 1;
    let (anchor, mut states) = make_split_states(state, cohort, ctx.model)?;
    let max_steps = states.iter().map(|s| s.steps).max().unwrap();
    let cohort_size = states.len();

    let mut fusion = FusionState::new(&anchor.server);

    for t in 0..max_steps {
        let step_outs: Vec<Option<Result<StepOut>>> = ctx.exec.install(|| {
            states
                .par_iter_mut()
                .map(|st| {
                    if st.steps <= t {
                        return None;
                    }
                    let batch = std::mem::take(&mut st.batches[t]);
                    let out = split_client_step(
                        ctx.model,
                        ctx.data,
                        ctx.optim,
                        ctx.cfg.fedprox_mu,
                        &anchor,
                        &mut st.client_params,
                        &mut st.client_buffer,
                        &mut st.server_params,
                        &fusion.aligned,
                        &batch,
                        round,
                    );
                    st.batches[t] = batch;
                    Some(out)
                })
                .collect()
        });
        let step_outs = first_error(step_outs)?;

        let tau = t + 1;
        let mut events = Vec::new();
        for (st, out) in states.iter_mut().zip(step_outs) {
            if let Some(out) = out {
                st.loss_sum += out.loss;
                st.loss_count += 1;
                // the step was seeded from the shared aligned buffer; the
                // result belongs to this client's optimizer
                st.server_buffer = out.server_buffer;
                st.server_buffer.owner = Some(st.id);
                if trace.is_some() {
                    events.push(ClientStepEvent {
                        client: st.id,
                        batch: st.batches[t].clone(),
                        cut_grad_shape: out.cut_grad_shape,
                    });
                }
                if st.steps == tau {
                    fusion.record_finished(st.server_buffer.clone(), st.steps);
                }
            }
        }

        // fusion for the buffer consumed at step tau + 1: clients with steps
        // remaining contribute their current buffers at weight 1, finished
        // clients contribute through the history set at their staleness
        let fusion_active: Vec<MomentumBuffer> = states
            .iter()
            .filter(|s| s.steps > tau)
            .map(|s| s.server_buffer.clone())
            .collect();
        debug_assert_eq!(fusion_active.len() + fusion.history.len(), cohort_size);
        fusion.fuse(&fusion_active, tau, ctx.cfg.staleness_alpha)?;

        if let Some(tr) = trace.as_deref_mut() {
            let staleness_weights = fusion
                .history
                .iter()
                .map(|h| {
                    let w = staleness(tau, h.finish_step, ctx.cfg.staleness_alpha)?;
                    Ok((h.buffer.owner.unwrap_or(usize::MAX), h.finish_step, w))
                })
                .collect::<Result<Vec<_>>>()?;
            tr.steps.push(StepTrace {
                tau,
                fusion_active: fusion_active.len(),
                fusion_history: fusion.history.len(),
                cohort_size,
                staleness_weights,
                fused: fusion.aligned.values.values().to_vec(),
                events,
            });
        }
    }

    let next = finish_split_round(state, ctx, &states)?;
    Ok((next, outcome_from_split_states(states, max_steps)))
}

fn resolve_sflv1_period(
    period: Sflv1Period,
    cohort: &RoundCohort,
    local_epochs: usize,
    max_steps: usize,
) -> usize {
    match period {
        Sflv1Period::EveryStep => 1,
        Sflv1Period::EveryEpoch => cohort
            .clients
            .iter()
            .map(|c| c.steps / local_epochs)
            .max()
            .unwrap_or(1)
            .max(1),
        Sflv1Period::RoundEnd => max_steps,
        Sflv1Period::Steps(k) => k.max(1),
    }
}

/// One SFLV1 round: surrogate server-side models update in parallel with
/// independent momentum buffers; every `period` steps the surrogate
/// server-side weights are weighted-averaged, redistributed to every
/// surrogate (finished ones included), and the server-side optimizers reset.
/// An aggregation boundary falling on the final step is subsumed by the
/// ordinary end-of-round aggregation, which is how `RoundEnd` reproduces
/// FedAvg exactly.
pub fn run_sflv1_round(
    state: &GlobalState,
    cohort: &RoundCohort,
    ctx: &RoundCtx<'_>,
    period: Sflv1Period,
    mut trace: Option<&mut RoundTrace>,
) -> Result<(GlobalState, RoundOutcome)> {
    if cohort.is_empty() {
        let mut next = state.clone();
        next.round += 1;
        return Ok((next, RoundOutcome::skipped_round()));
    }
    let round = state.round + 1;
    let (anchor, mut states) = make_split_states(state, cohort, ctx.model)?;
    let max_steps = states.iter().map(|s| s.steps).max().unwrap();
    let period = resolve_sflv1_period(period, cohort, ctx.cfg.local_epochs, max_steps);
    let cohort_size = states.len();

    for t in 0..max_steps {
        let step_outs: Vec<Option<Result<StepOut>>> = ctx.exec.install(|| {
            states
                .par_iter_mut()
                .map(|st| {
                    if st.steps <= t {
                        return None;
                    }
                    let batch = std::mem::take(&mut st.batches[t]);
                    let buffer_in = st.server_buffer.clone();
                    let out = split_client_step(
                        ctx.model,
                        ctx.data,
                        ctx.optim,
                        ctx.cfg.fedprox_mu,
                        &anchor,
                        &mut st.client_params,
                        &mut st.client_buffer,
                        &mut st.server_params,
                        &buffer_in,
                        &batch,
                        round,
                    );
                    st.batches[t] = batch;
                    Some(out)
                })
                .collect()
        });
        let step_outs = first_error(step_outs)?;

        let mut events = Vec::new();
        for (st, out) in states.iter_mut().zip(step_outs) {
            if let Some(out) = out {
                st.loss_sum += out.loss;
                st.loss_count += 1;
                st.server_buffer = out.server_buffer;
                if trace.is_some() {
                    events.push(ClientStepEvent {
                        client: st.id,
                        batch: st.batches[t].clone(),
                        cut_grad_shape: out.cut_grad_shape,
                    });
                }
            }
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.steps.push(StepTrace {
                tau: t + 1,
                fusion_active: 0,
                fusion_history: 0,
                cohort_size,
                staleness_weights: Vec::new(),
                fused: Vec::new(),
                events,
            });
        }

        // periodic server-side aggregation; the final-step boundary is left
        // to the joint end-of-round aggregation
        if (t + 1) % period == 0 && t + 1 < max_steps {
            let models: Vec<ParamVector> =
                states.iter().map(|s| s.server_params.clone()).collect();
            let weights: Vec<f64> = states.iter().map(|s| s.weight).collect();
            let averaged = aggregate_weighted(&models, &weights)?;
            for st in &mut states {
                st.server_params = averaged.clone();
                st.server_buffer = MomentumBuffer::zeros_like(&averaged, Some(st.id));
            }
        }
    }

    let next = finish_split_round(state, ctx, &states)?;
    Ok((next, outcome_from_split_states(states, max_steps)))
}

/// One SFLV2 round: a single server-side model and optimizer persist across
/// a seeded random order over the cohort; each client runs all its steps
/// against them in turn. Client-side models aggregate at round end; the
/// server side is taken as-is before the global momentum update.
pub fn run_sflv2_round(
    state: &GlobalState,
    cohort: &RoundCohort,
    ctx: &RoundCtx<'_>,
    order_seed: u64,
    mut trace: Option<&mut RoundTrace>,
) -> Result<(GlobalState, RoundOutcome)> {
    if cohort.is_empty() {
        let mut next = state.clone();
        next.round += 1;
        return Ok((next, RoundOutcome::skipped_round()));
    }
    let round = state.round + 1;
    let (anchor, mut states) = make_split_states(state, cohort, ctx.model)?;
    let max_steps = states.iter().map(|s| s.steps).max().unwrap();
    let cohort_size = states.len();

    let mut server_params = anchor.server.clone();
    let mut server_buffer = MomentumBuffer::zeros_like(&anchor.server, None);

    for &pos in &sflv2_order(states.len(), order_seed) {
        let st = &mut states[pos];
        for t in 0..st.steps {
            let buffer_in = server_buffer.clone();
            let out = split_client_step(
                ctx.model,
                ctx.data,
                ctx.optim,
                ctx.cfg.fedprox_mu,
                &anchor,
                &mut st.client_params,
                &mut st.client_buffer,
                &mut server_params,
                &buffer_in,
                &st.batches[t],
                round,
            )?;
            st.loss_sum += out.loss;
            st.loss_count += 1;
            server_buffer = out.server_buffer;
            if let Some(tr) = trace.as_deref_mut() {
                tr.steps.push(StepTrace {
                    tau: t + 1,
                    fusion_active: 0,
                    fusion_history: 0,
                    cohort_size,
                    staleness_weights: Vec::new(),
                    fused: Vec::new(),
                    events: vec![ClientStepEvent {
                        client: st.id,
                        batch: st.batches[t].clone(),
                        cut_grad_shape: out.cut_grad_shape,
                    }],
                });
            }
        }
    }

    let client_models: Vec<ParamVector> =
        states.iter().map(|s| s.client_params.clone()).collect();
    let weights: Vec<f64> = states.iter().map(|s| s.weight).collect();
    let aggregated_client = aggregate_weighted(&client_models, &weights)?;
    let aggregated = ctx.model.join(&SubmodelPair {
        client: aggregated_client,
        server: server_params,
    })?;
    let next = global_momentum_update(state, &aggregated, ctx.cfg.global_momentum)?;
    Ok((next, outcome_from_split_states(states, max_steps)))
}

struct FullClientState {
    id: usize,
    weight: f64,
    steps: usize,
    batches: Vec<Vec<usize>>,
    params: ParamVector,
    buffer: MomentumBuffer,
    loss_sum: f64,
    loss_count: usize,
}

/// One FedAvg round: every client trains the full model locally for its
/// `T_j` steps with its own momentum buffer, then the weighted average and
/// global momentum update run exactly as in the split methods. A nonzero
/// `global_momentum` reproduces FedAvgM.
pub fn run_fedavg_round(
    state: &GlobalState,
    cohort: &RoundCohort,
    ctx: &RoundCtx<'_>,
    mut trace: Option<&mut RoundTrace>,
) -> Result<(GlobalState, RoundOutcome)> {
    if cohort.is_empty() {
        let mut next = state.clone();
        next.round += 1;
        return Ok((next, RoundOutcome::skipped_round()));
    }
    let round = state.round + 1;
    let spec = ctx.model.spec();
    let layer_count = spec.layer_count();
    let mut states: Vec<FullClientState> = cohort
        .clients
        .iter()
        .map(|c| {
            let params = state.params.clone();
            let buffer = match &c.initial_client_buffer {
                Some(values) if values.same_shape(&params) => MomentumBuffer {
                    values: values.clone(),
                    owner: Some(c.id),
                    step_created: 0,
                },
                _ => MomentumBuffer::zeros_like(&params, Some(c.id)),
            };
            FullClientState {
                id: c.id,
                weight: c.weight,
                steps: c.steps,
                batches: c.batches.clone(),
                params,
                buffer,
                loss_sum: 0.0,
                loss_count: 0,
            }
        })
        .collect();
    let max_steps = states.iter().map(|s| s.steps).max().unwrap();

    let anchor = state.params.clone();
    let results: Vec<Result<Vec<ClientStepEvent>>> = ctx.exec.install(|| {
        states
            .par_iter_mut()
            .map(|st| {
                let mut events = Vec::new();
                for t in 0..st.steps {
                    let batch = ctx.data.gather(&st.batches[t])?;
                    let look;
                    let eval_params: &ParamVector = match ctx.optim.variant {
                        OptimVariant::Sgdm => &st.params,
                        OptimVariant::Nag => {
                            look = nag_lookahead(&st.params, &st.buffer, ctx.optim)?;
                            &look
                        }
                    };
                    let pass = nn::forward(spec, eval_params, &batch.inputs, 0, layer_count)?;
                    let back = nn::backward(
                        spec,
                        eval_params,
                        &pass,
                        &BackSignal::Labels(&batch.labels),
                    )?;
                    let loss = back.loss.expect("full range ends at the loss head");
                    if !loss.is_finite() {
                        return Err(Error::Diverged {
                            round,
                            detail: format!("non-finite training loss {loss}"),
                        });
                    }
                    let mut grads = back.param_grads;
                    if ctx.cfg.fedprox_mu > 0.0 {
                        let prox =
                            fedprox_penalty_grad(&st.params, &anchor, ctx.cfg.fedprox_mu)?;
                        grads.add_scaled_assign(&prox, 1.0)?;
                    }
                    let (new_params, new_buffer) =
                        sgdm_step(&st.params, &grads, &st.buffer, ctx.optim)?;
                    st.params = new_params;
                    st.buffer = new_buffer;
                    st.loss_sum += loss;
                    st.loss_count += 1;
                    events.push(ClientStepEvent {
                        client: st.id,
                        batch: st.batches[t].clone(),
                        cut_grad_shape: (0, 0),
                    });
                }
                Ok(events)
            })
            .collect()
    });
    let mut per_client_events = Vec::with_capacity(results.len());
    for r in results {
        per_client_events.push(r?);
    }
    if let Some(tr) = trace.as_deref_mut() {
        for t in 0..max_steps {
            let events = per_client_events
                .iter()
                .filter_map(|ev| ev.get(t).cloned())
                .collect();
            tr.steps.push(StepTrace {
                tau: t + 1,
                fusion_active: 0,
                fusion_history: 0,
                cohort_size: states.len(),
                staleness_weights: Vec::new(),
                fused: Vec::new(),
                events,
            });
        }
    }

    let models: Vec<ParamVector> = states.iter().map(|s| s.params.clone()).collect();
    let weights: Vec<f64> = states.iter().map(|s| s.weight).collect();
    let aggregated = aggregate_weighted(&models, &weights)?;
    let next = global_momentum_update(state, &aggregated, ctx.cfg.global_momentum)?;

    let total_loss: f64 = states.iter().map(|s| s.loss_sum).sum();
    let total_count: usize = states.iter().map(|s| s.loss_count).sum();
    let outcome = RoundOutcome {
        skipped: false,
        cohort_size: states.len(),
        max_steps,
        mean_loss: if total_count == 0 {
            f64::NAN
        } else {
            total_loss / total_count as f64
        },
        participants: states
            .into_iter()
            .map(|s| Participant {
                id: s.id,
                steps: s.steps,
                weight: s.weight,
                final_client_buffer: s.buffer.values,
            })
            .collect(),
    };
    Ok((next, outcome))
}

/// Dispatches one round to the configured method. `order_seed` is consumed
/// only by SFLV2's per-round client ordering.
pub fn run_round(
    state: &GlobalState,
    cohort: &RoundCohort,
    ctx: &RoundCtx<'_>,
    order_seed: u64,
    trace: Option<&mut RoundTrace>,
) -> Result<(GlobalState, RoundOutcome)> {
    match ctx.cfg.method {
        Method::Smofi => run_smofi_round(state, cohort, ctx, trace),
        Method::Fedavg => run_fedavg_round(state, cohort, ctx, trace),
        Method::Sflv1 => run_sflv1_round(state, cohort, ctx, ctx.cfg.sflv1_period, trace),
        Method::Sflv2 => run_sflv2_round(state, cohort, ctx, order_seed, trace),
    }
}
