//! Seeded experiment execution: dataset preparation, the round loop, metric
//! computation, and the run summary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, PartitionSpec, Shard};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::harness::config::{DatasetCfg, ExperimentConfig, TargetCfg};
use crate::nn::{self, ParamVector};
use crate::optim::OptimConfig;
use crate::protocols::{
    build_cohort, run_round, select_cohort, GlobalState, Method, RoundCohort, RoundConfig,
    RoundCtx, RoundTrace,
};
use crate::seeds;
use crate::split::SplitModel;
use crate::system::{
    self, fedavg_client_round_latency, round_latency, split_client_round_latency, ClientProfile,
    LatencyComponents, RoundComposition, ServerProfile,
};

/// Sub-stream tags for seeds derived from the data seed.
const TAG_EVAL: u64 = 101;
const TAG_PARTITION: u64 = 102;
/// Sub-stream tag for the SFLV2 per-round ordering, derived from the
/// selection seed.
const TAG_ORDER: u64 = 103;

/// One row of per-round metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub accuracy: f64,
    pub device_s: f64,
    pub server_s: f64,
    pub comm_s: f64,
    pub round_time_s: f64,
    pub cum_time_s: f64,
    pub cohort: usize,
    pub js_mean: f64,
}

/// End-of-run metrics plus the full record list (embedded so comparisons can
/// recompute round-to-accuracy for any target).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub method: String,
    pub rounds: usize,
    pub initial_accuracy: f64,
    pub best_accuracy: f64,
    /// Round of the best accuracy; 0 means the initial model.
    pub best_round: usize,
    pub final_accuracy: f64,
    pub total_time_s: f64,
    /// "absolute" or "baseline_fraction".
    pub target_mode: String,
    pub target_value: f64,
    /// Resolved absolute target, when the mode allows resolving at run time.
    pub target: Option<f64>,
    pub rounds_to_target: Option<usize>,
    pub time_to_target_s: Option<f64>,
    /// Name of the baseline run these speedups refer to, when one was given.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub baseline: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub round_speedup: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub time_speedup: Option<f64>,
    pub fingerprint: String,
    pub records: Vec<RoundRecord>,
}

impl RunSummary {
    /// Resolves the accuracy target against a baseline run, recomputes
    /// round/time-to-target, and records the speedups
    /// `R_baseline / R_self` and `T_baseline / T_self`.
    pub fn apply_baseline(&mut self, baseline: &RunSummary) -> Result<()> {
        if baseline.fingerprint != self.fingerprint {
            return Err(Error::usage(format!(
                "run {:?} is not comparable with baseline {:?}: configurations differ",
                self.name, baseline.name
            )));
        }
        let target = match baseline.target_mode.as_str() {
            "absolute" => baseline.target_value,
            "baseline_fraction" => baseline.target_value * baseline.best_accuracy,
            other => {
                return Err(Error::usage(format!(
                    "baseline run has unknown target mode {other:?}"
                )))
            }
        };
        let base_hit = rounds_to_target(&baseline.records, target);
        let hit = rounds_to_target(&self.records, target);
        self.target = Some(target);
        self.rounds_to_target = hit.map(|(r, _)| r);
        self.time_to_target_s = hit.map(|(_, t)| t);
        self.baseline = Some(baseline.name.clone());
        self.round_speedup = match (base_hit, hit) {
            (Some((rb, _)), Some((rm, _))) => Some(rb as f64 / rm as f64),
            _ => None,
        };
        self.time_speedup = match (base_hit, hit) {
            (Some((_, tb)), Some((_, tm))) if tm > 0.0 => Some(tb / tm),
            _ => None,
        };
        Ok(())
    }
}

/// A finished experiment.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<RoundRecord>,
    pub summary: RunSummary,
}

/// Everything assembled before the round loop starts.
pub struct ExperimentSetup {
    pub model: SplitModel,
    pub train: Dataset,
    pub eval: Dataset,
    pub shards: Vec<Shard>,
    pub class_histograms: Vec<Vec<f64>>,
    pub profiles: Vec<ClientProfile>,
    pub server_profile: ServerProfile,
    pub initial: GlobalState,
    pub optim: OptimConfig,
    pub round_cfg: RoundConfig,
}

fn check_dataset_matches_model(ds: &Dataset, model: &SplitModel, what: &str) -> Result<()> {
    let spec = model.spec();
    if ds.dims() != spec.in_dim() {
        return Err(Error::config(format!(
            "{what}: feature width {} does not match model input {}",
            ds.dims(),
            spec.in_dim()
        )));
    }
    if ds.class_count != spec.class_count() {
        return Err(Error::config(format!(
            "{what}: {} classes but the model head has {}",
            ds.class_count,
            spec.class_count()
        )));
    }
    Ok(())
}

/// Builds datasets, shards, profiles, and the initial global model from a
/// validated configuration.
pub fn prepare(cfg: &ExperimentConfig) -> Result<ExperimentSetup> {
    cfg.validate()?;
    let spec = cfg.model_spec()?;
    let model = SplitModel::new(spec, cfg.model.cut)?;

    let (train, eval) = match &cfg.dataset {
        DatasetCfg::Blobs {
            classes,
            dims,
            per_class,
            spread,
            eval_per_class,
        } => {
            let train = data::make_blobs(*classes, *dims, *per_class, *spread, cfg.seeds.data)?;
            let eval = data::make_blobs(
                *classes,
                *dims,
                eval_per_class.unwrap_or(*per_class),
                *spread,
                seeds::derive(cfg.seeds.data, &[TAG_EVAL]),
            )?;
            (train, eval)
        }
        DatasetCfg::Csv { path, eval_path } => {
            let train = data::read_dataset_csv(path)?;
            let eval = match eval_path {
                Some(p) => data::read_dataset_csv(p)?,
                None => train.clone(),
            };
            (train, eval)
        }
    };
    check_dataset_matches_model(&train, &model, "dataset")?;
    check_dataset_matches_model(&eval, &model, "evaluation dataset")?;

    let shards = data::partition_dirichlet(
        &train,
        &PartitionSpec {
            client_count: cfg.partition.clients,
            gamma: cfg.partition.gamma,
            seed: seeds::derive(cfg.seeds.data, &[TAG_PARTITION]),
        },
    )?;
    let class_histograms: Vec<Vec<f64>> = shards
        .iter()
        .map(|s| train.class_histogram(&s.indices))
        .collect();

    let profiles = match &cfg.latency.profiles_csv {
        Some(path) => {
            let profiles = system::read_profiles_csv(path)?;
            if profiles.len() != cfg.partition.clients {
                return Err(Error::config(format!(
                    "latency.profiles_csv: {} profiles for {} clients",
                    profiles.len(),
                    cfg.partition.clients
                )));
            }
            profiles
        }
        None => system::sample_profiles(
            cfg.partition.clients,
            cfg.seeds.profiles,
            &cfg.profile_ranges(),
        )?,
    };
    let server_profile = ServerProfile::from_clients(&profiles, cfg.latency.kappa)?;

    let initial = GlobalState::new(nn::init_params(model.spec(), cfg.seeds.init));

    Ok(ExperimentSetup {
        model,
        train,
        eval,
        shards,
        class_histograms,
        profiles,
        server_profile,
        initial,
        optim: cfg.optim_config()?,
        round_cfg: cfg.round_config()?,
    })
}

fn round_cost(
    setup: &ExperimentSetup,
    method: Method,
    batch_size: usize,
    participants: &[(usize, usize)],
) -> Result<LatencyComponents> {
    let mut per_client = Vec::with_capacity(participants.len());
    for &(id, steps) in participants {
        let profile = &setup.profiles[id];
        let cost = match method {
            Method::Fedavg => {
                fedavg_client_round_latency(profile, &setup.model, batch_size, steps)
            }
            _ => split_client_round_latency(
                profile,
                &setup.server_profile,
                &setup.model,
                batch_size,
                steps,
            )?,
        };
        per_client.push(cost);
    }
    let composition = match method {
        Method::Sflv2 => RoundComposition::Sequential,
        _ => RoundComposition::Parallel,
    };
    Ok(round_latency(&per_client, composition))
}

/// Runs the configured experiment: N rounds of the configured method, one
/// `RoundRecord` per round, and a summary. Rerunning with the same config
/// and seeds produces identical records for any worker count.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<RunResult> {
    let setup = prepare(cfg)?;
    run_prepared(cfg, &setup, workers, None)
}

/// `run_experiment` over an existing setup; `traces`, when given, collects
/// the per-round audit trail.
pub fn run_prepared(
    cfg: &ExperimentConfig,
    setup: &ExperimentSetup,
    workers: usize,
    mut traces: Option<&mut Vec<RoundTrace>>,
) -> Result<RunResult> {
    let exec = Executor::new(workers)?;
    let round_cfg = &setup.round_cfg;
    let mut state = setup.initial.clone();
    let mut records: Vec<RoundRecord> = Vec::with_capacity(round_cfg.rounds);
    let mut cum_time = 0.0;
    let mut persisted: BTreeMap<usize, ParamVector> = BTreeMap::new();

    let initial_accuracy = nn::evaluate(
        setup.model.spec(),
        &state.params,
        &setup.eval.inputs,
        &setup.eval.labels,
    )?;

    for n in 1..=round_cfg.rounds {
        let selected = select_cohort(
            setup.shards.len(),
            round_cfg.selection_rate,
            round_cfg.selection_mode,
            seeds::derive(cfg.seeds.selection, &[n as u64]),
        )?;
        let mut cohort: RoundCohort = build_cohort(
            &selected,
            &setup.shards,
            setup.train.class_count,
            &setup.class_histograms,
            round_cfg.local_epochs,
            round_cfg.batch_size,
            cfg.seeds.batching,
            n,
        )?;
        if round_cfg.persist_client_momentum {
            for c in &mut cohort.clients {
                if let Some(buffer) = persisted.get(&c.id) {
                    c.initial_client_buffer = Some(buffer.clone());
                }
            }
        }

        let optim_n = OptimConfig {
            eta: setup.optim.eta_at_round(n),
            ..setup.optim
        };
        let ctx = RoundCtx {
            model: &setup.model,
            data: &setup.train,
            optim: &optim_n,
            cfg: round_cfg,
            exec: &exec,
        };
        let order_seed = seeds::derive(cfg.seeds.selection, &[n as u64, TAG_ORDER]);
        let mut trace_slot = traces.as_deref_mut().map(|_| RoundTrace::default());
        let (next_state, outcome) =
            run_round(&state, &cohort, &ctx, order_seed, trace_slot.as_mut())?;
        state = next_state;
        if let (Some(traces), Some(trace)) = (traces.as_deref_mut(), trace_slot) {
            traces.push(trace);
        }

        if round_cfg.persist_client_momentum {
            for p in &outcome.participants {
                persisted.insert(p.id, p.final_client_buffer.clone());
            }
        }

        let accuracy = nn::evaluate(
            setup.model.spec(),
            &state.params,
            &setup.eval.inputs,
            &setup.eval.labels,
        )?;

        let participants: Vec<(usize, usize)> =
            outcome.participants.iter().map(|p| (p.id, p.steps)).collect();
        let cost = round_cost(setup, round_cfg.method, round_cfg.batch_size, &participants)?;
        cum_time += cost.total();

        let js_mean = if outcome.participants.is_empty() {
            0.0
        } else {
            let mut total = 0.0;
            for p in &outcome.participants {
                let hist = &setup.class_histograms[p.id];
                let balanced = vec![1.0; setup.train.class_count];
                total += data::js_divergence(hist, &balanced)?;
            }
            total / outcome.participants.len() as f64
        };

        records.push(RoundRecord {
            round: n,
            accuracy,
            device_s: cost.device_s,
            server_s: cost.server_s,
            comm_s: cost.comm_s,
            round_time_s: cost.total(),
            cum_time_s: cum_time,
            cohort: outcome.cohort_size,
            js_mean,
        });
    }

    let summary = summarize(cfg, initial_accuracy, &records);
    Ok(RunResult { records, summary })
}

/// First round whose accuracy meets `target`, with its cumulative time.
pub fn rounds_to_target(records: &[RoundRecord], target: f64) -> Option<(usize, f64)> {
    records
        .iter()
        .find(|r| r.accuracy >= target)
        .map(|r| (r.round, r.cum_time_s))
}

fn summarize(cfg: &ExperimentConfig, initial_accuracy: f64, records: &[RoundRecord]) -> RunSummary {
    let mut best_accuracy = initial_accuracy;
    let mut best_round = 0;
    for r in records {
        if r.accuracy > best_accuracy {
            best_accuracy = r.accuracy;
            best_round = r.round;
        }
    }
    let final_accuracy = records.last().map(|r| r.accuracy).unwrap_or(initial_accuracy);
    let total_time_s = records.last().map(|r| r.cum_time_s).unwrap_or(0.0);

    let (target_mode, target_value, target) = match cfg.target {
        TargetCfg::Absolute { value } => ("absolute", value, Some(value)),
        TargetCfg::BaselineFraction { value } => ("baseline_fraction", value, None),
    };
    let hit = target.and_then(|t| rounds_to_target(records, t));

    RunSummary {
        name: cfg.name.clone(),
        method: cfg.rounds.method.name().to_string(),
        rounds: records.len(),
        initial_accuracy,
        best_accuracy,
        best_round,
        final_accuracy,
        total_time_s,
        target_mode: target_mode.to_string(),
        target_value,
        target,
        rounds_to_target: hit.map(|(r, _)| r),
        time_to_target_s: hit.map(|(_, t)| t),
        baseline: None,
        round_speedup: None,
        time_speedup: None,
        fingerprint: cfg.comparability_fingerprint(),
        records: records.to_vec(),
    }
}

/// Writes the per-client partition report (class histograms plus JS
/// divergence) for the configured experiment.
pub fn partition_report(cfg: &ExperimentConfig, out_path: &std::path::Path) -> Result<()> {
    let setup = prepare(cfg)?;
    data::write_partition_report_csv(out_path, &setup.train, &setup.shards)
}
