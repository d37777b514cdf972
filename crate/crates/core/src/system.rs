//! Simulated wall-clock accounting for heterogeneous clients.
//!
//! Per-batch time decomposes into on-device compute, on-server compute, and
//! activation/gradient transfer; the `3x` compute factor assumes the backward
//! pass costs twice the forward pass. Split methods pay the transfer per
//! batch; FedAvg trains the whole model on-device and pays one full-model
//! upload + download per round instead.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seeds;
use crate::split::SplitModel;

/// A client's static hardware profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientProfile {
    /// Model inference speed in seconds per frame.
    pub inference_s_per_frame: f64,
    /// Network throughput in kbps.
    pub bandwidth_kbps: f64,
}

/// The server's profile, derived from the client population: its inference
/// speed is `kappa` times faster than the mean client speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerProfile {
    pub kappa: f64,
    pub inference_s_per_frame: f64,
}

impl ServerProfile {
    pub fn from_clients(clients: &[ClientProfile], kappa: f64) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::config("server profile needs at least one client"));
        }
        if !(kappa > 0.0) {
            return Err(Error::config(format!("kappa must be > 0, got {kappa}")));
        }
        let mean = clients
            .iter()
            .map(|c| c.inference_s_per_frame)
            .sum::<f64>()
            / clients.len() as f64;
        Ok(ServerProfile {
            kappa,
            inference_s_per_frame: mean / kappa,
        })
    }
}

/// Sampling ranges for client profiles.
#[derive(Debug, Clone, Copy)]
pub struct ProfileRanges {
    pub inference_s_per_frame: (f64, f64),
    pub bandwidth_kbps: (f64, f64),
}

impl Default for ProfileRanges {
    fn default() -> Self {
        ProfileRanges {
            inference_s_per_frame: (0.001, 0.1),
            bandwidth_kbps: (1000.0, 20000.0),
        }
    }
}

fn log_uniform(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        return range.0;
    }
    let (lo, hi) = (range.0.ln(), range.1.ln());
    let u: f64 = rng.gen();
    (lo + u * (hi - lo)).exp()
}

/// Log-uniform client profiles over the configured ranges, deterministic per
/// seed.
pub fn sample_profiles(
    client_count: usize,
    seed: u64,
    ranges: &ProfileRanges,
) -> Result<Vec<ClientProfile>> {
    for (name, r) in [
        ("inference_s_per_frame", ranges.inference_s_per_frame),
        ("bandwidth_kbps", ranges.bandwidth_kbps),
    ] {
        if !(r.0 > 0.0) || r.1 < r.0 {
            return Err(Error::config(format!(
                "latency range {name} must satisfy 0 < lo <= hi, got {r:?}"
            )));
        }
    }
    let mut rng = seeds::rng(seed);
    Ok((0..client_count)
        .map(|_| ClientProfile {
            inference_s_per_frame: log_uniform(&mut rng, ranges.inference_s_per_frame),
            bandwidth_kbps: log_uniform(&mut rng, ranges.bandwidth_kbps),
        })
        .collect())
}

/// Latency components in seconds; `total = device + server + comm`.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LatencyComponents {
    pub device_s: f64,
    pub server_s: f64,
    pub comm_s: f64,
}

impl LatencyComponents {
    pub fn total(&self) -> f64 {
        self.device_s + self.server_s + self.comm_s
    }

    pub fn scaled(&self, k: f64) -> LatencyComponents {
        LatencyComponents {
            device_s: self.device_s * k,
            server_s: self.server_s * k,
            comm_s: self.comm_s * k,
        }
    }

    pub fn add(&self, other: &LatencyComponents) -> LatencyComponents {
        LatencyComponents {
            device_s: self.device_s + other.device_s,
            server_s: self.server_s + other.server_s,
            comm_s: self.comm_s + other.comm_s,
        }
    }
}

/// Per-batch latency of split training one mini-batch of size `batch`:
/// device compute `3 * B * p_d * O(L)`, server compute
/// `3 * B * p_s * (1 - O(L))`, and transfer `2 * B * S(L) / b` for the
/// activations up plus gradients down.
pub fn batch_latency(
    client: &ClientProfile,
    server: &ServerProfile,
    model: &SplitModel,
    batch: usize,
) -> Result<LatencyComponents> {
    let ratio = model.compute_ratio()?;
    let b = batch as f64;
    Ok(LatencyComponents {
        device_s: 3.0 * b * client.inference_s_per_frame * ratio,
        server_s: 3.0 * b * server.inference_s_per_frame * (1.0 - ratio),
        comm_s: 2.0 * b * model.activation_size_kb() / client.bandwidth_kbps,
    })
}

/// Whole-round cost for one client running `steps` batches under a split
/// method: `steps` times the per-batch latency.
pub fn split_client_round_latency(
    client: &ClientProfile,
    server: &ServerProfile,
    model: &SplitModel,
    batch: usize,
    steps: usize,
) -> Result<LatencyComponents> {
    Ok(batch_latency(client, server, model, batch)?.scaled(steps as f64))
}

/// Whole-round cost for one FedAvg client: all compute on-device (the ratio
/// is forced to 1) and one full-model upload + download per round
/// (`2 * |W| * 8 / 1024` kb over the client's bandwidth).
pub fn fedavg_client_round_latency(
    client: &ClientProfile,
    model: &SplitModel,
    batch: usize,
    steps: usize,
) -> LatencyComponents {
    let model_kb = model.spec().total_params() as f64 * 8.0 / 1024.0;
    LatencyComponents {
        device_s: 3.0 * batch as f64 * client.inference_s_per_frame * steps as f64,
        server_s: 0.0,
        comm_s: 2.0 * model_kb / client.bandwidth_kbps,
    }
}

/// How per-client round costs compose into the round's wall-clock time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundComposition {
    /// Clients run concurrently; the round takes as long as the slowest.
    Parallel,
    /// Clients run one after another; costs add up.
    Sequential,
}

/// Composes per-client round costs into the round latency. Parallel takes
/// the components of the slowest client (ties break toward the first);
/// sequential sums componentwise.
pub fn round_latency(
    per_client: &[LatencyComponents],
    composition: RoundComposition,
) -> LatencyComponents {
    match composition {
        RoundComposition::Parallel => {
            let mut best = LatencyComponents::default();
            for c in per_client {
                if c.total() > best.total() {
                    best = *c;
                }
            }
            best
        }
        RoundComposition::Sequential => per_client
            .iter()
            .fold(LatencyComponents::default(), |acc, c| acc.add(c)),
    }
}

/// Writes client profiles as CSV: `client_id,p_d_s_per_frame,b_kbps`.
pub fn write_profiles_csv(path: &Path, profiles: &[ClientProfile]) -> Result<()> {
    let mut out = String::from("client_id,p_d_s_per_frame,b_kbps\n");
    for (i, p) in profiles.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{}\n",
            i, p.inference_s_per_frame, p.bandwidth_kbps
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads client profiles from the CSV written by `write_profiles_csv`, so
/// externally measured datasets can be substituted.
pub fn read_profiles_csv(path: &Path) -> Result<Vec<ClientProfile>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    if headers != vec!["client_id", "p_d_s_per_frame", "b_kbps"] {
        return Err(Error::config(format!(
            "{}: expected header client_id,p_d_s_per_frame,b_kbps",
            path.display()
        )));
    }
    let mut profiles = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let id: usize = rec[0].trim().parse().map_err(|e| {
            Error::config(format!("{}: row {line}: bad client_id: {e}", path.display()))
        })?;
        if id != line {
            return Err(Error::config(format!(
                "{}: client ids must be consecutive from 0, got {id} at row {line}",
                path.display()
            )));
        }
        let p: f64 = rec[1].trim().parse().map_err(|e| {
            Error::config(format!("{}: row {line}: bad speed: {e}", path.display()))
        })?;
        let b: f64 = rec[2].trim().parse().map_err(|e| {
            Error::config(format!("{}: row {line}: bad bandwidth: {e}", path.display()))
        })?;
        if !(p > 0.0 && b > 0.0) {
            return Err(Error::config(format!(
                "{}: row {line}: profile values must be > 0",
                path.display()
            )));
        }
        profiles.push(ClientProfile {
            inference_s_per_frame: p,
            bandwidth_kbps: b,
        });
    }
    Ok(profiles)
}
