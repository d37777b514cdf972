//! Model splitting at a cut layer, plus the per-layer compute and activation
//! profile consumed by the latency model.
//!
//! The cut index `L` puts layers `0..L` on the client and `L..` on the
//! server; `L = 0` leaves the whole stack server-side. The profile is
//! analytic: a dense layer costs `in_dim * out_dim` MACs, activation layers
//! cost none, and every layer's output occupies `out_dim * 8 / 1024` kb at
//! the simulator's f64 width.

use crate::error::{Error, Result};
use crate::nn::{ModelSpec, ParamVector};

const BYTES_PER_VALUE: f64 = 8.0;

/// A layered model with a fixed cut index and its compute/size profile.
#[derive(Debug, Clone)]
pub struct SplitModel {
    spec: ModelSpec,
    cut: usize,
    per_layer_macs: Vec<u64>,
    per_layer_activation_kb: Vec<f64>,
}

/// Client-side and server-side parameter vectors of one split model.
#[derive(Debug, Clone, PartialEq)]
pub struct SubmodelPair {
    pub client: ParamVector,
    pub server: ParamVector,
}

impl SplitModel {
    pub fn new(spec: ModelSpec, cut: usize) -> Result<Self> {
        if cut >= spec.layer_count() {
            return Err(Error::config(format!(
                "cut index {cut} out of range for {} layers (0 <= L < layer count)",
                spec.layer_count()
            )));
        }
        let per_layer_macs = spec
            .layers()
            .iter()
            .map(|l| match l.kind {
                crate::nn::LayerKind::Dense => (l.in_dim * l.out_dim) as u64,
                _ => 0,
            })
            .collect();
        let per_layer_activation_kb = spec
            .layers()
            .iter()
            .map(|l| l.out_dim as f64 * BYTES_PER_VALUE / 1024.0)
            .collect();
        Ok(SplitModel {
            spec,
            cut,
            per_layer_macs,
            per_layer_activation_kb,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn cut(&self) -> usize {
        self.cut
    }

    pub fn per_layer_macs(&self) -> &[u64] {
        &self.per_layer_macs
    }

    pub fn per_layer_activation_kb(&self) -> &[f64] {
        &self.per_layer_activation_kb
    }

    /// Splits a full parameter vector into the client/server pair. Lossless:
    /// `join(split(w)) == w` bit-exactly.
    pub fn split(&self, full: &ParamVector) -> Result<SubmodelPair> {
        self.spec
            .check_params_range(full, 0, self.spec.layer_count())?;
        Ok(SubmodelPair {
            client: full.slice_layers(0, self.cut)?,
            server: full.slice_layers(self.cut, self.spec.layer_count())?,
        })
    }

    /// Reassembles a full parameter vector; inverse of `split`.
    pub fn join(&self, pair: &SubmodelPair) -> Result<ParamVector> {
        let client_counts = self.spec.param_counts_range(0, self.cut);
        let server_counts = self.spec.param_counts_range(self.cut, self.spec.layer_count());
        let shape_ok = pair.client.layer_count() == client_counts.len()
            && pair.server.layer_count() == server_counts.len()
            && client_counts
                .iter()
                .enumerate()
                .all(|(i, &c)| pair.client.layer_len(i) == c)
            && server_counts
                .iter()
                .enumerate()
                .all(|(i, &c)| pair.server.layer_len(i) == c);
        if !shape_ok {
            return Err(Error::usage(format!(
                "submodel pair does not match a cut at layer {}",
                self.cut
            )));
        }
        ParamVector::concat(&[&pair.client, &pair.server])
    }

    /// Fraction of model MACs on the device side: `O(L)`.
    pub fn compute_ratio(&self) -> Result<f64> {
        let total: u64 = self.per_layer_macs.iter().sum();
        if total == 0 {
            return Err(Error::config(
                "compute ratio undefined: model has zero total MACs",
            ));
        }
        let device: u64 = self.per_layer_macs[..self.cut].iter().sum();
        Ok(device as f64 / total as f64)
    }

    /// Size in kb of one sample's activation crossing the cut: `S(L)`.
    /// At `L = 0` this is the raw input vector size.
    pub fn activation_size_kb(&self) -> f64 {
        if self.cut == 0 {
            self.spec.in_dim() as f64 * BYTES_PER_VALUE / 1024.0
        } else {
            self.per_layer_activation_kb[self.cut - 1]
        }
    }

    pub fn client_range(&self) -> (usize, usize) {
        (0, self.cut)
    }

    pub fn server_range(&self) -> (usize, usize) {
        (self.cut, self.spec.layer_count())
    }
}
