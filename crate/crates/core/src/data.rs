//! Synthetic classification data, Dirichlet non-IID partitioning, and
//! heterogeneity quantification.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Dirichlet, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{Batch, Matrix};
use crate::seeds;

/// Spacing between adjacent class centers on the blob lattice.
const LATTICE_SPACING: f64 = 4.0;

/// A labelled dataset with a known class count.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::config("input and label counts differ"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::config(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        let mut seen = vec![false; class_count];
        for &l in &labels {
            seen[l] = true;
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::config(
                "every class must appear at least once in the dataset",
            ));
        }
        Ok(Dataset {
            inputs,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.inputs.cols()
    }

    /// Class histogram (counts) over a subset of sample indices.
    pub fn class_histogram(&self, indices: &[usize]) -> Vec<f64> {
        let mut hist = vec![0.0; self.class_count];
        for &i in indices {
            hist[self.labels[i]] += 1.0;
        }
        hist
    }

    /// Gathers a mini-batch by dataset indices.
    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        let mut m = Matrix::zeros(indices.len(), self.dims());
        let mut labels = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            m.row_mut(r).copy_from_slice(self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        Batch::new(m, labels, self.class_count)
    }
}

/// Dirichlet partition parameters.
#[derive(Debug, Clone, Copy)]
pub struct PartitionSpec {
    pub client_count: usize,
    pub gamma: f64,
    pub seed: u64,
}

/// One client's sample indices into the global dataset.
#[derive(Debug, Clone)]
pub struct Shard {
    pub client: usize,
    pub indices: Vec<usize>,
}

/// Gaussian clusters, one mean per class on a fixed integer lattice scaled by
/// `LATTICE_SPACING`, with isotropic noise `spread`. Deterministic per seed.
pub fn make_blobs(
    classes: usize,
    dims: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::config("make_blobs requires at least 2 classes"));
    }
    if per_class < 1 || dims < 1 {
        return Err(Error::config("make_blobs requires per_class >= 1 and dims >= 1"));
    }
    if spread < 0.0 {
        return Err(Error::config("make_blobs spread must be >= 0"));
    }
    // smallest base with base^dims >= classes, so every class gets a distinct
    // lattice point (digits of the class index in that base)
    let mut base = 2usize;
    while (base as f64).powi(dims as i32) < classes as f64 {
        base += 1;
    }
    let mut means = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut m = vec![0.0; dims];
        let mut rem = c;
        for coord in m.iter_mut() {
            *coord = (rem % base) as f64 * LATTICE_SPACING;
            rem /= base;
        }
        means.push(m);
    }

    let mut rng = seeds::rng(seed);
    let mut inputs = Matrix::zeros(classes * per_class, dims);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for s in 0..per_class {
            let row = inputs.row_mut(c * per_class + s);
            for (d, v) in row.iter_mut().enumerate() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                *v = mean[d] + spread * noise;
            }
            labels.push(c);
        }
    }
    Dataset::new(inputs, labels, classes)
}

/// Partitions a dataset across clients: for each class, client proportions
/// are drawn from `Dir(gamma)` and the class's (shuffled) samples are split
/// accordingly. Shards are disjoint and cover the dataset; empty shards are
/// repaired by moving one sample from the largest shard.
pub fn partition_dirichlet(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<Shard>> {
    let clients = spec.client_count;
    if clients == 0 {
        return Err(Error::config("partition requires at least one client"));
    }
    if !(spec.gamma > 0.0) {
        return Err(Error::config(format!(
            "dirichlet concentration must be > 0, got {}",
            spec.gamma
        )));
    }
    if ds.len() < clients {
        return Err(Error::config(format!(
            "cannot give {} clients at least one sample each from {} samples",
            clients,
            ds.len()
        )));
    }

    let mut rng = seeds::rng(spec.seed);
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for class in 0..ds.class_count {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let proportions: Vec<f64> = if clients == 1 {
            vec![1.0]
        } else {
            Dirichlet::new(&vec![spec.gamma; clients])
                .map_err(|e| Error::config(format!("dirichlet draw failed: {e}")))?
                .sample(&mut rng)
        };
        let mut cum = 0.0;
        let mut start = 0usize;
        for (j, p) in proportions.iter().enumerate() {
            cum += p;
            let end = if j + 1 == clients {
                idx.len()
            } else {
                ((cum * idx.len() as f64) as usize).clamp(start, idx.len())
            };
            assigned[j].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }

    // repair: no shard may stay empty
    while let Some(empty) = assigned.iter().position(|s| s.is_empty()) {
        let donor = assigned
            .iter()
            .enumerate()
            .max_by(|(ai, a), (bi, b)| a.len().cmp(&b.len()).then(bi.cmp(ai)))
            .map(|(i, _)| i)
            .unwrap();
        if assigned[donor].len() <= 1 {
            return Err(Error::config(
                "cannot repair empty shards: not enough samples",
            ));
        }
        let moved = assigned[donor].pop().unwrap();
        assigned[empty].push(moved);
    }

    Ok(assigned
        .into_iter()
        .enumerate()
        .map(|(client, mut indices)| {
            indices.sort_unstable();
            Shard { client, indices }
        })
        .collect())
}

/// Jensen-Shannon divergence with log base 2 (bounded by 1). Inputs are
/// nonnegative weight vectors (e.g. class counts) and are normalized
/// internally.
pub fn js_divergence(q: &[f64], q_ref: &[f64]) -> Result<f64> {
    if q.len() != q_ref.len() {
        return Err(Error::usage("distributions have different lengths"));
    }
    if q.iter().chain(q_ref).any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::usage("distributions must be nonnegative and finite"));
    }
    let (sq, sr) = (q.iter().sum::<f64>(), q_ref.iter().sum::<f64>());
    if sq <= 0.0 || sr <= 0.0 {
        return Err(Error::usage("zero-total distribution"));
    }
    let mut js = 0.0;
    for (&a, &b) in q.iter().zip(q_ref) {
        let (pa, pb) = (a / sq, b / sr);
        let m = 0.5 * (pa + pb);
        if pa > 0.0 {
            js += 0.5 * pa * (pa / m).log2();
        }
        if pb > 0.0 {
            js += 0.5 * pb * (pb / m).log2();
        }
    }
    Ok(js)
}

/// Mean JS divergence of a shard's class distribution from the balanced
/// (uniform) distribution.
pub fn shard_imbalance(ds: &Dataset, shard: &Shard) -> Result<f64> {
    let hist = ds.class_histogram(&shard.indices);
    let balanced = vec![1.0; ds.class_count];
    js_divergence(&hist, &balanced)
}

/// Local step count `T_j = E * floor(|D_j| / B)`. A zero result means the
/// shard is smaller than one batch; callers skip such clients for the round.
pub fn local_steps(shard_size: usize, epochs: usize, batch: usize) -> usize {
    epochs * (shard_size / batch)
}

/// The full per-round batch sequence for one client: each epoch reshuffles
/// the shard (one RNG continues across epochs) and the trailing partial
/// batch is dropped. Returns exactly `local_steps(..)` batches of dataset
/// indices.
pub fn batch_plan(shard: &[usize], epochs: usize, batch: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = seeds::rng(seed);
    let mut plan = Vec::with_capacity(local_steps(shard.len(), epochs, batch));
    for _ in 0..epochs {
        let mut order = shard.to_vec();
        order.shuffle(&mut rng);
        for chunk in order.chunks_exact(batch) {
            plan.push(chunk.to_vec());
        }
    }
    plan
}

/// Reads a dataset from CSV with header `f0..f{d-1},label`.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 2 || &headers[headers.len() - 1] != "label" {
        return Err(Error::config(format!(
            "{}: expected header f0..f{{d-1}},label",
            path.display()
        )));
    }
    let dims = headers.len() - 1;
    for (i, h) in headers.iter().take(dims).enumerate() {
        if h != format!("f{i}") {
            return Err(Error::config(format!(
                "{}: column {i} named {h:?}, expected \"f{i}\"",
                path.display()
            )));
        }
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let mut row = Vec::with_capacity(dims);
        for v in rec.iter().take(dims) {
            row.push(v.trim().parse::<f64>().map_err(|e| {
                Error::config(format!("{}: row {line}: bad feature {v:?}: {e}", path.display()))
            })?);
        }
        let label = rec[dims].trim().parse::<usize>().map_err(|e| {
            Error::config(format!("{}: row {line}: bad label: {e}", path.display()))
        })?;
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::config(format!("{}: dataset is empty", path.display())));
    }
    let class_count = labels.iter().max().unwrap() + 1;
    Dataset::new(Matrix::from_rows(&rows)?, labels, class_count)
}

/// Writes per-client class histograms plus each shard's JS divergence from
/// balanced, as CSV with columns `client,size,js,c0..c{k-1}`.
pub fn write_partition_report_csv(path: &Path, ds: &Dataset, shards: &[Shard]) -> Result<()> {
    let mut out = String::new();
    out.push_str("client,size,js");
    for c in 0..ds.class_count {
        out.push_str(&format!(",c{c}"));
    }
    out.push('\n');
    for shard in shards {
        let hist = ds.class_histogram(&shard.indices);
        let js = shard_imbalance(ds, shard)?;
        out.push_str(&format!("{},{},{:.6}", shard.client, shard.indices.len(), js));
        for h in &hist {
            out.push_str(&format!(",{}", *h as usize));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}
