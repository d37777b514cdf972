//! Layered model specification, forward pass, and exact backpropagation.
//!
//! The kernel supports dense affine layers, ReLU, and two fused loss heads:
//! softmax + cross-entropy (classification) and squared error against one-hot
//! targets (least-squares classification). Loss-head gradients are averaged
//! over the batch, so parameter gradients are gradients of the mean loss.
//!
//! All functions are pure over immutable inputs; identical inputs produce
//! bit-identical outputs.

use rand::distributions::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;
use crate::nn::params::ParamVector;
use crate::seeds;

/// Layer kinds supported by the kernel. Loss heads are parameterless and must
/// terminate the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Relu,
    SoftmaxXentHead,
    SquaredErrorHead,
}

/// Shape of a single layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            in_dim,
            out_dim,
        }
    }

    pub fn relu(dim: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Relu,
            in_dim: dim,
            out_dim: dim,
        }
    }

    pub fn softmax_xent_head(classes: usize) -> Self {
        LayerSpec {
            kind: LayerKind::SoftmaxXentHead,
            in_dim: classes,
            out_dim: classes,
        }
    }

    pub fn squared_error_head(dim: usize) -> Self {
        LayerSpec {
            kind: LayerKind::SquaredErrorHead,
            in_dim: dim,
            out_dim: dim,
        }
    }

    pub fn is_head(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::SoftmaxXentHead | LayerKind::SquaredErrorHead
        )
    }

    /// Number of trainable parameters: dense layers hold `in*out` weights plus
    /// `out` biases, everything else is parameterless.
    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.in_dim * self.out_dim + self.out_dim,
            _ => 0,
        }
    }
}

/// A validated stack of layers ending in exactly one loss head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("model must have at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::config(format!("layer {i} has a zero dimension")));
            }
            if l.is_head() && i + 1 != layers.len() {
                return Err(Error::config(format!(
                    "loss head at layer {i} must be the last layer"
                )));
            }
        }
        if !layers.last().unwrap().is_head() {
            return Err(Error::config("model must end with a loss head"));
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::config(format!(
                    "layer dimension mismatch: out_dim {} feeds in_dim {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        Ok(ModelSpec { layers })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// Class count of the loss head.
    pub fn class_count(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn param_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.param_count()).collect()
    }

    pub fn param_counts_range(&self, from: usize, to: usize) -> Vec<usize> {
        self.layers[from..to].iter().map(|l| l.param_count()).collect()
    }

    pub fn total_params(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Checks that `params` carries exactly the layers `from..to` of this spec.
    pub fn check_params_range(&self, params: &ParamVector, from: usize, to: usize) -> Result<()> {
        if from > to || to > self.layers.len() {
            return Err(Error::config(format!(
                "layer range {from}..{to} out of bounds for {} layers",
                self.layers.len()
            )));
        }
        if params.layer_count() != to - from {
            return Err(Error::config(format!(
                "parameter vector covers {} layers, expected {}",
                params.layer_count(),
                to - from
            )));
        }
        for (k, l) in self.layers[from..to].iter().enumerate() {
            if params.layer_len(k) != l.param_count() {
                return Err(Error::config(format!(
                    "layer {} expects {} parameters, got {}",
                    from + k,
                    l.param_count(),
                    params.layer_len(k)
                )));
            }
        }
        Ok(())
    }
}

/// Glorot-uniform initialization for every dense layer (biases zero), drawn
/// from a single deterministic stream for the given seed.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = seeds::rng(seed);
    let mut params = ParamVector::zeros(&spec.param_counts());
    for (i, l) in spec.layers().iter().enumerate() {
        if l.kind == LayerKind::Dense {
            let limit = (6.0 / (l.in_dim + l.out_dim) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let slice = params.layer_mut(i);
            for w in slice.iter_mut().take(l.in_dim * l.out_dim) {
                *w = dist.sample(&mut rng);
            }
            // biases stay zero
        }
    }
    params
}

/// A mini-batch: row-major inputs plus integer class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::usage("batch must contain at least one sample"));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::usage(format!(
                "batch has {} inputs but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::usage(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug)]
enum LayerCache {
    Dense { input: Matrix },
    Relu { output: Matrix },
    SoftmaxXent { probs: Matrix },
    SquaredError { output: Matrix },
}

/// Saved activations from a forward pass over layers `from..to`, sufficient
/// to backpropagate through the same range.
#[derive(Debug)]
pub struct ForwardPass {
    pub output: Matrix,
    caches: Vec<LayerCache>,
    from: usize,
    to: usize,
    batch_rows: usize,
}

impl ForwardPass {
    pub fn range(&self) -> (usize, usize) {
        (self.from, self.to)
    }
}

/// Signal fed into `backward`: labels when the range ends at the loss head,
/// an upstream activation gradient otherwise.
pub enum BackSignal<'a> {
    Labels(&'a [usize]),
    Upstream(&'a Matrix),
}

/// Gradients produced by `backward`.
#[derive(Debug)]
pub struct BackwardPass {
    /// Gradients of the mean batch loss w.r.t. the parameters of the range.
    pub param_grads: ParamVector,
    /// Gradient w.r.t. the range's input activations (the cut-layer gradient
    /// when backpropagating a server-side range).
    pub input_grad: Matrix,
    /// Mean batch loss; present only when the range includes the loss head.
    pub loss: Option<f64>,
}

fn dense_forward(l: &LayerSpec, params: &[f64], input: &Matrix) -> Matrix {
    let (in_dim, out_dim) = (l.in_dim, l.out_dim);
    let weights = &params[..in_dim * out_dim];
    let biases = &params[in_dim * out_dim..];
    let mut out = Matrix::zeros(input.rows(), out_dim);
    for b in 0..input.rows() {
        let x = input.row(b);
        let row = out.row_mut(b);
        for (o, r) in row.iter_mut().enumerate() {
            let mut sum = biases[o];
            for (i, &xi) in x.iter().enumerate() {
                sum += weights[i * out_dim + o] * xi;
            }
            *r = sum;
        }
    }
    out
}

fn dense_backward(
    l: &LayerSpec,
    params: &[f64],
    input: &Matrix,
    upstream: &Matrix,
    param_grads: &mut [f64],
) -> Matrix {
    let (in_dim, out_dim) = (l.in_dim, l.out_dim);
    let weights = &params[..in_dim * out_dim];
    let (dw, db) = param_grads.split_at_mut(in_dim * out_dim);
    let mut input_grad = Matrix::zeros(input.rows(), in_dim);
    for b in 0..input.rows() {
        let x = input.row(b);
        let g = upstream.row(b);
        for (o, &go) in g.iter().enumerate() {
            db[o] += go;
            for (i, &xi) in x.iter().enumerate() {
                dw[i * out_dim + o] += xi * go;
            }
        }
        let gi = input_grad.row_mut(b);
        for (i, gii) in gi.iter_mut().enumerate() {
            let mut sum = 0.0;
            for (o, &go) in g.iter().enumerate() {
                sum += weights[i * out_dim + o] * go;
            }
            *gii = sum;
        }
    }
    input_grad
}

fn softmax(logits: &Matrix) -> Matrix {
    let mut probs = Matrix::zeros(logits.rows(), logits.cols());
    for b in 0..logits.rows() {
        let row = logits.row(b);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let out = probs.row_mut(b);
        for (c, &z) in row.iter().enumerate() {
            let e = (z - max).exp();
            out[c] = e;
            sum += e;
        }
        for p in out.iter_mut() {
            *p /= sum;
        }
    }
    probs
}

/// Runs layers `from..to` on `inputs`. `params` must carry exactly those
/// layers. `from == to` is the identity map (used for an empty client side).
///
/// Composition is exact: running `from..k` and then `k..to` produces the same
/// bits as running `from..to` in one call.
pub fn forward(
    spec: &ModelSpec,
    params: &ParamVector,
    inputs: &Matrix,
    from: usize,
    to: usize,
) -> Result<ForwardPass> {
    spec.check_params_range(params, from, to)?;
    if to > from && inputs.cols() != spec.layers()[from].in_dim {
        return Err(Error::config(format!(
            "input width {} does not match layer {} in_dim {}",
            inputs.cols(),
            from,
            spec.layers()[from].in_dim
        )));
    }
    let batch_rows = inputs.rows();
    let mut current = inputs.clone();
    let mut caches = Vec::with_capacity(to - from);
    for (k, l) in spec.layers()[from..to].iter().enumerate() {
        match l.kind {
            LayerKind::Dense => {
                let out = dense_forward(l, params.layer(k), &current);
                caches.push(LayerCache::Dense { input: current });
                current = out;
            }
            LayerKind::Relu => {
                let mut out = current;
                for v in out.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                caches.push(LayerCache::Relu {
                    output: out.clone(),
                });
                current = out;
            }
            LayerKind::SoftmaxXentHead => {
                let probs = softmax(&current);
                caches.push(LayerCache::SoftmaxXent {
                    probs: probs.clone(),
                });
                current = probs;
            }
            LayerKind::SquaredErrorHead => {
                caches.push(LayerCache::SquaredError {
                    output: current.clone(),
                });
            }
        }
    }
    Ok(ForwardPass {
        output: current,
        caches,
        from,
        to,
        batch_rows,
    })
}

/// Backpropagates through the range of a matching `forward` call.
///
/// When the range ends at the loss head, `signal` must be `Labels` and the
/// returned gradients are of the mean batch loss (including the `1/B`
/// factor). Otherwise `signal` must be the upstream activation gradient.
pub fn backward(
    spec: &ModelSpec,
    params: &ParamVector,
    pass: &ForwardPass,
    signal: &BackSignal<'_>,
) -> Result<BackwardPass> {
    let (from, to) = (pass.from, pass.to);
    spec.check_params_range(params, from, to)?;
    let ends_at_head = to == spec.layer_count() && to > from;
    let batch = pass.batch_rows as f64;

    let mut loss = None;
    let mut upstream: Matrix = match (signal, ends_at_head) {
        (BackSignal::Labels(labels), true) => {
            if labels.len() != pass.batch_rows {
                return Err(Error::usage(format!(
                    "{} labels for a batch of {}",
                    labels.len(),
                    pass.batch_rows
                )));
            }
            let classes = spec.class_count();
            if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
                return Err(Error::usage(format!(
                    "label {bad} out of range for {classes} classes"
                )));
            }
            match pass.caches.last().unwrap() {
                LayerCache::SoftmaxXent { probs } => {
                    let mut l_sum = 0.0;
                    let mut grad = Matrix::zeros(probs.rows(), probs.cols());
                    for b in 0..probs.rows() {
                        let p = probs.row(b);
                        l_sum += -(p[labels[b]].ln());
                        let g = grad.row_mut(b);
                        for (c, &pc) in p.iter().enumerate() {
                            let target = if c == labels[b] { 1.0 } else { 0.0 };
                            g[c] = (pc - target) / batch;
                        }
                    }
                    loss = Some(l_sum / batch);
                    grad
                }
                LayerCache::SquaredError { output } => {
                    let mut l_sum = 0.0;
                    let mut grad = Matrix::zeros(output.rows(), output.cols());
                    for b in 0..output.rows() {
                        let y = output.row(b);
                        let g = grad.row_mut(b);
                        for (c, &yc) in y.iter().enumerate() {
                            let target = if c == labels[b] { 1.0 } else { 0.0 };
                            let d = yc - target;
                            l_sum += 0.5 * d * d;
                            g[c] = d / batch;
                        }
                    }
                    loss = Some(l_sum / batch);
                    grad
                }
                _ => unreachable!("validated head placement"),
            }
        }
        (BackSignal::Upstream(g), false) => {
            if g.shape() != pass.output.shape() {
                return Err(Error::usage(format!(
                    "upstream gradient shape {:?} does not match output {:?}",
                    g.shape(),
                    pass.output.shape()
                )));
            }
            (*g).clone()
        }
        (BackSignal::Labels(_), false) => {
            return Err(Error::usage(
                "labels supplied but the forward range does not end at the loss head",
            ));
        }
        (BackSignal::Upstream(_), true) => {
            return Err(Error::usage(
                "upstream gradient supplied to a range ending at the loss head; pass labels",
            ));
        }
    };

    let mut param_grads = ParamVector::zeros(&spec.param_counts_range(from, to));
    let head_layers = if ends_at_head { 1 } else { 0 };
    for k in (0..(to - from) - head_layers).rev() {
        let l = &spec.layers()[from + k];
        match (&pass.caches[k], l.kind) {
            (LayerCache::Dense { input }, LayerKind::Dense) => {
                let grads = param_grads.layer_mut(k);
                upstream = dense_backward(l, params.layer(k), input, &upstream, grads);
            }
            (LayerCache::Relu { output }, LayerKind::Relu) => {
                for b in 0..upstream.rows() {
                    for c in 0..upstream.cols() {
                        if output.get(b, c) <= 0.0 {
                            upstream.set(b, c, 0.0);
                        }
                    }
                }
            }
            _ => return Err(Error::usage("forward cache does not match model spec")),
        }
    }
    Ok(BackwardPass {
        param_grads,
        input_grad: upstream,
        loss,
    })
}

/// Top-1 accuracy of the model on a labelled set. Argmax ties break toward
/// the lowest class index.
pub fn evaluate(
    spec: &ModelSpec,
    params: &ParamVector,
    inputs: &Matrix,
    labels: &[usize],
) -> Result<f64> {
    if labels.is_empty() || inputs.rows() == 0 {
        return Err(Error::usage("cannot evaluate on an empty dataset"));
    }
    if labels.len() != inputs.rows() {
        return Err(Error::usage("input and label counts differ"));
    }
    let pass = forward(spec, params, inputs, 0, spec.layer_count())?;
    let mut correct = 0usize;
    for b in 0..pass.output.rows() {
        let row = pass.output.row(b);
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        if best == labels[b] {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}
