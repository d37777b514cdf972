//! Shared fixtures for the protocol integration tests.

use splitfl_core::data::Dataset;
use splitfl_core::nn::{LayerSpec, Matrix, ModelSpec, ParamVector};
use splitfl_core::protocols::{CohortClient, RoundCohort};

pub fn mlp_spec(in_dim: usize, hidden: usize, classes: usize) -> ModelSpec {
    ModelSpec::new(vec![
        LayerSpec::dense(in_dim, hidden),
        LayerSpec::relu(hidden),
        LayerSpec::dense(hidden, classes),
        LayerSpec::softmax_xent_head(classes),
    ])
    .unwrap()
}

/// Two stacked 1x1 dense layers with a squared-error head: four parameters
/// total, two per side when cut at 1.
pub fn scalar_split_spec() -> ModelSpec {
    ModelSpec::new(vec![
        LayerSpec::dense(1, 1),
        LayerSpec::dense(1, 1),
        LayerSpec::squared_error_head(1),
    ])
    .unwrap()
}

pub fn dataset_from_rows(rows: &[(Vec<f64>, usize)], classes: usize) -> Dataset {
    let inputs: Vec<Vec<f64>> = rows.iter().map(|(x, _)| x.clone()).collect();
    let labels: Vec<usize> = rows.iter().map(|(_, y)| *y).collect();
    Dataset::new(Matrix::from_rows(&inputs).unwrap(), labels, classes).unwrap()
}

/// A hand-built cohort entry; `steps` is taken from the batch plan length.
pub fn cohort_client(id: usize, weight: f64, batches: Vec<Vec<usize>>, classes: usize) -> CohortClient {
    CohortClient {
        id,
        weight,
        steps: batches.len(),
        shard_size: batches.iter().map(|b| b.len()).sum(),
        batches,
        class_histogram: vec![1.0; classes],
        initial_client_buffer: None,
    }
}

pub fn cohort(clients: Vec<CohortClient>) -> RoundCohort {
    RoundCohort { clients }
}

pub fn params_from(values: &[f64], offsets: &[usize]) -> ParamVector {
    ParamVector::new(values.to_vec(), offsets.to_vec()).unwrap()
}

pub fn assert_bits_eq(a: &ParamVector, b: &ParamVector, what: &str) {
    assert_eq!(a.offsets(), b.offsets(), "{what}: shapes differ");
    for (i, (x, y)) in a.values().iter().zip(b.values()).enumerate() {
        assert!(
            x.to_bits() == y.to_bits(),
            "{what}: element {i} differs: {x:?} vs {y:?}"
        );
    }
}
