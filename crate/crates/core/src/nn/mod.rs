//! Minimal dense neural-network kernel: forward pass, exact backpropagation,
//! loss heads, and prediction, for MLP classifiers on low-dimensional data.

mod matrix;
mod model;
mod params;

pub use matrix::Matrix;
pub use model::{
    backward, evaluate, forward, init_params, BackSignal, BackwardPass, Batch, ForwardPass,
    LayerKind, LayerSpec, ModelSpec,
};
pub use params::ParamVector;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn two_layer_spec() -> ModelSpec {
        ModelSpec::new(vec![
            LayerSpec::dense(3, 4),
            LayerSpec::relu(4),
            LayerSpec::dense(4, 2),
            LayerSpec::softmax_xent_head(2),
        ])
        .unwrap()
    }

    #[test]
    fn identity_dense_layer_passes_input_through() {
        let spec = ModelSpec::new(vec![
            LayerSpec::dense(2, 2),
            LayerSpec::squared_error_head(2),
        ])
        .unwrap();
        // weights = I, bias = 0
        let params = ParamVector::new(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0], vec![0, 6, 6]).unwrap();
        let x = Matrix::from_rows(&[vec![0.3, -1.7], vec![2.0, 5.0]]).unwrap();
        let dense_only = params.slice_layers(0, 1).unwrap();
        let pass = forward(&spec, &dense_only, &x, 0, 1).unwrap();
        assert_eq!(pass.output, x);
    }

    #[test]
    fn relu_clamps_negative_inputs() {
        let spec = ModelSpec::new(vec![
            LayerSpec::relu(2),
            LayerSpec::squared_error_head(2),
        ])
        .unwrap();
        let params = ParamVector::zeros(&[0]);
        let x = Matrix::from_rows(&[vec![-1.0, 2.0]]).unwrap();
        let pass = forward(&spec, &params, &x, 0, 1).unwrap();
        assert_eq!(pass.output.row(0), &[0.0, 2.0]);
    }

    #[test]
    fn forward_matches_independent_matrix_product() {
        // 2-layer MLP (no relu between, to keep the oracle a pure matrix
        // product): y = (x W1 + b1) W2 + b2, evaluated by straight loops here.
        let spec = ModelSpec::new(vec![
            LayerSpec::dense(3, 4),
            LayerSpec::dense(4, 2),
            LayerSpec::softmax_xent_head(2),
        ])
        .unwrap();
        let params = init_params(&spec, 0);
        let x = vec![0.25, -0.5, 1.5];

        let w1 = params.layer(0);
        let mut h = [0.0f64; 4];
        for o in 0..4 {
            let mut s = w1[3 * 4 + o]; // bias
            for (i, &xi) in x.iter().enumerate() {
                s += w1[i * 4 + o] * xi;
            }
            h[o] = s;
        }
        let w2 = params.layer(1);
        let mut y = [0.0f64; 2];
        for o in 0..2 {
            let mut s = w2[4 * 2 + o];
            for (i, &hi) in h.iter().enumerate() {
                s += w2[i * 2 + o] * hi;
            }
            y[o] = s;
        }

        let input = Matrix::from_rows(&[x]).unwrap();
        let dense_part = params.slice_layers(0, 2).unwrap();
        let pass = forward(&spec, &dense_part, &input, 0, 2).unwrap();
        assert_eq!(pass.output.row(0), &y);
    }

    #[test]
    fn split_forward_composes_exactly() {
        let spec = two_layer_spec();
        let params = init_params(&spec, 42);
        let x = Matrix::from_rows(&[vec![0.1, 0.2, -0.3], vec![1.0, -1.0, 0.5]]).unwrap();
        let full = forward(&spec, &params, &x, 0, spec.layer_count()).unwrap();
        for cut in 0..spec.layer_count() {
            let client = params.slice_layers(0, cut).unwrap();
            let server = params.slice_layers(cut, spec.layer_count()).unwrap();
            let lower = forward(&spec, &client, &x, 0, cut).unwrap();
            let upper = forward(&spec, &server, &lower.output, cut, spec.layer_count()).unwrap();
            assert_eq!(upper.output, full.output, "cut at {cut}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let spec = two_layer_spec();
        let params = init_params(&spec, 9);
        let x = Matrix::from_rows(&[vec![0.4, 0.6, -0.2]]).unwrap();
        let a = forward(&spec, &params, &x, 0, spec.layer_count()).unwrap();
        let b = forward(&spec, &params, &x, 0, spec.layer_count()).unwrap();
        assert_eq!(a.output, b.output);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let spec = two_layer_spec();
        assert_eq!(init_params(&spec, 5), init_params(&spec, 5));
        assert_ne!(
            init_params(&spec, 5).values(),
            init_params(&spec, 6).values()
        );
    }

    #[test]
    fn one_hot_prediction_gives_zero_head_gradient() {
        // logits [1000, 0] softmax to exactly [1, 0] in f64, so a correct label
        // produces an exactly zero gradient at the head.
        let spec = ModelSpec::new(vec![LayerSpec::softmax_xent_head(2)]).unwrap();
        let params = ParamVector::zeros(&[0]);
        let x = Matrix::from_rows(&[vec![1000.0, 0.0]]).unwrap();
        let pass = forward(&spec, &params, &x, 0, 1).unwrap();
        assert_eq!(pass.output.row(0), &[1.0, 0.0]);
        let back = backward(&spec, &params, &pass, &BackSignal::Labels(&[0])).unwrap();
        assert_eq!(back.input_grad.data(), &[0.0, 0.0]);
        assert_eq!(back.loss, Some(0.0));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = two_layer_spec();
        let params = init_params(&spec, 3);
        let x = Matrix::from_rows(&[vec![0.5, -0.5, 0.25]]).unwrap();
        let sub = params.slice_layers(0, 3).unwrap();
        let pass = forward(&spec, &sub, &x, 0, 3).unwrap();
        let zeros = Matrix::zeros(1, 2);
        let back = backward(&spec, &sub, &pass, &BackSignal::Upstream(&zeros)).unwrap();
        assert!(back.param_grads.values().iter().all(|&v| v == 0.0));
        assert!(back.input_grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_signal_must_match_range() {
        let spec = two_layer_spec();
        let params = init_params(&spec, 3);
        let x = Matrix::from_rows(&[vec![0.5, -0.5, 0.25]]).unwrap();

        let sub = params.slice_layers(0, 2).unwrap();
        let pass = forward(&spec, &sub, &x, 0, 2).unwrap();
        let err = backward(&spec, &sub, &pass, &BackSignal::Labels(&[0])).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));

        let full = forward(&spec, &params, &x, 0, spec.layer_count()).unwrap();
        let g = Matrix::zeros(1, 2);
        let err = backward(&spec, &params, &full, &BackSignal::Upstream(&g)).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn forward_rejects_mismatched_params() {
        let spec = two_layer_spec();
        let wrong = ParamVector::zeros(&[3]);
        let x = Matrix::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap();
        let err = forward(&spec, &wrong, &x, 0, spec.layer_count()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn evaluate_counts_and_breaks_ties_low() {
        let spec = ModelSpec::new(vec![
            LayerSpec::dense(2, 2),
            LayerSpec::squared_error_head(2),
        ])
        .unwrap();
        // identity weights: prediction = argmax of the input itself
        let params = ParamVector::new(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0], vec![0, 6, 6]).unwrap();
        let x = Matrix::from_rows(&[
            vec![2.0, 1.0], // pred 0
            vec![0.0, 3.0], // pred 1
            vec![1.0, 1.0], // tie -> pred 0
            vec![5.0, 0.0], // pred 0
        ])
        .unwrap();
        // 3 of 4 correct
        let acc = evaluate(&spec, &params, &x, &[0, 1, 0, 1]).unwrap();
        assert_eq!(acc, 0.75);
        let all = evaluate(&spec, &params, &x, &[0, 1, 0, 0]).unwrap();
        assert_eq!(all, 1.0);
        let none = evaluate(&spec, &params, &x, &[1, 0, 1, 1]).unwrap();
        assert_eq!(none, 0.0);
        let err = evaluate(&spec, &params, &Matrix::zeros(0, 2), &[]).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn batch_validates_labels() {
        let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(Batch::new(x.clone(), vec![2], 2).is_err());
        assert!(Batch::new(x, vec![1], 2).is_ok());
    }

    #[test]
    fn spec_validation_rejects_bad_stacks() {
        assert!(ModelSpec::new(vec![LayerSpec::dense(2, 3)]).is_err()); // no head
        assert!(ModelSpec::new(vec![
            LayerSpec::softmax_xent_head(2),
            LayerSpec::dense(2, 2),
            LayerSpec::squared_error_head(2),
        ])
        .is_err()); // head not last
        assert!(ModelSpec::new(vec![
            LayerSpec::dense(2, 3),
            LayerSpec::dense(4, 2),
            LayerSpec::softmax_xent_head(2),
        ])
        .is_err()); // dim mismatch
    }
}
