//! Dense linear algebra and fully-connected networks.

mod activation;
mod matrix;
mod network;
mod rmsprop;

pub use activation::{sigmoid, Activation, DEFAULT_LEAKY_SLOPE};
pub use matrix::Matrix;
pub(crate) use network::backprop_into;
pub use network::{
    backward, backward_full, forward, input_gradient, predict, ActivationTrace, Backprop,
    GradientSet, NetworkSpec, ParameterSet,
};
pub use rmsprop::{
    clip_in_place, clip_weights, rmsprop_step, Direction, RmspropState, DEFAULT_DECAY,
    DEFAULT_STABILIZER,
};

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(w: f64, act: Activation) -> (NetworkSpec, ParameterSet<f64>) {
        let spec = NetworkSpec::new(vec![1, 1], vec![act], true).unwrap();
        let mut p = ParameterSet::zeros(&spec);
        p.weights[0].set(0, 0, w);
        (spec, p)
    }

    #[test]
    fn identity_layer_is_linear() {
        let (spec, p) = single(2.0, Activation::Identity);
        let (out, trace) = forward(&spec, &p, &[3.0]).unwrap();
        assert_eq!(out, vec![6.0]);
        assert_eq!(trace.input(), &[3.0]);
        assert_eq!(trace.pre_activations[0], vec![6.0]);
    }

    #[test]
    fn zero_sigmoid_layer_outputs_half() {
        let (spec, p) = single(0.0, Activation::Sigmoid);
        for x in [-5.0, 0.0, 17.0] {
            assert_eq!(forward(&spec, &p, &[x]).unwrap().0, vec![0.5]);
        }
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let (spec, p) = single(1.0, Activation::Identity);
        assert!(matches!(
            forward(&spec, &p, &[1.0, 2.0]),
            Err(crate::DpganError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn linear_weight_gradient_is_input() {
        let spec = NetworkSpec::new(vec![1, 1], vec![Activation::Identity], false).unwrap();
        let mut p = ParameterSet::zeros(&spec);
        p.weights[0].set(0, 0, 0.7);
        let (_, trace) = forward(&spec, &p, &[-1.25]).unwrap();
        let g = backward(&spec, &p, &trace, &[1.0]).unwrap();
        assert_eq!(g.weight(0).get(0, 0), -1.25);
        assert_eq!(g.norm(), 1.25);
    }

    #[test]
    fn zero_seed_gives_zero_gradient() {
        let spec = NetworkSpec::uniform(vec![3, 4, 2], Activation::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ParameterSet::<f64>::uniform(&spec, 1.0, &mut rng);
        let (_, trace) = forward(&spec, &p, &[0.1, -0.2, 0.3]).unwrap();
        let g = backward(&spec, &p, &trace, &[0.0, 0.0]).unwrap();
        assert!(g.is_zero());
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn bias_free_spec_has_empty_biases() {
        let spec = NetworkSpec::uniform(vec![3, 2, 1], Activation::Sigmoid)
            .unwrap()
            .without_bias();
        let p = ParameterSet::<f64>::zeros(&spec);
        assert_eq!(p.len(), 3 * 2 + 2);
        assert_eq!(spec.param_count(), p.len());
        assert!(p.biases.iter().all(Vec::is_empty));
    }

    #[test]
    fn rmsprop_zero_gradient_only_decays_state() {
        let spec = NetworkSpec::uniform(vec![2, 1], Activation::Identity).unwrap();
        let mut p = ParameterSet::<f64>::zeros(&spec);
        p.weights[0].set(0, 1, 0.3);
        let state = RmspropState::with_defaults(p.len())
            .with_running_sq_avg(vec![1.0, 2.0, 4.0])
            .unwrap();
        let g = GradientSet::zeros(&spec);
        let (p2, s2) = rmsprop_step(&p, &g, &state, 0.01, Direction::Ascent).unwrap();
        assert_eq!(p2, p);
        assert_eq!(s2.running_sq_avg(), &[0.9, 1.8, 3.6]);
    }

    #[test]
    fn rmsprop_single_descent_step() {
        let spec = NetworkSpec::new(vec![1, 1], vec![Activation::Identity], false).unwrap();
        let p = ParameterSet::<f64>::zeros(&spec);
        let g = GradientSet::from_parts(
            vec![Matrix::from_vec(1, 1, vec![1.0]).unwrap()],
            vec![vec![]],
        );
        let state = RmspropState::new(1, 0.9, 1e-8).unwrap();
        let (p2, s2) = rmsprop_step(&p, &g, &state, 0.01, Direction::Descent).unwrap();
        // 1 - 0.9 is not exactly 0.1 in binary.
        assert!((s2.running_sq_avg()[0] - 0.1).abs() < 1e-16);
        let expected = -0.01 / (0.1_f64 + 1e-8).sqrt();
        assert!((p2.weights[0].get(0, 0) - expected).abs() < 1e-15);
        assert!((p2.weights[0].get(0, 0) - (-0.0316227750)).abs() < 1e-9);
    }

    #[test]
    fn rmsprop_rejects_bad_hyperparameters() {
        assert!(RmspropState::<f64>::new(3, 1.0, 1e-8).is_err());
        assert!(RmspropState::<f64>::new(3, 0.9, 0.0).is_err());
        assert!(RmspropState::<f64>::with_defaults(1)
            .with_running_sq_avg(vec![-1.0])
            .is_err());
    }

    #[test]
    fn clip_examples() {
        let spec = NetworkSpec::new(vec![3, 1], vec![Activation::Identity], false).unwrap();
        let p = ParameterSet::from_flat(&spec, &[-3.0, 0.005, 0.5]).unwrap();
        assert_eq!(clip_weights(&p, 0.01).to_flat(), vec![-0.01, 0.005, 0.01]);
        let inside = ParameterSet::from_flat(&spec, &[-0.01, 0.0, 0.009]).unwrap();
        assert_eq!(clip_weights(&inside, 0.01), inside);
    }

    #[test]
    fn clip_hits_the_bound_when_exceeded() {
        let spec = NetworkSpec::uniform(vec![6, 5, 1], Activation::Sigmoid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = ParameterSet::<f64>::uniform(&spec, 1.0, &mut rng);
        assert!(p.max_abs() > 0.1);
        let c = clip_weights(&p, 0.1);
        assert_eq!(c.max_abs(), 0.1);
        for (a, b) in p.values().zip(c.values()) {
            let oracle = if a.abs() <= 0.1 { *a } else { 0.1 * a.signum() };
            assert_eq!(*b, oracle);
        }
    }

    #[test]
    fn works_in_single_precision() {
        let spec = NetworkSpec::uniform(vec![2, 3, 1], Activation::Sigmoid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ParameterSet::<f32>::uniform(&spec, 0.5, &mut rng);
        let (out, trace) = forward(&spec, &p, &[0.25f32, -0.5]).unwrap();
        assert!(out[0] > 0.0 && out[0] < 1.0);
        let g = backward(&spec, &p, &trace, &[1.0f32]).unwrap();
        assert!(g.norm() > 0.0);
    }
}
