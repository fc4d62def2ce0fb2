use super::model::ModelParams;
use super::FedError;

/// Elementwise weighted mean of client parameter vectors.
pub fn fedavg_aggregate(models: &[&ModelParams], weights: &[f64]) -> Result<ModelParams, FedError> {
    let first = models.first().ok_or(FedError::NoClients)?;
    if models.len() != weights.len() {
        return Err(FedError::Weights(format!(
            "{} models but {} weights",
            models.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(FedError::Weights(
            "weights must be finite and non-negative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(FedError::Weights(format!("weights sum to {total}, not 1")));
    }
    for (i, m) in models.iter().enumerate() {
        if m.schema != first.schema || m.params.len() != first.params.len() {
            return Err(FedError::SchemaMismatch(i));
        }
        if !m.all_finite() {
            return Err(FedError::NonFiniteParam(i));
        }
    }
    let mut acc = vec![0.0f64; first.params.len()];
    for (m, &w) in models.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (a, &p) in acc.iter_mut().zip(&m.params) {
            *a += w * f64::from(p);
        }
    }
    Ok(ModelParams {
        schema: first.schema.clone(),
        params: acc.into_iter().map(|a| a as f32).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fed::model::{Layer, Schema, Shape};
    use proptest::prelude::*;

    fn four_param_net(p: [f32; 4]) -> ModelParams {
        let s = Schema::new(
            Shape {
                channels: 1,
                height: 1,
                width: 1,
            },
            vec![
                Layer::Dense {
                    inputs: 1,
                    outputs: 2,
                },
                Layer::Softmax,
            ],
        )
        .unwrap();
        ModelParams::new(s, p.to_vec()).unwrap()
    }

    #[test]
    fn identical_models_fixed_point() {
        let m = four_param_net([0.1, -7.25, 3.3, 1e-6]);
        let out = fedavg_aggregate(&[&m, &m, &m], &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn midpoint_by_hand() {
        let a = four_param_net([1.0, 2.0, -4.0, 0.5]);
        let b = four_param_net([3.0, -2.0, 4.0, 1.5]);
        let out = fedavg_aggregate(&[&a, &b], &[0.5, 0.5]).unwrap();
        assert_eq!(out.params, vec![2.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn degenerate_weighting() {
        let a = four_param_net([1.0, 2.0, 3.0, 4.0]);
        let b = four_param_net([9.0, 9.0, 9.0, 9.0]);
        assert_eq!(fedavg_aggregate(&[&a, &b], &[1.0, 0.0]).unwrap(), a);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = four_param_net([1.0, 2.0, 3.0, 4.0]);
        let nan = four_param_net([1.0, f32::NAN, 3.0, 4.0]);
        let other = ModelParams::zeros(
            Schema::new(
                Shape {
                    channels: 1,
                    height: 1,
                    width: 2,
                },
                vec![
                    Layer::Dense {
                        inputs: 2,
                        outputs: 2,
                    },
                    Layer::Softmax,
                ],
            )
            .unwrap(),
        );
        assert_eq!(
            fedavg_aggregate(&[&a, &nan], &[0.5, 0.5]),
            Err(FedError::NonFiniteParam(1))
        );
        assert_eq!(
            fedavg_aggregate(&[&a, &other], &[0.5, 0.5]),
            Err(FedError::SchemaMismatch(1))
        );
        assert!(matches!(
            fedavg_aggregate(&[&a, &a], &[0.5, 0.6]),
            Err(FedError::Weights(_))
        ));
        assert!(matches!(
            fedavg_aggregate(&[&a, &a], &[1.5, -0.5]),
            Err(FedError::Weights(_))
        ));
    }

    proptest! {
        #[test]
        fn result_in_elementwise_hull(
            vals in prop::collection::vec(prop::array::uniform4(-1e3f32..1e3), 1..6),
            raw in prop::collection::vec(0.0f64..1.0, 6),
        ) {
            let models: Vec<ModelParams> = vals.iter().map(|v| four_param_net(*v)).collect();
            let mut w: Vec<f64> = raw[..models.len()].iter().map(|x| x + 1e-3).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            let total: f64 = w.iter().sum();
            w[0] += 1.0 - total;
            let refs: Vec<&ModelParams> = models.iter().collect();
            let out = fedavg_aggregate(&refs, &w).unwrap();
            for j in 0..4 {
                let lo = vals.iter().map(|v| v[j]).fold(f32::INFINITY, f32::min);
                let hi = vals.iter().map(|v| v[j]).fold(f32::NEG_INFINITY, f32::max);
                prop_assert!(out.params[j] >= lo && out.params[j] <= hi);
            }
        }
    }
}
