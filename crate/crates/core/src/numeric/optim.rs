use std::collections::BTreeMap;

use super::{NumericError, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: `p -= lr * weight_decay * p` each step.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5 }
    }
}

/// First/second moment estimates per parameter plus the step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update with decoupled weight decay.
///
/// Only parameters present in `grads` are touched; ablated pathways that never
/// reach the loss therefore stay frozen.
pub fn adam_step(
    params: &mut ParamSet<f32>,
    grads: &BTreeMap<String, Tensor<f32>>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), NumericError> {
    for (name, g) in grads {
        let p = params.get(name).ok_or_else(|| NumericError::MissingParam(name.clone()))?;
        if p.shape() != g.shape() {
            return Err(NumericError::Shape(format!(
                "gradient for {name} has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("validated");
        let m = state.first.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.second.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gi = gi as f64;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            let old = *w as f64;
            *w = (old - cfg.lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * old)) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, vals: Vec<f32>) -> ParamSet<f32> {
        let mut p = ParamSet::new();
        p.insert(name, Tensor::row_vector(vals));
        p
    }

    #[test]
    fn zero_grad_without_decay_is_noop() {
        let mut p = one("w", vec![0.5, -1.5]);
        let before = p.clone();
        let grads = BTreeMap::from([("w".to_string(), Tensor::zeros(1, 2))]);
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        adam_step(&mut p, &grads, &mut AdamState::new(), &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_unit_step_moves_by_lr() {
        let mut p = one("w", vec![0.0, 1.0, -3.0]);
        let grads = BTreeMap::from([("w".to_string(), Tensor::filled(1, 3, 1.0))]);
        let cfg = AdamConfig { lr: 1e-3, weight_decay: 0.0, ..AdamConfig::default() };
        adam_step(&mut p, &grads, &mut AdamState::new(), &cfg).unwrap();
        let expect = [-1e-3, 1.0 - 1e-3, -3.0 - 1e-3];
        for (a, b) in p.get("w").unwrap().data().iter().zip(expect) {
            assert!((*a as f64 - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn decay_scales_params() {
        let mut p = one("w", vec![2.0, -4.0]);
        let grads = BTreeMap::from([("w".to_string(), Tensor::zeros(1, 2))]);
        let cfg = AdamConfig { lr: 1e-4, weight_decay: 1e-5, ..AdamConfig::default() };
        adam_step(&mut p, &grads, &mut AdamState::new(), &cfg).unwrap();
        let k = 1.0 - 1e-4 * 1e-5;
        let d = p.get("w").unwrap().data();
        assert!((d[0] as f64 - 2.0 * k).abs() < 1e-7 && (d[1] as f64 + 4.0 * k).abs() < 1e-7);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = one("w", vec![1.0, 2.0]);
        let grads = BTreeMap::from([("w".to_string(), Tensor::zeros(1, 3))]);
        assert!(adam_step(&mut p, &grads, &mut AdamState::new(), &AdamConfig::default()).is_err());
    }

    #[test]
    fn params_without_gradient_are_frozen() {
        let mut p = one("w", vec![1.0]);
        p.insert("frozen", Tensor::row_vector(vec![7.0]));
        let grads = BTreeMap::from([("w".to_string(), Tensor::filled(1, 1, 1.0))]);
        adam_step(&mut p, &grads, &mut AdamState::new(), &AdamConfig::default()).unwrap();
        assert_eq!(p.get("frozen").unwrap().data(), &[7.0]);
    }
}
