use serde::{Deserialize, Serialize};

use crate::numeric::NumericError;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// The two soft switches of one decoding step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchGates {
    pub x: f64,
    pub y: f64,
}

impl SwitchGates {
    pub fn from_logits(x: f64, y: f64) -> Self {
        Self { x: sigmoid(x), y: sigmoid(y) }
    }

    /// Effective (entity, concept, generation) weights:
    /// `(x, y(1-x), (1-x)(1-y))`.
    pub fn coefficients(&self) -> [f64; 3] {
        [self.x, self.y * (1.0 - self.x), (1.0 - self.x) * (1.0 - self.y)]
    }
}

/// `x = σ(w_x·[m0; m] + b_x)`, `y = σ(w_y·[m0; m] + b_y)`.
pub fn compute_switches(
    first_input: &[f64],
    context: &[f64],
    wx: &[f64],
    bx: f64,
    wy: &[f64],
    by: f64,
) -> Result<SwitchGates, NumericError> {
    let n = first_input.len() + context.len();
    if wx.len() != n || wy.len() != n {
        return Err(NumericError::Shape(format!("switch weights need {n} entries, got {} and {}", wx.len(), wy.len())));
    }
    let dot = |w: &[f64]| first_input.iter().chain(context).zip(w).map(|(a, b)| a * b).sum::<f64>();
    Ok(SwitchGates::from_logits(dot(wx) + bx, dot(wy) + by))
}

/// Softmax of `context · w + b`.
pub fn baseline_distribution(context: &[f64], w: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> =
        (0..b.len()).map(|j| b[j] + context.iter().zip(w).map(|(c, row)| c * row[j]).sum::<f64>()).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Combines the generation distribution with the entity and concept pointer
/// distributions over an extended vocabulary of `width` symbols.
///
/// `entity_symbols[k]` / `concept_symbols[i]` give the symbol receiving
/// `alpha_entity[k]` / `alpha_concept[i]`; repeated symbols accumulate. An
/// empty pointer distribution hands its coefficient to generation.
pub fn mix_distributions(
    base: &[f64],
    alpha_entity: &[f64],
    alpha_concept: &[f64],
    coefficients: [f64; 3],
    entity_symbols: &[usize],
    concept_symbols: &[usize],
    width: usize,
) -> Result<Vec<f64>, NumericError> {
    if alpha_entity.len() != entity_symbols.len() || alpha_concept.len() != concept_symbols.len() {
        return Err(NumericError::Shape("pointer weights and symbol lists differ in length".into()));
    }
    if base.len() > width || entity_symbols.iter().chain(concept_symbols).any(|&s| s >= width) {
        return Err(NumericError::Shape(format!("symbol outside the extended vocabulary of {width}")));
    }
    let [mut cx, mut cy, mut cg] = coefficients;
    if alpha_entity.is_empty() {
        cg += cx;
        cx = 0.0;
    }
    if alpha_concept.is_empty() {
        cg += cy;
        cy = 0.0;
    }
    let mut out = vec![0.0; width];
    for (o, p) in out.iter_mut().zip(base) {
        *o = cg * p;
    }
    for (&s, a) in entity_symbols.iter().zip(alpha_entity) {
        out[s] += cx * a;
    }
    for (&s, a) in concept_symbols.iter().zip(alpha_concept) {
        out[s] += cy * a;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn switch_examples() {
        let g = SwitchGates::from_logits(0.0, 0.0);
        assert_eq!(g.coefficients(), [0.5, 0.25, 0.25]);
        let g = SwitchGates::from_logits(1e6, 3.0);
        assert_eq!(g.coefficients(), [1.0, 0.0, 0.0]);
        let g = SwitchGates::from_logits(-1e6, -1e6);
        assert_eq!(g.coefficients(), [0.0, 0.0, 1.0]);
        let g = compute_switches(&[1.0], &[2.0], &[0.5, -0.25], 0.0, &[0.0, 0.0], 0.0).unwrap();
        assert_eq!((g.x, g.y), (0.5, 0.5));
        assert!(compute_switches(&[1.0], &[2.0], &[0.5], 0.0, &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn baseline_examples() {
        let p = baseline_distribution(&[1.0], &[vec![2.0, 0.0]], &[0.0, 0.0]);
        assert!((p[0] - 0.880797).abs() < 1e-6 && (p[1] - 0.119203).abs() < 1e-6);
        let p = baseline_distribution(&[0.3, -0.2], &[vec![0.0; 4], vec![0.0; 4]], &[0.0; 4]);
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn pure_generation_pads_with_zeros() {
        let base = [0.1, 0.2, 0.7];
        let out = mix_distributions(&base, &[0.6, 0.4], &[1.0], [0.0, 0.0, 1.0], &[3, 4], &[5], 6).unwrap();
        assert_eq!(out, vec![0.1, 0.2, 0.7, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn oov_concept_mass_comes_only_from_pointer() {
        let base = [0.5, 0.5];
        let out = mix_distributions(&base, &[], &[1.0], [0.0, 0.3, 0.7], &[], &[2], 3).unwrap();
        assert!((out[2] - 0.3).abs() < 1e-15);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_entity_point_mass() {
        let out = mix_distributions(&[0.3, 0.7], &[1.0], &[], [1.0, 0.0, 0.0], &[2], &[], 3).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn duplicate_concepts_accumulate_and_empty_sets_redistribute() {
        let g = SwitchGates::from_logits(0.4, -0.3).coefficients();
        let out = mix_distributions(&[0.25; 4], &[], &[0.2, 0.5, 0.3], g, &[], &[4, 4, 1], 5).unwrap();
        assert!((out[4] - 0.7 * g[1]).abs() < 1e-15);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((out[0] - 0.25 * (g[0] + g[2])).abs() < 1e-15);
    }
}
