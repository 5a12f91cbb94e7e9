mod common;

use sensecap::decoder::sequence_nll;
use sensecap::distinguish::entity_attention;
use sensecap::enrich::concept_attention;
use sensecap::numeric::{grad_check, multi_head, AttentionVars, GradCheckConfig, ParamSet, Tape, Tensor};
use sensecap::sample::Variant;

use common::{to_numeric, toy_config, toy_model, toy_sample};

/// Matrix with entries `((a*i + b*j) mod m - off) / div`, shared with the
/// numpy oracle that produced the expected values below.
fn mat(rows: usize, cols: usize, a: usize, b: usize, m: usize, off: f64, div: f64) -> Tensor<f64> {
    let data = (0..rows).flat_map(|i| (0..cols).map(move |j| (((a * i + b * j) % m) as f64 - off) / div)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

fn assert_close(got: &Tensor<f64>, want: &[&[f64]], tol: f64) {
    assert_eq!(got.rows(), want.len());
    for (r, row) in want.iter().enumerate() {
        for (c, w) in row.iter().enumerate() {
            assert!((got.get(r, c) - w).abs() < tol, "[{r},{c}] {} vs {w}", got.get(r, c));
        }
    }
}

fn projections() -> (Tensor<f64>, Tensor<f64>) {
    (mat(4, 4, 1, 2, 5, 2.0, 4.0), mat(4, 4, 3, 1, 7, 3.0, 5.0))
}

#[test]
fn entity_attention_matches_oracle() {
    let (wq, wk) = projections();
    let mut p = ParamSet::<f64>::new();
    p.insert("distinguish.q", wq);
    p.insert("distinguish.k", wk);
    let mut tape = Tape::new(&p);
    let ctx = tape.leaf(mat(2, 4, 3, 5, 7, 3.0, 4.0));
    let ent = tape.leaf(mat(2, 4, 2, 3, 5, 2.0, 3.0));
    let a = entity_attention(&mut tape, ctx, ent, 2).unwrap();
    assert_close(tape.value(a), &[&[0.4661254272683383, 0.5338745727316616], &[0.5428238936746809, 0.45717610632531913]], 1e-12);
}

#[test]
fn concept_attention_matches_oracle() {
    let (wq, wk) = projections();
    let mut p = ParamSet::<f64>::new();
    p.insert("enrich.attn.q", wk);
    p.insert("enrich.attn.k", wq);
    let mut tape = Tape::new(&p);
    let ctx = tape.leaf(mat(1, 4, 1, 3, 5, 2.0, 2.0));
    let pairs = tape.leaf(mat(3, 4, 4, 1, 7, 3.0, 3.0));
    let a = concept_attention(&mut tape, ctx, pairs, 1).unwrap();
    assert_close(tape.value(a), &[&[0.3042685056019039, 0.3731860990748222, 0.3225453953232738]], 1e-12);
}

#[test]
fn first_layer_masked_self_attention_matches_oracle() {
    let (wq, wk) = projections();
    let mut p = ParamSet::<f64>::new();
    p.insert("l.q", wq);
    p.insert("l.k", wk);
    p.insert("l.v", mat(4, 4, 5, 2, 7, 3.0, 6.0));
    p.insert("l.o", mat(4, 4, 1, 4, 5, 2.0, 5.0));
    p.insert("l.g", Tensor::filled(1, 4, 1.0));
    p.insert("l.b", Tensor::zeros(1, 4));
    let mut tape = Tape::new(&p);
    let w = AttentionVars::bind(&mut tape, "l", true).unwrap();
    let h = tape.leaf(mat(3, 4, 2, 5, 7, 3.0, 4.0));
    let causal: Vec<bool> = (0..9).map(|i| i % 3 <= i / 3).collect();
    let (m, _) = multi_head(&mut tape, h, h, h, &w, 2, Some(&causal), None).unwrap();
    assert_close(
        tape.value(m),
        &[
            &[-0.26666666666666666, 0.4083333333333333, 0.25, -0.15833333333333335],
            &[-0.20049123944803798, 0.08922046877712043, 0.29514612609789853, 0.003154952117721603],
            &[-0.07520548234814069, -0.053668886751316446, 0.08140306265121137, 0.09851367858870792],
        ],
        1e-12,
    );
    let res = tape.add(h, m).unwrap();
    let (g, b) = (tape.param("l.g").unwrap(), tape.param("l.b").unwrap());
    let out = tape.layer_norm(res, g, b).unwrap();
    assert_close(
        tape.value(out),
        &[
            &[-1.1734944798226046, 1.37183157500389, 0.5013521017082488, -0.6996891968895342],
            &[-0.6665947466433083, -1.0431629570089536, 1.563997501499765, 0.1457602021524969],
            &[0.46865643365476306, -0.5300120442808315, -1.2917048665370665, 1.3530604771631347],
        ],
        1e-10,
    );
}

#[test]
fn two_layer_loss_gradients_match_finite_differences() {
    let (model, kb, record) = toy_model(toy_config(8, 2, 2), 21);
    let sample = toy_sample(&model, &kb, &record, Variant::default());
    let params: ParamSet<f64> = model.params.cast();
    let report = grad_check(
        &params,
        |tape| sequence_nll(tape, &model.config, &sample, None).map(|(v, _, _)| v).map_err(to_numeric),
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passes(1e-3), "{report:?}");
}
