//! Deterministic stand-ins for the pretrained encoders: vocabulary, dataset
//! records, image feature providers and token embedding lookup.

mod image;
mod record;
mod vocab;

pub use image::{load_image_features, ImageConfig, ImageFeatures, ImageGroup};
pub use record::{read_jsonl, read_records, write_jsonl, CaptionItem, ImageSpec, Record};
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};

use crate::numeric::{NumericError, Tensor};

/// Row lookup of each token in `table` (`[vocab, d]`); unknown tokens get
/// the [`UNK`] row.
pub fn embed_tokens<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, table: &Tensor<f32>) -> Result<Tensor<f32>, NumericError> {
    if table.rows() < vocab.len() {
        return Err(NumericError::Shape(format!("embedding table has {} rows for {} tokens", table.rows(), vocab.len())));
    }
    let d = table.cols();
    let mut out = Vec::with_capacity(tokens.len() * d);
    for t in tokens {
        out.extend_from_slice(table.row(vocab.id(t.as_ref())));
    }
    Tensor::from_vec(tokens.len(), d, out)
}

/// Mean-pooled embedding of a multi-token surface.
pub fn surface_feature(surface: &str, vocab: &Vocabulary, table: &Tensor<f32>) -> Result<Vec<f32>, NumericError> {
    let toks = crate::kg::concept_tokens(surface);
    let rows = embed_tokens(&toks, vocab, table)?;
    let d = table.cols();
    let mut mean = vec![0.0f32; d];
    for r in 0..rows.rows() {
        for (m, v) in mean.iter_mut().zip(rows.row(r)) {
            *m += v / rows.rows() as f32;
        }
    }
    Ok(mean)
}

/// Builds a vocabulary from article, caption and entity tokens in record
/// order.
pub fn build_vocabulary(records: &[Record]) -> Vocabulary {
    let mut v = Vocabulary::new();
    for r in records {
        for t in &r.article {
            v.add(t);
        }
        for t in r.caption_tokens() {
            v.add(&t);
        }
        for e in r.entities.iter().flatten() {
            for t in e.surface.split_whitespace() {
                v.add(t);
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(v: &Vocabulary, d: usize) -> Tensor<f32> {
        Tensor::from_vec(v.len(), d, (0..v.len() * d).map(|i| i as f32 * 0.01).collect()).unwrap()
    }

    #[test]
    fn embedding_lookup_contract() {
        let v = Vocabulary::from_tokens(["a", "b"]);
        let t = table(&v, 16);
        let e = embed_tokens(&["a", "zzz", "a"], &v, &t).unwrap();
        assert_eq!(e.shape(), [3, 16]);
        assert_eq!(e.row(0), e.row(2));
        assert_eq!(e.row(1), t.row(UNK));
    }

    #[test]
    fn surfaces_are_mean_pooled() {
        let v = Vocabulary::from_tokens(["new", "york"]);
        let t = table(&v, 2);
        let f = surface_feature("new_york", &v, &t).unwrap();
        let expect: Vec<f32> = (0..2).map(|j| (t.get(4, j) + t.get(5, j)) / 2.0).collect();
        assert_eq!(f, expect);
        assert_eq!(surface_feature("New York", &v, &t).unwrap().len(), 2);
    }
}
