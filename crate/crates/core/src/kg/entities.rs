use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An annotated named-entity span in an article.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub surface: String,
    pub first_token_index: usize,
}

const SENTENCE_STOPWORDS: &[&str] = &[
    "A", "An", "And", "As", "At", "But", "By", "For", "From", "He", "Her", "His", "I", "If", "In", "It", "Its", "On",
    "Or", "She", "So", "That", "The", "Their", "There", "These", "They", "This", "Those", "To", "We", "When", "While",
    "With", "You",
];

fn is_capitalized(tok: &str) -> bool {
    tok.chars().next().is_some_and(char::is_uppercase)
}

fn ends_sentence(tok: &str) -> bool {
    matches!(tok, "." | "!" | "?") || tok.ends_with(['.', '!', '?'])
}

/// Maximal runs of capitalized tokens. A stopword opening a sentence is
/// dropped from the run it would start.
pub fn fallback_tagger(tokens: &[String]) -> Vec<EntityMention> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let sentence_start = i == 0 || ends_sentence(&tokens[i - 1]);
        if !is_capitalized(&tokens[i]) {
            i += 1;
            continue;
        }
        let mut start = i;
        if sentence_start && SENTENCE_STOPWORDS.contains(&tokens[i].as_str()) {
            start += 1;
        }
        let mut end = start;
        while end < tokens.len() && is_capitalized(&tokens[end]) && (end == start || !ends_sentence(&tokens[end - 1])) {
            end += 1;
        }
        if end > start {
            out.push(EntityMention { surface: tokens[start..end].join(" "), first_token_index: start });
        }
        i = end.max(i + 1);
    }
    out
}

/// First `k` distinct entities in order of first appearance.
pub fn select_entities(
    tokens: &[String],
    annotations: Option<&[EntityMention]>,
    k: usize,
    fallback: bool,
) -> Result<Vec<String>> {
    let mut mentions = match annotations {
        Some(a) => a.to_vec(),
        None if fallback => fallback_tagger(tokens),
        None => return Err(Error::NoAnnotations),
    };
    mentions.sort_by_key(|m| m.first_token_index);
    let mut seen = std::collections::HashSet::new();
    Ok(mentions.into_iter().map(|m| m.surface).filter(|s| seen.insert(s.clone())).take(k).collect())
}
