use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::EntityMention;

/// One caption item: a plain token, an entity mention or a multi-token
/// commonsense concept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CaptionItem {
    Word(String),
    Entity { entity: String },
    Concept { concept: String },
}

impl CaptionItem {
    /// Surface tokens this item contributes to the caption text.
    pub fn tokens(&self) -> Vec<String> {
        match self {
            Self::Word(w) => vec![w.clone()],
            Self::Entity { entity: s } => s.split_whitespace().map(String::from).collect(),
            Self::Concept { concept: s } => crate::kg::concept_tokens(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ImageSpec {
    /// Pseudo-random features derived from the record id and `seed`.
    Seed {
        #[serde(default)]
        seed: u64,
        /// Number of detected faces / objects (defaults to the configured
        /// maximum).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        faces: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        objects: Option<usize>,
    },
    /// Extracted features, either inline or in a JSON file holding
    /// `{patches, faces, objects}` matrices.
    File {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        patches: Option<Vec<Vec<f32>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        faces: Option<Vec<Vec<f32>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        objects: Option<Vec<Vec<f32>>>,
    },
}

impl Default for ImageSpec {
    fn default() -> Self {
        Self::Seed { seed: 0, faces: None, objects: None }
    }
}

/// One dataset line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub article: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Vec<EntityMention>>,
    #[serde(default)]
    pub caption: Vec<CaptionItem>,
    #[serde(default)]
    pub image: ImageSpec,
}

impl Record {
    /// Caption as plain tokens, entity and concept surfaces expanded.
    pub fn caption_tokens(&self) -> Vec<String> {
        self.caption.iter().flat_map(CaptionItem::tokens).collect()
    }

    /// Entity surfaces mentioned in the caption, in order.
    pub fn caption_entities(&self) -> Vec<String> {
        self.caption
            .iter()
            .filter_map(|c| match c {
                CaptionItem::Entity { entity } => Some(entity.clone()),
                _ => None,
            })
            .collect()
    }
}

/// Reads a JSON Lines dataset. Blank lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), line: i + 1, message: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse { path: path.to_path_buf(), line: i + 1, message: e.to_string() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mixed_caption_items() {
        let line = r#"{"id":"r1","article":["Obama","visited","Paris"],
            "entities":[{"surface":"Obama","first_token_index":0}],
            "caption":[{"entity":"Obama"},"in",{"concept":"eiffel_tower"}],
            "image":{"mode":"seed","seed":4,"faces":2}}"#
            .replace('\n', "");
        let r: Record = serde_json::from_str(&line).unwrap();
        assert_eq!(r.caption[0], CaptionItem::Entity { entity: "Obama".into() });
        assert_eq!(r.caption[2], CaptionItem::Concept { concept: "eiffel_tower".into() });
        assert_eq!(r.caption_tokens(), vec!["Obama", "in", "eiffel", "tower"]);
        assert_eq!(r.image, ImageSpec::Seed { seed: 4, faces: Some(2), objects: None });
        let back: Record = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn bad_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(&p, "{\"id\":\"a\",\"article\":[]}\n\n{oops}\n").unwrap();
        let err = read_records(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }
}
