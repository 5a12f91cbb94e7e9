use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Explanatory,
    Relevant,
    Ignored,
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "explanatory" => Ok(Self::Explanatory),
            "relevant" => Ok(Self::Relevant),
            "ignored" => Ok(Self::Ignored),
            other => Err(format!("unknown category {other:?}")),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Explanatory => "explanatory",
            Self::Relevant => "relevant",
            Self::Ignored => "ignored",
        })
    }
}

pub const DEFAULT_PRESET: &str = include_str!("../../presets/taxonomy-default.txt");
pub const DIVISION_STAR_PRESET: &str = include_str!("../../presets/taxonomy-division-star.txt");

/// Relation → category mapping. A `*` entry, when present, covers every
/// relation not listed explicitly.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationTaxonomy {
    categories: BTreeMap<String, Category>,
    fallback: Option<Category>,
}

impl Default for RelationTaxonomy {
    fn default() -> Self {
        Self::parse(DEFAULT_PRESET, Path::new("taxonomy-default.txt")).expect("bundled preset parses")
    }
}

impl RelationTaxonomy {
    /// IsA explanatory, RelatedTo relevant, everything else ignored.
    pub fn division_star() -> Self {
        Self::parse(DIVISION_STAR_PRESET, Path::new("taxonomy-division-star.txt")).expect("bundled preset parses")
    }

    /// `"default"` or `"division-star"` select a bundled preset; anything
    /// else is read as a file.
    pub fn resolve(spec: &str) -> Result<Self> {
        match spec {
            "default" => Ok(Self::default()),
            "division-star" => Ok(Self::division_star()),
            path => Self::load(Path::new(path)),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    /// Lines of `relation=category`; `#` starts a comment line.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut categories: BTreeMap<String, Category> = BTreeMap::new();
        let mut fallback: Option<Category> = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse { path: path.to_path_buf(), line: i + 1, message };
            let (rel, cat) = line.split_once('=').ok_or_else(|| err("expected relation=category".into()))?;
            let rel = rel.trim();
            let cat: Category = cat.parse().map_err(err)?;
            if rel.is_empty() {
                return Err(err("empty relation name".into()));
            }
            let prev = if rel == "*" { fallback.replace(cat) } else { categories.insert(rel.to_string(), cat) };
            if let Some(prev) = prev.filter(|p| *p != cat) {
                return Err(err(format!("relation {rel} mapped to both {prev} and {cat}")));
            }
        }
        Ok(Self { categories, fallback })
    }

    /// `None` when the relation is unknown and no `*` fallback exists.
    pub fn category(&self, relation: &str) -> Option<Category> {
        self.categories.get(relation).copied().or(self.fallback)
    }

    pub fn relations(&self) -> impl Iterator<Item = (&str, Category)> {
        self.categories.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_preset_has_attested_relations() {
        let t = RelationTaxonomy::default();
        assert_eq!(t.category("IsA"), Some(Category::Explanatory));
        assert_eq!(t.category("CreatedBy"), Some(Category::Relevant));
        assert_eq!(t.category("RelatedTo"), Some(Category::Relevant));
        assert_eq!(t.category("NoSuchRelation"), None);
    }

    #[test]
    fn division_star_ignores_everything_else() {
        let t = RelationTaxonomy::division_star();
        assert_eq!(t.category("IsA"), Some(Category::Explanatory));
        assert_eq!(t.category("RelatedTo"), Some(Category::Relevant));
        assert_eq!(t.category("CreatedBy"), Some(Category::Ignored));
    }

    #[test]
    fn conflicting_lines_are_rejected() {
        let p = Path::new("t.txt");
        assert!(RelationTaxonomy::parse("IsA=explanatory\nIsA=relevant\n", p).is_err());
        assert!(RelationTaxonomy::parse("IsA=explanatory\nIsA=explanatory\n", p).is_ok());
        assert!(RelationTaxonomy::parse("IsA=sometimes\n", p).is_err());
        assert!(RelationTaxonomy::parse("IsA\n", p).is_err());
    }
}
