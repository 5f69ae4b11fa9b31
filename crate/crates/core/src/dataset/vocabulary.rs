use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::{DatasetError, OriginalClass, Probe, Result};

const BUILTIN: &str = include_str!("../../assets/vocabulary.toml");

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabularyFile {
    class: HashMap<OriginalClass, Vec<String>>,
    probe: HashMap<Probe, Vec<String>>,
}

/// Lookup table from source strings to class and probe enums.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    class: HashMap<String, OriginalClass>,
    probe: HashMap<String, Probe>,
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

impl Vocabulary {
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN).expect("builtin vocabulary parses")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: VocabularyFile =
            toml::from_str(text).map_err(|e| DatasetError::Vocabulary(e.to_string()))?;
        let mut class = HashMap::new();
        for (target, names) in file.class {
            for name in names {
                if let Some(prev) = class.insert(normalize(&name), target) {
                    if prev != target {
                        return Err(DatasetError::Vocabulary(format!(
                            "`{name}` maps to both {prev:?} and {target:?}"
                        )));
                    }
                }
            }
        }
        let mut probe = HashMap::new();
        for (target, names) in file.probe {
            for name in names {
                if let Some(prev) = probe.insert(normalize(&name), target) {
                    if prev != target {
                        return Err(DatasetError::Vocabulary(format!(
                            "`{name}` maps to both {prev:?} and {target:?}"
                        )));
                    }
                }
            }
        }
        // canonical enum names always resolve, so resolved manifests reload
        for c in [
            OriginalClass::Covid,
            OriginalClass::NonCovidInfection,
            OriginalClass::Other,
            OriginalClass::Normal,
        ] {
            class.entry(c.as_str().to_string()).or_insert(c);
        }
        for p in [Probe::Convex, Probe::Linear] {
            probe.entry(p.as_str().to_string()).or_insert(p);
        }
        Ok(Vocabulary { class, probe })
    }

    pub fn class(&self, raw: &str) -> OriginalClass {
        self.class.get(&normalize(raw)).copied().unwrap_or(OriginalClass::Other)
    }

    pub fn probe(&self, raw: &str) -> Probe {
        self.probe.get(&normalize(raw)).copied().unwrap_or(Probe::Unknown)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn custom_table() {
        let v = Vocabulary::from_toml(
            "[class]\ncovid = [\"C19\"]\n[probe]\nconvex = [\"phased\"]\n",
        )
        .unwrap();
        assert_eq!(v.class(" c19 "), OriginalClass::Covid);
        assert_eq!(v.class("normal"), OriginalClass::Normal);
        assert_eq!(v.probe("PHASED"), Probe::Convex);
        assert_eq!(v.probe("sector"), Probe::Unknown);
    }

    #[test]
    fn conflicting_entries_rejected() {
        let err = Vocabulary::from_toml("[class]\ncovid = [\"x\"]\nnormal = [\"x\"]\n[probe]\n").unwrap_err();
        assert!(matches!(err, DatasetError::Vocabulary(_)));
        assert!(Vocabulary::from_toml("[class]\n[probe]\n[extra]\n").is_err());
    }
}
