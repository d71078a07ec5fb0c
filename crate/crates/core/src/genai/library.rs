use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::model::{AssetId, AssetKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub prompt: String,
    pub asset_id: AssetId,
    pub kind: AssetKind,
}

/// Every generated asset alongside the prompt that produced it, oldest first.
#[derive(Debug, Default)]
pub struct ExampleLibrary {
    entries: RwLock<Vec<LibraryEntry>>,
}

impl ExampleLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, entry: LibraryEntry) {
        let mut entries = self.entries.write().expect("library lock poisoned");
        if !entries.contains(&entry) {
            entries.push(entry);
        }
    }

    /// Entries whose prompt contains `query` (case-insensitive); all entries without one.
    pub fn query(&self, query: Option<&str>) -> Vec<LibraryEntry> {
        let entries = self.entries.read().expect("library lock poisoned");
        match query.map(str::trim).filter(|q| !q.is_empty()) {
            None => entries.clone(),
            Some(q) => {
                let q = q.to_lowercase();
                entries
                    .iter()
                    .filter(|e| e.prompt.to_lowercase().contains(&q))
                    .cloned()
                    .collect()
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("library lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_is_case_insensitive_substring() {
        let lib = ExampleLibrary::new();
        assert!(lib.query(None).is_empty());
        lib.record(LibraryEntry {
            prompt: "Pelican sitting down, studio ghibli style".into(),
            asset_id: AssetId::of_bytes(b"1"),
            kind: AssetKind::Image,
        });
        lib.record(LibraryEntry {
            prompt: "wolf howl".into(),
            asset_id: AssetId::of_bytes(b"2"),
            kind: AssetKind::AudioEffect,
        });
        assert_eq!(lib.query(None).len(), 2);
        assert_eq!(lib.query(Some("pelican")).len(), 1);
        assert_eq!(lib.query(Some("  ")).len(), 2);
        assert!(lib.query(Some("dragon")).is_empty());
    }
}
