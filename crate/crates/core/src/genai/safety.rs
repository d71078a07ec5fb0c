//! Content checks applied to prompts and generated assets.
//!
//! Text that hits a blocking rule is refused. Assets are never hidden by the
//! default policy; a matching rule only attaches a trigger warning that the
//! viewer shows before revealing the asset.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::AssetRef;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub allowed: bool,
    #[serde(default)]
    pub trigger_warning: Option<String>,
    #[serde(default)]
    pub categories: Vec<String>,
}

impl SafetyVerdict {
    pub fn allow() -> Self {
        Self {
            allowed: true,
            trigger_warning: None,
            categories: Vec::new(),
        }
    }

    /// Combines two verdicts: blocked if either blocks, warnings concatenated.
    pub fn merge(self, other: SafetyVerdict) -> SafetyVerdict {
        let trigger_warning = match (self.trigger_warning, other.trigger_warning) {
            (Some(a), Some(b)) if a == b => Some(a),
            (Some(a), Some(b)) => Some(format!("{a}; {b}")),
            (a, b) => a.or(b),
        };
        let mut categories = self.categories;
        for c in other.categories {
            if !categories.contains(&c) {
                categories.push(c);
            }
        }
        SafetyVerdict {
            allowed: self.allowed && other.allowed,
            trigger_warning,
            categories,
        }
    }
}

pub enum SafetyContent<'a> {
    Text(&'a str),
    Asset { asset: &'a AssetRef, bytes: &'a [u8] },
}

pub trait SafetyPolicy: Send + Sync {
    fn check_text(&self, text: &str) -> SafetyVerdict;
    fn check_asset(&self, asset: &AssetRef, bytes: &[u8]) -> SafetyVerdict;
}

pub fn check_safety(content: SafetyContent<'_>, policy: &dyn SafetyPolicy) -> SafetyVerdict {
    match content {
        SafetyContent::Text(text) => policy.check_text(text),
        SafetyContent::Asset { asset, bytes } => policy.check_asset(asset, bytes),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleAction {
    Block,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyRule {
    /// One or more words, matched case-insensitively on word boundaries.
    pub term: String,
    pub category: String,
    pub action: RuleAction,
}

impl SafetyRule {
    pub fn new(term: &str, category: &str, action: RuleAction) -> Self {
        Self {
            term: term.to_string(),
            category: category.to_string(),
            action,
        }
    }
}

/// Keyword policy: text rules match prompts; assets are checked through the
/// prompt recorded in their provenance and can only be warned about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenylistPolicy {
    pub rules: Vec<SafetyRule>,
}

impl Default for DenylistPolicy {
    fn default() -> Self {
        use RuleAction::{Block, Warn};
        Self {
            rules: vec![
                SafetyRule::new("nsfw", "sexual", Block),
                SafetyRule::new("nude", "sexual", Block),
                SafetyRule::new("naked", "sexual", Block),
                SafetyRule::new("gore", "graphic violence", Block),
                SafetyRule::new("dismembered", "graphic violence", Block),
                SafetyRule::new("self harm", "self-harm", Block),
                SafetyRule::new("blood", "violence", Warn),
                SafetyRule::new("gun", "weapons", Warn),
                SafetyRule::new("knife", "weapons", Warn),
                SafetyRule::new("death", "mature themes", Warn),
                SafetyRule::new("monster", "frightening", Warn),
                SafetyRule::new("spider", "phobia", Warn),
            ],
        }
    }
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl DenylistPolicy {
    pub fn empty() -> Self {
        Self { rules: Vec::new() }
    }

    fn matches(&self, text: &str) -> Vec<&SafetyRule> {
        let tokens = words(text);
        self.rules
            .iter()
            .filter(|rule| {
                let needle = words(&rule.term);
                !needle.is_empty() && tokens.windows(needle.len()).any(|w| w == needle.as_slice())
            })
            .collect()
    }

    fn verdict(hits: &[&SafetyRule], allow_blocked: bool) -> SafetyVerdict {
        if hits.is_empty() {
            return SafetyVerdict::allow();
        }
        let mut categories = Vec::new();
        let mut seen = BTreeSet::new();
        for r in hits {
            if seen.insert(r.category.as_str()) {
                categories.push(r.category.clone());
            }
        }
        let blocked = hits.iter().any(|r| r.action == RuleAction::Block);
        SafetyVerdict {
            allowed: allow_blocked || !blocked,
            trigger_warning: Some(format!("May contain: {}", categories.join(", "))),
            categories,
        }
    }
}

impl SafetyPolicy for DenylistPolicy {
    fn check_text(&self, text: &str) -> SafetyVerdict {
        Self::verdict(&self.matches(text), false)
    }

    fn check_asset(&self, asset: &AssetRef, _bytes: &[u8]) -> SafetyVerdict {
        Self::verdict(&self.matches(&asset.provenance.prompt), true)
    }
}
