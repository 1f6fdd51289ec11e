//! Keyword filter applied to both user input and character output.

use serde::{Deserialize, Serialize};

use super::DialogueError;

/// Lowercase keywords or phrases, none empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct FilterList {
    keywords: Vec<String>,
}

impl FilterList {
    pub fn new<I, S>(keywords: I) -> Result<Self, DialogueError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = Vec::new();
        for kw in keywords {
            let kw = kw.as_ref().trim().to_lowercase();
            if kw.is_empty() {
                return Err(DialogueError::EmptyKeyword);
            }
            if !out.contains(&kw) {
                out.push(kw);
            }
        }
        Ok(FilterList { keywords: out })
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    pub fn check(&self, text: &str) -> FilterResult {
        filter_text(text, self)
    }
}

impl TryFrom<Vec<String>> for FilterList {
    type Error = DialogueError;

    fn try_from(value: Vec<String>) -> Result<Self, Self::Error> {
        FilterList::new(value)
    }
}

impl From<FilterList> for Vec<String> {
    fn from(list: FilterList) -> Self {
        list.keywords
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum FilterResult {
    Pass,
    Blocked { keyword: String },
}

impl FilterResult {
    pub fn is_blocked(&self) -> bool {
        matches!(self, FilterResult::Blocked { .. })
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// True if `needle` occurs in `haystack` with no word character directly
/// before or after it.
pub(crate) fn contains_at_boundary(haystack: &str, needle: &str) -> bool {
    haystack.match_indices(needle).any(|(start, m)| {
        let before = haystack[..start].chars().next_back();
        let after = haystack[start + m.len()..].chars().next();
        !before.is_some_and(is_word_char) && !after.is_some_and(is_word_char)
    })
}

/// Case-insensitive keyword scan at word boundaries. Reports the first
/// keyword in list order that matches.
pub fn filter_text(text: &str, list: &FilterList) -> FilterResult {
    let lowered = text.to_lowercase();
    list.keywords
        .iter()
        .find(|kw| contains_at_boundary(&lowered, kw))
        .map_or(FilterResult::Pass, |kw| FilterResult::Blocked { keyword: kw.clone() })
}
