use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const BLANK: usize = 0;

/// Role of an output symbol in per-frame CTC predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolCategory {
    Blank,
    Space,
    Letter,
}

impl SymbolCategory {
    pub const ALL: [SymbolCategory; 3] = [SymbolCategory::Blank, SymbolCategory::Space, SymbolCategory::Letter];

    pub fn name(self) -> &'static str {
        match self {
            SymbolCategory::Blank => "blank",
            SymbolCategory::Space => "space",
            SymbolCategory::Letter => "letter",
        }
    }
}

/// Output symbols of the acoustic model. Index 0 is always the CTC blank,
/// which has no character; `symbols[i]` is the character of index `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    symbols: Vec<char>,
}

impl Alphabet {
    pub fn new(symbols: Vec<char>) -> Result<Self> {
        for (i, c) in symbols.iter().enumerate() {
            if symbols[..i].contains(c) {
                return Err(invalid(format!("duplicate alphabet symbol {c:?}")));
            }
        }
        Ok(Alphabet { symbols })
    }

    /// Blank, the 26 lowercase letters, space and apostrophe: 29 symbols.
    pub fn english() -> Self {
        let mut symbols: Vec<char> = ('a'..='z').collect();
        symbols.push(' ');
        symbols.push('\'');
        Alphabet { symbols }
    }

    /// Number of output units including blank.
    pub fn len(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.symbols.iter().position(|&s| s == c).map(|i| i + 1)
    }

    pub fn char_of(&self, idx: usize) -> Option<char> {
        idx.checked_sub(1).and_then(|i| self.symbols.get(i).copied())
    }

    pub fn contains(&self, c: char) -> bool {
        self.symbols.contains(&c)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.index_of(c)
                    .ok_or_else(|| invalid(format!("character {c:?} not in alphabet")))
            })
            .collect()
    }

    pub fn decode(&self, indices: &[usize]) -> String {
        indices.iter().filter_map(|&i| self.char_of(i)).collect()
    }

    pub fn category(&self, idx: usize) -> SymbolCategory {
        match self.char_of(idx) {
            None => SymbolCategory::Blank,
            Some(' ') => SymbolCategory::Space,
            Some(_) => SymbolCategory::Letter,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn english_has_29_symbols_with_blank_first() {
        let a = Alphabet::english();
        assert_eq!(a.len(), 29);
        assert_eq!(a.category(0), SymbolCategory::Blank);
        assert_eq!(a.category(a.index_of(' ').unwrap()), SymbolCategory::Space);
        assert_eq!(a.category(a.index_of('\'').unwrap()), SymbolCategory::Letter);
        assert_eq!(a.decode(&a.encode("it's ok").unwrap()), "it's ok");
        assert!(a.encode("A").is_err());
    }
}
