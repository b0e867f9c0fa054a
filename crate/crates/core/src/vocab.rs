//! Character vocabulary with PAD/BOS/EOS markers.

use crate::error::{Error, Result};
use std::collections::HashMap;

/// Index of a symbol in a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Left-padding marker for contexts shorter than the window.
pub const PAD: TokenId = TokenId(0);
/// Beginning-of-text marker, prepended to every encoded prompt.
pub const BOS: TokenId = TokenId(1);
/// End-of-text marker, appended to every encoded response and scored as its
/// final token.
pub const EOS: TokenId = TokenId(2);

/// Ordered character set plus the three special markers.
///
/// Indices 0..=2 are always PAD, BOS, EOS; printable symbols start at 3.
/// The symbol/index mapping is a bijection, so `decode(encode(c)) == c` for
/// every symbol and `encode(decode(i)) == i` for every index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<char>,
    index: HashMap<char, TokenId>,
}

const SPECIALS: usize = 3;

impl Vocabulary {
    /// Builds a vocabulary over the given printable symbols (the specials are
    /// added implicitly). Duplicate symbols are a configuration error.
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Result<Self> {
        let symbols: Vec<char> = symbols.into_iter().collect();
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, &c) in symbols.iter().enumerate() {
            let id = TokenId((SPECIALS + i) as u32);
            if index.insert(c, id).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary symbol {c:?}")));
            }
        }
        if symbols.is_empty() {
            return Err(Error::Config("vocabulary needs at least one symbol".into()));
        }
        Ok(Vocabulary { symbols, index })
    }

    /// The default 73-symbol vocabulary: ASCII letters, digits, space and a
    /// small punctuation set (70 printable symbols) plus PAD/BOS/EOS.
    pub fn default_ascii() -> Self {
        let printable = ('a'..='z')
            .chain('A'..='Z')
            .chain('0'..='9')
            .chain(" .,!?'-:".chars());
        Self::new(printable).expect("default charset has no duplicates")
    }

    /// Total number of symbols including the three specials.
    pub fn size(&self) -> usize {
        SPECIALS + self.symbols.len()
    }

    pub fn encode_char(&self, c: char) -> Result<TokenId> {
        self.index
            .get(&c)
            .copied()
            .ok_or_else(|| Error::Encoding(format!("symbol {c:?} is not in the vocabulary")))
    }

    /// Inverse of `encode_char` for printable symbols; specials decode to
    /// `None`.
    pub fn decode(&self, id: TokenId) -> Option<char> {
        let i = id.index();
        if i < SPECIALS {
            None
        } else {
            self.symbols.get(i - SPECIALS).copied()
        }
    }

    pub fn contains_id(&self, id: TokenId) -> bool {
        id.index() < self.size()
    }

    /// Encodes a prompt: BOS followed by the prompt's characters.
    pub fn encode_prompt(&self, prompt: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::with_capacity(prompt.chars().count() + 1);
        out.push(BOS);
        for c in prompt.chars() {
            out.push(self.encode_char(c)?);
        }
        Ok(out)
    }

    /// Encodes a response: its characters followed by EOS. The EOS token is
    /// part of the scored sequence, so an encoded response is never empty.
    pub fn encode_response(&self, response: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::with_capacity(response.chars().count() + 1);
        for c in response.chars() {
            out.push(self.encode_char(c)?);
        }
        out.push(EOS);
        Ok(out)
    }

    /// Printable symbols in index order (used by the snapshot format).
    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_charset_has_73_symbols() {
        let v = Vocabulary::default_ascii();
        assert_eq!(v.size(), 73);
    }

    #[test]
    fn specials_are_distinct_and_fixed() {
        assert_eq!(PAD.index(), 0);
        assert_eq!(BOS.index(), 1);
        assert_eq!(EOS.index(), 2);
    }

    #[test]
    fn encode_decode_round_trip() {
        let v = Vocabulary::default_ascii();
        for i in SPECIALS..v.size() {
            let id = TokenId(i as u32);
            let c = v.decode(id).unwrap();
            assert_eq!(v.encode_char(c).unwrap(), id);
        }
        for c in "azAZ09 .,!?'-:".chars() {
            let id = v.encode_char(c).unwrap();
            assert_eq!(v.decode(id), Some(c));
        }
    }

    #[test]
    fn unknown_symbol_is_an_encoding_error() {
        let v = Vocabulary::default_ascii();
        assert!(matches!(v.encode_char('\u{3042}'), Err(Error::Encoding(_))));
    }

    #[test]
    fn duplicate_symbol_rejected() {
        assert!(Vocabulary::new("aba".chars()).is_err());
    }

    #[test]
    fn prompt_and_response_markers() {
        let v = Vocabulary::default_ascii();
        let p = v.encode_prompt("ab").unwrap();
        assert_eq!(p[0], BOS);
        assert_eq!(p.len(), 3);
        let r = v.encode_response("ab").unwrap();
        assert_eq!(*r.last().unwrap(), EOS);
        assert_eq!(r.len(), 3);
        // Empty strings still carry their marker.
        assert_eq!(v.encode_prompt("").unwrap(), vec![BOS]);
        assert_eq!(v.encode_response("").unwrap(), vec![EOS]);
    }
}
