//! Token id space shared by every generator and the model.
//!
//! Content tokens occupy `0..content_size`; the five reserved ids follow
//! immediately after, so full-scale corpora use exactly the integers
//! `0..=29994` for content.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Content vocabulary size used for full-scale corpora.
pub const FULL_SCALE_CONTENT_SIZE: u32 = 29_995;
/// Content vocabulary size used for desk-scale experiments.
pub const DESK_CONTENT_SIZE: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecialToken {
    Pad,
    Mask,
    Cls,
    Sep,
    Unk,
}

impl SpecialToken {
    pub const ALL: [SpecialToken; 5] = [
        SpecialToken::Pad,
        SpecialToken::Mask,
        SpecialToken::Cls,
        SpecialToken::Sep,
        SpecialToken::Unk,
    ];

    fn offset(self) -> u32 {
        match self {
            SpecialToken::Pad => 0,
            SpecialToken::Mask => 1,
            SpecialToken::Cls => 2,
            SpecialToken::Sep => 3,
            SpecialToken::Unk => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vocabulary {
    content_size: u32,
}

impl Vocabulary {
    pub const NUM_SPECIAL: u32 = 5;

    pub fn new(content_size: u32) -> Result<Self> {
        if content_size < 2 {
            return Err(Error::invalid(format!(
                "vocabulary needs at least 2 content tokens, got {content_size}"
            )));
        }
        if content_size.checked_add(Self::NUM_SPECIAL).is_none() {
            return Err(Error::invalid("vocabulary size overflows u32"));
        }
        Ok(Self { content_size })
    }

    pub fn full_scale() -> Self {
        Self {
            content_size: FULL_SCALE_CONTENT_SIZE,
        }
    }

    pub fn desk() -> Self {
        Self {
            content_size: DESK_CONTENT_SIZE,
        }
    }

    pub fn content_size(&self) -> u32 {
        self.content_size
    }

    pub fn total_size(&self) -> u32 {
        self.content_size + Self::NUM_SPECIAL
    }

    pub fn special(&self, token: SpecialToken) -> TokenId {
        self.content_size + token.offset()
    }

    pub fn pad(&self) -> TokenId {
        self.special(SpecialToken::Pad)
    }

    pub fn mask(&self) -> TokenId {
        self.special(SpecialToken::Mask)
    }

    pub fn cls(&self) -> TokenId {
        self.special(SpecialToken::Cls)
    }

    pub fn sep(&self) -> TokenId {
        self.special(SpecialToken::Sep)
    }

    pub fn unk(&self) -> TokenId {
        self.special(SpecialToken::Unk)
    }

    pub fn is_content(&self, id: TokenId) -> bool {
        id < self.content_size
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id >= self.content_size && id < self.total_size()
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id < self.total_size()
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::desk()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn special_ids_follow_content() {
        let v = Vocabulary::full_scale();
        assert_eq!(v.total_size(), 30_000);
        let ids: Vec<_> = SpecialToken::ALL.iter().map(|&s| v.special(s)).collect();
        assert_eq!(ids, vec![29_995, 29_996, 29_997, 29_998, 29_999]);
        assert!(ids.iter().all(|&id| !v.is_content(id) && v.is_special(id)));
        assert!(v.is_content(29_994));
    }

    #[test]
    fn rejects_tiny_vocabularies() {
        assert!(Vocabulary::new(1).is_err());
        assert_eq!(Vocabulary::new(2).unwrap().total_size(), 7);
    }
}
