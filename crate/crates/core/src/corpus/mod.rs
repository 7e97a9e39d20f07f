//! Playlist ingestion and curation: tokenize titles, drop playlists that do
//! not carry a phrase-level title, split by title length, build vocabularies
//! and turn playlists into padded integer batches.

mod batch;
mod encode;
mod filter;
pub mod io;
mod split;
pub mod synthetic;
mod vocab;

pub use batch::{make_batches, ordered_batches, Batch, PaddedSeqs};
pub use encode::{encode_pair, shuffle_tracks, EncodedExample, DEFAULT_MAX_SOURCE_LEN};
pub use filter::{
    filter_corpus, passes_filter, CorpusStats, FilterCriterion, FilterReport, RejectionCounts,
    Verdict,
};
pub use split::{stratified_split, SplitCorpus, SplitRatios};
pub use vocab::{build_vocabs, Vocab, BOS, EOS, PAD, RESERVED_TOKENS, UNK};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: {message}")]
    Adapter { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A raw playlist record in the canonical corpus format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Playlist {
    pub id: String,
    pub title: String,
    pub tracks: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedPlaylist {
    pub id: String,
    pub title_tokens: Vec<String>,
    pub tracks: Vec<String>,
}

impl TokenizedPlaylist {
    pub fn from_playlist(p: &Playlist) -> Self {
        Self {
            id: p.id.clone(),
            title_tokens: normalize_and_tokenize(&p.title),
            tracks: p.tracks.clone(),
        }
    }

    pub fn title(&self) -> String {
        self.title_tokens.join(" ")
    }

    /// Back to the canonical record, with the title rebuilt from its tokens.
    pub fn to_playlist(&self) -> Playlist {
        Playlist {
            id: self.id.clone(),
            title: self.title(),
            tracks: self.tracks.clone(),
        }
    }
}

/// Splits on runs of Unicode whitespace and lowercases ASCII letters.
///
/// Non-ASCII text (Hangul, accented Latin) passes through untouched.
pub fn normalize_and_tokenize(title: &str) -> Vec<String> {
    title.split_whitespace().map(str::to_ascii_lowercase).collect()
}

pub fn tokenize_all(playlists: &[Playlist]) -> Vec<TokenizedPlaylist> {
    playlists.iter().map(TokenizedPlaylist::from_playlist).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowercases_ascii() {
        assert_eq!(normalize_and_tokenize("Late Night DRIVE"), ["late", "night", "drive"]);
    }

    #[test]
    fn keeps_hangul_verbatim() {
        assert_eq!(
            normalize_and_tokenize("가을밤 로맨틱 재즈곡들"),
            ["가을밤", "로맨틱", "재즈곡들"]
        );
    }

    #[test]
    fn drops_empty_tokens() {
        assert_eq!(normalize_and_tokenize("  beyonce - 4 "), ["beyonce", "-", "4"]);
        assert!(normalize_and_tokenize("").is_empty());
        assert_eq!(normalize_and_tokenize("r&b\u{3000}\tMix"), ["r&b", "mix"]);
    }

    #[test]
    fn non_ascii_uppercase_is_preserved() {
        assert_eq!(normalize_and_tokenize("ÉTÉ Jazz"), ["ÉtÉ", "jazz"]);
    }
}
