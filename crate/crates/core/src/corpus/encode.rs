use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, TokenizedPlaylist, Vocab, BOS, EOS};

pub const DEFAULT_MAX_SOURCE_LEN: usize = 256;

/// Integer form of one playlist: track indices in, `BOS words EOS` out.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Maps tracks and title words through their vocabularies.
///
/// Unknown entries become `UNK`. The source keeps its first
/// `max_source_len` tracks; the target is never truncated.
pub fn encode_pair(
    p: &TokenizedPlaylist,
    tracks: &Vocab,
    words: &Vocab,
    max_source_len: usize,
) -> Result<EncodedExample, CorpusError> {
    if p.tracks.is_empty() || max_source_len == 0 {
        return Err(CorpusError::Degenerate(format!(
            "playlist {} has no source tracks to encode",
            p.id
        )));
    }
    if p.title_tokens.is_empty() {
        return Err(CorpusError::Degenerate(format!(
            "playlist {} has an empty title",
            p.id
        )));
    }
    let source = p
        .tracks
        .iter()
        .take(max_source_len)
        .map(|t| tracks.lookup(t))
        .collect();
    let mut target = Vec::with_capacity(p.title_tokens.len() + 2);
    target.push(BOS);
    target.extend(p.title_tokens.iter().map(|w| words.lookup(w)));
    target.push(EOS);
    Ok(EncodedExample { source, target })
}

/// Returns a copy with the source tracks in a uniformly random seeded order.
pub fn shuffle_tracks(e: &EncodedExample, seed: u64) -> EncodedExample {
    let mut source = e.source.clone();
    source.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    EncodedExample {
        source,
        target: e.target.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::UNK;

    fn playlist(title: &str, n: usize) -> TokenizedPlaylist {
        TokenizedPlaylist {
            id: "p".into(),
            title_tokens: title.split(' ').map(String::from).collect(),
            tracks: (0..n).map(|i| format!("t{i}")).collect(),
        }
    }

    #[test]
    fn maps_title_words_between_bos_and_eos() {
        let p = playlist("late night drive mix", 2);
        let tracks = Vocab::from_tokens(["t0", "t1"]).unwrap();
        let words = Vocab::from_tokens(["drive", "late", "mix", "night"]).unwrap();
        let e = encode_pair(&p, &tracks, &words, 256).unwrap();
        assert_eq!(e.source, [4, 5]);
        assert_eq!(e.target, [BOS, 5, 7, 4, 6, EOS]);
    }

    #[test]
    fn unseen_track_becomes_unk() {
        let p = playlist("a b c d", 3);
        let tracks = Vocab::from_tokens(["t0", "t2"]).unwrap();
        let e = encode_pair(&p, &tracks, &Vocab::reserved_only(), 256).unwrap();
        assert_eq!(e.source, [4, UNK, 5]);
        assert_eq!(e.target, [BOS, UNK, UNK, UNK, UNK, EOS]);
    }

    #[test]
    fn truncates_source_only() {
        let p = playlist("w w w w w w w w w w", 300);
        let e = encode_pair(&p, &Vocab::reserved_only(), &Vocab::reserved_only(), 256).unwrap();
        assert_eq!(e.source.len(), 256);
        assert_eq!(e.target.len(), 12);
    }

    #[test]
    fn first_tracks_are_kept() {
        let p = playlist("a b c d", 300);
        let names: Vec<String> = (0..300).map(|i| format!("t{i}")).collect();
        let tracks = Vocab::from_tokens(names).unwrap();
        let e = encode_pair(&p, &tracks, &Vocab::reserved_only(), 256).unwrap();
        assert_eq!(e.source, (4..260).collect::<Vec<_>>());
    }

    #[test]
    fn empty_playlist_cannot_encode() {
        let p = playlist("a b c d", 0);
        assert!(encode_pair(&p, &Vocab::reserved_only(), &Vocab::reserved_only(), 8).is_err());
    }

    #[test]
    fn shuffle_singleton_and_target() {
        let e = EncodedExample {
            source: vec![9],
            target: vec![BOS, 4, EOS],
        };
        assert_eq!(shuffle_tracks(&e, 3), e);
        let long = EncodedExample {
            source: (10..40).collect(),
            target: vec![BOS, 5, 6, EOS],
        };
        let s = shuffle_tracks(&long, 11);
        assert_eq!(s, shuffle_tracks(&long, 11));
        assert_eq!(s.target, long.target);
        assert_ne!(s.source, long.source);
    }
}
