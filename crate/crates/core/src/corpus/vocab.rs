use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{CorpusError, TokenizedPlaylist};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token to index map with the four reserved entries at indices 0..4.
///
/// Serialized as the plain index-ordered token list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// A vocabulary holding only the reserved tokens.
    pub fn reserved_only() -> Self {
        Self::from_tokens(Vec::<String>::new()).expect("reserved tokens are valid")
    }

    /// Builds from non-reserved tokens, placed in the given order after the
    /// reserved block.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let all = RESERVED_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(tokens.into_iter().map(Into::into))
            .collect();
        Self::from_full_list(all)
    }

    /// Builds from a full index-ordered list that must begin with the
    /// reserved tokens.
    pub fn from_full_list(tokens: Vec<String>) -> Result<Self, CorpusError> {
        if tokens.len() < RESERVED_TOKENS.len()
            || tokens.iter().zip(RESERVED_TOKENS).any(|(a, b)| a != b)
        {
            return Err(CorpusError::InvalidVocab(
                "reserved tokens missing or out of place".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(CorpusError::InvalidVocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or [`UNK`] when absent.
    pub fn lookup(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_reserved(index: usize) -> bool {
        index < RESERVED_TOKENS.len()
    }

    /// Tokens seen at least `min_count` times, most frequent first, ties in
    /// lexicographic order.
    pub fn from_counts(counts: &BTreeMap<&str, usize>, min_count: usize) -> Self {
        let mut kept: Vec<(&str, usize)> = counts
            .iter()
            .filter(|(t, &c)| c >= min_count && !RESERVED_TOKENS.contains(t))
            .map(|(t, &c)| (*t, c))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t)).expect("counted tokens are unique")
    }
}

impl Serialize for Vocab {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Vocab::from_full_list(tokens).map_err(serde::de::Error::custom)
    }
}

/// Track and word vocabularies counted over the training split only.
pub fn build_vocabs(
    train: &[TokenizedPlaylist],
    min_count_track: usize,
    min_count_word: usize,
) -> Result<(Vocab, Vocab), CorpusError> {
    if train.is_empty() {
        return Err(CorpusError::Degenerate(
            "cannot build vocabularies from an empty training split".into(),
        ));
    }
    let mut tracks = BTreeMap::new();
    let mut words = BTreeMap::new();
    for p in train {
        for t in &p.tracks {
            *tracks.entry(t.as_str()).or_insert(0) += 1;
        }
        for w in &p.title_tokens {
            *words.entry(w.as_str()).or_insert(0) += 1;
        }
    }
    Ok((
        Vocab::from_counts(&tracks, min_count_track),
        Vocab::from_counts(&words, min_count_word),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pl(title: &[&str], tracks: &[&str]) -> TokenizedPlaylist {
        TokenizedPlaylist {
            id: "x".into(),
            title_tokens: title.iter().map(|s| s.to_string()).collect(),
            tracks: tracks.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn frequency_order_and_min_count() {
        let train = vec![
            pl(&["a", "a", "b"], &["t"]),
            pl(&["a", "c", "b"], &["t"]),
            pl(&["a", "a"], &["t"]),
        ];
        let (_, words) = build_vocabs(&train, 1, 2).unwrap();
        assert_eq!(words.tokens(), ["<pad>", "<bos>", "<eos>", "<unk>", "a", "b"]);
    }

    #[test]
    fn ties_break_lexicographically() {
        let train = vec![pl(&["zeta", "alpha", "mid"], &["t2", "t1", "t3"])];
        let (tracks, words) = build_vocabs(&train, 1, 1).unwrap();
        assert_eq!(&words.tokens()[4..], ["alpha", "mid", "zeta"]);
        assert_eq!(&tracks.tokens()[4..], ["t1", "t2", "t3"]);
    }

    #[test]
    fn empty_train_is_an_error() {
        assert!(matches!(build_vocabs(&[], 1, 1), Err(CorpusError::Degenerate(_))));
    }

    #[test]
    fn serde_round_trip_and_validation() {
        let v = Vocab::from_tokens(["x", "y"]).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"["<pad>","<bos>","<eos>","<unk>","x","y"]"#);
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
        assert!(serde_json::from_str::<Vocab>(r#"["x"]"#).is_err());
        assert!(serde_json::from_str::<Vocab>(r#"["<pad>","<bos>","<eos>","<unk>","x","x"]"#).is_err());
    }

    #[test]
    fn unknown_maps_to_unk() {
        let v = Vocab::from_tokens(["x"]).unwrap();
        assert_eq!(v.lookup("x"), 4);
        assert_eq!(v.lookup("nope"), UNK);
        assert_eq!(v.token(EOS), Some("<eos>"));
    }
}
