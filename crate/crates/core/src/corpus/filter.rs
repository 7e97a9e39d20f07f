use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::TokenizedPlaylist;

/// Minimum values a playlist must strictly exceed to be kept.
pub const MIN_TITLE_TOKENS: usize = 3;
pub const MIN_TRACKS: usize = 10;
pub const MIN_AVG_TOKEN_CHARS: f64 = 3.0;

/// The three curation rules, in the order they are checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterCriterion {
    /// Title must have more than three tokens.
    TitleTokens,
    /// Playlist must have more than ten tracks.
    TrackCount,
    /// Title tokens must average more than three characters.
    CharLength,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Keep,
    Reject(FilterCriterion),
}

impl Verdict {
    pub fn is_keep(self) -> bool {
        self == Verdict::Keep
    }
}

/// Characters are counted as Unicode scalar values.
fn mean_token_chars(tokens: &[String]) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    let chars: usize = tokens.iter().map(|t| t.chars().count()).sum();
    chars as f64 / tokens.len() as f64
}

/// Applies the curation rules; a playlist failing several is reported under
/// the first one it fails.
pub fn passes_filter(p: &TokenizedPlaylist) -> Verdict {
    if p.title_tokens.len() <= MIN_TITLE_TOKENS {
        Verdict::Reject(FilterCriterion::TitleTokens)
    } else if p.tracks.len() <= MIN_TRACKS {
        Verdict::Reject(FilterCriterion::TrackCount)
    } else if mean_token_chars(&p.title_tokens) <= MIN_AVG_TOKEN_CHARS {
        Verdict::Reject(FilterCriterion::CharLength)
    } else {
        Verdict::Keep
    }
}

/// Summary statistics of a corpus.
///
/// `average_char_length` is token-weighted over every title token in the
/// corpus; the other two averages are per playlist.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub playlist_count: usize,
    pub unique_tracks: usize,
    pub unique_titles: usize,
    pub unique_words: usize,
    pub average_char_length: f64,
    pub average_title_length: f64,
    pub average_track_length: f64,
}

impl CorpusStats {
    pub fn compute(playlists: &[TokenizedPlaylist]) -> Self {
        if playlists.is_empty() {
            return Self::default();
        }
        let mut tracks = HashSet::new();
        let mut titles = HashSet::new();
        let mut words = HashSet::new();
        let (mut token_total, mut char_total, mut track_total) = (0usize, 0usize, 0usize);
        for p in playlists {
            tracks.extend(p.tracks.iter().map(String::as_str));
            titles.insert(p.title());
            for t in &p.title_tokens {
                words.insert(t.as_str());
                char_total += t.chars().count();
            }
            token_total += p.title_tokens.len();
            track_total += p.tracks.len();
        }
        let n = playlists.len() as f64;
        Self {
            playlist_count: playlists.len(),
            unique_tracks: tracks.len(),
            unique_titles: titles.len(),
            unique_words: words.len(),
            average_char_length: if token_total == 0 {
                0.0
            } else {
                char_total as f64 / token_total as f64
            },
            average_title_length: token_total as f64 / n,
            average_track_length: track_total as f64 / n,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionCounts {
    pub title_tokens: usize,
    pub track_count: usize,
    pub char_length: usize,
}

impl RejectionCounts {
    pub fn total(&self) -> usize {
        self.title_tokens + self.track_count + self.char_length
    }

    fn record(&mut self, c: FilterCriterion) {
        match c {
            FilterCriterion::TitleTokens => self.title_tokens += 1,
            FilterCriterion::TrackCount => self.track_count += 1,
            FilterCriterion::CharLength => self.char_length += 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_count: usize,
    pub kept_count: usize,
    pub rejected: RejectionCounts,
    pub before: CorpusStats,
    pub after: CorpusStats,
}

/// Keeps the passing playlists in their original order.
pub fn filter_corpus(playlists: &[TokenizedPlaylist]) -> (Vec<TokenizedPlaylist>, FilterReport) {
    let mut kept = Vec::new();
    let mut rejected = RejectionCounts::default();
    for p in playlists {
        match passes_filter(p) {
            Verdict::Keep => kept.push(p.clone()),
            Verdict::Reject(c) => rejected.record(c),
        }
    }
    let report = FilterReport {
        input_count: playlists.len(),
        kept_count: kept.len(),
        rejected,
        before: CorpusStats::compute(playlists),
        after: CorpusStats::compute(&kept),
    };
    (kept, report)
}
