//! Generated playlist corpora with a known latent structure.
//!
//! Each playlist belongs to one latent topic. Its tracks are sampled from the
//! topic's own pool, with some draws coming from a pool shared by every
//! topic, and then put in random order. The title is a fixed 4 to 6 word
//! phrase determined by the topic, so track order carries no information.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Playlist;

const MOODS: [&str; 10] = [
    "calm", "dreamy", "lively", "romantic", "sensual", "stylish", "gloomy", "bright", "mellow",
    "groovy",
];
const SETTINGS: [&str; 8] = [
    "night", "morning", "rainy", "autumn", "summer", "winter", "weekend", "sunset",
];
const GENRES: [&str; 7] = ["jazz", "pop", "r&b", "indie", "ballad", "house", "acoustic"];
const PLACES: [&str; 6] = ["cafe", "drive", "study", "workout", "party", "beach"];
const TAILS: [&str; 4] = ["songs", "music", "tracks", "playlist"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicCorpusConfig {
    pub playlists: usize,
    pub topics: usize,
    pub tracks_per_topic: usize,
    pub shared_tracks: usize,
    pub min_tracks: usize,
    pub max_tracks: usize,
    /// Probability that a single track draw comes from the shared pool.
    pub shared_fraction: f64,
    pub seed: u64,
}

impl Default for TopicCorpusConfig {
    fn default() -> Self {
        Self {
            playlists: 2000,
            topics: 20,
            tracks_per_topic: 60,
            shared_tracks: 100,
            min_tracks: 11,
            max_tracks: 20,
            shared_fraction: 0.5,
            seed: 0,
        }
    }
}

/// The fixed title phrase of `topic`.
pub fn topic_title(topic: usize) -> Vec<String> {
    let mood = MOODS[topic % MOODS.len()];
    let setting = SETTINGS[(topic * 3 + 1) % SETTINGS.len()];
    let genre = GENRES[(topic * 5 + 2) % GENRES.len()];
    let place = PLACES[(topic / 2) % PLACES.len()];
    let tail = TAILS[(topic * 7) % TAILS.len()];
    let words: Vec<&str> = match topic % 3 {
        0 => vec![mood, setting, genre, tail],
        1 => vec![mood, genre, "for", setting, place],
        _ => vec![setting, mood, genre, "with", place, tail],
    };
    words.into_iter().map(String::from).collect()
}

/// Generates the corpus together with each playlist's latent topic.
pub fn topic_corpus_with_topics(config: &TopicCorpusConfig) -> Vec<(Playlist, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let titles: Vec<String> = (0..config.topics).map(|t| topic_title(t).join(" ")).collect();
    (0..config.playlists)
        .map(|i| {
            let topic = rng.gen_range(0..config.topics);
            let n = rng.gen_range(config.min_tracks..=config.max_tracks);
            let mut tracks = Vec::with_capacity(n);
            while tracks.len() < n {
                let id = if config.shared_tracks > 0 && rng.gen_bool(config.shared_fraction) {
                    format!("s{}", rng.gen_range(0..config.shared_tracks))
                } else {
                    format!("t{topic}-{}", rng.gen_range(0..config.tracks_per_topic))
                };
                if !tracks.contains(&id) {
                    tracks.push(id);
                }
            }
            tracks.shuffle(&mut rng);
            let p = Playlist {
                id: format!("syn{i:05}"),
                title: titles[topic].clone(),
                tracks,
            };
            (p, topic)
        })
        .collect()
}

pub fn topic_corpus(config: &TopicCorpusConfig) -> Vec<Playlist> {
    topic_corpus_with_topics(config).into_iter().map(|(p, _)| p).collect()
}
