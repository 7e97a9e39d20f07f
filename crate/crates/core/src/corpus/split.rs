use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, TokenizedPlaylist};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: u32,
    pub validation: u32,
    pub test: u32,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 8,
            validation: 1,
            test: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCorpus {
    pub train: Vec<TokenizedPlaylist>,
    pub validation: Vec<TokenizedPlaylist>,
    pub test: Vec<TokenizedPlaylist>,
    pub split_seed: u64,
}

/// Splits each title-length stratum separately, then concatenates strata in
/// ascending title length.
///
/// A stratum of `n` playlists is shuffled with a seed derived from
/// `(seed, title length)`; validation and test each take
/// `floor(n * share / total)` playlists, at least one when `n >= 3`, and train
/// keeps the rest. Strata smaller than three go wholly to train.
pub fn stratified_split(
    filtered: &[TokenizedPlaylist],
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitCorpus, CorpusError> {
    if ratios.train == 0 || ratios.validation == 0 || ratios.test == 0 {
        return Err(CorpusError::Degenerate(format!(
            "split ratios must be positive, got {ratios:?}"
        )));
    }
    let total = u64::from(ratios.train + ratios.validation + ratios.test);
    let mut strata: BTreeMap<usize, Vec<&TokenizedPlaylist>> = BTreeMap::new();
    for p in filtered {
        strata.entry(p.title_tokens.len()).or_default().push(p);
    }
    let mut out = SplitCorpus {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        split_seed: seed,
    };
    for (len, mut members) in strata {
        let n = members.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (len as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        members.shuffle(&mut rng);
        let (n_val, n_test) = if n < 3 {
            (0, 0)
        } else {
            let share = |r: u32| ((n as u64 * u64::from(r)) / total).max(1) as usize;
            (share(ratios.validation), share(ratios.test))
        };
        let (val, rest) = members.split_at(n_val);
        let (test, train) = rest.split_at(n_test);
        out.validation.extend(val.iter().map(|p| (*p).clone()));
        out.test.extend(test.iter().map(|p| (*p).clone()));
        out.train.extend(train.iter().map(|p| (*p).clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn stratum(prefix: &str, n: usize, tokens: usize) -> Vec<TokenizedPlaylist> {
        (0..n)
            .map(|i| TokenizedPlaylist {
                id: format!("{prefix}{i}"),
                title_tokens: vec!["word".into(); tokens],
                tracks: vec!["t".into(); 11],
            })
            .collect()
    }

    fn ids(v: &[TokenizedPlaylist]) -> HashSet<String> {
        v.iter().map(|p| p.id.clone()).collect()
    }

    #[test]
    fn ten_split_eight_one_one() {
        let s = stratified_split(&stratum("a", 10, 4), SplitRatios::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn tiny_stratum_goes_to_train() {
        let s = stratified_split(&stratum("a", 2, 4), SplitRatios::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (2, 0, 0));
        let s = stratified_split(&stratum("a", 3, 4), SplitRatios::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (1, 1, 1));
    }

    #[test]
    fn seeds_are_deterministic_and_sizes_stable() {
        let mut data = stratum("a", 40, 4);
        data.extend(stratum("b", 25, 5));
        let a = stratified_split(&data, SplitRatios::default(), 7).unwrap();
        let b = stratified_split(&data, SplitRatios::default(), 7).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&data, SplitRatios::default(), 8).unwrap();
        assert_eq!(
            (a.train.len(), a.validation.len(), a.test.len()),
            (c.train.len(), c.validation.len(), c.test.len())
        );
        assert_ne!(ids(&a.validation), ids(&c.validation));
        // 40 -> 32/4/4, 25 -> 21/2/2
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (53, 6, 6));
    }

    #[test]
    fn zero_ratio_rejected() {
        let r = SplitRatios {
            train: 8,
            validation: 0,
            test: 1,
        };
        assert!(stratified_split(&stratum("a", 5, 4), r, 0).is_err());
    }
}
