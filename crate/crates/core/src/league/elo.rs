use std::collections::BTreeMap;

use super::{GenerationRef, MatchResult, Outcome};

/// Rating changes are rounded to this grid so that every rating stays a
/// dyadic rational and the antisymmetric updates cancel exactly in sums.
const DELTA_QUANTUM: f64 = 1.0 / (1u64 << 20) as f64;

/// Logistic expected score of a player rated `ra` against one rated `rb`.
pub fn expected_score(ra: f64, rb: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf((rb - ra) / 400.0))
}

/// One game: `score_a` is 1, 0.5 or 0. Returns the new `(ra, rb)`.
pub fn elo_update(ra: f64, rb: f64, score_a: f64, k: f64) -> (f64, f64) {
    let raw = k * (score_a - expected_score(ra, rb));
    let delta = (raw / DELTA_QUANTUM).round() * DELTA_QUANTUM;
    (ra + delta, rb - delta)
}

/// Sequential Elo over `matches` in the given order; a match with
/// `game_count` n counts as n consecutive identical games.
pub fn run_elo<'a>(
    generations: &[GenerationRef],
    matches: impl IntoIterator<Item = &'a MatchResult>,
    k: f64,
    initial: f64,
) -> BTreeMap<GenerationRef, f64> {
    let mut ratings: BTreeMap<GenerationRef, f64> = generations.iter().map(|g| (g.clone(), initial)).collect();
    for m in matches {
        let score = match m.outcome {
            Outcome::AWin => 1.0,
            Outcome::BWin => 0.0,
            Outcome::Draw => 0.5,
        };
        for _ in 0..m.game_count {
            let ra = *ratings.entry(m.side_a.clone()).or_insert(initial);
            let rb = *ratings.entry(m.side_b.clone()).or_insert(initial);
            let (na, nb) = elo_update(ra, rb, score, k);
            ratings.insert(m.side_a.clone(), na);
            ratings.insert(m.side_b.clone(), nb);
        }
    }
    ratings
}
