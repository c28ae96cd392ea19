mod common;

use std::collections::BTreeSet;

use common::*;
use moodshift::simindex::{build_over_indices, sample_pair, sample_pair_with_mood};
use moodshift::MoodLabel;

#[test]
fn target_mood_is_uniform_over_all_moods() {
    let catalog = random_catalog(400, 16, 4, 40, 0, 11);
    let all: Vec<usize> = (0..catalog.len()).collect();
    let map = build_over_indices(&catalog, &all, 100).unwrap();
    let mut r = rng(12);
    let draws = 100_000;
    let mut counts = [0usize; 4];
    let mut identity = 0usize;
    for i in 0..draws {
        let seed = &catalog.track(i % catalog.len()).id;
        let pair = sample_pair(&map, &catalog, seed, &mut r).unwrap();
        counts[pair.y_t.index()] += 1;
        identity += usize::from(pair.is_identity());
        assert_eq!(catalog.get(&pair.target_id).unwrap().mood, pair.y_t);
    }
    for c in counts {
        let f = c as f64 / draws as f64;
        assert!((f - 0.25).abs() <= 0.01, "mood frequency {f}");
    }
    let f = identity as f64 / draws as f64;
    assert!((f - 0.25).abs() <= 0.01, "identity fraction {f}");
}

#[test]
fn forced_target_mood_covers_every_candidate() {
    let catalog = random_catalog(800, 16, 4, 80, 0, 21);
    let all: Vec<usize> = (0..catalog.len()).collect();
    let map = build_over_indices(&catalog, &all, 100).unwrap();
    let seed = catalog.track(0);
    let target = MoodLabel((seed.mood.0 + 1) % 4);
    let stored: BTreeSet<&str> = map.lists(&seed.id).unwrap()[target.index()]
        .iter()
        .map(|n| n.id.as_str())
        .collect();
    assert_eq!(stored.len(), 100);
    let mut seen = BTreeSet::new();
    let mut r = rng(22);
    for _ in 0..10_000 {
        let pair = sample_pair_with_mood(&map, &catalog, &seed.id, target, &mut r).unwrap();
        assert!(stored.contains(pair.target_id.as_str()));
        assert_eq!(pair.y_t, target);
        seen.insert(pair.target_id);
    }
    assert_eq!(seen.len(), 100);
}

#[test]
fn identity_pairs_return_the_seed() {
    let catalog = random_catalog(200, 8, 4, 20, 0, 31);
    let all: Vec<usize> = (0..catalog.len()).collect();
    let map = build_over_indices(&catalog, &all, 5).unwrap();
    let mut r = rng(32);
    for t in catalog.tracks().iter().take(50) {
        let pair = sample_pair_with_mood(&map, &catalog, &t.id, t.mood, &mut r).unwrap();
        assert!(pair.is_identity());
        assert_eq!(pair.target_id, t.id);
        assert_eq!(pair.x_t, pair.x_s);
    }
}

#[test]
fn list_heads_match_exhaustive_scan_on_fifty_tracks() {
    let catalog = random_catalog(50, 6, 4, 10, 0, 41);
    let all: Vec<usize> = (0..catalog.len()).collect();
    let map = build_over_indices(&catalog, &all, 3).unwrap();
    for (seed, lists) in naive_lists(&catalog, &all, 1) {
        for (got, want) in map.lists(&seed).unwrap().iter().zip(&lists) {
            assert_eq!(got.first().map(|n| n.id.as_str()), want.first().map(|w| w.0.as_str()));
        }
    }
}
