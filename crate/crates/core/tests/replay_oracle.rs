//! Replay memory against a keep-everything oracle.

use qgd_core::features::StateVector;
use qgd_core::replay::{EpisodeRecord, Experience, ReplayMemory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn record(id: u64, rmax: f64, len: usize) -> EpisodeRecord {
    let experiences = (0..len)
        .map(|step| Experience {
            state: StateVector([0.0; 6]),
            action: 0,
            reward: 0.0,
            next_state: StateVector([0.0; 6]),
            terminal: step + 1 == len,
            episode_id: id,
            step,
            action_rewards: None,
        })
        .collect();
    EpisodeRecord {
        episode_id: id,
        experiences,
        objective_trace: vec![1.0; len],
        rmax,
    }
}

/// Keeps every committed `(id, rmax)` and derives the expected contents.
struct Oracle {
    all: Vec<(u64, f64)>,
}

impl Oracle {
    fn recent(&self, a: usize) -> Vec<u64> {
        let n = self.all.len();
        self.all[n.saturating_sub(a)..].iter().map(|e| e.0).collect()
    }

    fn best(&self, b: usize) -> Vec<u64> {
        let mut v = self.all.clone();
        // Stable sort: equal rmax keeps commit order.
        v.sort_by(|x, y| y.1.total_cmp(&x.1));
        v.truncate(b);
        v.into_iter().map(|e| e.0).collect()
    }
}

#[test]
fn memory_matches_keep_all_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let a = rng.random_range(1..8);
        let b = rng.random_range(0..5);
        let mut mem = ReplayMemory::new(a, b);
        let mut oracle = Oracle { all: Vec::new() };
        for id in 0..rng.random_range(0..40u64) {
            // Coarse values so ties are common.
            let rmax = rng.random_range(0..6) as f64 * 0.5;
            mem.commit_episode(record(id, rmax, rng.random_range(1..4)));
            oracle.all.push((id, rmax));

            assert_eq!(mem.recent_ids().collect::<Vec<_>>(), oracle.recent(a));
            assert_eq!(mem.best_ids(), oracle.best(b).as_slice());
            let mut expected: Vec<u64> = oracle.recent(a);
            expected.extend(oracle.best(b));
            expected.sort();
            expected.dedup();
            assert_eq!(mem.stored_episodes(), expected.len());
            for id in expected {
                assert!(mem.episode(id).is_some());
            }
        }
    }
}

#[test]
fn minibatch_has_one_draw_per_best_episode() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mem = ReplayMemory::new(45, 5);
    for id in 0..60 {
        mem.commit_episode(record(id, rng.random_range(0.0..10.0), 5));
    }
    let best = mem.best_ids().to_vec();
    for _ in 0..200 {
        let batch = mem.sample_minibatch(32, true, &mut rng).unwrap();
        assert_eq!(batch.experiences.len(), 32);
        assert_eq!(batch.best_draws, 5);
        let ids: Vec<u64> = batch.experiences[..5].iter().map(|e| e.episode_id).collect();
        assert_eq!(ids, best);

        let plain = mem.sample_minibatch(32, false, &mut rng).unwrap();
        assert_eq!(plain.best_draws, 0);
    }
}

#[test]
fn pending_experiences_are_sampleable() {
    let mut mem = ReplayMemory::new(3, 1);
    mem.commit_episode(record(0, 1.0, 1));
    let mut pending = record(1, 0.0, 1).experiences.remove(0);
    pending.step = 99;
    mem.push_pending(pending);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = mem.sample_minibatch(256, false, &mut rng).unwrap();
    assert!(batch.experiences.iter().any(|e| e.step == 99));
    assert_eq!(mem.take_pending().len(), 1);
    assert!(mem.pending().is_empty());
}
