//! Disjoint-user train/test splitting.
//!
//! Splitting by user id (rather than by record) keeps all of one user's
//! history on a single side, which is what generalization-to-new-users
//! evaluation requires. The distinct user set is sorted before the seeded
//! shuffle, so the split depends only on (user set, fraction, seed) — not on
//! record order.

use rand::seq::SliceRandom;
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::seeding;

/// Partitions `records` into (train, test) by user id.
///
/// `train_fraction` of the distinct users (rounded to the nearest count, but
/// never all or none when both sides could be non-empty) goes to train.
pub fn split_by_user<T: Clone>(
    records: &[T],
    user_of: impl Fn(&T) -> u64,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::config(format!(
            "train_fraction must lie in [0, 1], got {train_fraction}"
        )));
    }
    let mut users: Vec<u64> = records
        .iter()
        .map(&user_of)
        .collect::<HashSet<u64>>()
        .into_iter()
        .collect();
    users.sort_unstable();

    let mut rng = seeding::rng_tagged(seed, "user-split");
    users.shuffle(&mut rng);

    let mut n_train = (users.len() as f64 * train_fraction).round() as usize;
    // Keep both sides usable when there are at least two users and the
    // fraction is not explicitly degenerate.
    if users.len() >= 2 {
        if n_train == users.len() && train_fraction < 1.0 {
            n_train -= 1;
        }
        if n_train == 0 && train_fraction > 0.0 {
            n_train = 1;
        }
    }
    let train_users: HashSet<u64> = users[..n_train].iter().copied().collect();

    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in records {
        if train_users.contains(&user_of(r)) {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    Ok((train, test))
}
