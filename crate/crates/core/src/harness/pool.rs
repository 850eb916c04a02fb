//! Ground-truth oracle, data splits and stratified pair pools.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::active::PairPool;
use crate::error::{Error, Result};
use crate::spectral::{DataMatrix, PairLabel};

/// Same class is an equivalence constraint, different classes are not.
pub fn oracle_label(data: &DataMatrix, i: usize, j: usize) -> Result<PairLabel> {
    let labels = data.require_labels()?;
    data.check_index(i)?;
    data.check_index(j)?;
    Ok(if labels[i] == labels[j] {
        PairLabel::Similar
    } else {
        PairLabel::Dissimilar
    })
}

/// Draw `pool_size` of `rows`, as evenly across classes as availability
/// allows, and form all pairs among them. Returned rows are sorted.
pub fn build_pool_from(
    data: &DataMatrix,
    rows: &[usize],
    pool_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, PairPool)> {
    let labels = data.require_labels()?;
    if pool_size > rows.len() {
        return Err(Error::InvalidConfig(format!(
            "pool of {pool_size} examples from {} available",
            rows.len()
        )));
    }
    let mut classes: Vec<i64> = rows.iter().map(|&r| labels[r]).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut buckets: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| {
            let mut members: Vec<usize> = rows.iter().copied().filter(|&r| labels[r] == c).collect();
            members.shuffle(rng);
            members.reverse();
            members
        })
        .collect();

    // round-robin keeps per-class counts within one of each other
    let mut chosen = Vec::with_capacity(pool_size);
    while chosen.len() < pool_size {
        for bucket in buckets.iter_mut() {
            if chosen.len() == pool_size {
                break;
            }
            if let Some(r) = bucket.pop() {
                chosen.push(r);
            }
        }
    }
    chosen.sort_unstable();
    let pool = PairPool::all_pairs(&chosen)?;
    Ok((chosen, pool))
}

pub fn build_pool(data: &DataMatrix, pool_size: usize, seed: u64) -> Result<(Vec<usize>, PairPool)> {
    let rows: Vec<usize> = (0..data.nrows()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build_pool_from(data, &rows, pool_size, &mut rng)
}

/// Random test rows and the remaining training rows, both sorted.
pub fn split_test(n: usize, n_test: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_test == 0 || n_test >= n {
        return Err(Error::InvalidConfig(format!(
            "test size {n_test} must be in 1..{n}"
        )));
    }
    let mut test: Vec<usize> = rand::seq::index::sample(rng, n, n_test).into_vec();
    test.sort_unstable();
    let mut is_test = vec![false; n];
    for &t in &test {
        is_test[t] = true;
    }
    let train = (0..n).filter(|&i| !is_test[i]).collect();
    Ok((test, train))
}
