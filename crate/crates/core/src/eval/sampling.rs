//! Proportional stratified sampling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SampleError {
    #[error("cannot sample {requested} items from a population of {available}")]
    TooLarge { requested: usize, available: usize },
}

/// Largest-remainder apportionment of `n` seats over `counts`.
///
/// Remainders are compared exactly as `(n * count) mod total`; equal
/// remainders go to the label that sorts first.
pub fn allocate(counts: &BTreeMap<String, usize>, n: usize) -> Result<BTreeMap<String, usize>, SampleError> {
    let total: usize = counts.values().sum();
    if n > total {
        return Err(SampleError::TooLarge {
            requested: n,
            available: total,
        });
    }
    let mut out = BTreeMap::new();
    if total == 0 {
        return Ok(out);
    }
    let mut remainders = Vec::with_capacity(counts.len());
    let mut assigned = 0;
    for (label, &count) in counts {
        let scaled = n * count;
        out.insert(label.clone(), scaled / total);
        assigned += scaled / total;
        remainders.push((scaled % total, label));
    }
    // BTreeMap iteration is label-ordered and the sort is stable.
    remainders.sort_by(|a, b| b.0.cmp(&a.0));
    for (_, label) in remainders.into_iter().take(n - assigned) {
        *out.get_mut(label).expect("label present") += 1;
    }
    Ok(out)
}

/// Draws `n` items with per-type quotas from [`allocate`] and a seeded
/// shuffle within each type. Selected items keep their input order.
pub fn stratified_sample<T: Clone>(
    items: &[T],
    n: usize,
    seed: u64,
    category: impl Fn(&T) -> &str,
) -> Result<Vec<T>, SampleError> {
    let mut by_type: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        by_type.entry(category(item).to_string()).or_default().push(i);
    }
    let counts = by_type.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    let quotas = allocate(&counts, n)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n);
    for (label, mut indices) in by_type {
        indices.shuffle(&mut rng);
        chosen.extend(indices.into_iter().take(quotas[&label]));
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| items[i].clone()).collect())
}
