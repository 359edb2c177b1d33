//! Deterministic stratified train/validation/test splitting.
//!
//! Strata are sex × age decile. Global split sizes come from
//! largest-remainder rounding of the requested fractions; stratum quotas
//! start from per-stratum floors and the remaining seats are dealt to the
//! (stratum, role) cells with the largest fractional remainders, subject to
//! the global totals.

use super::{CohortError, CohortTable};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Largest-remainder apportionment of `n` items into parts proportional to
/// `fractions`. Ties go to the earlier part.
fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n - assigned) {
        sizes[i] += 1;
    }
    sizes
}

/// Age decile index (0..10) of `age` given the decile cut points.
fn decile_of(age: f64, cuts: &[f64]) -> usize {
    cuts.iter().take_while(|&&c| age > c).count()
}

/// Split a cohort into disjoint train/validation/test tables.
///
/// Deterministic for a fixed seed; stratified by sex and age decile; the
/// three global sizes follow largest-remainder rounding of the fractions.
pub fn split_train_val_test(
    table: &CohortTable,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(CohortTable, CohortTable, CohortTable), CohortError> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|&f| f <= 0.0) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CohortError::BadFractions(fr));
    }
    let n = table.len();
    if n < 3 {
        return Err(CohortError::TooFewRecords(n, 3));
    }

    // Age decile cut points over the whole table (interior deciles only).
    let mut ages = table.ages();
    ages.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cuts: Vec<f64> = (1..10)
        .map(|d| {
            let pos = d as f64 / 10.0 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let w = pos - lo as f64;
            ages[lo] * (1.0 - w) + ages[hi] * w
        })
        .collect();

    // Build strata: key = (sex, decile), deterministic order.
    let mut strata: Vec<((u8, usize), Vec<usize>)> = Vec::new();
    for (i, r) in table.records.iter().enumerate() {
        let key = (r.sex.as_f64() as u8, decile_of(r.age, &cuts));
        match strata.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(i),
            None => strata.push((key, vec![i])),
        }
    }
    strata.sort_by_key(|(k, _)| *k);

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for (_, members) in strata.iter_mut() {
        members.shuffle(&mut rng);
    }

    let targets = largest_remainder(n, &fr);

    // Per-stratum floors, then deal remaining seats by remainder, bounded by
    // stratum capacity and global targets.
    let mut quotas: Vec<[usize; 3]> = Vec::with_capacity(strata.len());
    let mut remaining_role = [0usize; 3];
    for role in 0..3 {
        remaining_role[role] = targets[role];
    }
    let mut stratum_left: Vec<usize> = Vec::with_capacity(strata.len());
    let mut cells: Vec<(usize, usize, f64)> = Vec::new(); // (stratum, role, remainder)
    for (s, (_, members)) in strata.iter().enumerate() {
        let ns = members.len();
        let mut q = [0usize; 3];
        let mut floor_sum = 0;
        for role in 0..3 {
            let quota = fr[role] * ns as f64;
            q[role] = quota.floor() as usize;
            floor_sum += q[role];
            remaining_role[role] = remaining_role[role].saturating_sub(q[role]);
            cells.push((s, role, quota - quota.floor()));
        }
        stratum_left.push(ns - floor_sum);
        quotas.push(q);
    }
    cells.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    for &(s, role, _) in &cells {
        if stratum_left[s] > 0 && remaining_role[role] > 0 {
            quotas[s][role] += 1;
            stratum_left[s] -= 1;
            remaining_role[role] -= 1;
        }
    }
    // Repair pass: any leftover capacity goes to whichever role still needs
    // seats (totals always balance).
    for s in 0..strata.len() {
        while stratum_left[s] > 0 {
            let role = (0..3)
                .find(|&r| remaining_role[r] > 0)
                .expect("seat totals balance");
            quotas[s][role] += 1;
            stratum_left[s] -= 1;
            remaining_role[role] -= 1;
        }
    }

    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (s, (_, members)) in strata.iter().enumerate() {
        let (q_train, q_val) = (quotas[s][0], quotas[s][1]);
        parts[0].extend_from_slice(&members[..q_train]);
        parts[1].extend_from_slice(&members[q_train..q_train + q_val]);
        parts[2].extend_from_slice(&members[q_train + q_val..]);
    }
    for p in parts.iter_mut() {
        p.sort_unstable(); // keep original record order inside each part
    }

    Ok((
        table.subset(&parts[0], &format!("{}|train", table.provenance)),
        table.subset(&parts[1], &format!("{}|val", table.provenance)),
        table.subset(&parts[2], &format!("{}|test", table.provenance)),
    ))
}

#[cfg(test)]
mod tests {
    use super::super::tests::record;
    use super::*;
    use crate::cohort::Sex;
    use std::collections::BTreeSet;

    fn table(n: usize) -> CohortTable {
        let records = (0..n)
            .map(|i| {
                let mut r = record(&format!("S{i:04}"), 18.0 + (i as f64 * 47.0) % 47.0);
                if i % 2 == 1 {
                    r.sex = Sex::Female;
                }
                r
            })
            .collect();
        CohortTable::new(records, "synthetic")
    }

    /// Independent largest-remainder oracle for global sizes.
    fn oracle_sizes(n: usize, fr: [f64; 3]) -> Vec<usize> {
        let quotas: Vec<f64> = fr.iter().map(|f| f * n as f64).collect();
        let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut rem: Vec<(usize, f64)> = quotas
            .iter()
            .enumerate()
            .map(|(i, q)| (i, q - q.floor()))
            .collect();
        rem.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let mut missing = n - sizes.iter().sum::<usize>();
        for (i, _) in rem {
            if missing == 0 {
                break;
            }
            sizes[i] += 1;
            missing -= 1;
        }
        sizes
    }

    #[test]
    fn same_seed_gives_identical_partitions() {
        let t = table(100);
        let (a1, b1, c1) = split_train_val_test(&t, (0.8, 0.1, 0.1), 7).unwrap();
        let (a2, b2, c2) = split_train_val_test(&t, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(a1.records, a2.records);
        assert_eq!(b1.records, b2.records);
        assert_eq!(c1.records, c2.records);
    }

    #[test]
    fn fractions_not_summing_to_one_error() {
        let t = table(20);
        assert!(matches!(
            split_train_val_test(&t, (0.7, 0.1, 0.1), 1),
            Err(CohortError::BadFractions(_))
        ));
    }

    #[test]
    fn ten_records_split_eight_one_one() {
        let t = table(10);
        let (a, b, c) = split_train_val_test(&t, (0.8, 0.1, 0.1), 3).unwrap();
        let oracle = oracle_sizes(10, [0.8, 0.1, 0.1]);
        assert_eq!(vec![a.len(), b.len(), c.len()], oracle);
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
    }

    #[test]
    fn global_sizes_match_largest_remainder_oracle() {
        for n in [3usize, 7, 10, 33, 100, 257] {
            for fr in [(0.8, 0.1, 0.1), (0.5, 0.25, 0.25), (0.6, 0.3, 0.1)] {
                let t = table(n);
                let (a, b, c) = split_train_val_test(&t, fr, 11).unwrap();
                let oracle = oracle_sizes(n, [fr.0, fr.1, fr.2]);
                assert_eq!(vec![a.len(), b.len(), c.len()], oracle, "n={n} fr={fr:?}");
            }
        }
    }

    #[test]
    fn splits_partition_the_table() {
        let t = table(101);
        let (a, b, c) = split_train_val_test(&t, (0.6, 0.2, 0.2), 99).unwrap();
        let mut ids = BTreeSet::new();
        for part in [&a, &b, &c] {
            for r in &part.records {
                assert!(ids.insert(r.subject_id.clone()), "overlap on {}", r.subject_id);
            }
        }
        let original: BTreeSet<String> =
            t.records.iter().map(|r| r.subject_id.clone()).collect();
        assert_eq!(ids, original);
    }

    #[test]
    fn too_small_table_errors() {
        let t = table(2);
        assert!(matches!(
            split_train_val_test(&t, (0.8, 0.1, 0.1), 1),
            Err(CohortError::TooFewRecords(2, 3))
        ));
    }
}
