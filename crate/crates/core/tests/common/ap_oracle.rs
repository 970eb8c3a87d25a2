//! Average precision computed literally from its definition.

use macforge::numeric::SeededStream;
use macforge::retrieval::{average_precision, QueryTruth};

/// Filters ignored ids, then sums precision-at-r over every relevant rank r.
pub fn oracle_ap(ranking: &[String], gt: &QueryTruth) -> f64 {
    let kept: Vec<&String> = ranking.iter().filter(|id| !gt.ignored.contains(*id)).collect();
    let mut sum = 0.0;
    for r in 0..kept.len() {
        if gt.relevant.contains(kept[r]) {
            let hits = kept[..=r].iter().filter(|id| gt.relevant.contains(**id)).count();
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    sum / gt.relevant.len() as f64
}

/// A random ranking over `n` ids with disjoint relevant and ignored subsets;
/// some relevant ids may be left out of the ranking.
pub fn random_instance(s: &mut SeededStream) -> (Vec<String>, QueryTruth) {
    let n = s.range_inclusive(1, 60);
    let mut ids: Vec<String> = (0..n).map(|i| format!("img{i}")).collect();
    s.shuffle(&mut ids);
    let p_rel = s.uniform(0.05, 0.6);
    let p_ign = s.uniform(0.0, 0.3);
    let mut relevant = Vec::new();
    let mut ignored = Vec::new();
    for id in &ids {
        let u = s.next_f64();
        if u < p_rel {
            relevant.push(id.clone());
        } else if u < p_rel + p_ign {
            ignored.push(id.clone());
        }
    }
    if relevant.is_empty() {
        relevant.push(ids[s.index(n)].clone());
        ignored.retain(|i| i != &relevant[0]);
    }
    let missing = s.index(3);
    let ranking: Vec<String> = ids.iter().filter(|id| !relevant[..missing.min(relevant.len() - 1)].contains(id)).cloned().collect();
    (ranking, QueryTruth::new(relevant, ignored))
}

/// Number of instances (out of `n`) where the library value differs from the oracle in any bit.
pub fn mismatches(seed: u64, n: usize) -> usize {
    let root = SeededStream::new(seed, 0).derive_named("ap-oracle");
    (0..n)
        .filter(|&t| {
            let (ranking, gt) = random_instance(&mut root.derive(t as u64));
            average_precision(&ranking, &gt).unwrap().to_bits() != oracle_ap(&ranking, &gt).to_bits()
        })
        .count()
}

/// Relevant {a, b}, ranking [a, x, b, y].
pub fn worked_example() -> f64 {
    let gt = QueryTruth::new(["a", "b"], Vec::<&str>::new());
    average_precision(&["a", "x", "b", "y"], &gt).unwrap()
}
