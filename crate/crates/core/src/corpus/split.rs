use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LabeledExample, RelationMention, SealedTruth};
use crate::error::{Error, Result};

/// Fractional parts this close to 1 are treated as whole numbers, so that
/// products like `0.29 * 100` apportion as 29 rather than 28.
const SNAP: f64 = 1e-9;

fn snapped_floor(v: f64) -> usize {
    let f = (v + SNAP).floor();
    f.max(0.0) as usize
}

/// Apportions `total` seats over non-negative real `targets` by the
/// largest-remainder rule: floors first, then one extra seat to each of the
/// largest fractional parts (ties to the lower index).
fn apportion(targets: &[f64], total: usize) -> Vec<usize> {
    let mut seats: Vec<usize> = targets.iter().map(|&v| snapped_floor(v)).collect();
    let assigned: usize = seats.iter().sum();
    if assigned >= total {
        return seats;
    }
    // remainders quantized so that float noise cannot break exact ties
    let mut order: Vec<(usize, i64)> = targets
        .iter()
        .zip(&seats)
        .enumerate()
        .map(|(i, (&v, &s))| (i, ((v - s as f64) / SNAP).round() as i64))
        .collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    for &(i, _) in order.iter().cycle().take(total - assigned) {
        seats[i] += 1;
    }
    seats
}

/// Splits `total` into integer parts proportional to `weights`, summing exactly to `total`.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() {
        return Vec::new();
    }
    if sum <= 0.0 {
        // no information: spread evenly
        return apportion(&vec![total as f64 / weights.len() as f64; weights.len()], total);
    }
    let targets: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    apportion(&targets, total)
}

/// Per-label sample sizes for taking `fraction` of every label's `counts`.
fn stratum_sizes(counts: &[usize], fraction: f64) -> Vec<usize> {
    let targets: Vec<f64> = counts.iter().map(|&c| fraction * c as f64).collect();
    let total = (targets.iter().sum::<f64>() + SNAP).round() as usize;
    apportion(&targets, total)
        .into_iter()
        .zip(counts)
        .map(|(s, &c)| s.min(c))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub labeled_fraction: f64,
    pub unlabeled_fraction: f64,
    pub dev_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        let f = |name: &str, v: f64, lo_open: bool, hi_closed: bool| -> Result<()> {
            let lo_ok = if lo_open { v > 0.0 } else { v >= 0.0 };
            let hi_ok = if hi_closed { v <= 1.0 } else { v < 1.0 };
            if v.is_finite() && lo_ok && hi_ok {
                Ok(())
            } else {
                Err(Error::Split(format!("{name} = {v} out of range")))
            }
        };
        f("labeled_fraction", self.labeled_fraction, true, true)?;
        f("unlabeled_fraction", self.unlabeled_fraction, false, false)?;
        f("dev_fraction", self.dev_fraction, false, false)?;
        if self.labeled_fraction + self.unlabeled_fraction > 1.0 + SNAP {
            return Err(Error::Split(
                "labeled_fraction + unlabeled_fraction exceeds 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Split {
    pub labeled: Vec<LabeledExample>,
    pub unlabeled: Vec<RelationMention>,
    pub dev: Vec<LabeledExample>,
    /// True labels of `unlabeled`, withheld from training.
    pub truth: SealedTruth,
}

/// Stratified dev / labeled / unlabeled split. The dev part is carved first;
/// labeled and unlabeled fractions apply to what remains. Each part keeps the
/// input order.
pub fn stratified_split(
    data: &[LabeledExample],
    num_labels: usize,
    spec: &SplitSpec,
) -> Result<Split> {
    spec.validate()?;
    let mut ids = HashSet::with_capacity(data.len());
    for e in data {
        if !ids.insert(e.id()) {
            return Err(Error::Split(format!("duplicate mention id {}", e.id())));
        }
        if e.label >= num_labels {
            return Err(Error::Split(format!("label index {} out of range", e.label)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); num_labels];
    for (i, e) in data.iter().enumerate() {
        strata[e.label].push(i);
    }
    for s in &mut strata {
        s.shuffle(&mut rng);
    }

    let counts: Vec<usize> = strata.iter().map(Vec::len).collect();
    let dev_sizes = stratum_sizes(&counts, spec.dev_fraction);
    let remaining: Vec<usize> = counts.iter().zip(&dev_sizes).map(|(c, d)| c - d).collect();
    let lab_sizes = stratum_sizes(&remaining, spec.labeled_fraction);
    let unl_sizes: Vec<usize> = stratum_sizes(&remaining, spec.unlabeled_fraction)
        .into_iter()
        .zip(remaining.iter().zip(&lab_sizes))
        .map(|(u, (r, l))| u.min(r - l))
        .collect();

    let mut dev_idx = Vec::new();
    let mut lab_idx = Vec::new();
    let mut unl_idx = Vec::new();
    for (y, s) in strata.iter().enumerate() {
        let (d, rest) = s.split_at(dev_sizes[y]);
        let (l, rest) = rest.split_at(lab_sizes[y]);
        dev_idx.extend_from_slice(d);
        lab_idx.extend_from_slice(l);
        unl_idx.extend_from_slice(&rest[..unl_sizes[y]]);
    }
    if lab_idx.is_empty() {
        return Err(Error::Split(format!(
            "labeled_fraction {} yields an empty labeled set",
            spec.labeled_fraction
        )));
    }
    dev_idx.sort_unstable();
    lab_idx.sort_unstable();
    unl_idx.sort_unstable();

    let truth = SealedTruth::from_pairs(
        unl_idx
            .iter()
            .map(|&i| (data[i].mention.id.clone(), data[i].label)),
    );
    Ok(Split {
        labeled: lab_idx.iter().map(|&i| data[i].clone()).collect(),
        unlabeled: unl_idx.iter().map(|&i| data[i].mention.clone()).collect(),
        dev: dev_idx.iter().map(|&i| data[i].clone()).collect(),
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;
    use proptest::prelude::*;

    fn examples(per_label: &[usize]) -> Vec<LabeledExample> {
        let mut out = Vec::new();
        for (y, &n) in per_label.iter().enumerate() {
            for i in 0..n {
                let m = RelationMention::new(
                    format!("m{y}_{i}"),
                    vec!["a".into(), "b".into()],
                    Span::new(0, 0),
                    Span::new(1, 1),
                )
                .unwrap();
                out.push(LabeledExample { mention: m, label: y });
            }
        }
        out
    }

    fn counts(part: &[LabeledExample], k: usize) -> Vec<usize> {
        let mut c = vec![0; k];
        for e in part {
            c[e.label] += 1;
        }
        c
    }

    fn spec(l: f64, u: f64, d: f64, seed: u64) -> SplitSpec {
        SplitSpec {
            labeled_fraction: l,
            unlabeled_fraction: u,
            dev_fraction: d,
            seed,
        }
    }

    #[test]
    fn ten_percent_of_fifty_thirty_twenty() {
        let data = examples(&[50, 30, 20]);
        let s = stratified_split(&data, 3, &spec(0.10, 0.5, 0.0, 1)).unwrap();
        assert_eq!(counts(&s.labeled, 3), vec![5, 3, 2]);
        assert_eq!(s.unlabeled.len(), 50);
    }

    #[test]
    fn same_seed_same_split() {
        let data = examples(&[17, 9, 4]);
        let a = stratified_split(&data, 3, &spec(0.2, 0.5, 0.1, 7)).unwrap();
        let b = stratified_split(&data, 3, &spec(0.2, 0.5, 0.1, 7)).unwrap();
        assert_eq!(a.labeled, b.labeled);
        assert_eq!(a.unlabeled, b.unlabeled);
        assert_eq!(a.dev, b.dev);
        let c = stratified_split(&data, 3, &spec(0.2, 0.5, 0.1, 8)).unwrap();
        assert_ne!(a.labeled, c.labeled);
    }

    #[test]
    fn parts_are_disjoint_across_fractions() {
        let data = examples(&[40, 25, 10]);
        for f in [0.10, 0.30] {
            let s = stratified_split(&data, 3, &spec(f, 0.5, 0.1, 3)).unwrap();
            let mut seen = HashSet::new();
            for id in s
                .labeled
                .iter()
                .chain(&s.dev)
                .map(|e| e.id())
                .chain(s.unlabeled.iter().map(|m| m.id.as_str()))
            {
                assert!(seen.insert(id.to_owned()));
            }
            for m in &s.unlabeled {
                assert!(s.truth.get(&m.id).is_some());
            }
        }
    }

    #[test]
    fn empty_labeled_part_is_an_error() {
        let data = examples(&[3, 2]);
        assert!(stratified_split(&data, 2, &spec(0.01, 0.5, 0.0, 1)).is_err());
        assert!(stratified_split(&data, 2, &spec(0.6, 0.5, 0.0, 1)).is_err());
    }

    #[test]
    fn apportionment_examples() {
        assert_eq!(largest_remainder(10, &[0.5, 0.3, 0.2]), vec![5, 3, 2]);
        assert_eq!(largest_remainder(1, &[0.6, 0.4]), vec![1, 0]);
        let q = largest_remainder(7, &[1.0 / 3.0; 3]);
        assert_eq!(q.iter().sum::<usize>(), 7);
        assert!(q.iter().max().unwrap() - q.iter().min().unwrap() <= 1);
    }

    /// Brute force: among all floor/ceil vectors with the right total, pick
    /// the rounded-up set with maximal summed remainder, ties to the
    /// lexicographically smallest index set. Exact integer arithmetic in
    /// hundredths.
    fn brute_force_sizes(counts: &[usize], percent: usize) -> Vec<usize> {
        let k = counts.len();
        let exact: Vec<usize> = counts.iter().map(|c| c * percent).collect(); // hundredths
        let floors: Vec<usize> = exact.iter().map(|v| v / 100).collect();
        let rems: Vec<usize> = exact.iter().map(|v| v % 100).collect();
        let sum: usize = exact.iter().sum();
        let total = (sum + 50) / 100;
        let extra = total - floors.iter().sum::<usize>();
        let mut best: Option<(usize, Vec<usize>)> = None;
        for mask in 0u32..(1 << k) {
            if mask.count_ones() as usize != extra {
                continue;
            }
            let set: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
            if set.iter().any(|&i| rems[i] == 0) {
                continue;
            }
            let score: usize = set.iter().map(|&i| rems[i]).sum();
            let better = match &best {
                None => true,
                Some((s, b)) => score > *s || (score == *s && set < *b),
            };
            if better {
                best = Some((score, set));
            }
        }
        let mut out = floors;
        for i in best.expect("a feasible rounding exists").1 {
            out[i] += 1;
        }
        out
    }

    proptest! {
        #[test]
        fn stratum_sizes_match_brute_force(
            counts in proptest::collection::vec(0usize..=10, 1..=5),
            percent in 1usize..=100,
        ) {
            let fraction = percent as f64 / 100.0;
            prop_assert_eq!(stratum_sizes(&counts, fraction), brute_force_sizes(&counts, percent));
        }

        #[test]
        fn largest_remainder_preserves_total(
            total in 1usize..500,
            weights in proptest::collection::vec(0.0f64..1.0, 1..10),
        ) {
            let q = largest_remainder(total, &weights);
            prop_assert_eq!(q.iter().sum::<usize>(), total);
        }
    }
}
