use super::SampleSource;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Supported label percentages.
pub const REGIMES: [u32; 8] = [1, 2, 3, 4, 5, 10, 25, 100];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegimeSpec {
    pub s_percent: u32,
    pub seed: u64,
}

impl RegimeSpec {
    pub fn new(s_percent: u32, seed: u64) -> Result<Self> {
        if !REGIMES.contains(&s_percent) {
            return Err(Error::Config(format!(
                "regime {s_percent}% not in {REGIMES:?}"
            )));
        }
        Ok(Self { s_percent, seed })
    }

    /// `round(s/100 · n)`, halves rounded up.
    pub fn labeled_size(&self, n: usize) -> usize {
        (self.s_percent as usize * n + 50) / 100
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndex {
    /// Sorted ascending.
    pub labeled: Vec<usize>,
    /// Sorted ascending.
    pub unlabeled: Vec<usize>,
    pub labeled_per_class: Vec<usize>,
}

/// Stratified, nested sampling of the labeled subset.
///
/// Each class is shuffled with the regime seed and item `r` of a class of
/// size `n_c` gets the key `(r + ½) / n_c`. All items are ordered by key and
/// the labeled set is the first `round(s/100 · N)` of that order, so every
/// class contributes in proportion and a smaller regime is always a subset of
/// a larger one under the same seed.
pub fn make_regime(train: &dyn SampleSource, spec: RegimeSpec) -> Result<SplitIndex> {
    let n = train.len();
    if n == 0 {
        return Err(Error::EmptyDataset("regime sampling"));
    }
    let classes = train.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for i in 0..n {
        by_class[train.label(i)].push(i);
    }
    let mut rng = Rng::new(spec.seed);
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    for (c, members) in by_class.iter_mut().enumerate() {
        rng.shuffle(members);
        let nc = members.len() as f64;
        for (r, &idx) in members.iter().enumerate() {
            keyed.push(((r as f64 + 0.5) / nc, c, idx));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let k = spec.labeled_size(n);
    let mut labeled_per_class = vec![0; classes];
    let mut is_labeled = vec![false; n];
    for &(_, c, idx) in &keyed[..k] {
        labeled_per_class[c] += 1;
        is_labeled[idx] = true;
    }
    let (labeled, unlabeled): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| is_labeled[i]);
    Ok(SplitIndex {
        labeled,
        unlabeled,
        labeled_per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, SplitTag};
    use proptest::prelude::*;

    fn labels_only(labels: Vec<usize>, classes: usize) -> Dataset {
        let n = labels.len();
        Dataset::new([1, 1, 1], vec![0; n], labels, classes, SplitTag::Train).unwrap()
    }

    #[test]
    fn rejects_unknown_regime() {
        assert!(RegimeSpec::new(7, 0).is_err());
        assert!(RegimeSpec::new(25, 0).is_ok());
    }

    #[test]
    fn cifar10_sizes() {
        let ds = labels_only((0..40_000).map(|i| i % 10).collect(), 10);
        let one = make_regime(&ds, RegimeSpec::new(1, 3).unwrap()).unwrap();
        assert_eq!(one.labeled.len(), 400);
        assert!(one.labeled_per_class.iter().all(|&c| c == 40));
        let all = make_regime(&ds, RegimeSpec::new(100, 3).unwrap()).unwrap();
        assert_eq!(all.labeled.len(), 40_000);
        assert!(all.unlabeled.is_empty());
        let q = make_regime(&ds, RegimeSpec::new(25, 3).unwrap()).unwrap();
        assert_eq!(q.labeled.len(), 10_000);
    }

    #[test]
    fn empty_rejected() {
        let ds = labels_only(vec![], 2);
        assert!(make_regime(&ds, RegimeSpec::new(1, 0).unwrap()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn stratified_nested_disjoint(
            sizes in proptest::collection::vec(150usize..400, 2..8),
            seed in any::<u64>(),
        ) {
            let classes = sizes.len();
            let mut labels = Vec::new();
            for (c, &n) in sizes.iter().enumerate() {
                labels.extend(std::iter::repeat_n(c, n));
            }
            // interleave so class membership is not contiguous
            let mut rng = crate::rng::Rng::new(seed ^ 0x55);
            rng.shuffle(&mut labels);
            let ds = labels_only(labels, classes);
            let mut prev: Option<SplitIndex> = None;
            for &s in &REGIMES {
                let spec = RegimeSpec::new(s, seed).unwrap();
                let split = make_regime(&ds, spec).unwrap();
                prop_assert_eq!(split.labeled.len(), spec.labeled_size(ds.len()));
                prop_assert_eq!(split.labeled.len() + split.unlabeled.len(), ds.len());
                let mut all: Vec<usize> = split.labeled.iter().chain(&split.unlabeled).cloned().collect();
                all.sort_unstable();
                prop_assert!(all.iter().enumerate().all(|(i, &v)| i == v));
                for (c, &n) in sizes.iter().enumerate() {
                    let exact = s as f64 / 100.0 * n as f64;
                    prop_assert!((split.labeled_per_class[c] as f64 - exact).abs() <= 1.0 + 1e-9,
                        "class {} size {} got {} exact {}", c, n, split.labeled_per_class[c], exact);
                }
                if let Some(p) = &prev {
                    prop_assert!(p.labeled.iter().all(|i| split.labeled.binary_search(i).is_ok()));
                }
                prev = Some(split);
            }
        }
    }
}
