//! Expected service cost and cache-subset selection.
//!
//! Accessing a subset `D` of caches costs
//!
//! ```text
//! cost(D) = sum_{j in D} c_j + M * prod_{j in D} rho_j
//! ```
//!
//! where `rho_j` is cache `j`'s miss probability given its indication and the
//! total number of positive indications for the request.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::EstimateTable;

/// Largest cache count accepted by [`select_exhaustive`].
pub const EXHAUSTIVE_LIMIT: usize = 24;

/// Absolute tolerance under which two costs count as tied.
pub const COST_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("miss penalty {penalty} must exceed the largest access cost {max_cost}")]
    PenaltyTooSmall { penalty: f64, max_cost: f64 },
    #[error("access cost of cache {index} must be positive, got {value}")]
    InvalidCost { index: usize, value: f64 },
    #[error("miss probability of cache {index} must lie in [0, 1], got {value}")]
    InvalidProbability { index: usize, value: f64 },
    #[error("expected {expected} entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("exhaustive selection supports at most {EXHAUSTIVE_LIMIT} caches, got {0}")]
    TooManyCaches(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionAlgorithm {
    #[default]
    Exhaustive,
    Greedy,
}

/// One request as seen by the client.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionInstance {
    access_costs: Vec<f64>,
    miss_penalty: f64,
    indications: Vec<bool>,
    miss_probs: Vec<f64>,
}

impl SelectionInstance {
    pub fn new(
        access_costs: Vec<f64>,
        miss_penalty: f64,
        indications: Vec<bool>,
        miss_probs: Vec<f64>,
    ) -> Result<Self, SelectionError> {
        let n = access_costs.len();
        for len in [indications.len(), miss_probs.len()] {
            if len != n {
                return Err(SelectionError::LengthMismatch { expected: n, actual: len });
            }
        }
        for (index, &value) in access_costs.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(SelectionError::InvalidCost { index, value });
            }
        }
        let max_cost = access_costs.iter().copied().fold(0.0, f64::max);
        if !(miss_penalty > max_cost && miss_penalty.is_finite()) {
            return Err(SelectionError::PenaltyTooSmall { penalty: miss_penalty, max_cost });
        }
        for (index, &value) in miss_probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(SelectionError::InvalidProbability { index, value });
            }
        }
        Ok(Self { access_costs, miss_penalty, indications, miss_probs })
    }

    /// Builds an instance from indications and per-cache estimate tables.
    pub fn from_indications(
        access_costs: Vec<f64>,
        miss_penalty: f64,
        indications: Vec<bool>,
        tables: &[EstimateTable],
    ) -> Result<Self, SelectionError> {
        let probs = assign_miss_probs(&indications, tables);
        Self::new(access_costs, miss_penalty, indications, probs)
    }

    pub fn len(&self) -> usize {
        self.access_costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.access_costs.is_empty()
    }

    pub fn access_costs(&self) -> &[f64] {
        &self.access_costs
    }

    pub fn miss_penalty(&self) -> f64 {
        self.miss_penalty
    }

    pub fn indications(&self) -> &[bool] {
        &self.indications
    }

    pub fn miss_probs(&self) -> &[f64] {
        &self.miss_probs
    }

    /// Expected service cost of accessing `subset`.
    pub fn service_cost(&self, subset: &[usize]) -> f64 {
        let mut access = 0.0;
        let mut miss = 1.0;
        for &j in subset {
            access += self.access_costs[j];
            miss *= self.miss_probs[j];
        }
        access + self.miss_penalty * miss
    }

    fn mask_cost(&self, mask: u32) -> f64 {
        let mut access = 0.0;
        let mut miss = 1.0;
        for j in 0..self.len() {
            if mask >> j & 1 == 1 {
                access += self.access_costs[j];
                miss *= self.miss_probs[j];
            }
        }
        access + self.miss_penalty * miss
    }
}

/// Positive-indication count and per-cache miss probabilities: a cache with a
/// positive indication gets `mrone[k]`, any other `mrzero[k]`.
pub fn assign_miss_probs(indications: &[bool], tables: &[EstimateTable]) -> Vec<f64> {
    let k = indications.iter().filter(|&&b| b).count();
    indications
        .iter()
        .zip(tables)
        .map(|(&ind, t)| if ind { t.mrone[k] } else { t.mrzero[k] })
        .collect()
}

fn mask_indices(mask: u32) -> Vec<usize> {
    (0..32).filter(|j| mask >> j & 1 == 1).collect()
}

/// Whether `a` beats `b` under the tie-break: fewer caches, then the
/// lexicographically smaller index list.
fn preferred_on_tie(a: u32, b: u32) -> bool {
    match a.count_ones().cmp(&b.count_ones()) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => mask_indices(a) < mask_indices(b),
    }
}

/// Minimum-cost subset over all `2^N` candidates.
pub fn select_exhaustive(inst: &SelectionInstance) -> Result<Vec<usize>, SelectionError> {
    let n = inst.len();
    if n > EXHAUSTIVE_LIMIT {
        return Err(SelectionError::TooManyCaches(n));
    }
    let mut best_mask = 0u32;
    let mut best_cost = inst.miss_penalty;
    for mask in 1..(1u32 << n) {
        let cost = inst.mask_cost(mask);
        if cost < best_cost - COST_TIE_TOLERANCE
            || ((cost - best_cost).abs() <= COST_TIE_TOLERANCE && preferred_on_tie(mask, best_mask))
        {
            best_cost = cost;
            best_mask = mask;
        }
    }
    Ok(mask_indices(best_mask))
}

/// Adds the cache with the largest cost decrease until none helps.
pub fn select_greedy(inst: &SelectionInstance) -> Vec<usize> {
    let n = inst.len();
    let mut chosen = vec![false; n];
    let mut access = 0.0;
    let mut miss = 1.0;
    let mut current = inst.miss_penalty;
    loop {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..n).filter(|&j| !chosen[j]) {
            let cost = access + inst.access_costs[j] + inst.miss_penalty * (miss * inst.miss_probs[j]);
            if best.is_none_or(|(_, b)| cost < b - COST_TIE_TOLERANCE) {
                best = Some((j, cost));
            }
        }
        match best {
            Some((j, cost)) if cost < current - COST_TIE_TOLERANCE => {
                chosen[j] = true;
                access += inst.access_costs[j];
                miss *= inst.miss_probs[j];
                current = cost;
            }
            _ => break,
        }
    }
    (0..n).filter(|&j| chosen[j]).collect()
}

pub fn select(inst: &SelectionInstance, algorithm: SelectionAlgorithm) -> Result<Vec<usize>, SelectionError> {
    match algorithm {
        SelectionAlgorithm::Exhaustive => select_exhaustive(inst),
        SelectionAlgorithm::Greedy => Ok(select_greedy(inst)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inst(costs: &[f64], m: f64, probs: &[f64]) -> SelectionInstance {
        SelectionInstance::new(costs.to_vec(), m, vec![true; costs.len()], probs.to_vec()).unwrap()
    }

    fn table(mrone: &[f64], mrzero: &[f64]) -> EstimateTable {
        EstimateTable { mrone: mrone.to_vec(), mrzero: mrzero.to_vec() }
    }

    /// Enumerates subsets as explicit index lists, independent of the bitmask walk.
    fn brute_force_min(inst: &SelectionInstance) -> f64 {
        fn rec(inst: &SelectionInstance, j: usize, cur: &mut Vec<usize>, best: &mut f64) {
            if j == inst.len() {
                *best = best.min(inst.service_cost(cur));
                return;
            }
            rec(inst, j + 1, cur, best);
            cur.push(j);
            rec(inst, j + 1, cur, best);
            cur.pop();
        }
        let mut best = f64::INFINITY;
        rec(inst, 0, &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn cost_examples() {
        let one = inst(&[1.0], 30.0, &[0.1]);
        assert_eq!(one.service_cost(&[]), 30.0);
        assert!((one.service_cost(&[0]) - 4.0).abs() < 1e-12);
        let two = inst(&[1.0, 2.0], 30.0, &[0.5, 0.2]);
        assert!((two.service_cost(&[0, 1]) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn instance_validation() {
        assert!(matches!(
            SelectionInstance::new(vec![1.0, 5.0], 5.0, vec![true, true], vec![0.1, 0.1]),
            Err(SelectionError::PenaltyTooSmall { .. })
        ));
        assert!(matches!(
            SelectionInstance::new(vec![1.0], 5.0, vec![true], vec![1.1]),
            Err(SelectionError::InvalidProbability { .. })
        ));
        assert!(matches!(
            SelectionInstance::new(vec![1.0], 5.0, vec![true, false], vec![0.1]),
            Err(SelectionError::LengthMismatch { .. })
        ));
        assert!(matches!(
            SelectionInstance::new(vec![0.0], 5.0, vec![true], vec![0.1]),
            Err(SelectionError::InvalidCost { .. })
        ));
    }

    #[test]
    fn assign_all_negative() {
        let tables = vec![table(&[0.1, 0.2, 0.3, 0.4], &[0.9, 0.8, 0.7, 0.6]); 3];
        assert_eq!(assign_miss_probs(&[false, false, false], &tables), vec![0.9, 0.9, 0.9]);
    }

    #[test]
    fn assign_conditions_on_positive_count() {
        let tables = vec![
            table(&[0.10, 0.11, 0.12, 0.13], &[0.90, 0.91, 0.92, 0.93]),
            table(&[0.20, 0.21, 0.22, 0.23], &[0.80, 0.81, 0.82, 0.83]),
            table(&[0.30, 0.31, 0.32, 0.33], &[0.70, 0.71, 0.72, 0.73]),
        ];
        assert_eq!(assign_miss_probs(&[true, false, false], &tables), vec![0.11, 0.81, 0.71]);
        let near_zero = vec![table(&[0.5, 0.4, 1e-6, 0.0], &[0.9; 4]); 3];
        let rho = assign_miss_probs(&[true, true, false], &near_zero);
        assert!(rho[0] < 1e-5 && rho[1] < 1e-5);
        assert_eq!(rho[2], 0.9);
    }

    #[test]
    fn exhaustive_examples() {
        assert_eq!(select_exhaustive(&inst(&[1.0], 30.0, &[0.1])).unwrap(), vec![0]);
        // positive indication but too unreliable to be worth the access
        assert_eq!(select_exhaustive(&inst(&[1.0], 10.0, &[0.95])).unwrap(), Vec::<usize>::new());
        let three = inst(&[1.0, 2.0, 3.0], 30.0, &[0.5, 0.5, 0.5]);
        // costs: {}=30 {0}=16 {1}=17 {2}=18 {0,1}=10.5 {0,2}=11.5 {1,2}=12.5 {0,1,2}=9.75
        assert_eq!(select_exhaustive(&three).unwrap(), vec![0, 1, 2]);
        assert_eq!(three.service_cost(&[0, 1, 2]), brute_force_min(&three));
    }

    #[test]
    fn exhaustive_tie_breaks() {
        // {0}, {1} and {0,1} all cost 3; the singletons win, then index order.
        let t = inst(&[1.0, 1.0], 4.0, &[0.5, 0.5]);
        assert_eq!(select_exhaustive(&t).unwrap(), vec![0]);
        // {} = 10 and {0} = 1 + 9 = 10 tie; smaller cardinality wins.
        let t = inst(&[1.0], 10.0, &[0.9]);
        assert_eq!(select_exhaustive(&t).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn exhaustive_refuses_large_instances() {
        let n = EXHAUSTIVE_LIMIT + 1;
        let big = inst(&vec![1.0; n], 30.0, &vec![0.5; n]);
        assert_eq!(select_exhaustive(&big).unwrap_err(), SelectionError::TooManyCaches(n));
        assert!(!select_greedy(&big).is_empty());
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(select_greedy(&inst(&[1.0], 30.0, &[0.1])), vec![0]);
        assert!(select_greedy(&inst(&[1.0, 2.0, 3.0], 30.0, &[1.0, 1.0, 1.0])).is_empty());
    }

    #[test]
    fn greedy_never_beats_exhaustive() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut worst: f64 = 1.0;
        for _ in 0..1000 {
            let n = rng.random_range(1..=6);
            let costs: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..5.0)).collect();
            let probs: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let m = [10.0, 30.0, 300.0][rng.random_range(0..3)];
            let i = inst(&costs, m, &probs);
            let g = i.service_cost(&select_greedy(&i));
            let e = i.service_cost(&select_exhaustive(&i).unwrap());
            assert!(g >= e - COST_TIE_TOLERANCE);
            worst = worst.max(g / e);
        }
        assert!(worst >= 1.0);
    }

    #[test]
    fn large_penalty_forces_access() {
        let i = inst(&[1.0, 2.0], 1e9, &[0.99, 1.0]);
        assert_eq!(select_exhaustive(&i).unwrap(), vec![0]);
    }

    fn arb_instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
        (1usize..=6).prop_flat_map(|n| {
            (
                proptest::collection::vec(1.0f64..5.0, n),
                proptest::collection::vec(0.0f64..=1.0, n),
                prop_oneof![Just(10.0), Just(30.0), Just(300.0)],
            )
        })
    }

    proptest! {
        #[test]
        fn exhaustive_is_optimal((costs, probs, m) in arb_instance()) {
            let i = inst(&costs, m, &probs);
            let chosen = select_exhaustive(&i).unwrap();
            prop_assert!((i.service_cost(&chosen) - brute_force_min(&i)).abs() <= COST_TIE_TOLERANCE);
            prop_assert_eq!(i.service_cost(&[]), m);
        }

        #[test]
        fn raising_penalty_never_raises_chosen_miss_term((costs, probs, m) in arb_instance(), factor in 1.5f64..100.0) {
            let lo = inst(&costs, m, &probs);
            let hi = inst(&costs, m * factor, &probs);
            let miss = |i: &SelectionInstance, s: &[usize]| s.iter().map(|&j| i.miss_probs()[j]).product::<f64>();
            let s_lo = select_exhaustive(&lo).unwrap();
            let s_hi = select_exhaustive(&hi).unwrap();
            prop_assert!(miss(&hi, &s_hi) <= miss(&lo, &s_lo) + 1e-12);
        }

        #[test]
        fn assignment_is_permutation_equivariant(
            bits in proptest::collection::vec(any::<bool>(), 1..6),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, Rng, SeedableRng};
            let n = bits.len();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let tables: Vec<EstimateTable> = (0..n)
                .map(|_| table(&(0..=n).map(|_| rng.random()).collect::<Vec<_>>(), &(0..=n).map(|_| rng.random()).collect::<Vec<_>>()))
                .collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let rho = assign_miss_probs(&bits, &tables);
            let pbits: Vec<bool> = perm.iter().map(|&p| bits[p]).collect();
            let ptables: Vec<EstimateTable> = perm.iter().map(|&p| tables[p].clone()).collect();
            let prho = assign_miss_probs(&pbits, &ptables);
            for (i, &p) in perm.iter().enumerate() {
                prop_assert_eq!(prho[i], rho[p]);
            }
        }
    }
}
