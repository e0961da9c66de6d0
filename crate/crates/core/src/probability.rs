//! Finite-support laws and exact conditional expectations.
//!
//! A [`DiscreteLaw`] is a table of support points with strictly positive
//! probabilities. Conditioning on a subset of coordinates partitions the
//! support into [`Cell`]s; a [`CondTable`] stores one value per cell. Cells
//! are ordered lexicographically by their coordinate values, and every sum
//! runs in support order, so results do not depend on evaluation schedule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Tolerance on `Σ p = 1` accepted by [`DiscreteLaw::new`].
pub const NORMALIZATION_TOL: f64 = 1e-12;

pub(crate) fn cmp_points(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

// -0.0 and 0.0 must land in the same cell.
fn canonical(x: f64) -> f64 {
    x + 0.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLaw {
    dim: usize,
    support: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl DiscreteLaw {
    /// Probabilities must be strictly positive and sum to one within
    /// [`NORMALIZATION_TOL`]; support points must be finite and distinct.
    pub fn new(support: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::contract(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Self::build(support, probs)
    }

    /// Normalizes nonnegative weights; zero-weight points are dropped.
    pub fn from_weights(support: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::contract("support and weights differ in length"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::contract("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::contract("weights sum to zero"));
        }
        let (support, probs): (Vec<_>, Vec<_>) = support
            .into_iter()
            .zip(weights)
            .filter(|(_, w)| *w > 0.0)
            .map(|(z, w)| (z, w / total))
            .unzip();
        Self::build(support, probs)
    }

    fn build(support: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::contract("law has empty support"));
        }
        if support.len() != probs.len() {
            return Err(Error::contract("support and probabilities differ in length"));
        }
        let dim = support[0].len();
        if dim == 0 {
            return Err(Error::contract("support points must have at least one coordinate"));
        }
        let mut clean = Vec::with_capacity(support.len());
        for (i, z) in support.into_iter().enumerate() {
            if z.len() != dim {
                return Err(Error::contract(format!(
                    "support point {i} has {} coordinates, expected {dim}",
                    z.len()
                )));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::contract(format!("support point {i} is not finite")));
            }
            clean.push(z.into_iter().map(canonical).collect::<Vec<_>>());
        }
        for (i, p) in probs.iter().enumerate() {
            if !(p.is_finite() && *p > 0.0) {
                return Err(Error::contract(format!(
                    "probability {p} of support point {i} is not strictly positive"
                )));
            }
        }
        let mut order: Vec<usize> = (0..clean.len()).collect();
        order.sort_by(|&a, &b| cmp_points(&clean[a], &clean[b]));
        for w in order.windows(2) {
            if cmp_points(&clean[w[0]], &clean[w[1]]) == Ordering::Equal {
                return Err(Error::contract(format!(
                    "support points {} and {} coincide",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self {
            dim,
            support: clean,
            probs,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.support[i]
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Support indices in lexicographic order of the points.
    pub fn lexicographic_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| cmp_points(&self.support[a], &self.support[b]));
        order
    }

    pub fn index_of(&self, z: &[f64]) -> Option<usize> {
        self.support
            .iter()
            .position(|s| cmp_points(s, z) == Ordering::Equal)
    }

    pub fn partition(&self, cond_vars: &[usize]) -> Result<Partition> {
        Partition::new(self, cond_vars)
    }

    /// Exact `E[f(Z)]`.
    pub fn expectation<F>(&self, f: F) -> Result<Matrix>
    where
        F: Fn(&[f64]) -> Matrix,
    {
        let mut acc: Option<Matrix> = None;
        for (z, &p) in self.support.iter().zip(&self.probs) {
            let v = f(z);
            match acc.as_mut() {
                None => acc = Some(v * p),
                Some(a) => {
                    if a.shape() != v.shape() {
                        return Err(Error::contract("integrand changed shape across the support"));
                    }
                    *a += v * p;
                }
            }
        }
        Ok(acc.unwrap_or_else(|| Matrix::zeros(0, 0)))
    }

    /// Total-variation distance to another law (union of supports).
    pub fn total_variation(&self, other: &DiscreteLaw) -> f64 {
        let mut sum = 0.0;
        for (z, &p) in self.support.iter().zip(&self.probs) {
            let q = other.index_of(z).map_or(0.0, |i| other.probs[i]);
            sum += (p - q).abs();
        }
        for (z, &q) in other.support.iter().zip(&other.probs) {
            if self.index_of(z).is_none() {
                sum += q;
            }
        }
        0.5 * sum
    }
}

/// Conditioning event `X = values` for the coordinates `cond_vars`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub cond_vars: Vec<usize>,
    pub values: Vec<f64>,
}

/// The partition of a law's support induced by a set of coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    cond_vars: Vec<usize>,
    cells: Vec<Vec<f64>>,
    cell_prob: Vec<f64>,
    cell_of: Vec<usize>,
}

impl Partition {
    pub fn new(law: &DiscreteLaw, cond_vars: &[usize]) -> Result<Self> {
        if let Some(&bad) = cond_vars.iter().find(|&&c| c >= law.dim()) {
            return Err(Error::contract(format!(
                "conditioning coordinate {bad} out of range for a {}-dimensional law",
                law.dim()
            )));
        }
        let key = |z: &[f64]| cond_vars.iter().map(|&c| z[c]).collect::<Vec<_>>();
        let mut cells: Vec<Vec<f64>> = law.support.iter().map(|z| key(z)).collect();
        cells.sort_by(|a, b| cmp_points(a, b));
        cells.dedup_by(|a, b| cmp_points(a, b) == Ordering::Equal);
        let mut cell_prob = vec![0.0; cells.len()];
        let mut cell_of = Vec::with_capacity(law.len());
        for (z, &p) in law.support.iter().zip(&law.probs) {
            let k = cells
                .binary_search_by(|c| cmp_points(c, &key(z)))
                .expect("cell of a support point");
            cell_prob[k] += p;
            cell_of.push(k);
        }
        Ok(Self {
            cond_vars: cond_vars.to_vec(),
            cells,
            cell_prob,
            cell_of,
        })
    }

    pub fn cond_vars(&self) -> &[usize] {
        &self.cond_vars
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn values(&self, k: usize) -> &[f64] {
        &self.cells[k]
    }

    pub fn cell(&self, k: usize) -> Cell {
        Cell {
            cond_vars: self.cond_vars.clone(),
            values: self.cells[k].clone(),
        }
    }

    pub fn prob(&self, k: usize) -> f64 {
        self.cell_prob[k]
    }

    /// Cell index of support point `i`.
    pub fn cell_of(&self, i: usize) -> usize {
        self.cell_of[i]
    }

    /// Cell holding the given coordinate values, if any.
    pub fn find(&self, values: &[f64]) -> Option<usize> {
        let values: Vec<f64> = values.iter().map(|&v| canonical(v)).collect();
        self.cells
            .binary_search_by(|c| cmp_points(c, &values))
            .ok()
    }

    /// Cell of an arbitrary point `z` (full coordinate vector).
    pub fn find_point(&self, z: &[f64]) -> Option<usize> {
        let key: Vec<f64> = self.cond_vars.iter().map(|&c| z[c]).collect();
        self.find(&key)
    }

    /// Whether every cell of `finer` lies inside a single cell of `self`
    /// (σ(self) ⊆ σ(finer) on the support). On failure returns two support
    /// indices sharing a `finer` cell but not a `self` cell.
    pub fn coarsens(&self, finer: &Partition) -> core::result::Result<(), (usize, usize)> {
        let mut owner: Vec<Option<(usize, usize)>> = vec![None; finer.len()];
        for i in 0..self.cell_of.len() {
            let f = finer.cell_of[i];
            match owner[f] {
                None => owner[f] = Some((self.cell_of[i], i)),
                Some((c, first)) if c != self.cell_of[i] => return Err((first, i)),
                _ => {}
            }
        }
        Ok(())
    }

    /// Exact cellwise average of per-support-point values.
    pub fn average<F>(&self, law: &DiscreteLaw, value: F) -> Result<Vec<Matrix>>
    where
        F: Fn(usize) -> Matrix,
    {
        let mut acc: Vec<Option<Matrix>> = vec![None; self.len()];
        for i in 0..law.len() {
            let k = self.cell_of[i];
            let v = value(i) * law.prob(i);
            match acc[k].as_mut() {
                None => acc[k] = Some(v),
                Some(a) => {
                    if a.shape() != v.shape() {
                        return Err(Error::contract("integrand changed shape across the support"));
                    }
                    *a += v;
                }
            }
        }
        Ok(acc
            .into_iter()
            .enumerate()
            .map(|(k, a)| a.expect("every cell has a support point") / self.cell_prob[k])
            .collect())
    }
}

/// One value per positive-probability cell of a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct CondTable<T> {
    partition: Partition,
    entries: Vec<T>,
}

impl<T> CondTable<T> {
    pub fn new(partition: Partition, entries: Vec<T>) -> Result<Self> {
        if partition.len() != entries.len() {
            return Err(Error::contract(format!(
                "{} entries for {} cells",
                entries.len(),
                partition.len()
            )));
        }
        Ok(Self { partition, entries })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn cond_vars(&self) -> &[usize] {
        self.partition.cond_vars()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn entry(&self, k: usize) -> &T {
        &self.entries[k]
    }

    /// Value on the cell of support point `i`.
    pub fn at_support(&self, i: usize) -> &T {
        &self.entries[self.partition.cell_of(i)]
    }

    pub fn lookup(&self, values: &[f64]) -> Option<&T> {
        self.partition.find(values).map(|k| &self.entries[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], &T)> {
        (0..self.len()).map(move |k| (self.partition.values(k), &self.entries[k]))
    }

    pub fn map<U, F: Fn(&T) -> U>(&self, f: F) -> CondTable<U> {
        CondTable {
            partition: self.partition.clone(),
            entries: self.entries.iter().map(f).collect(),
        }
    }

    pub fn into_entries(self) -> Vec<T> {
        self.entries
    }
}

/// Exact conditional expectation `E[f(Z) | Z_{cond_vars}]`; empty
/// `cond_vars` yields a one-cell marginal table.
pub fn cond_expectation<F>(law: &DiscreteLaw, f: F, cond_vars: &[usize]) -> Result<CondTable<Matrix>>
where
    F: Fn(&[f64]) -> Matrix,
{
    let partition = law.partition(cond_vars)?;
    let values: Vec<Matrix> = law.support().iter().map(|z| f(z)).collect();
    let entries = partition.average(law, |i| values[i].clone())?;
    CondTable::new(partition, entries)
}

/// Cellwise `E[g g'|cell] − E[g|cell] E[g|cell]'` for a vector-valued `g`
/// returned as a column.
pub fn cond_variance<F>(law: &DiscreteLaw, g: F, cond_vars: &[usize]) -> Result<CondTable<Matrix>>
where
    F: Fn(&[f64]) -> Result<Matrix>,
{
    let partition = law.partition(cond_vars)?;
    let values = law
        .support()
        .iter()
        .map(|z| g(z))
        .collect::<Result<Vec<_>>>()?;
    let second = partition.average(law, |i| &values[i] * values[i].transpose())?;
    let first = partition.average(law, |i| values[i].clone())?;
    let entries = second
        .into_iter()
        .zip(first)
        .map(|(s, m)| crate::numerics::symmetrize(&(s - &m * m.transpose())))
        .collect();
    CondTable::new(partition, entries)
}

/// Draws from a law, kept with the seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub rows: Vec<Vec<f64>>,
    pub seed: u64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub(crate) fn uniform01(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `n` i.i.d. draws by inverse CDF over the support order; bit-reproducible
/// for a given seed.
pub fn sample_from(law: &DiscreteLaw, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::contract("sample size must be at least 1"));
    }
    let mut cumulative = Vec::with_capacity(law.len());
    let mut acc = 0.0;
    for &p in law.probs() {
        acc += p;
        cumulative.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = law.len() - 1;
    let rows = (0..n)
        .map(|_| {
            let u = uniform01(&mut rng) * acc;
            let i = cumulative.partition_point(|&c| c <= u).min(last);
            law.point(i).to_vec()
        })
        .collect();
    Ok(SampleSet { rows, seed })
}

/// Distinct rows with their relative frequencies, in lexicographic order.
pub fn empirical_law(sample: &SampleSet) -> Result<DiscreteLaw> {
    if sample.is_empty() {
        return Err(Error::contract("empirical law of an empty sample"));
    }
    let mut rows: Vec<&Vec<f64>> = sample.rows.iter().collect();
    rows.sort_by(|a, b| cmp_points(a, b));
    let mut support: Vec<Vec<f64>> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for r in rows {
        match support.last() {
            Some(last) if cmp_points(last, r) == Ordering::Equal => {
                *counts.last_mut().unwrap() += 1.0;
            }
            _ => {
                support.push(r.clone());
                counts.push(1.0);
            }
        }
    }
    DiscreteLaw::from_weights(support, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp;
    use proptest::prelude::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn law_validation() {
        assert!(DiscreteLaw::new(vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).is_ok());
        assert!(DiscreteLaw::new(vec![vec![0.0], vec![1.0]], vec![0.5, 0.4]).is_err());
        assert!(DiscreteLaw::new(vec![vec![0.0], vec![0.0]], vec![0.5, 0.5]).is_err());
        assert!(DiscreteLaw::new(vec![vec![0.0], vec![-0.0]], vec![0.5, 0.5]).is_err());
        assert!(DiscreteLaw::new(vec![vec![0.0], vec![1.0]], vec![1.0, 0.0]).is_err());
        assert!(DiscreteLaw::new(vec![vec![f64::NAN]], vec![1.0]).is_err());
    }

    #[test]
    fn constant_expectation_is_constant() {
        let law = dgp::dgp_a().law;
        let t = cond_expectation(&law, |_| scalar(3.5), &[0]).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.entries().iter().all(|m| (m[(0, 0)] - 3.5).abs() < 1e-15));
        let marginal = cond_expectation(&law, |_| scalar(3.5), &[]).unwrap();
        assert_eq!(marginal.len(), 1);
    }

    #[test]
    fn product_of_independent_errors_vanishes() {
        let a = dgp::dgp_a();
        let (y1, y2) = (dgp::DGP_A_Y1, dgp::DGP_A_Y2);
        let t = cond_expectation(&a.law, |z| scalar(z[y1] * z[y2]), &[0, 1]).unwrap();
        assert_eq!(t.len(), 4);
        for m in t.entries() {
            assert!(m[(0, 0)].abs() < 1e-15);
        }
    }

    #[test]
    fn point_indicator_gives_bayes_ratio() {
        let law = DiscreteLaw::new(
            vec![vec![0.0, 1.0], vec![0.0, 2.0], vec![1.0, 1.0]],
            vec![0.2, 0.3, 0.5],
        )
        .unwrap();
        let target = law.point(1).to_vec();
        let t = cond_expectation(
            &law,
            |z| scalar(if cmp_points(z, &target) == Ordering::Equal { 1.0 } else { 0.0 }),
            &[0],
        )
        .unwrap();
        assert!((t.lookup(&[0.0]).unwrap()[(0, 0)] - 0.6).abs() < 1e-15);
        assert_eq!(t.lookup(&[1.0]).unwrap()[(0, 0)], 0.0);
        assert!(t.lookup(&[7.0]).is_none());
    }

    #[test]
    fn dgp_a_residual_variance_is_one() {
        let law = dgp::dgp_a().law;
        let v = cond_variance(&law, |z| Ok(scalar(z[dgp::DGP_A_Y1])), &[0]).unwrap();
        for m in v.entries() {
            assert!((m[(0, 0)] - 1.0).abs() < 1e-14);
        }
        let zero = cond_variance(&law, |_| Ok(scalar(0.0)), &[0]).unwrap();
        assert!(zero.entries().iter().all(|m| m[(0, 0)] == 0.0));
    }

    #[test]
    fn conditioning_on_everything_is_pointwise() {
        let law = dgp::dgp_b().law;
        let f = |z: &[f64]| scalar(z[0] * 3.0 + z[2] * z[3]);
        let all: Vec<usize> = (0..law.dim()).collect();
        let t = cond_expectation(&law, f, &all).unwrap();
        for (i, z) in law.support().iter().enumerate() {
            assert!((t.at_support(i)[(0, 0)] - f(z)[(0, 0)]).abs() < 1e-14);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_rejects_zero() {
        let law = dgp::dgp_a().law;
        assert!(sample_from(&law, 0, 1).is_err());
        let a = sample_from(&law, 100, 42).unwrap();
        let b = sample_from(&law, 100, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.rows, sample_from(&law, 100, 43).unwrap().rows);
    }

    #[test]
    fn sample_frequencies_within_four_standard_errors() {
        let law = dgp::dgp_a().law;
        let n = 100_000;
        let s = sample_from(&law, n, 7).unwrap();
        let emp = empirical_law(&s).unwrap();
        for (i, z) in law.support().iter().enumerate() {
            let p = law.prob(i);
            let q = emp.index_of(z).map_or(0.0, |k| emp.prob(k));
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((q - p).abs() <= 4.0 * se, "cell {i}: {q} vs {p}");
        }
    }

    #[test]
    fn empirical_law_examples() {
        let one = SampleSet { rows: vec![vec![1.0, 2.0]; 5], seed: 0 };
        let l = empirical_law(&one).unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l.prob(0), 1.0);
        let two = SampleSet { rows: vec![vec![2.0], vec![1.0]], seed: 0 };
        let l = empirical_law(&two).unwrap();
        assert_eq!(l.probs(), &[0.5, 0.5]);
        assert_eq!(l.point(0), &[1.0]);
    }

    #[test]
    fn large_sample_recovers_law_in_total_variation() {
        let law = dgp::dgp_b().law;
        let s = sample_from(&law, 1_000_000, 11).unwrap();
        let emp = empirical_law(&s).unwrap();
        assert!(law.total_variation(&emp) < 0.005);
    }

    #[test]
    fn nesting_check_finds_offending_pair() {
        let law = dgp::dgp_b().law;
        let coarse = law.partition(&[0]).unwrap();
        let fine = law.partition(&[0, 1]).unwrap();
        assert!(coarse.coarsens(&fine).is_ok());
        assert!(fine.coarsens(&coarse).is_err());
    }

    proptest! {
        #[test]
        fn iterated_expectations(weights in proptest::collection::vec(0.01f64..1.0, 8),
                                 coefs in proptest::collection::vec(-2.0f64..2.0, 3)) {
            let support: Vec<Vec<f64>> = (0..8)
                .map(|i| vec![(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64])
                .collect();
            let law = DiscreteLaw::from_weights(support, weights).unwrap();
            let f = |z: &[f64]| scalar(coefs[0] * z[0] + coefs[1] * z[1] * z[2] + coefs[2]);
            let direct = law.expectation(f).unwrap()[(0, 0)];
            for cv in [vec![], vec![0], vec![1, 2], vec![2, 0, 1]] {
                let t = cond_expectation(&law, f, &cv).unwrap();
                let via: f64 = (0..t.len()).map(|k| t.partition().prob(k) * t.entry(k)[(0, 0)]).sum();
                prop_assert!((via - direct).abs() <= 1e-14);
            }
        }

        #[test]
        fn conditional_variance_is_psd(weights in proptest::collection::vec(0.01f64..1.0, 8)) {
            let support: Vec<Vec<f64>> = (0..8)
                .map(|i| vec![(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64 - 0.3])
                .collect();
            let law = DiscreteLaw::from_weights(support, weights).unwrap();
            let v = cond_variance(&law, |z| Ok(Matrix::from_column_slice(2, 1, &[z[1] + z[2], z[2] * z[2]])), &[0]).unwrap();
            for m in v.entries() {
                prop_assert!(crate::numerics::min_eigenvalue(m) >= -1e-12);
            }
        }
    }
}
