//! Blocking and treatment assignment.
//!
//! Fine stratification partitions the units into blocks of size `k` of
//! covariate-adjacent units and treats exactly `l` units per block, drawn
//! uniformly and independently across blocks. The i.i.d., complete and
//! coarse-stratified designs are provided as baselines.
//!
//! All ties are broken by lowest original index, so partitions are
//! reproducible; all randomness comes from the caller's generator.

use rand::seq::index::sample;
use rand::Rng;

use crate::data::Rows;
use crate::error::{Error, Result};

/// A partition of `0..n` into equally sized blocks.
///
/// Block order is meaningful: consecutive blocks are neighbours in covariate
/// space for [`block_sorted`], which the between-block variance estimator
/// relies on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    blocks: Vec<Vec<usize>>,
    k: usize,
}

impl BlockPartition {
    /// Checks that `blocks` partition `0..n` exactly into blocks of size `k`.
    pub fn new(blocks: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let k = blocks.first().map(Vec::len).ok_or(Error::EmptyInput)?;
        if k == 0 {
            return Err(Error::InvalidArgument("empty block".into()));
        }
        let mut seen = vec![false; n];
        for block in &blocks {
            if block.len() != k {
                return Err(Error::InvalidArgument(format!(
                    "blocks must all have size {k}, found one of size {}",
                    block.len()
                )));
            }
            for &i in block {
                if i >= n || seen[i] {
                    return Err(Error::InvalidArgument(format!(
                        "unit {} is out of range or appears in two blocks",
                        i + 1
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!("unit {} is in no block", missing + 1)));
        }
        Ok(Self { blocks, k })
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.blocks.len() * self.k
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Block index of every unit.
    pub fn block_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.n()];
        for (j, block) in self.blocks.iter().enumerate() {
            for &i in block {
                out[i] = j;
            }
        }
        out
    }

    /// Common treated count per block under `a`, if every block agrees.
    pub fn treated_per_block(&self, a: &[u8]) -> Option<usize> {
        let count = |b: &Vec<usize>| b.iter().filter(|&&i| a[i] == 1).count();
        let first = count(&self.blocks[0]);
        self.blocks.iter().all(|b| count(b) == first).then_some(first)
    }
}

/// How fine-stratification blocks are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Blocking {
    /// Sort on one covariate and chunk consecutive runs.
    Sorted { coordinate: usize },
    /// Greedy nearest-neighbour grouping in Euclidean distance.
    Greedy,
}

/// Discretization `S(x)` for coarse stratification: the stratum of `x` is the
/// number of cut points not exceeding `x[coordinate]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrataMap {
    pub coordinate: usize,
    pub cuts: Vec<f64>,
}

impl StrataMap {
    pub fn stratum(&self, x: &[f64]) -> usize {
        self.cuts.iter().filter(|&&c| c <= x[self.coordinate]).count()
    }

    pub fn num_strata(&self) -> usize {
        self.cuts.len() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DesignKind {
    Iid,
    Complete,
    CoarseStratified(StrataMap),
    FineStratified { l: usize, k: usize, blocking: Blocking },
}

/// An assignment mechanism with its treatment fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    kind: DesignKind,
    eta: f64,
}

/// A drawn assignment, with the partition for fine designs.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub treatment: Vec<u8>,
    pub partition: Option<BlockPartition>,
}

impl DesignSpec {
    pub fn new(kind: DesignKind, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::EtaOutOfRange(eta));
        }
        if let DesignKind::FineStratified { l, k, .. } = kind {
            if l == 0 || l >= k {
                return Err(Error::InvalidArgument(format!("need 1 <= l < k, got l={l}, k={k}")));
            }
            if ((l as f64 / k as f64) - eta).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "l/k = {l}/{k} does not equal eta = {eta}"
                )));
            }
        }
        Ok(Self { kind, eta })
    }

    /// Fine stratification with `eta = l / k`.
    pub fn fine(l: usize, k: usize, blocking: Blocking) -> Result<Self> {
        Self::new(DesignKind::FineStratified { l, k, blocking }, l as f64 / k as f64)
    }

    pub fn kind(&self) -> &DesignKind {
        &self.kind
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn assign<R: Rng + ?Sized>(&self, x: &Rows, rng: &mut R) -> Result<Assignment> {
        let n = x.len();
        let (treatment, partition) = match &self.kind {
            DesignKind::Iid => (assign_iid(n, self.eta, rng), None),
            DesignKind::Complete => (assign_complete(n, self.eta, rng)?, None),
            DesignKind::CoarseStratified(map) => {
                let strata: Vec<usize> = x.iter().map(|xi| map.stratum(xi)).collect();
                (assign_coarse(&strata, self.eta, rng)?, None)
            }
            DesignKind::FineStratified { l, k, blocking } => {
                let partition = match blocking {
                    Blocking::Sorted { coordinate } => block_sorted(x, *coordinate, *k)?,
                    Blocking::Greedy => block_greedy(x, *k)?,
                };
                (assign_fine(&partition, *l, rng), Some(partition))
            }
        };
        Ok(Assignment { treatment, partition })
    }
}

/// Unit indices in ascending order of `x[coordinate]`, ties by index.
pub fn sorted_order(x: &Rows, coordinate: usize) -> Result<Vec<usize>> {
    if coordinate >= x.width() {
        return Err(Error::InvalidArgument(format!(
            "coordinate {coordinate} out of range for {} covariates",
            x.width()
        )));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    // stable sort keeps index order among ties
    order.sort_by(|&i, &j| x.row(i)[coordinate].total_cmp(&x.row(j)[coordinate]));
    Ok(order)
}

/// Sort on one covariate and cut into consecutive blocks of `k`.
pub fn block_sorted(x: &Rows, coordinate: usize, k: usize) -> Result<BlockPartition> {
    let n = x.len();
    check_divisible(n, k)?;
    let order = sorted_order(x, coordinate)?;
    let blocks = order.chunks_exact(k).map(<[usize]>::to_vec).collect();
    Ok(BlockPartition { blocks, k })
}

/// Splits `0..n` into the units kept for blocking and the `n mod k` units
/// dropped from the top of the sort on `coordinate`.
pub fn drop_remainder(x: &Rows, coordinate: usize, k: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if k == 0 {
        return Err(Error::InvalidArgument("block size must be positive".into()));
    }
    let order = sorted_order(x, coordinate)?;
    let keep = x.len() - x.len() % k;
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    Ok((kept, order[keep..].to_vec()))
}

/// Greedy multivariate blocking: repeatedly seed a block with the
/// lowest-index unblocked unit and add its `k - 1` nearest unblocked
/// neighbours. A heuristic; `O(n^2)`.
pub fn block_greedy(x: &Rows, k: usize) -> Result<BlockPartition> {
    let n = x.len();
    check_divisible(n, k)?;
    let mut free = vec![true; n];
    let mut blocks = Vec::with_capacity(n / k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for seed in 0..n {
        if !free[seed] {
            continue;
        }
        free[seed] = false;
        cand.clear();
        let xs = x.row(seed);
        cand.extend(
            (0..n)
                .filter(|&i| free[i])
                .map(|i| (squared_distance(xs, x.row(i)), i)),
        );
        let take = k - 1;
        if take > 0 && take < cand.len() {
            cand.select_nth_unstable_by(take - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        let mut block = vec![seed];
        block.extend(cand[..take].iter().map(|&(_, i)| i));
        block[1..].sort_unstable();
        for &i in &block[1..] {
            free[i] = false;
        }
        blocks.push(block);
    }
    Ok(BlockPartition { blocks, k })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn check_divisible(n: usize, k: usize) -> Result<()> {
    if k == 0 || n == 0 || !n.is_multiple_of(k) {
        return Err(Error::NotDivisible { n, k });
    }
    Ok(())
}

/// Block closeness statistic `(1/n) sum_j max_{i,i' in block j} |X_i - X_i'|^2`.
pub fn max_block_discrepancy(x: &Rows, partition: &BlockPartition) -> f64 {
    let total: f64 = partition
        .blocks()
        .iter()
        .map(|block| {
            let mut worst = 0.0f64;
            for (p, &i) in block.iter().enumerate() {
                for &j in &block[p + 1..] {
                    worst = worst.max(squared_distance(x.row(i), x.row(j)));
                }
            }
            worst
        })
        .sum();
    total / partition.n() as f64
}

/// Treat exactly `l` units per block, uniformly over the `C(k, l)` subsets,
/// independently across blocks.
pub fn assign_fine<R: Rng + ?Sized>(partition: &BlockPartition, l: usize, rng: &mut R) -> Vec<u8> {
    assert!(l <= partition.k(), "l = {l} exceeds block size {}", partition.k());
    let mut a = vec![0u8; partition.n()];
    for block in partition.blocks() {
        for pos in sample(rng, block.len(), l) {
            a[block[pos]] = 1;
        }
    }
    a
}

/// Independent Bernoulli(`eta`) draws.
pub fn assign_iid<R: Rng + ?Sized>(n: usize, eta: f64, rng: &mut R) -> Vec<u8> {
    (0..n).map(|_| u8::from(rng.random::<f64>() < eta)).collect()
}

/// Exactly `eta * n` treated units, uniformly placed.
pub fn assign_complete<R: Rng + ?Sized>(n: usize, eta: f64, rng: &mut R) -> Result<Vec<u8>> {
    let target = eta * n as f64;
    let count = target.round();
    if (target - count).abs() > 1e-9 {
        return Err(Error::NonIntegralCount(target));
    }
    let mut a = vec![0u8; n];
    for i in sample(rng, n, count as usize) {
        a[i] = 1;
    }
    Ok(a)
}

/// Complete randomization within each stratum.
///
/// A stratum of size `n_s` gets `floor(eta n_s)` treated units plus one more
/// with probability equal to the fractional part, so the expected treated
/// count is exactly `eta n_s`. Labels must cover `0..=max`; a label with no
/// units is an error.
pub fn assign_coarse<R: Rng + ?Sized>(strata: &[usize], eta: f64, rng: &mut R) -> Result<Vec<u8>> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::EtaOutOfRange(eta));
    }
    let groups = group_by_label(strata)?;
    let mut a = vec![0u8; strata.len()];
    for members in &groups {
        let target = eta * members.len() as f64;
        let mut count = target.floor();
        let frac = target - count;
        if frac > 1e-12 && rng.random::<f64>() < frac {
            count += 1.0;
        }
        for pos in sample(rng, members.len(), count as usize) {
            a[members[pos]] = 1;
        }
    }
    Ok(a)
}

fn group_by_label(labels: &[usize]) -> Result<Vec<Vec<usize>>> {
    let num = labels.iter().max().map(|m| m + 1).ok_or(Error::EmptyInput)?;
    let mut groups = vec![Vec::new(); num];
    for (i, &s) in labels.iter().enumerate() {
        groups[s].push(i);
    }
    if let Some(empty) = groups.iter().position(Vec::is_empty) {
        return Err(Error::EmptyStratum(empty));
    }
    Ok(groups)
}

/// Block parameters for one stratum of a discrete propensity design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StratumDesign {
    pub l: usize,
    pub k: usize,
}

/// Result of [`assign_fine_discrete_eta`]: the assignment plus, per stratum,
/// its block partition expressed in global unit indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteEtaAssignment {
    pub treatment: Vec<u8>,
    pub blocks: Vec<Vec<Vec<usize>>>,
}

/// Fine stratification run separately within each propensity stratum
/// `{i : stratum_of(X_i) = s}`, blocking on `x[coordinate]` with the
/// stratum's own `(l, k)`.
pub fn assign_fine_discrete_eta<R, F>(
    x: &Rows,
    coordinate: usize,
    stratum_of: F,
    designs: &[StratumDesign],
    rng: &mut R,
) -> Result<DiscreteEtaAssignment>
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> usize,
{
    let labels: Vec<usize> = x.iter().map(&stratum_of).collect();
    if let Some(&bad) = labels.iter().find(|&&s| s >= designs.len()) {
        return Err(Error::InvalidArgument(format!("stratum {bad} has no (l, k) design")));
    }
    let mut a = vec![0u8; x.len()];
    let mut all_blocks = Vec::with_capacity(designs.len());
    for (s, design) in designs.iter().enumerate() {
        let members: Vec<usize> = (0..x.len()).filter(|&i| labels[i] == s).collect();
        if members.is_empty() {
            all_blocks.push(Vec::new());
            continue;
        }
        if design.l == 0 || design.l >= design.k {
            return Err(Error::InvalidArgument(format!(
                "stratum {s}: need 1 <= l < k, got l={}, k={}",
                design.l, design.k
            )));
        }
        if !members.len().is_multiple_of(design.k) {
            return Err(Error::StratumNotDivisible {
                stratum: s,
                n: members.len(),
                k: design.k,
            });
        }
        let sub = x.select(&members);
        let partition = block_sorted(&sub, coordinate, design.k)?;
        let sub_a = assign_fine(&partition, design.l, rng);
        for (pos, &i) in members.iter().enumerate() {
            a[i] = sub_a[pos];
        }
        all_blocks.push(
            partition
                .blocks()
                .iter()
                .map(|b| b.iter().map(|&p| members[p]).collect())
                .collect(),
        );
    }
    Ok(DiscreteEtaAssignment {
        treatment: a,
        blocks: all_blocks,
    })
}
