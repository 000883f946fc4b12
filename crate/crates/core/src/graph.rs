//! Graph containers and ordering utilities.
//!
//! Every matrix in the crate follows one convention: entry `[j, i]` is the
//! edge `i -> j` (row = target, column = source).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Binary adjacency matrix, `[j, i]` set when `i -> j` is present.
pub type Support = DMatrix<bool>;

/// Weighted lag matrices `A_1..A_L` plus the instantaneous matrix `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGraph {
    lag_matrices: Vec<DMatrix<f64>>,
    instant_matrix: DMatrix<f64>,
    instant_enabled: bool,
}

impl DynamicGraph {
    pub fn new(
        lag_matrices: Vec<DMatrix<f64>>,
        instant_matrix: DMatrix<f64>,
        instant_enabled: bool,
    ) -> Result<Self> {
        let dim = instant_matrix.nrows();
        if dim == 0 || instant_matrix.ncols() != dim {
            return Err(Error::ShapeMismatch(format!(
                "instantaneous matrix must be square and non-empty, got {}x{}",
                instant_matrix.nrows(),
                instant_matrix.ncols()
            )));
        }
        if lag_matrices.is_empty() {
            return Err(Error::invalid("lag order must be at least 1"));
        }
        for (l, a) in lag_matrices.iter().enumerate() {
            if a.nrows() != dim || a.ncols() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "lag matrix {} is {}x{}, expected {dim}x{dim}",
                    l + 1,
                    a.nrows(),
                    a.ncols()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("lag matrix {} has non-finite entries", l + 1)));
            }
        }
        if instant_matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("instantaneous matrix has non-finite entries"));
        }
        if (0..dim).any(|k| instant_matrix[(k, k)] != 0.0) {
            return Err(Error::invalid("instantaneous matrix must have a zero diagonal"));
        }
        if !instant_enabled && instant_matrix.iter().any(|&v| v != 0.0) {
            return Err(Error::invalid(
                "instantaneous matrix must be zero when instantaneous effects are disabled",
            ));
        }
        Ok(Self {
            lag_matrices,
            instant_matrix,
            instant_enabled,
        })
    }

    /// All-zero graph.
    pub fn zeros(dim: usize, lag_order: usize, instant_enabled: bool) -> Self {
        Self {
            lag_matrices: vec![DMatrix::zeros(dim, dim); lag_order],
            instant_matrix: DMatrix::zeros(dim, dim),
            instant_enabled,
        }
    }

    pub fn dim(&self) -> usize {
        self.instant_matrix.nrows()
    }

    pub fn lag_order(&self) -> usize {
        self.lag_matrices.len()
    }

    pub fn instant_enabled(&self) -> bool {
        self.instant_enabled
    }

    pub fn lag_matrices(&self) -> &[DMatrix<f64>] {
        &self.lag_matrices
    }

    /// `lag` is 1-based.
    pub fn lag_matrix(&self, lag: usize) -> &DMatrix<f64> {
        &self.lag_matrices[lag - 1]
    }

    pub fn instant_matrix(&self) -> &DMatrix<f64> {
        &self.instant_matrix
    }

    /// Copy with the lag matrices extended by zero blocks up to `lag_order`.
    pub fn padded(&self, lag_order: usize) -> Self {
        let mut g = self.clone();
        let d = self.dim();
        while g.lag_matrices.len() < lag_order {
            g.lag_matrices.push(DMatrix::zeros(d, d));
        }
        g
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lag_matrices: self.lag_matrices.iter().map(|a| a * factor).collect(),
            instant_matrix: &self.instant_matrix * factor,
            instant_enabled: self.instant_enabled,
        }
    }

    pub fn instant_support(&self) -> Support {
        self.instant_matrix.map(|v| v != 0.0)
    }

    pub fn lag_supports(&self) -> Vec<Support> {
        self.lag_matrices.iter().map(|a| a.map(|v| v != 0.0)).collect()
    }
}

/// Admissibility masks produced by the screening stage.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMasks {
    lag_masks: Vec<Support>,
    instant_mask: Support,
}

impl EdgeMasks {
    pub fn new(lag_masks: Vec<Support>, mut instant_mask: Support) -> Result<Self> {
        let d = instant_mask.nrows();
        if instant_mask.ncols() != d || lag_masks.is_empty() {
            return Err(Error::ShapeMismatch("masks need a square instant block and L >= 1".into()));
        }
        if lag_masks.iter().any(|m| m.nrows() != d || m.ncols() != d) {
            return Err(Error::ShapeMismatch("lag mask shape differs from instant mask".into()));
        }
        instant_mask.fill_diagonal(false);
        Ok(Self {
            lag_masks,
            instant_mask,
        })
    }

    /// Everything admissible (except instantaneous self-loops, and the whole
    /// instantaneous block when `instantaneous` is false).
    pub fn all(dim: usize, lag_order: usize, instantaneous: bool) -> Self {
        let mut instant_mask = Support::from_element(dim, dim, instantaneous);
        instant_mask.fill_diagonal(false);
        Self {
            lag_masks: vec![Support::from_element(dim, dim, true); lag_order],
            instant_mask,
        }
    }

    pub fn dim(&self) -> usize {
        self.instant_mask.nrows()
    }

    pub fn lag_order(&self) -> usize {
        self.lag_masks.len()
    }

    pub fn lag_masks(&self) -> &[Support] {
        &self.lag_masks
    }

    pub fn instant_mask(&self) -> &Support {
        &self.instant_mask
    }

    /// `lag` is 1-based.
    pub fn lag_allowed(&self, lag: usize, target: usize, source: usize) -> bool {
        self.lag_masks[lag - 1][(target, source)]
    }

    pub fn instant_allowed(&self, target: usize, source: usize) -> bool {
        self.instant_mask[(target, source)]
    }

    /// Fraction of lagged entries retained (nnz / total).
    pub fn retained_lag_fraction(&self) -> f64 {
        let total: usize = self.lag_masks.iter().map(|m| m.len()).sum();
        let kept: usize = self.lag_masks.iter().map(count_true).sum();
        kept as f64 / total as f64
    }

    /// Fraction of off-diagonal instantaneous entries retained.
    pub fn retained_instant_fraction(&self) -> f64 {
        let d = self.dim();
        if d < 2 {
            return 0.0;
        }
        count_true(&self.instant_mask) as f64 / (d * (d - 1)) as f64
    }
}

pub fn count_true(m: &Support) -> usize {
    m.iter().filter(|&&b| b).count()
}

/// Outcome of a topological sort: an order, or a witness cycle listed in
/// edge order (`c[0] -> c[1] -> ... -> c[0]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ordering {
    Order(Vec<usize>),
    Cycle(Vec<usize>),
}

impl Ordering {
    pub fn is_acyclic(&self) -> bool {
        matches!(self, Ordering::Order(_))
    }

    pub fn order(self) -> Option<Vec<usize>> {
        match self {
            Ordering::Order(o) => Some(o),
            Ordering::Cycle(_) => None,
        }
    }
}

/// Topological order of the graph whose `[j, i]` entry marks `i -> j`.
/// Kahn's algorithm, always releasing the smallest ready index first.
pub fn topological_sort(adjacency: &Support) -> Ordering {
    let d = adjacency.nrows();
    let children: Vec<Vec<usize>> = (0..d)
        .map(|i| (0..d).filter(|&j| j != i && adjacency[(j, i)]).collect())
        .collect();
    let mut ordering = topological_sort_lists(&children);
    // Self-loops are cycles of length one.
    if let Ordering::Order(_) = ordering {
        if let Some(k) = (0..d).find(|&k| adjacency[(k, k)]) {
            ordering = Ordering::Cycle(vec![k]);
        }
    }
    ordering
}

/// Same as [`topological_sort`] on adjacency lists (`children[i]` holds every
/// `j` with an edge `i -> j`).
pub fn topological_sort_lists(children: &[Vec<usize>]) -> Ordering {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let n = children.len();
    let mut indegree = vec![0usize; n];
    for kids in children {
        for &j in kids {
            indegree[j] += 1;
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&v| indegree[v] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(v)) = ready.pop() {
        order.push(v);
        for &j in &children[v] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.push(Reverse(j));
            }
        }
    }
    if order.len() == n {
        return Ordering::Order(order);
    }
    // Every vertex left over has a leftover parent, so walking backwards
    // along leftover parents must revisit a vertex.
    let remaining: Vec<bool> = indegree.iter().map(|&k| k > 0).collect();
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, kids) in children.iter().enumerate() {
        if !remaining[i] {
            continue;
        }
        for &j in kids {
            if remaining[j] {
                parents[j].push(i);
            }
        }
    }
    let start = (0..n).find(|&v| remaining[v]).expect("a vertex remains when sorting fails");
    let mut position = vec![usize::MAX; n];
    let mut walk = Vec::new();
    let mut v = start;
    while position[v] == usize::MAX {
        position[v] = walk.len();
        walk.push(v);
        v = *parents[v].iter().min().expect("leftover vertex has a leftover parent");
    }
    // walk[position[v]..] follows parent links; reverse to get edge order,
    // then rotate so the smallest vertex leads.
    let mut cycle: Vec<usize> = walk[position[v]..].iter().rev().copied().collect();
    let lead = cycle
        .iter()
        .enumerate()
        .min_by_key(|&(_, &x)| x)
        .map(|(k, _)| k)
        .unwrap_or(0);
    cycle.rotate_left(lead);
    Ordering::Cycle(cycle)
}

/// True when `order` places every edge source before its target.
pub fn validates_order(adjacency: &Support, order: &[usize]) -> bool {
    let d = adjacency.nrows();
    if order.len() != d {
        return false;
    }
    let mut rank = vec![usize::MAX; d];
    for (k, &v) in order.iter().enumerate() {
        if v >= d || rank[v] != usize::MAX {
            return false;
        }
        rank[v] = k;
    }
    (0..d).all(|j| (0..d).all(|i| !adjacency[(j, i)] || rank[i] < rank[j]))
}

pub fn is_acyclic(adjacency: &Support) -> bool {
    topological_sort(adjacency).is_acyclic()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn support(d: usize, edges: &[(usize, usize)]) -> Support {
        let mut m = Support::from_element(d, d, false);
        for &(from, to) in edges {
            m[(to, from)] = true;
        }
        m
    }

    #[test]
    fn chain_is_ordered() {
        let g = support(3, &[(0, 1), (1, 2)]);
        assert_eq!(topological_sort(&g), Ordering::Order(vec![0, 1, 2]));
    }

    #[test]
    fn two_cycle_witness() {
        let g = support(2, &[(0, 1), (1, 0)]);
        assert_eq!(topological_sort(&g), Ordering::Cycle(vec![0, 1]));
    }

    #[test]
    fn witness_is_a_real_cycle() {
        // 0 -> 1 -> 2 -> 3 -> 1, plus a tail 3 -> 4.
        let g = support(5, &[(0, 1), (1, 2), (2, 3), (3, 1), (3, 4)]);
        match topological_sort(&g) {
            Ordering::Cycle(c) => {
                assert_eq!(c, vec![1, 2, 3]);
                for k in 0..c.len() {
                    let (a, b) = (c[k], c[(k + 1) % c.len()]);
                    assert!(g[(b, a)], "{a} -> {b} missing");
                }
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn self_loop_is_cycle() {
        let g = support(3, &[(1, 1)]);
        assert_eq!(topological_sort(&g), Ordering::Cycle(vec![1]));
    }

    #[test]
    fn shuffled_dag_validates() {
        let mut rng = Rng::new(12);
        for _ in 0..20 {
            let mut perm: Vec<usize> = (0..6).collect();
            rng.shuffle(&mut perm);
            let mut g = Support::from_element(6, 6, false);
            for a in 0..6 {
                for b in (a + 1)..6 {
                    if rng.bernoulli(0.5) {
                        g[(perm[b], perm[a])] = true;
                    }
                }
            }
            let order = topological_sort(&g).order().expect("acyclic by construction");
            assert!(validates_order(&g, &order));
        }
    }

    #[test]
    fn graph_rejects_instant_self_loop() {
        let mut b = DMatrix::zeros(2, 2);
        b[(1, 1)] = 0.3;
        assert!(DynamicGraph::new(vec![DMatrix::zeros(2, 2)], b, true).is_err());
    }

    #[test]
    fn graph_rejects_instant_when_disabled() {
        let mut b = DMatrix::zeros(2, 2);
        b[(1, 0)] = 0.3;
        assert!(DynamicGraph::new(vec![DMatrix::zeros(2, 2)], b, false).is_err());
    }

    #[test]
    fn masks_clear_instant_diagonal() {
        let m = EdgeMasks::new(
            vec![Support::from_element(3, 3, true)],
            Support::from_element(3, 3, true),
        )
        .unwrap();
        assert!((0..3).all(|k| !m.instant_allowed(k, k)));
        assert!((m.retained_instant_fraction() - 1.0).abs() < 1e-15);
    }
}
