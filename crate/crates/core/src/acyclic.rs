//! Acyclicity penalties for the instantaneous block, greedy DAG extraction,
//! and the time-unrolled graph.

use nalgebra::{DMatrix, DVector};

use crate::graph::{is_acyclic, topological_sort_lists, DynamicGraph, Ordering, Support};

/// Training-time power-iteration budget.
pub const DEFAULT_POWER_STEPS: usize = 15;
pub const NILPOTENT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    /// Spectral radius estimate of `M = B ⊙ B`.
    pub rho: f64,
    pub grad_wrt_b: DMatrix<f64>,
    pub left_vec: DVector<f64>,
    pub right_vec: DVector<f64>,
    pub iterations_used: usize,
}

impl SpectralResult {
    fn nilpotent(d: usize, iterations_used: usize) -> Self {
        Self {
            rho: 0.0,
            grad_wrt_b: DMatrix::zeros(d, d),
            left_vec: DVector::zeros(d),
            right_vec: DVector::zeros(d),
            iterations_used,
        }
    }
}

/// Perron root of `M = B ⊙ B` by `steps` rounds of left and right power
/// iteration from the all-ones vector, with gradient
/// `d rho / dB = 2 B ⊙ (u v') / (u' v)`.
///
/// An acyclic support, or an iterate whose norm falls below `tol`, means `M`
/// is nilpotent: the result is `rho = 0` with a zero gradient.
pub fn spectral_penalty(b: &DMatrix<f64>, steps: usize, tol: f64) -> SpectralResult {
    let d = b.nrows();
    if d == 0 || is_acyclic(&b.map(|v| v != 0.0)) {
        return SpectralResult::nilpotent(d, 0);
    }
    let m = b.component_mul(b);
    let mt = m.transpose();
    let mut v = DVector::from_element(d, 1.0);
    let mut u = DVector::from_element(d, 1.0);
    let steps = steps.max(1);
    for k in 0..steps {
        let mv = &m * &v;
        let mu = &mt * &u;
        let (nv, nu) = (mv.norm(), mu.norm());
        if nv < tol || nu < tol {
            return SpectralResult::nilpotent(d, k + 1);
        }
        v = mv / nv;
        u = mu / nu;
    }
    let overlap = u.dot(&v);
    if overlap < tol {
        return SpectralResult::nilpotent(d, steps);
    }
    let rho = u.dot(&(&m * &v)) / overlap;
    let outer = &u * v.transpose() / overlap;
    let grad_wrt_b = b.component_mul(&outer) * 2.0;
    SpectralResult {
        rho,
        grad_wrt_b,
        left_vec: u,
        right_vec: v,
        iterations_used: steps,
    }
}

/// `sum_{i != j} |B_ij B_ji|` (each reciprocal pair counted once per
/// direction) and its gradient `2 sign(B ⊙ B') ⊙ B'`.
pub fn two_cycle_penalty(b: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let d = b.nrows();
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(d, d);
    for j in 0..d {
        for i in 0..d {
            if i == j {
                continue;
            }
            let prod = b[(j, i)] * b[(i, j)];
            value += prod.abs();
            let s = if prod > 0.0 {
                1.0
            } else if prod < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad[(j, i)] = 2.0 * s * b[(i, j)];
        }
    }
    (value, grad)
}

/// Greedy acyclic subgraph: visits nonzero off-diagonal entries by
/// decreasing `|B_ji|` (ties by `(j, i)`), admitting each edge unless it
/// would close a cycle, and stops after `max_edges` admissions.
pub fn extract_dag(b: &DMatrix<f64>, max_edges: Option<usize>) -> Support {
    extract_dag_with_prefix(b, max_edges).0
}

/// [`extract_dag`] plus the number of edges admitted before the first
/// rejection (the length of the acyclic prefix of the ranking).
pub fn extract_dag_with_prefix(b: &DMatrix<f64>, max_edges: Option<usize>) -> (Support, usize) {
    let d = b.nrows();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for j in 0..d {
        for i in 0..d {
            let w = b[(j, i)].abs();
            if i != j && w > 0.0 {
                candidates.push((w, j, i));
            }
        }
    }
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut out = Support::from_element(d, d, false);
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); d];
    let mut admitted = 0usize;
    let mut prefix: Option<usize> = None;
    let limit = max_edges.unwrap_or(usize::MAX);
    for &(_, j, i) in &candidates {
        if admitted >= limit {
            break;
        }
        // i -> j closes a cycle iff j already reaches i.
        if reaches(&children, j, i) {
            prefix.get_or_insert(admitted);
            continue;
        }
        children[i].push(j);
        out[(j, i)] = true;
        admitted += 1;
    }
    (out, prefix.unwrap_or(admitted))
}

fn reaches(children: &[Vec<usize>], from: usize, to: usize) -> bool {
    if from == to {
        return true;
    }
    let mut seen = vec![false; children.len()];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(v) = stack.pop() {
        for &c in &children[v] {
            if c == to {
                return true;
            }
            if !seen[c] {
                seen[c] = true;
                stack.push(c);
            }
        }
    }
    false
}

/// Directed graph over `(t, j)` for `t = 1..=window`; vertex id is
/// `(t - 1) * d + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledGraph {
    pub dim: usize,
    pub window: usize,
    /// `children[v]` lists every `w` with an edge `v -> w`.
    pub children: Vec<Vec<usize>>,
}

impl UnrolledGraph {
    pub fn vertex(&self, t: usize, node: usize) -> usize {
        (t - 1) * self.dim + node
    }

    /// `(t, node)` of a vertex id.
    pub fn label(&self, vertex: usize) -> (usize, usize) {
        (vertex / self.dim + 1, vertex % self.dim)
    }

    pub fn num_edges(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    pub fn topological_sort(&self) -> Ordering {
        topological_sort_lists(&self.children)
    }
}

/// Lagged edges `(t - l, i) -> (t, j)` for `A_l[j, i] != 0` and `t - l >= 1`;
/// instantaneous edges `(t, i) -> (t, j)` for `B[j, i] != 0`, `i != j`.
pub fn unroll_graph(g: &DynamicGraph, window: usize) -> UnrolledGraph {
    let d = g.dim();
    let mut children = vec![Vec::new(); d * window];
    let vid = |t: usize, node: usize| (t - 1) * d + node;
    for t in 1..=window {
        for (l, a) in g.lag_matrices().iter().enumerate() {
            let lag = l + 1;
            if t <= lag {
                continue;
            }
            for j in 0..d {
                for i in 0..d {
                    if a[(j, i)] != 0.0 {
                        children[vid(t - lag, i)].push(vid(t, j));
                    }
                }
            }
        }
        let b = g.instant_matrix();
        for j in 0..d {
            for i in 0..d {
                if i != j && b[(j, i)] != 0.0 {
                    children[vid(t, i)].push(vid(t, j));
                }
            }
        }
    }
    UnrolledGraph {
        dim: d,
        window,
        children,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_matrix_has_zero_radius() {
        let r = spectral_penalty(&DMatrix::zeros(3, 3), 200, NILPOTENT_TOL);
        assert_eq!(r.rho, 0.0);
        assert!(r.grad_wrt_b.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn symmetric_two_cycle() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        let r = spectral_penalty(&b, 200, NILPOTENT_TOL);
        assert!((r.rho - 0.25).abs() < 1e-12);
    }

    #[test]
    fn strictly_triangular_is_nilpotent() {
        let b = DMatrix::from_row_slice(3, 3, &[0.0, 0.7, -0.2, 0.0, 0.0, 0.9, 0.0, 0.0, 0.0]);
        let r = spectral_penalty(&b, 200, NILPOTENT_TOL);
        assert_eq!(r.rho, 0.0);
        assert!(r.grad_wrt_b.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_cycle_value() {
        let mut b = DMatrix::zeros(3, 3);
        b[(0, 1)] = 0.5;
        b[(1, 0)] = 0.4;
        let (v, g) = two_cycle_penalty(&b);
        assert!((v - 0.4).abs() < 1e-15);
        assert!((g[(0, 1)] - 0.8).abs() < 1e-15);
        assert!((g[(1, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_cycle_zero_on_triangular() {
        let b = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.3, 0.0, 0.0, -0.4, 0.8, 0.0]);
        assert_eq!(two_cycle_penalty(&b).0, 0.0);
    }

    #[test]
    fn extract_breaks_two_cycle() {
        let mut b = DMatrix::zeros(2, 2);
        b[(1, 0)] = 0.9;
        b[(0, 1)] = 0.4;
        let dag = extract_dag(&b, None);
        assert!(dag[(1, 0)]);
        assert!(!dag[(0, 1)]);
    }

    #[test]
    fn extract_keeps_acyclic_support() {
        let b = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.3, 0.0, 0.0, -0.4, 0.01, 0.0]);
        assert_eq!(extract_dag(&b, None), b.map(|v| v != 0.0));
    }

    #[test]
    fn extract_three_cycle() {
        // 0 -> 1 (0.9), 1 -> 2 (0.8), 2 -> 0 (0.7)
        let mut b = DMatrix::zeros(3, 3);
        b[(1, 0)] = 0.9;
        b[(2, 1)] = 0.8;
        b[(0, 2)] = 0.7;
        let (dag, prefix) = extract_dag_with_prefix(&b, None);
        assert!(dag[(1, 0)] && dag[(2, 1)] && !dag[(0, 2)]);
        assert_eq!(prefix, 2);
    }

    #[test]
    fn extract_respects_budget() {
        let b = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.3, 0.0, 0.0, -0.4, 0.2, 0.0]);
        let dag = extract_dag(&b, Some(2));
        assert_eq!(dag.iter().filter(|&&x| x).count(), 2);
        assert!(dag[(2, 0)] && dag[(1, 0)]);
    }

    #[test]
    fn unrolled_intra_slice_cycle() {
        let mut b = DMatrix::zeros(2, 2);
        b[(0, 1)] = 0.5;
        b[(1, 0)] = 0.5;
        let g = DynamicGraph::new(vec![DMatrix::zeros(2, 2)], b, true).unwrap();
        match unroll_graph(&g, 1).topological_sort() {
            Ordering::Cycle(c) => assert_eq!(c.len(), 2),
            other => panic!("expected a cycle, got {other:?}"),
        }
    }

    #[test]
    fn unrolled_edge_count() {
        let d = 3;
        let lags = vec![DMatrix::from_element(d, d, 0.5), DMatrix::from_element(d, d, -0.2)];
        let g = DynamicGraph::new(lags, DMatrix::zeros(d, d), false).unwrap();
        let u = unroll_graph(&g, 5);
        // Direct count: nnz(A_l) * (T - l).
        assert_eq!(u.num_edges(), 9 * 4 + 9 * 3);
        assert!(u.topological_sort().is_acyclic());
        assert_eq!(u.label(u.vertex(4, 2)), (4, 2));
    }
}
