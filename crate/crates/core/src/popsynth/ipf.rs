//! Iterative proportional fitting over a dense N-dimensional contingency table.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IpfError {
    #[error("seed table has {seed} axes but {marginals} marginals were given")]
    DimensionMismatch { seed: usize, marginals: usize },
    #[error("marginal for axis {axis} has {found} categories, seed axis has {expected}")]
    AxisLengthMismatch { axis: usize, expected: usize, found: usize },
    #[error("inconsistent marginals: axis {axis} totals {found}, axis 0 totals {expected}")]
    InconsistentMarginals { axis: usize, expected: f64, found: f64 },
    #[error("negative or non-finite value in {what}")]
    InvalidValue { what: &'static str },
    #[error("seed table sums to zero")]
    EmptySeed,
    #[error("IPF did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
}

/// Dense row-major table; the last axis varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    dims: Vec<usize>,
    cells: Vec<f64>,
}

impl JointTable {
    pub fn new(dims: Vec<usize>, cells: Vec<f64>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), cells.len(), "cell count must match dims");
        Self { dims, cells }
    }

    pub fn filled(dims: Vec<usize>, value: f64) -> Self {
        let n = dims.iter().product();
        Self { dims, cells: vec![value; n] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [f64] {
        &mut self.cells
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().sum()
    }

    fn stride(&self, axis: usize) -> usize {
        self.dims[axis + 1..].iter().product()
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        index
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    /// Inverse of [`offset`](Self::offset).
    pub fn unravel(&self, mut offset: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for axis in (0..self.dims.len()).rev() {
            idx[axis] = offset % self.dims[axis];
            offset /= self.dims[axis];
        }
        idx
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.cells[self.offset(index)]
    }

    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let stride = self.stride(axis);
        let len = self.dims[axis];
        let mut out = vec![0.0; len];
        for (off, &v) in self.cells.iter().enumerate() {
            out[(off / stride) % len] += v;
        }
        out
    }

    /// Cells divided by their total.
    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total();
        if t <= 0.0 {
            return vec![0.0; self.cells.len()];
        }
        self.cells.iter().map(|c| c / t).collect()
    }

    fn scale_axis(&mut self, axis: usize, target: &[f64]) {
        let current = self.marginal(axis);
        let stride = self.stride(axis);
        let len = self.dims[axis];
        for (off, cell) in self.cells.iter_mut().enumerate() {
            let c = (off / stride) % len;
            if current[c] > 0.0 {
                // multiply before dividing so integral fixed points stay exact
                *cell = *cell * target[c] / current[c];
            }
        }
    }

    fn residual(&self, targets: &[Vec<f64>]) -> f64 {
        targets
            .iter()
            .enumerate()
            .flat_map(|(axis, t)| {
                self.marginal(axis)
                    .into_iter()
                    .zip(t.iter())
                    .map(|(m, t)| (m - t).abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }
}

/// Result of a converged fit.
#[derive(Debug, Clone, PartialEq)]
pub struct IpfFit {
    /// Fitted counts; sums to the common marginal total.
    pub table: JointTable,
    pub iterations: usize,
    pub residual: f64,
}

/// Relative slack allowed between the totals of different marginals.
const TOTAL_SLACK: f64 = 1e-9;

/// Fit `seed` to the per-axis `marginals` by alternating axis scaling.
///
/// Converged when every marginal cell is within `tol` of its target after a
/// full sweep over the axes.
pub fn fit_ipf(
    seed: &JointTable,
    marginals: &[Vec<f64>],
    tol: f64,
    max_iter: usize,
) -> Result<IpfFit, IpfError> {
    if seed.dims.len() != marginals.len() {
        return Err(IpfError::DimensionMismatch { seed: seed.dims.len(), marginals: marginals.len() });
    }
    for (axis, (m, &d)) in marginals.iter().zip(&seed.dims).enumerate() {
        if m.len() != d {
            return Err(IpfError::AxisLengthMismatch { axis, expected: d, found: m.len() });
        }
        if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(IpfError::InvalidValue { what: "marginals" });
        }
    }
    if seed.cells.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(IpfError::InvalidValue { what: "seed table" });
    }
    let total: f64 = marginals.first().map(|m| m.iter().sum()).unwrap_or(0.0);
    for (axis, m) in marginals.iter().enumerate().skip(1) {
        let t: f64 = m.iter().sum();
        if (t - total).abs() > TOTAL_SLACK * total.abs().max(1.0) {
            return Err(IpfError::InconsistentMarginals { axis, expected: total, found: t });
        }
    }

    let seed_total = seed.total();
    if seed_total <= 0.0 {
        if total == 0.0 {
            return Ok(IpfFit { table: seed.clone(), iterations: 0, residual: 0.0 });
        }
        return Err(IpfError::EmptySeed);
    }
    let mut table = seed.clone();
    for c in table.cells.iter_mut() {
        *c = *c * total / seed_total;
    }

    let mut residual = table.residual(marginals);
    if residual <= tol {
        return Ok(IpfFit { table, iterations: 0, residual });
    }
    for iteration in 1..=max_iter {
        for (axis, target) in marginals.iter().enumerate() {
            table.scale_axis(axis, target);
        }
        residual = table.residual(marginals);
        if residual <= tol {
            return Ok(IpfFit { table, iterations: iteration, residual });
        }
    }
    Err(IpfError::NotConverged { iterations: max_iter, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_two_by_two() {
        let seed = JointTable::filled(vec![2, 2], 1.0);
        let fit = fit_ipf(&seed, &[vec![50.0, 50.0], vec![50.0, 50.0]], 1e-12, 10).unwrap();
        assert_eq!(fit.table.cells(), &[25.0, 25.0, 25.0, 25.0]);
    }

    #[test]
    fn independent_seed_gives_product_solution() {
        // Hand iteration: scale to 25s, rows -> (30,30,20,20), cols -> (42,18,28,12).
        let seed = JointTable::filled(vec![2, 2], 1.0);
        let fit = fit_ipf(&seed, &[vec![60.0, 40.0], vec![70.0, 30.0]], 1e-12, 10).unwrap();
        assert_eq!(fit.table.cells(), &[42.0, 18.0, 28.0, 12.0]);
        assert_eq!(fit.iterations, 1);
    }

    #[test]
    fn unequal_totals_rejected() {
        let seed = JointTable::filled(vec![2, 2], 1.0);
        let err = fit_ipf(&seed, &[vec![50.0, 50.0], vec![45.0, 45.0]], 1e-9, 10).unwrap_err();
        assert!(matches!(err, IpfError::InconsistentMarginals { axis: 1, .. }));
    }

    #[test]
    fn structural_zero_blocks_convergence() {
        // Only the diagonal may be populated, but rows and columns disagree.
        let seed = JointTable::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let err = fit_ipf(&seed, &[vec![60.0, 40.0], vec![40.0, 60.0]], 1e-9, 50).unwrap_err();
        match err {
            IpfError::NotConverged { iterations, residual } => {
                assert_eq!(iterations, 50);
                assert!(residual > 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn offset_round_trips() {
        let t = JointTable::filled(vec![3, 2, 4], 0.0);
        for off in 0..24 {
            assert_eq!(t.offset(&t.unravel(off)), off);
        }
        assert_eq!(t.offset(&[1, 0, 2]), 10);
    }

    #[test]
    fn marginal_sums_by_axis() {
        let t = JointTable::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(t.marginal(0), vec![6.0, 15.0]);
        assert_eq!(t.marginal(1), vec![5.0, 7.0, 9.0]);
    }
}
