//! Dynamic Path Warping: a soft, differentiable alignment in which every
//! generated path is matched to exactly one target path under a monotone
//! matching, with target paths allowed to be skipped or reused. SoftDTW is
//! included as the one-to-many baseline.
//!
//! Indices are 0-based throughout: `d[(i, j)]` is the distance between target
//! `i` and generated path `j`.

use std::io::Write;
use std::path::Path as FsPath;

use crate::error::{Error, Result};
use crate::geometry::{ClosedPath, PathSequence, PARAMS_PER_PATH};

/// Stand-in for +inf in the DP boundary.
pub const INF: f64 = 1e30;

/// Largest number of matchings [`dpw_bruteforce`] will enumerate.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

fn is_inf(v: f64) -> bool {
    v >= INF * 0.5
}

/// Dense row-major `rows x cols` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Pairwise distances between `n` targets (rows) and `m` generated paths (cols).
pub type DistanceMatrix = Matrix;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Matrix {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Checked constructor for distance matrices: non-empty, finite, non-negative.
    pub fn distances(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::shape(rows * cols, data.len()));
        }
        let m = Matrix { rows, cols, data };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidArgument(
                "distance matrix must be at least 1x1".into(),
            ));
        }
        if let Some(v) = self.data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "distances must be finite and non-negative, found {v}"
            )));
        }
        Ok(())
    }

    /// Writes one CSV row per matrix row.
    pub fn write_csv(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|j| format!("{}", self[(i, j)]))
                .collect();
            writeln!(f, "{}", row.join(","))?;
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma must be finite and non-negative, got {gamma}"
        )));
    }
    Ok(())
}

/// `-gamma log Σ exp(-a_i / gamma)`, or the plain minimum for `gamma = 0`.
/// Infinite (sentinel) inputs get zero weight.
pub fn softmin(values: &[f64], gamma: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("softmin of an empty list".into()));
    }
    check_gamma(gamma)?;
    Ok(softmin_unchecked(values, gamma))
}

fn softmin_unchecked(values: &[f64], gamma: f64) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    if gamma == 0.0 || is_inf(lo) {
        return if is_inf(lo) { INF } else { lo };
    }
    let sum: f64 = values
        .iter()
        .filter(|v| !is_inf(**v))
        .map(|v| (-(v - lo) / gamma).exp())
        .sum();
    lo - gamma * sum.ln()
}

/// Weight of `a` in the derivative of a soft-min whose value is `s`.
fn soft_weight(a: f64, s: f64, gamma: f64) -> f64 {
    if is_inf(a) {
        0.0
    } else {
        (-(a - s) / gamma).exp()
    }
}

/// DP tables, `(n+1) x (m+1)` with row/column 0 as the boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct DpwTables {
    /// `p[(i, j)]`: best cost with target `i` matched to generated `j` (1-based).
    pub p: Matrix,
    /// `q[(i, j)]`: best cost with generated `j` matched to a target before `i`.
    pub q: Matrix,
    pub gamma: f64,
    pub value: f64,
}

impl DpwTables {
    pub fn n(&self) -> usize {
        self.p.rows - 1
    }

    pub fn m(&self) -> usize {
        self.p.cols - 1
    }

    /// Recovers an optimal matching by backtracking (meaningful for `gamma = 0`).
    pub fn matching(&self) -> MatchFunction {
        let (n, m) = (self.n(), self.m());
        let mut matches = vec![0; m];
        // state: (in_p, i, j)
        let (mut in_p, mut i, mut j) = (self.p[(n, m)] <= self.q[(n, m)], n, m);
        while j >= 1 {
            if in_p {
                matches[j - 1] = i - 1;
                if j == 1 {
                    break;
                }
                in_p = self.p[(i, j - 1)] <= self.q[(i, j - 1)];
                j -= 1;
            } else {
                in_p = self.p[(i - 1, j)] <= self.q[(i - 1, j)];
                i -= 1;
            }
        }
        MatchFunction { matches }
    }
}

/// Nondecreasing map from generated index to target index (0-based).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchFunction {
    pub matches: Vec<usize>,
}

impl MatchFunction {
    pub fn is_monotone(&self) -> bool {
        self.matches.windows(2).all(|w| w[1] >= w[0])
    }

    pub fn cost(&self, d: &DistanceMatrix) -> f64 {
        self.matches
            .iter()
            .enumerate()
            .map(|(j, &i)| d[(i, j)])
            .sum()
    }
}

/// Forward pass; column-major (generated index outer) like the recurrences
/// `p[i][j] = d[i][j] + smin(q[i][j-1], p[i][j-1])`,
/// `q[i][j] = smin(q[i-1][j], p[i-1][j])`, value `smin(p[n][m], q[n][m])`.
///
/// Boundary: `p[i][0] = 0` for `i >= 1` (the first generated path may match any
/// target), everything else on the border is +inf.
pub fn dpw_forward(d: &DistanceMatrix, gamma: f64) -> Result<(f64, DpwTables)> {
    d.validate()?;
    check_gamma(gamma)?;
    let (n, m) = (d.rows, d.cols);
    let mut p = Matrix::from_fn(n + 1, m + 1, |_, _| INF);
    let mut q = p.clone();
    for i in 1..=n {
        p[(i, 0)] = 0.0;
    }
    for j in 1..=m {
        for i in 1..=n {
            p[(i, j)] =
                d[(i - 1, j - 1)] + softmin_unchecked(&[q[(i, j - 1)], p[(i, j - 1)]], gamma);
            q[(i, j)] = softmin_unchecked(&[q[(i - 1, j)], p[(i - 1, j)]], gamma);
        }
    }
    let value = softmin_unchecked(&[p[(n, m)], q[(n, m)]], gamma);
    Ok((value, DpwTables { p, q, gamma, value }))
}

/// Gradient of the soft value with respect to every `d[(i, j)]`, by reverse
/// accumulation through both recurrences.
pub fn dpw_backward(tables: &DpwTables, d: &DistanceMatrix) -> Result<Matrix> {
    let gamma = tables.gamma;
    if gamma <= 0.0 {
        return Err(Error::NonDifferentiable(gamma));
    }
    let (n, m) = (tables.n(), tables.m());
    if (d.rows, d.cols) != (n, m) {
        return Err(Error::shape(
            format!("{n}x{m}"),
            format!("{}x{}", d.rows, d.cols),
        ));
    }
    let (p, q) = (&tables.p, &tables.q);
    let mut pb = Matrix::zeros(n + 1, m + 1);
    let mut qb = Matrix::zeros(n + 1, m + 1);
    pb[(n, m)] = soft_weight(p[(n, m)], tables.value, gamma);
    qb[(n, m)] = soft_weight(q[(n, m)], tables.value, gamma);
    let mut grad = Matrix::zeros(n, m);
    for j in (1..=m).rev() {
        for i in (1..=n).rev() {
            let pbar = pb[(i, j)];
            grad[(i - 1, j - 1)] = pbar;
            if j > 1 && pbar != 0.0 {
                let s = p[(i, j)] - d[(i - 1, j - 1)];
                qb[(i, j - 1)] += pbar * soft_weight(q[(i, j - 1)], s, gamma);
                pb[(i, j - 1)] += pbar * soft_weight(p[(i, j - 1)], s, gamma);
            }
            let qbar = qb[(i, j)];
            if i > 1 && qbar != 0.0 {
                let s = q[(i, j)];
                qb[(i - 1, j)] += qbar * soft_weight(q[(i - 1, j)], s, gamma);
                pb[(i - 1, j)] += qbar * soft_weight(p[(i - 1, j)], s, gamma);
            }
        }
    }
    Ok(grad)
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

/// Number of nondecreasing maps from `m` generated paths to `n` targets.
pub fn matching_count(n: usize, m: usize) -> u128 {
    binomial((n + m - 1) as u128, m as u128)
}

/// Exhaustive oracle: enumerates every nondecreasing matching. Returns the
/// soft value over all matchings (the minimum for `gamma = 0`) and a
/// minimum-cost matching (first in lexicographic order).
pub fn dpw_bruteforce(d: &DistanceMatrix, gamma: f64) -> Result<(f64, MatchFunction)> {
    d.validate()?;
    check_gamma(gamma)?;
    let (n, m) = (d.rows, d.cols);
    let count = matching_count(n, m);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut current = vec![0usize; m];
    let mut costs = Vec::with_capacity(count as usize);
    let mut best = (f64::INFINITY, current.clone());
    loop {
        let c: f64 = current.iter().enumerate().map(|(j, &i)| d[(i, j)]).sum();
        if c < best.0 {
            best = (c, current.clone());
        }
        costs.push(c);
        // next nondecreasing sequence in lexicographic order
        let Some(k) = (0..m).rev().find(|&k| current[k] + 1 < n) else {
            break;
        };
        let v = current[k] + 1;
        for x in &mut current[k..] {
            *x = v;
        }
    }
    debug_assert_eq!(costs.len() as u128, count);
    let value = if gamma == 0.0 {
        best.0
    } else {
        softmin_unchecked(&costs, gamma)
    };
    Ok((value, MatchFunction { matches: best.1 }))
}

/// SoftDTW value: `r[i][j] = d[i][j] + smin(r[i-1][j], r[i][j-1], r[i-1][j-1])`.
pub fn softdtw_forward(d: &DistanceMatrix, gamma: f64) -> Result<f64> {
    Ok(softdtw_table(d, gamma)?.1)
}

fn softdtw_table(d: &DistanceMatrix, gamma: f64) -> Result<(Matrix, f64)> {
    d.validate()?;
    check_gamma(gamma)?;
    let (n, m) = (d.rows, d.cols);
    let mut r = Matrix::from_fn(n + 1, m + 1, |_, _| INF);
    r[(0, 0)] = 0.0;
    for j in 1..=m {
        for i in 1..=n {
            r[(i, j)] = d[(i - 1, j - 1)]
                + softmin_unchecked(&[r[(i - 1, j)], r[(i, j - 1)], r[(i - 1, j - 1)]], gamma);
        }
    }
    let v = r[(n, m)];
    Ok((r, v))
}

/// SoftDTW value and its gradient with respect to `d`.
pub fn softdtw_backward(d: &DistanceMatrix, gamma: f64) -> Result<(f64, Matrix)> {
    if gamma <= 0.0 {
        return Err(Error::NonDifferentiable(gamma));
    }
    let (r, value) = softdtw_table(d, gamma)?;
    let (n, m) = (d.rows, d.cols);
    let mut rb = Matrix::zeros(n + 1, m + 1);
    rb[(n, m)] = 1.0;
    let mut grad = Matrix::zeros(n, m);
    for j in (1..=m).rev() {
        for i in (1..=n).rev() {
            let bar = rb[(i, j)];
            grad[(i - 1, j - 1)] = bar;
            if bar == 0.0 {
                continue;
            }
            let s = r[(i, j)] - d[(i - 1, j - 1)];
            for (a, b) in [(i - 1, j), (i, j - 1), (i - 1, j - 1)] {
                if a >= 1 && b >= 1 {
                    rb[(a, b)] += bar * soft_weight(r[(a, b)], s, gamma);
                }
            }
        }
    }
    Ok((value, grad))
}

/// Optimal hard DTW alignment as a list of `(target, generated)` pairs from
/// `(0, 0)` to `(n-1, m-1)`.
pub fn dtw_alignment(d: &DistanceMatrix) -> Result<Vec<(usize, usize)>> {
    let (r, _) = softdtw_table(d, 0.0)?;
    let (mut i, mut j) = (d.rows, d.cols);
    let mut path = vec![(i - 1, j - 1)];
    while (i, j) != (1, 1) {
        let moves = [(i - 1, j - 1), (i - 1, j), (i, j - 1)];
        let (a, b) = moves
            .into_iter()
            .filter(|&(a, b)| a >= 1 && b >= 1)
            .min_by(|x, y| r[*x].total_cmp(&r[*y]))
            .expect("interior cell has a predecessor");
        i = a;
        j = b;
        path.push((i - 1, j - 1));
    }
    path.reverse();
    Ok(path)
}

/// Unweighted squared Euclidean distance over the 28 parameters.
pub fn path_distance(a: &ClosedPath, b: &ClosedPath) -> f64 {
    a.params()
        .iter()
        .zip(b.params())
        .map(|(x, y)| (x - y).powi(2))
        .sum()
}

/// Gradient of [`path_distance`] with respect to the parameters of `b`.
pub fn path_distance_grad(a: &ClosedPath, b: &ClosedPath) -> [f64; PARAMS_PER_PATH] {
    let (pa, pb) = (a.params(), b.params());
    std::array::from_fn(|k| 2.0 * (pb[k] - pa[k]))
}

pub fn distance_matrix(targets: &PathSequence, generated: &PathSequence) -> DistanceMatrix {
    Matrix::from_fn(targets.len(), generated.len(), |i, j| {
        path_distance(&targets.paths[i], &generated.paths[j])
    })
}

/// Which alignment loss guides the generated paths toward the targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignmentKind {
    Dpw,
    SoftDtw,
}

/// Alignment loss between `targets` and `generated` and its gradient with
/// respect to the generated parameters (laid out as `generated.params()`).
pub fn alignment_loss(
    kind: AlignmentKind,
    targets: &PathSequence,
    generated: &PathSequence,
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    let d = distance_matrix(targets, generated);
    let (value, dgrad) = match kind {
        AlignmentKind::Dpw => {
            let (v, tables) = dpw_forward(&d, gamma)?;
            (v, dpw_backward(&tables, &d)?)
        }
        AlignmentKind::SoftDtw => softdtw_backward(&d, gamma)?,
    };
    let mut grad = vec![0.0; generated.param_count()];
    for (j, g) in generated.iter().enumerate() {
        for (i, t) in targets.iter().enumerate() {
            let w = dgrad[(i, j)];
            if w == 0.0 {
                continue;
            }
            for (k, v) in path_distance_grad(t, g).iter().enumerate() {
                grad[j * PARAMS_PER_PATH + k] += w * v;
            }
        }
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_counts() {
        assert_eq!(matching_count(2, 2), 3);
        assert_eq!(matching_count(5, 4), 70);
        assert_eq!(matching_count(1, 7), 1);
    }

    #[test]
    fn backtrack_matches_bruteforce_cost() {
        let d = Matrix::distances(3, 2, vec![5.0, 1.0, 0.0, 4.0, 2.0, 3.0]).unwrap();
        let (v, t) = dpw_forward(&d, 0.0).unwrap();
        let mf = t.matching();
        assert!(mf.is_monotone());
        assert_eq!(mf.cost(&d), v);
        assert_eq!(v, 3.0);
        assert_eq!(mf.matches, vec![1, 2]);
    }
}
