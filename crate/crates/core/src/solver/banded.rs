//! Band storage and an unpivoted band LU for the implicit step systems.
//!
//! The step matrices are I + c₁A + c₂B with A monotone and B coercive in a
//! diagonal inner product, so their symmetric part is positive definite after
//! a diagonal similarity. Every leading principal minor is then nonzero and
//! elimination without pivoting is well defined; it also creates no fill-in
//! outside the band.

use nalgebra::DMatrix;

/// A symmetric permutation of the unknowns together with the band it yields.
#[derive(Debug, Clone)]
pub(crate) struct BandLayout {
    /// `order[new] = old`
    order: Vec<usize>,
    pub(crate) lower: usize,
    pub(crate) upper: usize,
}

impl BandLayout {
    /// Picks between the natural ordering and, for block-structured states,
    /// the ordering that interleaves the blocks node by node.
    pub(crate) fn choose(mats: &[&DMatrix<f64>], blocks: usize) -> Self {
        let n = mats[0].nrows();
        let natural: Vec<usize> = (0..n).collect();
        let mut best = Self::with_order(mats, natural);
        if blocks > 1 && n.is_multiple_of(blocks) {
            let len = n / blocks;
            let interleaved = (0..n).map(|p| (p % blocks) * len + p / blocks).collect();
            let cand = Self::with_order(mats, interleaved);
            if cand.lower + cand.upper < best.lower + best.upper {
                best = cand;
            }
        }
        best
    }

    fn with_order(mats: &[&DMatrix<f64>], order: Vec<usize>) -> Self {
        let n = order.len();
        let (mut lower, mut upper) = (0, 0);
        for m in mats {
            for i in 0..n {
                for j in 0..n {
                    if m[(order[i], order[j])] != 0.0 {
                        if i > j {
                            lower = lower.max(i - j);
                        } else {
                            upper = upper.max(j - i);
                        }
                    }
                }
            }
        }
        Self { order, lower, upper }
    }

    pub(crate) fn dim(&self) -> usize {
        self.order.len()
    }

    pub(crate) fn width(&self) -> usize {
        self.lower + self.upper + 1
    }

    /// Row-major band storage of `m` under this layout.
    pub(crate) fn extract(&self, m: &DMatrix<f64>) -> Vec<f64> {
        let (n, w) = (self.dim(), self.width());
        let mut data = vec![0.0; n * w];
        for i in 0..n {
            let lo = i.saturating_sub(self.lower);
            let hi = (i + self.upper).min(n - 1);
            for j in lo..=hi {
                data[i * w + j + self.lower - i] = m[(self.order[i], self.order[j])];
            }
        }
        data
    }

    pub(crate) fn gather(&self, x: &[f64], out: &mut [f64]) {
        for (o, &src) in out.iter_mut().zip(&self.order) {
            *o = x[src];
        }
    }

    pub(crate) fn scatter(&self, x: &[f64], out: &mut [f64]) {
        for (v, &dst) in x.iter().zip(&self.order) {
            out[dst] = *v;
        }
    }
}

/// Factorizes the band matrix in place and solves for `rhs`, overwriting it.
/// Returns the offending row and pivot if elimination breaks down.
pub(crate) fn band_lu_solve(
    band: &mut [f64],
    lower: usize,
    upper: usize,
    rhs: &mut [f64],
) -> Result<(), (usize, f64)> {
    let n = rhs.len();
    let w = lower + upper + 1;
    let at = |i: usize, j: usize| i * w + j + lower - i;
    let scale = band.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    for k in 0..n {
        let pivot = band[at(k, k)];
        if !pivot.is_finite() || pivot.abs() <= 1e-14 * scale {
            return Err((k, pivot));
        }
        let last_row = (k + lower).min(n - 1);
        let last_col = (k + upper).min(n - 1);
        for i in k + 1..=last_row {
            let l = band[at(i, k)] / pivot;
            if l == 0.0 {
                continue;
            }
            band[at(i, k)] = l;
            for j in k + 1..=last_col {
                band[at(i, j)] -= l * band[at(k, j)];
            }
            rhs[i] -= l * rhs[k];
        }
    }
    for k in (0..n).rev() {
        let last_col = (k + upper).min(n - 1);
        let mut s = rhs[k];
        for j in k + 1..=last_col {
            s -= band[at(k, j)] * rhs[j];
        }
        rhs[k] = s / band[at(k, k)];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn tridiagonal_matches_dense_solve() {
        let n = 7;
        let m = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
            0 => 4.0 + i as f64,
            1 => -1.0 - 0.1 * j as f64,
            _ => 0.0,
        });
        let layout = BandLayout::choose(&[&m], 1);
        assert_eq!((layout.lower, layout.upper), (1, 1));
        let b = DVector::from_fn(n, |i, _| (i as f64).cos());
        let mut band = layout.extract(&m);
        let mut x = b.as_slice().to_vec();
        band_lu_solve(&mut band, 1, 1, &mut x).unwrap();
        let expect = m.lu().solve(&b).unwrap();
        for (a, e) in x.iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-13);
        }
    }

    #[test]
    fn interleaving_narrows_two_block_band() {
        let n = 5;
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for j in 0..n {
            m[(j, j)] = 3.0;
            if j + 1 < n {
                m[(j, j + 1)] = -1.0;
                m[(j + 1, j)] = -1.0;
            }
            m[(j, n + j)] = 1.0;
            m[(n + j, j)] = -1.0;
            m[(n + j, n + j)] = 2.0;
        }
        let layout = BandLayout::choose(&[&m], 2);
        assert_eq!((layout.lower, layout.upper), (2, 2));

        let b = DVector::from_fn(2 * n, |i, _| 1.0 + i as f64);
        let mut rhs = vec![0.0; 2 * n];
        layout.gather(b.as_slice(), &mut rhs);
        let mut band = layout.extract(&m);
        band_lu_solve(&mut band, layout.lower, layout.upper, &mut rhs).unwrap();
        let mut x = vec![0.0; 2 * n];
        layout.scatter(&rhs, &mut x);
        let expect = m.lu().solve(&b).unwrap();
        for (a, e) in x.iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let layout = BandLayout::choose(&[&m], 1);
        let mut band = layout.extract(&m);
        let mut rhs = vec![1.0, 1.0];
        assert_eq!(band_lu_solve(&mut band, 1, 1, &mut rhs), Err((0, 0.0)));
    }
}
