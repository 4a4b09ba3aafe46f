//! Householder QR with column pivoting for tall, narrow systems.

use crate::Scalar;

/// Rank-revealing factorization `A P = Q R` of an `n x k` matrix stored by column.
pub(crate) struct PivotedQr<T> {
    /// Householder-reduced columns in pivot order; the upper `k x k` block holds `R`.
    cols: Vec<Vec<T>>,
    /// Householder vectors and scalings, one per accepted pivot.
    reflectors: Vec<(Vec<T>, T)>,
    /// `perm[i]` is the original index of the `i`-th pivot column.
    pub perm: Vec<usize>,
    pub rank: usize,
}

impl<T: Scalar> PivotedQr<T> {
    /// Factorizes `columns`; pivots whose remaining norm falls below `tol` are
    /// treated as linearly dependent.
    pub fn new(columns: &[Vec<T>], tol: T) -> Self {
        let k = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        let mut cols: Vec<Vec<T>> = columns.to_vec();
        let mut perm: Vec<usize> = (0..k).collect();
        let mut reflectors = Vec::with_capacity(k);
        let mut rank = 0;

        for j in 0..k.min(n) {
            let tail_norm = |c: &Vec<T>| c[j..].iter().map(|&v| v * v).sum::<T>().sqrt();
            let (best, best_norm) = (j..k)
                .map(|c| (c, tail_norm(&cols[c])))
                .fold((j, T::neg_infinity()), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
            if !(best_norm > tol) {
                break;
            }
            cols.swap(j, best);
            perm.swap(j, best);

            let alpha = if cols[j][j] > T::zero() { -best_norm } else { best_norm };
            let mut v: Vec<T> = cols[j][j..].to_vec();
            v[0] = v[0] - alpha;
            let vnorm2: T = v.iter().map(|&x| x * x).sum();
            let beta = if vnorm2 > T::zero() { T::lit(2.0) / vnorm2 } else { T::zero() };
            for col in cols.iter_mut().skip(j) {
                apply_reflector(&v, beta, &mut col[j..]);
            }
            reflectors.push((v, beta));
            rank += 1;
        }
        Self {
            cols,
            reflectors,
            perm,
            rank,
        }
    }

    /// Least-squares solution in original column order. Requires full rank.
    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let k = self.perm.len();
        let mut qtb = rhs.to_vec();
        for (j, (v, beta)) in self.reflectors.iter().enumerate() {
            apply_reflector(v, *beta, &mut qtb[j..]);
        }
        let mut z = vec![T::zero(); k];
        for i in (0..k).rev() {
            let mut acc = qtb[i];
            for (c, zc) in z.iter().enumerate().skip(i + 1) {
                acc = acc - self.r(i, c) * *zc;
            }
            z[i] = acc / self.r(i, i);
        }
        let mut out = vec![T::zero(); k];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = z[i];
        }
        out
    }

    /// `(AᵀA)⁻¹ = P R⁻¹ R⁻ᵀ Pᵀ` in original column order. Requires full rank.
    pub fn inverse_gram(&self) -> Vec<Vec<T>> {
        let k = self.perm.len();
        // R⁻¹ by back substitution, column by column
        let mut rinv = vec![vec![T::zero(); k]; k];
        for col in 0..k {
            for i in (0..=col).rev() {
                let mut acc = if i == col { T::one() } else { T::zero() };
                for m in (i + 1)..=col {
                    acc = acc - self.r(i, m) * rinv[m][col];
                }
                rinv[i][col] = acc / self.r(i, i);
            }
        }
        let mut out = vec![vec![T::zero(); k]; k];
        for a in 0..k {
            for b in 0..k {
                let s: T = (0..k).map(|m| rinv[a][m] * rinv[b][m]).sum();
                out[self.perm[a]][self.perm[b]] = s;
            }
        }
        out
    }

    fn r(&self, row: usize, col: usize) -> T {
        self.cols[col][row]
    }
}

fn apply_reflector<T: Scalar>(v: &[T], beta: T, x: &mut [T]) {
    let dot: T = v.iter().zip(x.iter()).map(|(&a, &b)| a * b).sum();
    let s = beta * dot;
    for (xi, &vi) in x.iter_mut().zip(v) {
        *xi = *xi - s * vi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        // A = [[1,0],[0,1],[1,1]], b = [1,2,3] -> exact solution (1,2)
        let a = vec![vec![1.0_f64, 0.0, 1.0], vec![0.0, 1.0, 1.0]];
        let qr = PivotedQr::new(&a, 1e-12);
        assert_eq!(qr.rank, 2);
        let x = qr.solve(&[1.0, 2.0, 3.0]);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
        // AᵀA = [[2,1],[1,2]] -> inverse [[2,-1],[-1,2]]/3
        let g = qr.inverse_gram();
        assert!((g[0][0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((g[0][1] + 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn detects_dependence() {
        let a = vec![vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0], vec![0.0, 1.0, 0.0]];
        let qr = PivotedQr::new(&a, 1e-10);
        assert_eq!(qr.rank, 2);
    }
}
