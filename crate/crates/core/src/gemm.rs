//! Matrix kernels behind convolution.
//!
//! Every output element is a sum started from zero and accumulated in a fixed
//! order, whichever path (register-blocked or tail) computes it. The blocked
//! kernels vectorize across independent outputs only, so no reduction is ever
//! reassociated and results are bit-identical to the plain loops.

use alloc::vec;

use crate::Scalar;

const MR: usize = 4;
const NR: usize = 16;
const NC: usize = 64;
const LANES: usize = 8;
const NB: usize = 2;
const PC: usize = 512;

/// `c = a · b` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
///
/// Each `c[i][j]` accumulates `a[i][l]·b[l][j]` for `l = 0..k` in order.
/// Columns are processed in tiles of `NC` so the `b` panel stays in cache
/// while every row block of `a` passes over it.
pub(crate) fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    gemm_nn_strided(m, k, n, a, b, n, c, n);
}

/// [`gemm_nn`] with explicit row strides for `b` and `c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_nn_strided<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    ldb: usize,
    c: &mut [T],
    ldc: usize,
) {
    assert!(ldb >= n && ldc >= n);
    assert!(a.len() >= m * k);
    assert!(k == 0 || b.len() >= (k - 1) * ldb + n);
    assert!(m == 0 || c.len() >= (m - 1) * ldc + n);
    let m_main = m - m % MR;
    let n_main = n - n % NR;

    let mut tile = 0;
    while tile < n_main {
        let tile_end = (tile + NC).min(n_main);
        let mut i = 0;
        while i < m_main {
            let rows = [
                &a[i * k..(i + 1) * k],
                &a[(i + 1) * k..(i + 2) * k],
                &a[(i + 2) * k..(i + 3) * k],
                &a[(i + 3) * k..(i + 4) * k],
            ];
            let mut j = tile;
            while j < tile_end {
                let mut acc = [[T::ZERO; NR]; MR];
                for l in 0..k {
                    let brow: &[T; NR] = b[l * ldb + j..l * ldb + j + NR].try_into().unwrap();
                    let w = [rows[0][l], rows[1][l], rows[2][l], rows[3][l]];
                    for r in 0..MR {
                        for q in 0..NR {
                            acc[r][q] += w[r] * brow[q];
                        }
                    }
                }
                for r in 0..MR {
                    c[(i + r) * ldc + j..(i + r) * ldc + j + NR].copy_from_slice(&acc[r]);
                }
                j += NR;
            }
            i += MR;
        }
        for r in m_main..m {
            let row = &a[r * k..(r + 1) * k];
            let mut j = tile;
            while j < tile_end {
                let mut acc = [T::ZERO; NR];
                for (l, &w) in row.iter().enumerate() {
                    let brow: &[T; NR] = b[l * ldb + j..l * ldb + j + NR].try_into().unwrap();
                    for q in 0..NR {
                        acc[q] += w * brow[q];
                    }
                }
                c[r * ldc + j..r * ldc + j + NR].copy_from_slice(&acc);
                j += NR;
            }
        }
        tile = tile_end;
    }
    for r in 0..m {
        row_tail(k, n, &a[r * k..(r + 1) * k], b, ldb, n_main, &mut c[r * ldc..r * ldc + n]);
    }
}

#[inline]
fn row_tail<T: Scalar>(k: usize, n: usize, row: &[T], b: &[T], ldb: usize, from: usize, crow: &mut [T]) {
    for j in from..n {
        let mut acc = T::ZERO;
        for l in 0..k {
            acc += row[l] * b[l * ldb + j];
        }
        crow[j] = acc;
    }
}

/// `c = a · bᵀ` for row-major `a: m×p`, `b: n×p`, `c: m×n`.
///
/// Each dot product keeps eight interleaved partial sums (element `q` goes to
/// lane `q % 8`, lanes accumulate in increasing `q`), folds them pairwise,
/// then adds the remainder in order. The lanes are parked in a buffer between
/// tiles of `p`, which leaves that order untouched.
pub(crate) fn gemm_nt<T: Scalar>(m: usize, n: usize, p: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert!(a.len() >= m * p && b.len() >= n * p && c.len() >= m * n);
    let p_main = p - p % LANES;
    let m_main = m - m % MR;
    let n_main = n - n % NB;
    let mut lanes = vec![[T::ZERO; LANES]; m * n];

    let mut tile = 0;
    while tile < p_main {
        let tile_end = (tile + PC).min(p_main);
        let mut i = 0;
        while i < m_main {
            let mut j = 0;
            while j < n_main {
                let mut acc = [[[T::ZERO; LANES]; NB]; MR];
                for r in 0..MR {
                    for s in 0..NB {
                        acc[r][s] = lanes[(i + r) * n + j + s];
                    }
                }
                let mut q = tile;
                while q < tile_end {
                    let mut bc = [[T::ZERO; LANES]; NB];
                    for s in 0..NB {
                        bc[s] = b[(j + s) * p + q..(j + s) * p + q + LANES].try_into().unwrap();
                    }
                    for r in 0..MR {
                        let ac: &[T; LANES] =
                            a[(i + r) * p + q..(i + r) * p + q + LANES].try_into().unwrap();
                        for s in 0..NB {
                            for t in 0..LANES {
                                acc[r][s][t] += ac[t] * bc[s][t];
                            }
                        }
                    }
                    q += LANES;
                }
                for r in 0..MR {
                    for s in 0..NB {
                        lanes[(i + r) * n + j + s] = acc[r][s];
                    }
                }
                j += NB;
            }
            i += MR;
        }
        for i in 0..m {
            let j_from = if i < m_main { n_main } else { 0 };
            for j in j_from..n {
                let acc = &mut lanes[i * n + j];
                let mut q = tile;
                while q < tile_end {
                    for t in 0..LANES {
                        acc[t] += a[i * p + q + t] * b[j * p + q + t];
                    }
                    q += LANES;
                }
            }
        }
        tile = tile_end;
    }
    for i in 0..m {
        for j in 0..n {
            c[i * n + j] = finish_dot(
                &lanes[i * n + j],
                &a[i * p + p_main..(i + 1) * p],
                &b[j * p + p_main..(j + 1) * p],
            );
        }
    }
}

#[inline]
fn finish_dot<T: Scalar>(lanes: &[T; LANES], a_tail: &[T], b_tail: &[T]) -> T {
    let mut s = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    for (&x, &y) in a_tail.iter().zip(b_tail) {
        s += x * y;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn pseudo(n: usize, seed: u32) -> Vec<f32> {
        let mut s = seed.wrapping_mul(2654435761).wrapping_add(1);
        (0..n)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 17;
                s ^= s << 5;
                (s % 2001) as f32 / 1000.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn nn_matches_plain_loop_bitwise() {
        for &(m, k, n) in &[(1, 1, 1), (4, 9, 16), (7, 13, 37), (16, 27, 100), (5, 3, 15)] {
            let a = pseudo(m * k, 1);
            let b = pseudo(k * n, 2);
            let mut c = alloc::vec![0.0f32; m * n];
            gemm_nn(m, k, n, &a, &b, &mut c);
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0f32;
                    for l in 0..k {
                        acc += a[i * k + l] * b[l * n + j];
                    }
                    assert_eq!(acc.to_bits(), c[i * n + j].to_bits());
                }
            }
        }
    }

    #[test]
    fn nt_matches_dot_products() {
        for &(m, n, p) in &[(1, 1, 1), (4, 3, 8), (6, 5, 21), (9, 2, 64)] {
            let a = pseudo(m * p, 3);
            let b = pseudo(n * p, 4);
            let mut c = alloc::vec![0.0f32; m * n];
            gemm_nt(m, n, p, &a, &b, &mut c);
            for i in 0..m {
                for j in 0..n {
                    let exact: f64 = (0..p)
                        .map(|q| a[i * p + q] as f64 * b[j * p + q] as f64)
                        .sum();
                    assert!((exact - c[i * n + j] as f64).abs() < 1e-5);
                }
            }
        }
    }
}
