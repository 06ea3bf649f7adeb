//! Raw 2-D matrix multiply kernels used by the tape ops.
//!
//! Layout is row-major. `ta`/`tb` select logical transposes without
//! materializing them, except for the rare double-transpose case.

/// out += op_a(A) * op_b(B), where op is transpose when the flag is set.
/// A is m×k (k×m when ta), B is k×n (n×k when tb), out is m×n.
pub fn matmul_acc(
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), m * n);
    match (ta, tb) {
        (false, false) => {
            debug_assert_eq!(a.len(), m * k);
            debug_assert_eq!(b.len(), k * n);
            for i in 0..m {
                let a_row = &a[i * k..(i + 1) * k];
                let out_row = &mut out[i * n..(i + 1) * n];
                for (l, &a_il) in a_row.iter().enumerate() {
                    if a_il != 0.0 {
                        let b_row = &b[l * n..(l + 1) * n];
                        for (o, &bv) in out_row.iter_mut().zip(b_row) {
                            *o += a_il * bv;
                        }
                    }
                }
            }
        }
        (false, true) => {
            // C[i][j] = dot(a_row_i, b_row_j)
            debug_assert_eq!(a.len(), m * k);
            debug_assert_eq!(b.len(), n * k);
            for i in 0..m {
                let a_row = &a[i * k..(i + 1) * k];
                let out_row = &mut out[i * n..(i + 1) * n];
                for (j, o) in out_row.iter_mut().enumerate() {
                    let b_row = &b[j * k..(j + 1) * k];
                    let mut acc = 0.0;
                    for (&x, &y) in a_row.iter().zip(b_row) {
                        acc += x * y;
                    }
                    *o += acc;
                }
            }
        }
        (true, false) => {
            // C[i][j] = sum_l a[l][i] * b[l][j]
            debug_assert_eq!(a.len(), k * m);
            debug_assert_eq!(b.len(), k * n);
            for l in 0..k {
                let a_row = &a[l * m..(l + 1) * m];
                let b_row = &b[l * n..(l + 1) * n];
                for (i, &a_li) in a_row.iter().enumerate() {
                    if a_li != 0.0 {
                        let out_row = &mut out[i * n..(i + 1) * n];
                        for (o, &bv) in out_row.iter_mut().zip(b_row) {
                            *o += a_li * bv;
                        }
                    }
                }
            }
        }
        (true, true) => {
            // C = A^T B^T = (B A)^T
            debug_assert_eq!(a.len(), k * m);
            debug_assert_eq!(b.len(), n * k);
            let mut tmp = vec![0.0; n * m];
            matmul_acc(b, a, n, k, m, false, false, &mut tmp);
            for i in 0..m {
                for j in 0..n {
                    out[i * n + j] += tmp[j * m + i];
                }
            }
        }
    }
}

/// Fresh-output convenience wrapper around [`matmul_acc`].
pub fn matmul(
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    matmul_acc(a, b, m, k, n, ta, tb, &mut out);
    out
}
