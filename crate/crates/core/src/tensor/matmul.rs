use super::Tensor;
use crate::error::{Error, Result};

fn matrix_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::dim(op, format!("expected a matrix, got {s:?}"))),
    }
}

/// Register tile: `MR` rows of `a` against an `NR`-wide panel of `b`.
const MR: usize = 4;
const NR: usize = 4;

/// Copies columns `j..j+NR` of `b` (`k×p`) into a contiguous `k×NR` panel,
/// zero-padding past column `p`.
fn pack_panel(b: &[f64], k: usize, p: usize, j: usize, panel: &mut [f64]) {
    let cols = NR.min(p - j);
    for kk in 0..k {
        let dst = &mut panel[kk * NR..][..NR];
        dst[..cols].copy_from_slice(&b[kk * p + j..][..cols]);
        dst[cols..].fill(0.0);
    }
}

/// Writes `a · b` into `out` (`m×p`). Every output element is accumulated
/// as `Σ_k a[i,k]·b[k,j]` in increasing `k`, whatever the tiling, so results
/// are reproducible bit for bit.
fn gemm(m: usize, k: usize, p: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    let mut panel = vec![0.0; k * NR];
    for j in (0..p).step_by(NR) {
        let cols = NR.min(p - j);
        pack_panel(b, k, p, j, &mut panel);
        for i in (0..m).step_by(MR) {
            let rows = MR.min(m - i);
            let mut acc = [[0.0; NR]; MR];
            if rows == MR {
                let a_rows: [&[f64]; MR] = std::array::from_fn(|r| &a[(i + r) * k..][..k]);
                for (kk, bv) in panel.chunks_exact(NR).enumerate() {
                    let bv: &[f64; NR] = bv.try_into().expect("panel width");
                    for r in 0..MR {
                        let av = a_rows[r][kk];
                        for c in 0..NR {
                            acc[r][c] += av * bv[c];
                        }
                    }
                }
            } else {
                for r in 0..rows {
                    let a_row = &a[(i + r) * k..][..k];
                    for (&av, bv) in a_row.iter().zip(panel.chunks_exact(NR)) {
                        let bv: &[f64; NR] = bv.try_into().expect("panel width");
                        for c in 0..NR {
                            acc[r][c] += av * bv[c];
                        }
                    }
                }
            }
            for r in 0..rows {
                out[(i + r) * p + j..][..cols].copy_from_slice(&acc[r][..cols]);
            }
        }
    }
}

fn transposed(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (i, row) in data.chunks_exact(cols).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[j * rows + i] = v;
        }
    }
    out
}

/// `a · b` for `a: m×k`, `b: k×p`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = matrix_dims(a, "matmul")?;
    let (k2, p) = matrix_dims(b, "matmul")?;
    if k != k2 {
        return Err(Error::shapes("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * p];
    gemm(m, k, p, a.data(), b.data(), &mut out);
    Ok(Tensor::from_parts(vec![m, p], out))
}

/// `aᵀ · b` for `a: k×m`, `b: k×p`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = matrix_dims(a, "matmul_tn")?;
    let (k2, p) = matrix_dims(b, "matmul_tn")?;
    if k != k2 {
        return Err(Error::shapes("matmul_tn", a.shape(), b.shape()));
    }
    let at = transposed(a.data(), k, m);
    let mut out = vec![0.0; m * p];
    gemm(m, k, p, &at, b.data(), &mut out);
    Ok(Tensor::from_parts(vec![m, p], out))
}

/// `a · bᵀ` for `a: m×k`, `b: p×k`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = matrix_dims(a, "matmul_nt")?;
    let (p, k2) = matrix_dims(b, "matmul_nt")?;
    if k != k2 {
        return Err(Error::shapes("matmul_nt", a.shape(), b.shape()));
    }
    let bt = transposed(b.data(), p, k);
    let mut out = vec![0.0; m * p];
    gemm(m, k, p, a.data(), &bt, &mut out);
    Ok(Tensor::from_parts(vec![m, p], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use proptest::prelude::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            for j in 0..p {
                let mut s = 0.0;
                for r in 0..k {
                    s += a[i * k + r] * b[r * p + j];
                }
                out[i * p + j] = s;
            }
        }
        out
    }

    fn transpose(t: &Tensor) -> Tensor {
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let d = t.data();
        let data = (0..c).flat_map(|j| (0..r).map(move |i| d[i * c + j])).collect();
        Tensor::from_parts(vec![c, r], data)
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn identity_and_hand_cases() {
        let x = Tensor::from_slice(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&Tensor::eye(2), &x).unwrap(), x);
        let a = Tensor::from_slice(&[1, 2], &[1.0, 2.0]).unwrap();
        let b = Tensor::from_slice(&[2, 1], &[3.0, 4.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn random_5x4_by_4x3() {
        let mut rng = RngState::new(5);
        let a = Tensor::randn(&mut rng, &[5, 4]);
        let b = Tensor::randn(&mut rng, &[4, 3]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[5, 3]);
        assert_close(c.data(), &naive(a.data(), b.data(), 5, 4, 3), 1e-12);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("lhs") && msg.contains("rhs"), "{msg}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn kernels_match_triple_loop(m in 1usize..7, k in 1usize..7, p in 1usize..7, seed in any::<u64>()) {
            let mut rng = RngState::new(seed);
            let a = Tensor::randn(&mut rng, &[m, k]);
            let b = Tensor::randn(&mut rng, &[k, p]);
            let expected = naive(a.data(), b.data(), m, k, p);
            assert_close(matmul(&a, &b).unwrap().data(), &expected, 1e-12);
            assert_close(matmul_tn(&transpose(&a), &b).unwrap().data(), &expected, 1e-12);
            assert_close(matmul_nt(&a, &transpose(&b)).unwrap().data(), &expected, 1e-12);
        }
    }
}
