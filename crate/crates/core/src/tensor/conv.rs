use super::{numel, Tensor};
use crate::error::{Error, Result};

fn dims4(t: &Tensor, op: &'static str) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        ref s => Err(Error::dim(op, format!("expected N×C×H×W, got {s:?}"))),
    }
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn conv_geom(input: &[usize], kernel: &[usize], op: &'static str) -> Result<ConvGeom> {
    let (&[n, c, h, w], &[o, kc, kh, kw]) = (input, kernel) else {
        return Err(Error::shapes(op, input, kernel));
    };
    if c != kc {
        return Err(Error::dim(
            op,
            format!("input {input:?} has {c} channels but kernel {kernel:?} expects {kc}"),
        ));
    }
    if h < kh || w < kw {
        return Err(Error::dim(
            op,
            format!("input {input:?} is smaller than the {kh}×{kw} kernel"),
        ));
    }
    Ok(ConvGeom {
        n,
        c,
        h,
        w,
        o,
        kh,
        kw,
        ho: h - kh + 1,
        wo: w - kw + 1,
    })
}

/// Valid, stride-1 cross-correlation: `input: N×C×H×W`, `kernel: O×C×kh×kw`
/// gives `N×O×(H−kh+1)×(W−kw+1)`. Each output sums over channel, then
/// kernel row, then kernel column.
pub fn conv2d(input: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let g = conv_geom(input.shape(), kernel.shape(), "conv2d")?;
    let (x, k) = (input.data(), kernel.data());
    let (in_plane, out_plane) = (g.h * g.w, g.ho * g.wo);
    let mut out = vec![0.0; g.n * g.o * out_plane];
    for n in 0..g.n {
        for o in 0..g.o {
            let dst = &mut out[(n * g.o + o) * out_plane..][..out_plane];
            for c in 0..g.c {
                let src = &x[(n * g.c + c) * in_plane..][..in_plane];
                let taps = &k[(o * g.c + c) * g.kh * g.kw..][..g.kh * g.kw];
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let wgt = taps[ki * g.kw + kj];
                        for i in 0..g.ho {
                            let s = &src[(i + ki) * g.w + kj..][..g.wo];
                            let d = &mut dst[i * g.wo..][..g.wo];
                            for (dv, &sv) in d.iter_mut().zip(s) {
                                *dv += wgt * sv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![g.n, g.o, g.ho, g.wo], out))
}

/// Adjoint of [`conv2d`] with respect to its input.
pub fn conv2d_input_grad(out_grad: &Tensor, kernel: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let g = conv_geom(input_shape, kernel.shape(), "conv2d_input_grad")?;
    if out_grad.shape() != [g.n, g.o, g.ho, g.wo] {
        return Err(Error::shapes("conv2d_input_grad", out_grad.shape(), input_shape));
    }
    let (dy, k) = (out_grad.data(), kernel.data());
    let (in_plane, out_plane) = (g.h * g.w, g.ho * g.wo);
    let mut dx = vec![0.0; numel(input_shape)];
    for n in 0..g.n {
        for o in 0..g.o {
            let src = &dy[(n * g.o + o) * out_plane..][..out_plane];
            for c in 0..g.c {
                let dst = &mut dx[(n * g.c + c) * in_plane..][..in_plane];
                let taps = &k[(o * g.c + c) * g.kh * g.kw..][..g.kh * g.kw];
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let wgt = taps[ki * g.kw + kj];
                        for i in 0..g.ho {
                            let s = &src[i * g.wo..][..g.wo];
                            let d = &mut dst[(i + ki) * g.w + kj..][..g.wo];
                            for (dv, &sv) in d.iter_mut().zip(s) {
                                *dv += wgt * sv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), dx))
}

/// Adjoint of [`conv2d`] with respect to its kernel.
pub fn conv2d_kernel_grad(input: &Tensor, out_grad: &Tensor, kernel_shape: &[usize]) -> Result<Tensor> {
    let g = conv_geom(input.shape(), kernel_shape, "conv2d_kernel_grad")?;
    if out_grad.shape() != [g.n, g.o, g.ho, g.wo] {
        return Err(Error::shapes("conv2d_kernel_grad", out_grad.shape(), kernel_shape));
    }
    let (x, dy) = (input.data(), out_grad.data());
    let (in_plane, out_plane) = (g.h * g.w, g.ho * g.wo);
    let mut dk = vec![0.0; numel(kernel_shape)];
    for n in 0..g.n {
        for o in 0..g.o {
            let grad = &dy[(n * g.o + o) * out_plane..][..out_plane];
            for c in 0..g.c {
                let src = &x[(n * g.c + c) * in_plane..][..in_plane];
                let taps = &mut dk[(o * g.c + c) * g.kh * g.kw..][..g.kh * g.kw];
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let mut acc = 0.0;
                        for i in 0..g.ho {
                            let s = &src[(i + ki) * g.w + kj..][..g.wo];
                            let d = &grad[i * g.wo..][..g.wo];
                            acc += s.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
                        }
                        taps[ki * g.kw + kj] += acc;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(kernel_shape.to_vec(), dk))
}

/// Result of a 2×2, stride-2 max pool.
#[derive(Debug, Clone)]
pub struct MaxPool {
    pub output: Tensor,
    /// Flat index into the input of each window's winner.
    pub argmax: Vec<usize>,
}

/// 2×2 max pooling with stride 2. Ties go to the lowest flat index.
pub fn maxpool2d(input: &Tensor) -> Result<MaxPool> {
    let [n, c, h, w] = dims4(input, "maxpool2d")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim("maxpool2d", format!("odd spatial extent in {:?}", input.shape())));
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let top = base + 2 * i * w + 2 * j;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok(MaxPool {
        output: Tensor::from_parts(vec![n, c, ho, wo], out),
        argmax,
    })
}

/// Routes pooled adjoints back to the recorded winners.
pub fn maxpool2d_scatter(out_grad: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if out_grad.numel() != argmax.len() {
        return Err(Error::dim(
            "maxpool2d_scatter",
            format!("{} adjoints for {} windows", out_grad.numel(), argmax.len()),
        ));
    }
    let bound = numel(input_shape);
    let mut dx = vec![0.0; bound];
    for (&idx, &g) in argmax.iter().zip(out_grad.data()) {
        *dx.get_mut(idx).ok_or(Error::Index {
            op: "maxpool2d_scatter",
            index: idx,
            bound,
        })? += g;
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), dx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use proptest::prelude::*;

    fn conv_oracle(x: &Tensor, k: &Tensor) -> Vec<f64> {
        let [n, c, h, w] = dims4(x, "").unwrap();
        let [o, _, kh, kw] = dims4(k, "").unwrap();
        let (ho, wo) = (h - kh + 1, w - kw + 1);
        let (xd, kd) = (x.data(), k.data());
        let mut out = vec![0.0; n * o * ho * wo];
        for b in 0..n {
            for oc in 0..o {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut s = 0.0;
                        for ic in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    s += xd[((b * c + ic) * h + i + ki) * w + j + kj]
                                        * kd[((oc * c + ic) * kh + ki) * kw + kj];
                                }
                            }
                        }
                        out[((b * o + oc) * ho + i) * wo + j] = s;
                    }
                }
            }
        }
        out
    }

    fn pool_oracle(x: &Tensor) -> (Vec<f64>, Vec<usize>) {
        let [n, c, h, w] = dims4(x, "").unwrap();
        let d = x.data();
        let (mut vals, mut idxs) = (vec![], vec![]);
        for p in 0..n * c {
            for i in (0..h).step_by(2) {
                for j in (0..w).step_by(2) {
                    let cands = [(i, j), (i, j + 1), (i + 1, j), (i + 1, j + 1)];
                    let mut best = p * h * w + i * w + j;
                    for (a, b) in cands {
                        let idx = p * h * w + a * w + b;
                        if d[idx] > d[best] {
                            best = idx;
                        }
                    }
                    vals.push(d[best]);
                    idxs.push(best);
                }
            }
        }
        (vals, idxs)
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
    }

    #[test]
    fn ones_give_nine() {
        let y = conv2d(&Tensor::ones(&[1, 1, 3, 3]), &Tensor::ones(&[1, 1, 3, 3])).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn zero_kernel_gives_zero() {
        let mut rng = RngState::new(0);
        let x = Tensor::randn(&mut rng, &[2, 2, 5, 5]);
        let y = conv2d(&x, &Tensor::zeros(&[3, 2, 3, 3])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_2x3x8x8_matches_loops() {
        let mut rng = RngState::new(1);
        let x = Tensor::randn(&mut rng, &[2, 3, 8, 8]);
        let k = Tensor::randn(&mut rng, &[4, 3, 3, 3]);
        let y = conv2d(&x, &k).unwrap();
        assert_eq!(y.shape(), &[2, 4, 6, 6]);
        assert!(close(y.data(), &conv_oracle(&x, &k)));
    }

    #[test]
    fn too_small_or_mismatched_input() {
        assert!(conv2d(&Tensor::zeros(&[1, 1, 2, 5]), &Tensor::zeros(&[1, 1, 3, 3])).is_err());
        assert!(conv2d(&Tensor::zeros(&[1, 2, 5, 5]), &Tensor::zeros(&[1, 1, 3, 3])).is_err());
    }

    #[test]
    fn pool_single_window() {
        let x = Tensor::from_slice(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = maxpool2d(&x).unwrap();
        assert_eq!(p.output.data(), &[4.0]);
        assert_eq!(p.argmax, vec![3]);
    }

    #[test]
    fn pool_ties_pick_first() {
        let p = maxpool2d(&Tensor::full(&[1, 1, 4, 4], 2.0)).unwrap();
        assert_eq!(p.argmax, vec![0, 2, 8, 10]);
    }

    #[test]
    fn pool_rejects_odd() {
        assert!(maxpool2d(&Tensor::zeros(&[1, 1, 3, 4])).is_err());
    }

    #[test]
    fn random_6x6_pool_matches_scan() {
        let mut rng = RngState::new(2);
        let x = Tensor::randn(&mut rng, &[1, 1, 6, 6]);
        let p = maxpool2d(&x).unwrap();
        let (v, i) = pool_oracle(&x);
        assert_eq!(p.output.data(), v.as_slice());
        assert_eq!(p.argmax, i);
    }

    #[test]
    fn scatter_routes_to_argmax() {
        let x = Tensor::from_slice(&[1, 1, 2, 2], &[1.0, 5.0, 3.0, 4.0]).unwrap();
        let p = maxpool2d(&x).unwrap();
        let dx = maxpool2d_scatter(&Tensor::full(&[1, 1, 1, 1], 7.0), &p.argmax, x.shape()).unwrap();
        assert_eq!(dx.data(), &[0.0, 7.0, 0.0, 0.0]);
    }

    // The adjoint kernels must satisfy <conv(x,k), dy> = <x, dx> = <k, dk>.
    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn conv_and_adjoints_match_oracles(
            n in 1usize..3, c in 1usize..3, o in 1usize..3,
            h in 3usize..7, w in 3usize..7, seed in any::<u64>()
        ) {
            let mut rng = RngState::new(seed);
            let x = Tensor::randn(&mut rng, &[n, c, h, w]);
            let k = Tensor::randn(&mut rng, &[o, c, 3, 3]);
            let y = conv2d(&x, &k).unwrap();
            prop_assert!(close(y.data(), &conv_oracle(&x, &k)));
            let dy = Tensor::randn(&mut rng, y.shape());
            let dx = conv2d_input_grad(&dy, &k, x.shape()).unwrap();
            let dk = conv2d_kernel_grad(&x, &dy, k.shape()).unwrap();
            let lhs = y.dot(&dy).unwrap();
            prop_assert!((lhs - x.dot(&dx).unwrap()).abs() <= 1e-10 * (1.0 + lhs.abs()));
            prop_assert!((lhs - k.dot(&dk).unwrap()).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }

        #[test]
        fn pool_matches_scan(n in 1usize..3, c in 1usize..3, h in 1usize..4, w in 1usize..4, seed in any::<u64>()) {
            let mut rng = RngState::new(seed);
            let x = Tensor::randn(&mut rng, &[n, c, 2 * h, 2 * w]);
            let p = maxpool2d(&x).unwrap();
            let (v, i) = pool_oracle(&x);
            prop_assert_eq!(p.output.data(), v.as_slice());
            prop_assert_eq!(p.argmax, i);
        }
    }
}
