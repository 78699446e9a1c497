//! Segment-local transposed (channel×channel) attention.

use super::{Scalar, Tensor};
use rayon::prelude::*;

/// Multi-head transposed attention over contiguous segments of the last
/// axis.
///
/// `q`, `k`, `v` are (C, L); channels split into `heads` groups of
/// `d = C/heads`. Within every segment of `seg_len` positions the affinity
/// `A = softmax(scale·Q_s·K_sᵀ)` is a d×d matrix applied to `V_s`, so the
/// attention mixes channels, not positions. One op node covers all heads and
/// segments; the saved affinities drive the backward pass.
pub fn seg_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    seg_len: usize,
    scale: T,
) -> Tensor<T> {
    assert_eq!(q.shape(), k.shape(), "seg_attention q/k shape mismatch");
    assert_eq!(q.shape(), v.shape(), "seg_attention q/v shape mismatch");
    assert_eq!(q.shape().len(), 2, "seg_attention expects (C,L)");
    let (c, l) = (q.shape()[0], q.shape()[1]);
    assert!(heads > 0 && c % heads == 0, "channels {c} not divisible by heads {heads}");
    assert!(seg_len > 0 && l % seg_len == 0, "length {l} not divisible by segment {seg_len}");
    let d = c / heads;
    let segs = l / seg_len;

    let qref = q.data();
    let kref = k.data();
    let vref = v.data();
    let (qd, kd, vd): (&[T], &[T], &[T]) = (&qref, &kref, &vref);
    let mut out = vec![T::zero(); c * l];
    let mut attn = vec![T::zero(); heads * segs * d * d];
    out.par_chunks_mut(d * l)
        .zip(attn.par_chunks_mut(segs * d * d))
        .enumerate()
        .for_each(|(h, (ochunk, achunk))| {
            let base = h * d;
            let mut qs = vec![T::zero(); d * seg_len];
            let mut ks = vec![T::zero(); d * seg_len];
            let mut vs = vec![T::zero(); d * seg_len];
            for s in 0..segs {
                load_segment(qd, base, l, s, seg_len, d, &mut qs);
                load_segment(kd, base, l, s, seg_len, d, &mut ks);
                load_segment(vd, base, l, s, seg_len, d, &mut vs);
                let a = &mut achunk[s * d * d..(s + 1) * d * d];
                // A = softmax(scale · Q_s K_sᵀ) rows.
                for i in 0..d {
                    let qrow = &qs[i * seg_len..(i + 1) * seg_len];
                    let arow = &mut a[i * d..(i + 1) * d];
                    for j in 0..d {
                        let krow = &ks[j * seg_len..(j + 1) * seg_len];
                        let mut acc = T::zero();
                        for t in 0..seg_len {
                            acc += qrow[t] * krow[t];
                        }
                        arow[j] = acc * scale;
                    }
                    let mut m = arow[0];
                    for &val in arow.iter() {
                        if val > m {
                            m = val;
                        }
                    }
                    let mut sum = T::zero();
                    for val in arow.iter_mut() {
                        *val = (*val - m).exp();
                        sum += *val;
                    }
                    let inv = T::one() / sum;
                    for val in arow.iter_mut() {
                        *val *= inv;
                    }
                }
                // out_s = A · V_s, written back in strided layout.
                for i in 0..d {
                    let arow = &a[i * d..(i + 1) * d];
                    let orow = &mut ochunk[i * l + s * seg_len..i * l + (s + 1) * seg_len];
                    for (j, &av) in arow.iter().enumerate() {
                        let vrow = &vs[j * seg_len..(j + 1) * seg_len];
                        for t in 0..seg_len {
                            orow[t] += av * vrow[t];
                        }
                    }
                }
            }
        });
    drop(qref);
    drop(kref);
    drop(vref);

    Tensor::from_op(
        vec![c, l],
        out,
        vec![q.clone(), k.clone(), v.clone()],
        Box::new(move |g, parents| {
            let qd = parents[0].data().clone();
            let kd = parents[1].data().clone();
            let vd = parents[2].data().clone();
            let mut gq = vec![T::zero(); c * l];
            let mut gk = vec![T::zero(); c * l];
            let mut gv = vec![T::zero(); c * l];
            gq.par_chunks_mut(d * l)
                .zip(gk.par_chunks_mut(d * l))
                .zip(gv.par_chunks_mut(d * l))
                .enumerate()
                .for_each(|(h, ((gqc, gkc), gvc))| {
                    let base = h * d;
                    let mut qs = vec![T::zero(); d * seg_len];
                    let mut ks = vec![T::zero(); d * seg_len];
                    let mut vs = vec![T::zero(); d * seg_len];
                    let mut gs = vec![T::zero(); d * seg_len];
                    let mut da = vec![T::zero(); d * d];
                    let mut dz = vec![T::zero(); d * d];
                    for s in 0..segs {
                        load_segment(&qd, base, l, s, seg_len, d, &mut qs);
                        load_segment(&kd, base, l, s, seg_len, d, &mut ks);
                        load_segment(&vd, base, l, s, seg_len, d, &mut vs);
                        load_segment(g, base, l, s, seg_len, d, &mut gs);
                        let a = &attn[(h * segs + s) * d * d..(h * segs + s + 1) * d * d];
                        // dV_s = Aᵀ·dOut_s
                        for j in 0..d {
                            let gvrow = &mut gvc[j * l + s * seg_len..j * l + (s + 1) * seg_len];
                            for i in 0..d {
                                let av = a[i * d + j];
                                let grow = &gs[i * seg_len..(i + 1) * seg_len];
                                for t in 0..seg_len {
                                    gvrow[t] += av * grow[t];
                                }
                            }
                        }
                        // dA = dOut_s·V_sᵀ
                        for i in 0..d {
                            let grow = &gs[i * seg_len..(i + 1) * seg_len];
                            for j in 0..d {
                                let vrow = &vs[j * seg_len..(j + 1) * seg_len];
                                let mut acc = T::zero();
                                for t in 0..seg_len {
                                    acc += grow[t] * vrow[t];
                                }
                                da[i * d + j] = acc;
                            }
                        }
                        // Softmax backward per row, then scale.
                        for i in 0..d {
                            let arow = &a[i * d..(i + 1) * d];
                            let darow = &da[i * d..(i + 1) * d];
                            let mut dot = T::zero();
                            for j in 0..d {
                                dot += darow[j] * arow[j];
                            }
                            let dzrow = &mut dz[i * d..(i + 1) * d];
                            for j in 0..d {
                                dzrow[j] = arow[j] * (darow[j] - dot) * scale;
                            }
                        }
                        // dQ_s = dZ·K_s ; dK_s = dZᵀ·Q_s
                        for i in 0..d {
                            let dzrow = &dz[i * d..(i + 1) * d];
                            let gqrow = &mut gqc[i * l + s * seg_len..i * l + (s + 1) * seg_len];
                            for j in 0..d {
                                let kv = dzrow[j];
                                let krow = &ks[j * seg_len..(j + 1) * seg_len];
                                for t in 0..seg_len {
                                    gqrow[t] += kv * krow[t];
                                }
                            }
                        }
                        for j in 0..d {
                            let gkrow = &mut gkc[j * l + s * seg_len..j * l + (s + 1) * seg_len];
                            for i in 0..d {
                                let zv = dz[i * d + j];
                                let qrow = &qs[i * seg_len..(i + 1) * seg_len];
                                for t in 0..seg_len {
                                    gkrow[t] += zv * qrow[t];
                                }
                            }
                        }
                    }
                });
            parents[0].accum_grad(&gq);
            parents[1].accum_grad(&gk);
            parents[2].accum_grad(&gv);
        }),
    )
}

fn load_segment<T: Scalar>(
    src: &[T],
    base_row: usize,
    l: usize,
    s: usize,
    seg_len: usize,
    d: usize,
    dst: &mut [T],
) {
    for i in 0..d {
        let off = (base_row + i) * l + s * seg_len;
        dst[i * seg_len..(i + 1) * seg_len].copy_from_slice(&src[off..off + seg_len]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shape_matches_input() {
        let q = Tensor::<f64>::new(vec![4, 8], (0..32).map(|v| (v as f64).sin()).collect(), false);
        let k = Tensor::<f64>::new(vec![4, 8], (0..32).map(|v| (v as f64).cos()).collect(), false);
        let v = Tensor::<f64>::new(vec![4, 8], (0..32).map(|v| v as f64 * 0.1).collect(), false);
        let y = seg_attention(&q, &k, &v, 2, 4, 0.5);
        assert_eq!(y.shape(), &[4, 8]);
    }

    #[test]
    fn constant_qk_yields_uniform_mix() {
        // With constant Q and K every affinity row is uniform, so the output
        // is the per-segment channel mean of V within each head.
        let q = Tensor::<f64>::new(vec![2, 4], vec![1.0; 8], false);
        let k = Tensor::<f64>::new(vec![2, 4], vec![1.0; 8], false);
        let v = Tensor::<f64>::new(
            vec![2, 4],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            false,
        );
        let y = seg_attention(&q, &k, &v, 1, 4, 1.0).to_vec();
        for t in 0..4 {
            let mean = (v.to_vec()[t] + v.to_vec()[4 + t]) / 2.0;
            assert!((y[t] - mean).abs() < 1e-12);
            assert!((y[4 + t] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn single_channel_head_is_identity_on_v() {
        // d=1: softmax over a single logit is 1, so out == v.
        let q = Tensor::<f64>::new(vec![2, 6], (0..12).map(|v| v as f64).collect(), false);
        let k = q.clone();
        let v = Tensor::<f64>::new(vec![2, 6], (0..12).map(|v| v as f64 * -0.3).collect(), false);
        let y = seg_attention(&q, &k, &v, 2, 3, 1.0);
        assert_eq!(y.to_vec(), v.to_vec());
    }
}
