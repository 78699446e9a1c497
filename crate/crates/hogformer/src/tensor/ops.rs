//! Elementwise primitives, matmul, reductions and layout ops.

use super::{numel, Scalar, Tensor};

fn binary_same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        binary_same_shape(self, other, "add");
        let out: Vec<T> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&x, &y)| x + y)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                parents[0].accum_grad(g);
                parents[1].accum_grad(g);
            }),
        )
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        binary_same_shape(self, other, "sub");
        let out: Vec<T> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&x, &y)| x - y)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                parents[0].accum_grad(g);
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                parents[1].accum_grad(&neg);
            }),
        )
    }

    /// Hadamard product.
    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        binary_same_shape(self, other, "mul");
        let out: Vec<T> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&x, &y)| x * y)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                let a = parents[0].data().clone();
                let b = parents[1].data().clone();
                let ga: Vec<T> = g.iter().zip(b.iter()).map(|(&gv, &bv)| gv * bv).collect();
                let gb: Vec<T> = g.iter().zip(a.iter()).map(|(&gv, &av)| gv * av).collect();
                parents[0].accum_grad(&ga);
                parents[1].accum_grad(&gb);
            }),
        )
    }

    /// Elementwise division; the caller guarantees a nonzero denominator.
    pub fn div(&self, other: &Tensor<T>) -> Tensor<T> {
        binary_same_shape(self, other, "div");
        let out: Vec<T> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&x, &y)| x / y)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                let a = parents[0].data().clone();
                let b = parents[1].data().clone();
                let ga: Vec<T> = g.iter().zip(b.iter()).map(|(&gv, &bv)| gv / bv).collect();
                let gb: Vec<T> = g
                    .iter()
                    .zip(a.iter().zip(b.iter()))
                    .map(|(&gv, (&av, &bv))| -gv * av / (bv * bv))
                    .collect();
                parents[0].accum_grad(&ga);
                parents[1].accum_grad(&gb);
            }),
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        self.mul_scalar(-T::one())
    }

    pub fn add_scalar(&self, s: T) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|&x| x + s).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(|g, parents| parents[0].accum_grad(g)),
        )
    }

    pub fn mul_scalar(&self, s: T) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|&x| x * s).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let gs: Vec<T> = g.iter().map(|&v| v * s).collect();
                parents[0].accum_grad(&gs);
            }),
        )
    }

    /// |x|; subgradient 0 at the origin.
    pub fn abs(&self) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|&x| x.abs()).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(|g, parents| {
                let x = parents[0].data().clone();
                let gx: Vec<T> = g
                    .iter()
                    .zip(x.iter())
                    .map(|(&gv, &xv)| {
                        if xv > T::zero() {
                            gv
                        } else if xv < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                parents[0].accum_grad(&gx);
            }),
        )
    }

    /// Elementwise square root; inputs must stay positive for a finite
    /// gradient (callers add an epsilon under the root).
    pub fn sqrt(&self) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|&x| x.sqrt()).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out.clone(),
            vec![self.clone()],
            Box::new(move |g, parents| {
                let half = T::from_f64(0.5);
                let gx: Vec<T> = g.iter().zip(out.iter()).map(|(&gv, &yv)| gv * half / yv).collect();
                parents[0].accum_grad(&gx);
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let out: Vec<T> = self
            .data()
            .iter()
            .map(|&x| T::one() / (T::one() + (-x).exp()))
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out.clone(),
            vec![self.clone()],
            Box::new(move |g, parents| {
                let gx: Vec<T> = g
                    .iter()
                    .zip(out.iter())
                    .map(|(&gv, &yv)| gv * yv * (T::one() - yv))
                    .collect();
                parents[0].accum_grad(&gx);
            }),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor<T> {
        let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
        let a = T::from_f64(0.044_715);
        let half = T::from_f64(0.5);
        let out: Vec<T> = self
            .data()
            .iter()
            .map(|&x| {
                let t = (c * (x + a * x * x * x)).tanh();
                half * x * (T::one() + t)
            })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let x = parents[0].data().clone();
                let three = T::from_f64(3.0);
                let gx: Vec<T> = g
                    .iter()
                    .zip(x.iter())
                    .map(|(&gv, &xv)| {
                        let u = c * (xv + a * xv * xv * xv);
                        let t = u.tanh();
                        let du = c * (T::one() + three * a * xv * xv);
                        gv * (half * (T::one() + t) + half * xv * (T::one() - t * t) * du)
                    })
                    .collect();
                parents[0].accum_grad(&gx);
            }),
        )
    }

    /// atan2(self, other) elementwise, i.e. self is the y argument. Within
    /// x²+y² < 1e-16 of the origin the angle is pinned to 0 and the gradient
    /// to zero: the op is locally constant there, so value and derivative
    /// agree, and floating-point cancellation residues cannot make the
    /// angle jump by π.
    pub fn atan2(&self, other: &Tensor<T>) -> Tensor<T> {
        binary_same_shape(self, other, "atan2");
        let guard = T::from_f64(1e-16);
        let out: Vec<T> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&y, &x)| {
                if x * x + y * y < guard {
                    T::zero()
                } else {
                    y.atan2(x)
                }
            })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                let y = parents[0].data().clone();
                let x = parents[1].data().clone();
                let guard = T::from_f64(1e-16);
                let mut gy = vec![T::zero(); y.len()];
                let mut gx = vec![T::zero(); x.len()];
                for i in 0..y.len() {
                    let d = x[i] * x[i] + y[i] * y[i];
                    if d >= guard {
                        gy[i] = g[i] * x[i] / d;
                        gx[i] = -g[i] * y[i] / d;
                    }
                }
                parents[0].accum_grad(&gy);
                parents[1].accum_grad(&gx);
            }),
        )
    }

    /// Matrix product of 2-d tensors (m,k)·(k,n).
    pub fn matmul(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.shape().len(), 2, "matmul lhs must be 2-d");
        assert_eq!(other.shape().len(), 2, "matmul rhs must be 2-d");
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (other.shape()[0], other.shape()[1]);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let a = self.data();
        let b = other.data();
        let mut out = vec![T::zero(); m * n];
        matmul_kernel(&a, &b, &mut out, m, k, n);
        drop(a);
        drop(b);
        Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, parents| {
                let a = parents[0].data().clone();
                let b = parents[1].data().clone();
                // dA = G · Bᵀ
                let mut ga = vec![T::zero(); m * k];
                for i in 0..m {
                    for j in 0..k {
                        let mut acc = T::zero();
                        for t in 0..n {
                            acc += g[i * n + t] * b[j * n + t];
                        }
                        ga[i * k + j] = acc;
                    }
                }
                // dB = Aᵀ · G
                let mut gb = vec![T::zero(); k * n];
                for i in 0..k {
                    for t in 0..m {
                        let av = a[t * k + i];
                        let grow = &g[t * n..(t + 1) * n];
                        let brow = &mut gb[i * n..(i + 1) * n];
                        for j in 0..n {
                            brow[j] += av * grow[j];
                        }
                    }
                }
                parents[0].accum_grad(&ga);
                parents[1].accum_grad(&gb);
            }),
        )
    }

    /// Sum of all elements, as a shape-[1] tensor.
    pub fn sum_all(&self) -> Tensor<T> {
        let s: f64 = self.data().iter().map(|v| v.as_f64()).sum();
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            vec![T::from_f64(s)],
            vec![self.clone()],
            Box::new(move |g, parents| {
                let gs = vec![g[0]; n];
                parents[0].accum_grad(&gs);
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel();
        self.sum_all().mul_scalar(T::from_f64(1.0 / n as f64))
    }

    /// Mean over the leading (channel) axis: (C,H,W) → (1,H,W).
    pub fn mean_channels(&self) -> Tensor<T> {
        assert_eq!(self.shape().len(), 3, "mean_channels expects (C,H,W)");
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let hw = h * w;
        let x = self.data();
        let inv = T::from_f64(1.0 / c as f64);
        let mut out = vec![T::zero(); hw];
        for ch in 0..c {
            let row = &x[ch * hw..(ch + 1) * hw];
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o *= inv;
        }
        drop(x);
        Tensor::from_op(
            vec![1, h, w],
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut gx = vec![T::zero(); c * hw];
                for ch in 0..c {
                    for i in 0..hw {
                        gx[ch * hw + i] = g[i] * inv;
                    }
                }
                parents[0].accum_grad(&gx);
            }),
        )
    }

    /// Mean over the spatial axes: (C,H,W) → (C,1,1).
    pub fn mean_hw(&self) -> Tensor<T> {
        assert_eq!(self.shape().len(), 3, "mean_hw expects (C,H,W)");
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let hw = h * w;
        let inv = T::from_f64(1.0 / hw as f64);
        let x = self.data();
        let out: Vec<T> = (0..c)
            .map(|ch| {
                let s: f64 = x[ch * hw..(ch + 1) * hw].iter().map(|v| v.as_f64()).sum();
                T::from_f64(s) * inv
            })
            .collect();
        drop(x);
        Tensor::from_op(
            vec![c, 1, 1],
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut gx = vec![T::zero(); c * hw];
                for ch in 0..c {
                    let gv = g[ch] * inv;
                    for i in 0..hw {
                        gx[ch * hw + i] = gv;
                    }
                }
                parents[0].accum_grad(&gx);
            }),
        )
    }

    /// Expand singleton dims up to `target` (same rank); backward sums the
    /// expanded axes.
    pub fn broadcast_to(&self, target: &[usize]) -> Tensor<T> {
        let src = self.shape().to_vec();
        assert_eq!(src.len(), target.len(), "broadcast rank mismatch");
        for (s, t) in src.iter().zip(target) {
            assert!(s == t || *s == 1, "cannot broadcast {:?} to {:?}", src, target);
        }
        if src == target {
            return self.reshape(src);
        }
        let tgt = target.to_vec();
        let out = broadcast_copy(&self.data(), &src, &tgt);
        Tensor::from_op(
            tgt.clone(),
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let gx = broadcast_reduce(g, &src, &tgt);
                parents[0].accum_grad(&gx);
            }),
        )
    }

    /// Contiguous reinterpretation: same element count, new extents.
    pub fn reshape(&self, new_shape: Vec<usize>) -> Tensor<T> {
        assert_eq!(
            numel(&new_shape),
            self.numel(),
            "reshape {:?} -> {:?} changes element count",
            self.shape(),
            new_shape
        );
        Tensor::from_op(
            new_shape,
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, parents| parents[0].accum_grad(g)),
        )
    }

    /// Slice `len` entries starting at `start` along axis 0.
    pub fn narrow0(&self, start: usize, len: usize) -> Tensor<T> {
        let shape = self.shape().to_vec();
        assert!(start + len <= shape[0], "narrow0 out of range");
        let inner: usize = shape[1..].iter().product();
        let out = self.data()[start * inner..(start + len) * inner].to_vec();
        let mut out_shape = shape.clone();
        out_shape[0] = len;
        let total = shape[0] * inner;
        Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut gx = vec![T::zero(); total];
                gx[start * inner..(start + len) * inner].copy_from_slice(g);
                parents[0].accum_grad(&gx);
            }),
        )
    }

    /// Value of the scalar loss as f64.
    pub fn scalar_f64(&self) -> f64 {
        self.item().as_f64()
    }
}

/// Concatenate along axis 0; trailing dims must match.
pub fn concat0<T: Scalar>(parts: &[&Tensor<T>]) -> Tensor<T> {
    assert!(!parts.is_empty());
    let tail = parts[0].shape()[1..].to_vec();
    let inner: usize = tail.iter().product();
    let mut lead = 0;
    for p in parts {
        assert_eq!(&p.shape()[1..], &tail[..], "concat0 trailing dims differ");
        lead += p.shape()[0];
    }
    let mut out = Vec::with_capacity(lead * inner);
    for p in parts {
        out.extend_from_slice(&p.data());
    }
    let mut shape = vec![lead];
    shape.extend_from_slice(&tail);
    let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[0] * inner).collect();
    Tensor::from_op(
        shape,
        out,
        parts.iter().map(|p| (*p).clone()).collect(),
        Box::new(move |g, parents| {
            let mut off = 0;
            for (p, &sz) in parents.iter().zip(&sizes) {
                p.accum_grad(&g[off..off + sz]);
                off += sz;
            }
        }),
    )
}

/// Interleave two equal-shape tensors along axis 0: out[2i]=a[i],
/// out[2i+1]=b[i]. This is a 2-group channel shuffle of their stack.
pub fn interleave0<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.shape(), b.shape(), "interleave0 shape mismatch");
    let n0 = a.shape()[0];
    let inner: usize = a.shape()[1..].iter().product();
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![T::zero(); 2 * n0 * inner];
    for i in 0..n0 {
        out[(2 * i) * inner..(2 * i + 1) * inner]
            .copy_from_slice(&ad[i * inner..(i + 1) * inner]);
        out[(2 * i + 1) * inner..(2 * i + 2) * inner]
            .copy_from_slice(&bd[i * inner..(i + 1) * inner]);
    }
    drop(ad);
    drop(bd);
    let mut shape = a.shape().to_vec();
    shape[0] = 2 * n0;
    Tensor::from_op(
        shape,
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g, parents| {
            let mut ga = vec![T::zero(); n0 * inner];
            let mut gb = vec![T::zero(); n0 * inner];
            for i in 0..n0 {
                ga[i * inner..(i + 1) * inner]
                    .copy_from_slice(&g[(2 * i) * inner..(2 * i + 1) * inner]);
                gb[i * inner..(i + 1) * inner]
                    .copy_from_slice(&g[(2 * i + 1) * inner..(2 * i + 2) * inner]);
            }
            parents[0].accum_grad(&ga);
            parents[1].accum_grad(&gb);
        }),
    )
}

pub(crate) fn matmul_kernel<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (t, &av) in arow.iter().enumerate() {
            let brow = &b[t * n..(t + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

fn broadcast_copy<T: Scalar>(src: &[T], src_shape: &[usize], tgt_shape: &[usize]) -> Vec<T> {
    let rank = src_shape.len();
    let n = numel(tgt_shape);
    let src_strides = contiguous_strides(src_shape);
    let mut out = vec![T::zero(); n];
    let mut idx = vec![0usize; rank];
    for slot in out.iter_mut() {
        let mut off = 0;
        for d in 0..rank {
            let i = if src_shape[d] == 1 { 0 } else { idx[d] };
            off += i * src_strides[d];
        }
        *slot = src[off];
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < tgt_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

fn broadcast_reduce<T: Scalar>(g: &[T], src_shape: &[usize], tgt_shape: &[usize]) -> Vec<T> {
    let rank = src_shape.len();
    let src_strides = contiguous_strides(src_shape);
    let mut out = vec![T::zero(); numel(src_shape)];
    let mut idx = vec![0usize; rank];
    for &gv in g {
        let mut off = 0;
        for d in 0..rank {
            let i = if src_shape[d] == 1 { 0 } else { idx[d] };
            off += i * src_strides[d];
        }
        out[off] += gv;
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < tgt_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}
