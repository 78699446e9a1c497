//! Stable argsort and permutation gather/scatter along the last axis.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Permutation indices for one or many slices.
///
/// `shape` is either `[L]` (one permutation shared by every slice) or the
/// full shape of the tensors it applies to (independent permutation per
/// leading slice).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexArray {
    pub shape: Vec<usize>,
    pub data: Vec<u32>,
}

impl IndexArray {
    pub fn new(shape: Vec<usize>, data: Vec<u32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        IndexArray { shape, data }
    }

    pub fn slice_len(&self) -> usize {
        *self.shape.last().expect("empty IndexArray shape")
    }

    pub fn n_slices(&self) -> usize {
        self.data.len() / self.slice_len()
    }

    pub fn slice(&self, i: usize) -> &[u32] {
        let l = self.slice_len();
        &self.data[i * l..(i + 1) * l]
    }
}

/// Ascending stable argsort along the last axis. Ties keep their original
/// order, so equal keys yield the identity arrangement. NaN keys are
/// rejected.
pub fn argsort_stable<T: Scalar>(keys: &Tensor<T>) -> Result<IndexArray> {
    let shape = keys.shape().to_vec();
    let l = *shape.last().expect("argsort on rank-0 tensor");
    let rows = keys.numel() / l;
    let kd = keys.data();
    if kd.iter().any(|v| v.is_nan()) {
        return Err(Error::Input("argsort_stable: NaN key".into()));
    }
    let mut out = Vec::with_capacity(rows * l);
    let mut idx: Vec<u32> = (0..l as u32).collect();
    for r in 0..rows {
        let row = &kd[r * l..(r + 1) * l];
        for (i, v) in idx.iter_mut().enumerate() {
            *v = i as u32;
        }
        // Stable sort by key; ties resolved by original index.
        idx.sort_by(|&a, &b| {
            row[a as usize]
                .partial_cmp(&row[b as usize])
                .expect("NaN checked above")
        });
        out.extend_from_slice(&idx);
    }
    Ok(IndexArray::new(shape, out))
}

/// Exact inverse permutation: `inv[perm[i]] == i` per slice.
pub fn invert_perm(perm: &IndexArray) -> IndexArray {
    let l = perm.slice_len();
    let mut out = vec![0u32; perm.data.len()];
    for s in 0..perm.n_slices() {
        let src = perm.slice(s);
        let dst = &mut out[s * l..(s + 1) * l];
        for (i, &p) in src.iter().enumerate() {
            dst[p as usize] = i as u32;
        }
    }
    IndexArray::new(perm.shape.clone(), out)
}

fn check_idx<T: Scalar>(x: &Tensor<T>, idx: &IndexArray, op: &str) -> Result<(usize, usize, bool)> {
    let l = *x.shape().last().unwrap();
    let rows = x.numel() / l;
    if idx.slice_len() != l {
        return Err(Error::Config(format!(
            "{op}: index slice length {} != tensor last axis {l}",
            idx.slice_len()
        )));
    }
    let shared = idx.shape.len() == 1;
    if !shared && idx.shape != x.shape() {
        return Err(Error::Config(format!(
            "{op}: index shape {:?} matches neither [L] nor tensor shape {:?}",
            idx.shape,
            x.shape()
        )));
    }
    if idx.data.iter().any(|&v| v as usize >= l) {
        return Err(Error::Input(format!("{op}: index out of range for axis length {l}")));
    }
    Ok((rows, l, shared))
}

/// out[..., i] = x[..., idx[i]]. The backward pass scatters the upstream
/// gradient with the same indices; indices themselves are constants.
pub fn gather_last<T: Scalar>(x: &Tensor<T>, idx: &IndexArray) -> Result<Tensor<T>> {
    let (rows, l, shared) = check_idx(x, idx, "gather_axis")?;
    let xd = x.data();
    let mut out = vec![T::zero(); rows * l];
    for r in 0..rows {
        let src = &xd[r * l..(r + 1) * l];
        let dst = &mut out[r * l..(r + 1) * l];
        let ids = if shared { idx.slice(0) } else { idx.slice(r) };
        for (o, &i) in dst.iter_mut().zip(ids) {
            *o = src[i as usize];
        }
    }
    drop(xd);
    let idx_b = idx.clone();
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |g, parents| {
            let mut gx = vec![T::zero(); rows * l];
            for r in 0..rows {
                let ids = if shared { idx_b.slice(0) } else { idx_b.slice(r) };
                let grow = &g[r * l..(r + 1) * l];
                let gxrow = &mut gx[r * l..(r + 1) * l];
                for (pos, &i) in ids.iter().enumerate() {
                    gxrow[i as usize] += grow[pos];
                }
            }
            parents[0].accum_grad(&gx);
        }),
    ))
}

/// out[..., idx[i]] = x[..., i]; the exact inverse of [`gather_last`] for a
/// permutation index.
pub fn scatter_last<T: Scalar>(x: &Tensor<T>, idx: &IndexArray) -> Result<Tensor<T>> {
    let (rows, l, shared) = check_idx(x, idx, "scatter_axis")?;
    let xd = x.data();
    let mut out = vec![T::zero(); rows * l];
    for r in 0..rows {
        let src = &xd[r * l..(r + 1) * l];
        let dst = &mut out[r * l..(r + 1) * l];
        let ids = if shared { idx.slice(0) } else { idx.slice(r) };
        for (pos, &i) in ids.iter().enumerate() {
            dst[i as usize] = src[pos];
        }
    }
    drop(xd);
    let idx_b = idx.clone();
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |g, parents| {
            let mut gx = vec![T::zero(); rows * l];
            for r in 0..rows {
                let ids = if shared { idx_b.slice(0) } else { idx_b.slice(r) };
                let grow = &g[r * l..(r + 1) * l];
                let gxrow = &mut gx[r * l..(r + 1) * l];
                for (pos, &i) in ids.iter().enumerate() {
                    gxrow[pos] = grow[i as usize];
                }
            }
            parents[0].accum_grad(&gx);
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argsort_examples() {
        let k = Tensor::<f64>::new(vec![3], vec![0.3, 0.1, 0.2], false);
        assert_eq!(argsort_stable(&k).unwrap().data, vec![1, 2, 0]);
        let k = Tensor::<f64>::new(vec![3], vec![0.2, 0.1, 0.2], false);
        assert_eq!(argsort_stable(&k).unwrap().data, vec![1, 0, 2]);
        let k = Tensor::<f64>::new(vec![4], vec![1.0, 2.0, 3.0, 4.0], false);
        assert_eq!(argsort_stable(&k).unwrap().data, vec![0, 1, 2, 3]);
    }

    #[test]
    fn argsort_rejects_nan() {
        let k = Tensor::<f64>::new(vec![2], vec![0.0, f64::NAN], false);
        assert!(argsort_stable(&k).is_err());
    }

    #[test]
    fn gather_example_and_roundtrip() {
        let x = Tensor::<f64>::new(vec![3], vec![10.0, 20.0, 30.0], false);
        let idx = IndexArray::new(vec![3], vec![2, 0, 1]);
        let y = gather_last(&x, &idx).unwrap();
        assert_eq!(y.to_vec(), vec![30.0, 10.0, 20.0]);
        let back = scatter_last(&y, &idx).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
        // And the other composition order.
        let s = scatter_last(&x, &idx).unwrap();
        let forth = gather_last(&s, &idx).unwrap();
        assert_eq!(forth.to_vec(), x.to_vec());
    }

    #[test]
    fn gather_gradient_is_permuted_ones_for_sum() {
        let x = Tensor::<f64>::new(vec![4], vec![4.0, 3.0, 2.0, 1.0], true);
        let idx = IndexArray::new(vec![4], vec![3, 1, 0, 2]);
        gather_last(&x, &idx).unwrap().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn out_of_range_index_is_error() {
        let x = Tensor::<f64>::new(vec![3], vec![1.0, 2.0, 3.0], false);
        let idx = IndexArray::new(vec![3], vec![0, 1, 3]);
        assert!(gather_last(&x, &idx).is_err());
    }

    #[test]
    fn per_slice_permutations() {
        let x = Tensor::<f64>::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], false);
        let idx = IndexArray::new(vec![2, 3], vec![2, 1, 0, 0, 2, 1]);
        let y = gather_last(&x, &idx).unwrap();
        assert_eq!(y.to_vec(), vec![3.0, 2.0, 1.0, 4.0, 6.0, 5.0]);
    }

    #[test]
    fn inverse_relation() {
        let k = Tensor::<f64>::new(vec![5], vec![0.5, 0.1, 0.9, 0.3, 0.2], false);
        let perm = argsort_stable(&k).unwrap();
        let inv = invert_perm(&perm);
        for i in 0..5 {
            assert_eq!(inv.data[perm.data[i] as usize], i as u32);
        }
    }
}
