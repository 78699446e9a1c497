//! Sort plans: permutations of spatial positions plus their exact inverses.

use crate::error::{Error, Result};
use crate::tensor::{argsort_stable, invert_perm, IndexArray, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Granularity {
    Pixel,
    Patch,
}

/// A permutation of positions and its inverse, applied with gather/scatter.
#[derive(Clone, Debug)]
pub struct SortPlan {
    pub perm: IndexArray,
    pub inv: IndexArray,
    pub granularity: Granularity,
    pub patch: Option<usize>,
}

impl SortPlan {
    /// inv[perm[i]] == i for every slice.
    pub fn is_consistent(&self) -> bool {
        let l = self.perm.slice_len();
        (0..self.perm.n_slices()).all(|s| {
            let p = self.perm.slice(s);
            let inv = self.inv.slice(s);
            (0..l).all(|i| inv[p[i] as usize] as usize == i)
        })
    }
}

/// Per-channel ascending stable permutation of a (C, L) key matrix.
pub fn pixel_sort_plan<T: Scalar>(keys: &Tensor<T>) -> Result<SortPlan> {
    if keys.shape().len() != 2 {
        return Err(Error::Config(format!(
            "pixel_sort_plan: expected flattened (C, HW) keys, got {:?}",
            keys.shape()
        )));
    }
    let perm = argsort_stable(keys)?;
    let inv = invert_perm(&perm);
    Ok(SortPlan { perm, inv, granularity: Granularity::Pixel, patch: None })
}

/// Patch-level plan over a (C,H,W) key map.
///
/// One key per patch — the mean of channel-mean pixel keys inside it —
/// then whole patches are reordered in raster order of ascending key, with
/// pixels keeping their relative raster order inside each patch. The
/// permutation is expressed at pixel resolution (single shared slice), so
/// gather/scatter apply directly.
pub fn patch_sort_plan<T: Scalar>(keys: &Tensor<T>, patch: usize) -> Result<SortPlan> {
    if keys.shape().len() != 3 {
        return Err(Error::Config(format!(
            "patch_sort_plan: expected (C,H,W) keys, got {:?}",
            keys.shape()
        )));
    }
    let (c, h, w) = (keys.shape()[0], keys.shape()[1], keys.shape()[2]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Config(format!(
            "patch_sort_plan: spatial {h}x{w} not divisible by patch {patch}"
        )));
    }
    let (py, px) = (h / patch, w / patch);
    let kd = keys.data();
    let hw = h * w;
    let inv_c = 1.0 / c as f64;
    let inv_pp = 1.0 / (patch * patch) as f64;
    let mut patch_keys = vec![0.0f64; py * px];
    for ch in 0..c {
        let plane = &kd[ch * hw..(ch + 1) * hw];
        for (i, &v) in plane.iter().enumerate() {
            let (y, x) = (i / w, i % w);
            patch_keys[(y / patch) * px + (x / patch)] += v.as_f64();
        }
    }
    for k in patch_keys.iter_mut() {
        *k *= inv_c * inv_pp;
    }
    drop(kd);

    let pk = Tensor::<T>::from_f64_slice(vec![py * px], &patch_keys, false);
    let patch_order = argsort_stable(&pk)?;

    let mut perm = vec![0u32; hw];
    for (dst_slot, &src_slot) in patch_order.data.iter().enumerate() {
        let (dy, dx) = (dst_slot / px, dst_slot % px);
        let (sy, sx) = (src_slot as usize / px, src_slot as usize % px);
        for iy in 0..patch {
            for ix in 0..patch {
                let dst = (dy * patch + iy) * w + dx * patch + ix;
                let src = (sy * patch + iy) * w + sx * patch + ix;
                perm[dst] = src as u32;
            }
        }
    }
    let perm = IndexArray::new(vec![hw], perm);
    let inv = invert_perm(&perm);
    Ok(SortPlan { perm, inv, granularity: Granularity::Patch, patch: Some(patch) })
}
