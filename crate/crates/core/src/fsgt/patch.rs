//! Window partition and merge between feature maps and node matrices.
//!
//! Windows are taken in row-major order over the (zero-padded) grid; inside a
//! window the node vector runs over rows, then columns, then channels. Merging
//! crops the padding again, so `merge(partition(x)) = x` exactly.

use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::fsgt::spec::AttentionSpec;
use crate::numerics::autodiff::{Tape, Var, PAD};
use crate::numerics::tensor::Tensor;

/// Memory order of a single `H×W×C` feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// `[H, W, C]`.
    ChannelsLast,
    /// `[C, H, W]`, as inside the networks.
    ChannelsFirst,
}

fn flat(layout: Layout, (h, w, c): (usize, usize, usize), y: usize, x: usize, ch: usize) -> usize {
    match layout {
        Layout::ChannelsLast => (y * w + x) * c + ch,
        Layout::ChannelsFirst => (ch * h + y) * w + x,
    }
}

/// For each entry of the `[N, h·w·c]` node matrix, its source offset in the map.
pub fn partition_index(
    spec: &AttentionSpec,
    dims: (usize, usize, usize),
    layout: Layout,
) -> Vec<usize> {
    let (mh, mw, c) = dims;
    let (gh, gw) = spec.grid(mh, mw);
    let (ph, pw) = (spec.patch_h, spec.patch_w);
    let mut index = Vec::with_capacity(gh * gw * ph * pw * c);
    for gy in 0..gh {
        for gx in 0..gw {
            for r in 0..ph {
                for q in 0..pw {
                    let (y, x) = (gy * ph + r, gx * pw + q);
                    for ch in 0..c {
                        index.push(if y < mh && x < mw {
                            flat(layout, dims, y, x, ch)
                        } else {
                            PAD
                        });
                    }
                }
            }
        }
    }
    index
}

/// For each entry of the map, its source offset in the node matrix.
pub fn merge_index(
    spec: &AttentionSpec,
    dims: (usize, usize, usize),
    layout: Layout,
) -> Vec<usize> {
    let (mh, mw, c) = dims;
    let (_, gw) = spec.grid(mh, mw);
    let (ph, pw) = (spec.patch_h, spec.patch_w);
    let f = ph * pw * c;
    let mut index = alloc::vec![0; mh * mw * c];
    for y in 0..mh {
        for x in 0..mw {
            let node = (y / ph) * gw + x / pw;
            for ch in 0..c {
                let feat = ((y % ph) * pw + x % pw) * c + ch;
                index[flat(layout, dims, y, x, ch)] = node * f + feat;
            }
        }
    }
    index
}

fn check_channels(spec: &AttentionSpec, c: usize, shape: &[usize]) -> Result<()> {
    if spec.channels != c {
        return Err(shape_err("patch channels", &[spec.channels], shape));
    }
    Ok(())
}

/// Cuts an `H×W×C` map into `N = ⌈H/h⌉·⌈W/w⌉` nodes of length `h·w·c`.
pub fn patch_partition(map: &Tensor, spec: &AttentionSpec) -> Result<Tensor> {
    let &[mh, mw, c] = map.shape() else {
        return Err(shape_err(
            "patch_partition",
            map.shape(),
            &[0, 0, spec.channels],
        ));
    };
    check_channels(spec, c, map.shape())?;
    let index = partition_index(spec, (mh, mw, c), Layout::ChannelsLast);
    let data = index
        .iter()
        .map(|&i| if i == PAD { 0.0 } else { map.data()[i] })
        .collect();
    Tensor::new(&[spec.num_nodes(mh, mw), spec.node_dim()], data)
}

/// Inverse of [`patch_partition`] for an `out_dims = (H, W, C)` map.
pub fn patch_merge(
    nodes: &Tensor,
    spec: &AttentionSpec,
    out_dims: (usize, usize, usize),
) -> Result<Tensor> {
    let (mh, mw, c) = out_dims;
    check_channels(spec, c, nodes.shape())?;
    let want = [spec.num_nodes(mh, mw), spec.node_dim()];
    if nodes.shape() != want {
        return Err(shape_err("patch_merge", nodes.shape(), &want));
    }
    let index = merge_index(spec, out_dims, Layout::ChannelsLast);
    let data = index.iter().map(|&i| nodes.data()[i]).collect();
    Tensor::new(&[mh, mw, c], data)
}

/// Nodes of image `b` of a `[B, C, H, W]` tape value.
pub fn partition_on_tape(tape: &mut Tape, x: Var, b: usize, spec: &AttentionSpec) -> Result<Var> {
    let &[batch, c, mh, mw] = tape.shape(x) else {
        return Err(shape_err(
            "partition",
            tape.shape(x),
            &[0, spec.channels, 0, 0],
        ));
    };
    check_channels(spec, c, tape.shape(x))?;
    if b >= batch {
        return Err(shape_err("partition batch index", &[b], &[batch]));
    }
    let offset = b * c * mh * mw;
    let index = partition_index(spec, (mh, mw, c), Layout::ChannelsFirst)
        .into_iter()
        .map(|i| if i == PAD { PAD } else { i + offset })
        .collect();
    tape.gather(x, index, &[spec.num_nodes(mh, mw), spec.node_dim()])
}

/// Merges a node matrix back into a `[1, C, H, W]` tape value.
pub fn merge_on_tape(
    tape: &mut Tape,
    nodes: Var,
    spec: &AttentionSpec,
    mh: usize,
    mw: usize,
) -> Result<Var> {
    let c = spec.channels;
    let want = [spec.num_nodes(mh, mw), spec.node_dim()];
    if tape.shape(nodes) != want {
        return Err(shape_err("merge", tape.shape(nodes), &want));
    }
    let index = merge_index(spec, (mh, mw, c), Layout::ChannelsFirst);
    tape.gather(nodes, index, &[1, c, mh, mw])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn spec(ph: usize, pw: usize, c: usize) -> AttentionSpec {
        AttentionSpec {
            patch_h: ph,
            patch_w: pw,
            channels: c,
            heads: 1,
            head_cutoffs: alloc::vec![0],
            model_dim: 1,
        }
    }

    #[test]
    fn one_by_one_patches_are_pixels() {
        let map = Tensor::new(&[2, 2, 1], alloc::vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let nodes = patch_partition(&map, &spec(1, 1, 1)).unwrap();
        assert_eq!(nodes.shape(), &[4, 1]);
        assert_eq!(nodes.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn top_left_block_is_node_zero() {
        let map = Tensor::new(&[4, 4, 1], (0..16).map(f64::from).collect()).unwrap();
        let nodes = patch_partition(&map, &spec(2, 2, 1)).unwrap();
        assert_eq!(nodes.shape(), &[4, 4]);
        assert_eq!(nodes.row(0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(nodes.row(1), &[2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn round_trips() {
        let mut r = rng::stream(0, 91);
        let x = Tensor::randn(&[8, 8, 3], &mut r);
        for s in [spec(2, 2, 3), spec(1, 1, 3), spec(8, 8, 3), spec(3, 5, 3)] {
            let nodes = patch_partition(&x, &s).unwrap();
            assert_eq!(patch_merge(&nodes, &s, (8, 8, 3)).unwrap(), x);
        }
        assert_eq!(
            patch_partition(&x, &spec(8, 8, 3)).unwrap().shape(),
            &[1, 192]
        );
    }

    #[test]
    fn padding_is_zero() {
        let x = Tensor::ones(&[3, 3, 1]);
        let nodes = patch_partition(&x, &spec(2, 2, 1)).unwrap();
        assert_eq!(nodes.row(3), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(nodes.sum(), 9.0);
    }

    #[test]
    fn merge_rejects_wrong_node_count() {
        let nodes = Tensor::zeros(&[3, 4]);
        assert!(matches!(
            patch_merge(&nodes, &spec(2, 2, 1), (4, 4, 1)),
            Err(crate::Error::Shape { .. })
        ));
    }

    #[test]
    fn tape_layout_agrees_with_channels_last() {
        let mut r = rng::stream(1, 92);
        let s = spec(2, 3, 2);
        let chw = Tensor::randn(&[2, 2, 5, 6], &mut r);
        let mut tape = Tape::new();
        let x = tape.leaf(chw.clone());
        let nodes = partition_on_tape(&mut tape, x, 1, &s).unwrap();
        // Same image in [H, W, C] order.
        let mut hwc = Tensor::zeros(&[5, 6, 2]);
        for ch in 0..2 {
            for y in 0..5 {
                for xx in 0..6 {
                    hwc.data_mut()[(y * 6 + xx) * 2 + ch] = chw.data()[60 + (ch * 5 + y) * 6 + xx];
                }
            }
        }
        assert_eq!(tape.value(nodes), &patch_partition(&hwc, &s).unwrap());
        let merged = merge_on_tape(&mut tape, nodes, &s, 5, 6).unwrap();
        assert_eq!(tape.value(merged).data(), &chw.data()[60..]);
    }
}
