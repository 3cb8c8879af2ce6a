//! Raw convolution and window kernels shared by the forward and backward passes.
//!
//! Layout is `[batch, channels, height, width]`; convolutions are stride 1 with
//! zero padding `k / 2`, so odd kernels preserve the spatial size.

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvDims {
    fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Output index ranges `[lo, hi)` valid for a kernel offset `d` on an axis of length `len`.
    fn span(d: isize, len: usize) -> (usize, usize) {
        let lo = if d < 0 { (-d) as usize } else { 0 };
        let hi = if d > 0 {
            len.saturating_sub(d as usize)
        } else {
            len
        };
        (lo, hi.max(lo))
    }

    fn offsets(&self, ky: usize, kx: usize) -> (isize, isize) {
        (
            ky as isize - (self.kh / 2) as isize,
            kx as isize - (self.kw / 2) as isize,
        )
    }
}

pub(crate) fn conv2d_forward(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    d: ConvDims,
) -> alloc::vec::Vec<f64> {
    let hw = d.plane();
    let mut out = alloc::vec![0.0; d.batch * d.c_out * hw];
    for b in 0..d.batch {
        for o in 0..d.c_out {
            let oplane = &mut out[(b * d.c_out + o) * hw..(b * d.c_out + o + 1) * hw];
            if let Some(bias) = bias {
                oplane.fill(bias[o]);
            }
            for i in 0..d.c_in {
                let iplane = &x[(b * d.c_in + i) * hw..(b * d.c_in + i + 1) * hw];
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        let wv = w[((o * d.c_in + i) * d.kh + ky) * d.kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (dy, dx) = d.offsets(ky, kx);
                        let (y0, y1) = ConvDims::span(dy, d.height);
                        let (x0, x1) = ConvDims::span(dx, d.width);
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let sx0 = (x0 as isize + dx) as usize;
                            let orow = &mut oplane[y * d.width + x0..y * d.width + x1];
                            let irow = &iplane[sy * d.width + sx0..sy * d.width + sx0 + (x1 - x0)];
                            for (o, &iv) in orow.iter_mut().zip(irow) {
                                *o += wv * iv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a convolution with respect to its input, weights and bias.
pub(crate) fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    d: ConvDims,
    gx: &mut [f64],
    gw: &mut [f64],
    gb: Option<&mut [f64]>,
) {
    let hw = d.plane();
    if let Some(gb) = gb {
        for b in 0..d.batch {
            for o in 0..d.c_out {
                gb[o] += g[(b * d.c_out + o) * hw..(b * d.c_out + o + 1) * hw]
                    .iter()
                    .sum::<f64>();
            }
        }
    }
    for b in 0..d.batch {
        for o in 0..d.c_out {
            let gplane = &g[(b * d.c_out + o) * hw..(b * d.c_out + o + 1) * hw];
            for i in 0..d.c_in {
                let ibase = (b * d.c_in + i) * hw;
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        let widx = ((o * d.c_in + i) * d.kh + ky) * d.kw + kx;
                        let wv = w[widx];
                        let (dy, dx) = d.offsets(ky, kx);
                        let (y0, y1) = ConvDims::span(dy, d.height);
                        let (x0, x1) = ConvDims::span(dx, d.width);
                        let len = x1 - x0;
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let sx0 = (x0 as isize + dx) as usize;
                            let grow = &gplane[y * d.width + x0..y * d.width + x1];
                            let src = ibase + sy * d.width + sx0;
                            let irow = &x[src..src + len];
                            acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                            if wv != 0.0 {
                                let gxrow = &mut gx[src..src + len];
                                for (gxv, &gv) in gxrow.iter_mut().zip(grow) {
                                    *gxv += wv * gv;
                                }
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
}

/// Mean over every `win×win` window fully inside each plane.
pub(crate) fn box_mean_forward(
    x: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    win: usize,
) -> alloc::vec::Vec<f64> {
    let (oh, ow) = (h - win + 1, w - win + 1);
    let scale = 1.0 / (win * win) as f64;
    let mut out = alloc::vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let plane = &x[p * h * w..(p + 1) * h * w];
        // Horizontal running sums, then vertical.
        let mut rows = alloc::vec![0.0; h * ow];
        for y in 0..h {
            let r = &plane[y * w..(y + 1) * w];
            let mut s: f64 = r[..win].iter().sum();
            rows[y * ow] = s;
            for x0 in 1..ow {
                s += r[x0 + win - 1] - r[x0 - 1];
                rows[y * ow + x0] = s;
            }
        }
        let o = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y0 in 0..oh {
            for x0 in 0..ow {
                let mut s = 0.0;
                for u in 0..win {
                    s += rows[(y0 + u) * ow + x0];
                }
                o[y0 * ow + x0] = s * scale;
            }
        }
    }
    out
}

pub(crate) fn box_mean_backward(
    g: &[f64],
    gx: &mut [f64],
    planes: usize,
    h: usize,
    w: usize,
    win: usize,
) {
    let (oh, ow) = (h - win + 1, w - win + 1);
    let scale = 1.0 / (win * win) as f64;
    for p in 0..planes {
        let gp = &g[p * oh * ow..(p + 1) * oh * ow];
        let gxp = &mut gx[p * h * w..(p + 1) * h * w];
        for y0 in 0..oh {
            for x0 in 0..ow {
                let v = gp[y0 * ow + x0] * scale;
                for u in 0..win {
                    for gxv in &mut gxp[(y0 + u) * w + x0..(y0 + u) * w + x0 + win] {
                        *gxv += v;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn naive_conv(x: &[f64], w: &[f64], bias: &[f64], d: ConvDims) -> Vec<f64> {
        let mut out = vec![0.0; d.batch * d.c_out * d.height * d.width];
        let (ph, pw) = ((d.kh / 2) as isize, (d.kw / 2) as isize);
        for b in 0..d.batch {
            for o in 0..d.c_out {
                for y in 0..d.height {
                    for xx in 0..d.width {
                        let mut s = bias[o];
                        for i in 0..d.c_in {
                            for ky in 0..d.kh {
                                for kx in 0..d.kw {
                                    let sy = y as isize + ky as isize - ph;
                                    let sx = xx as isize + kx as isize - pw;
                                    if sy < 0
                                        || sx < 0
                                        || sy >= d.height as isize
                                        || sx >= d.width as isize
                                    {
                                        continue;
                                    }
                                    s += w[((o * d.c_in + i) * d.kh + ky) * d.kw + kx]
                                        * x[((b * d.c_in + i) * d.height + sy as usize) * d.width
                                            + sx as usize];
                                }
                            }
                        }
                        out[((b * d.c_out + o) * d.height + y) * d.width + xx] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let d = ConvDims {
            batch: 2,
            c_in: 3,
            c_out: 2,
            height: 5,
            width: 4,
            kh: 3,
            kw: 3,
        };
        let x: Vec<f64> = (0..2 * 3 * 20)
            .map(|i| ((i * 37 % 11) as f64) - 5.0)
            .collect();
        let w: Vec<f64> = (0..2 * 3 * 9)
            .map(|i| ((i * 13 % 7) as f64) * 0.1 - 0.3)
            .collect();
        let bias = [0.5, -0.25];
        let got = conv2d_forward(&x, &w, Some(&bias), d);
        let want = naive_conv(&x, &w, &bias, d);
        assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn box_mean_matches_direct() {
        let x: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let out = box_mean_forward(&x, 1, 5, 6, 3);
        for y in 0..3 {
            for xx in 0..4 {
                let mut s = 0.0;
                for u in 0..3 {
                    for v in 0..3 {
                        s += x[(y + u) * 6 + xx + v];
                    }
                }
                assert!((out[y * 4 + xx] - s / 9.0).abs() < 1e-14);
            }
        }
    }
}
