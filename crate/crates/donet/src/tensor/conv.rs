//! 3x3 convolution kernels (forward and backward), zero padding.

use crate::error::{Error, Result};

const K: usize = 3;

pub(crate) fn validate(xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> Result<()> {
    if xs.len() != 4 || ws.len() != 4 || ws[2] != K || ws[3] != K {
        return Err(Error::invalid(format!(
            "conv2d needs x [N,C,H,W] and w [F,C,3,3], got {xs:?} and {ws:?}"
        )));
    }
    if xs[1] != ws[1] {
        return Err(Error::invalid(format!("conv2d channel mismatch: input {} vs kernel {}", xs[1], ws[1])));
    }
    if !matches!(stride, 1 | 2) || pad > 1 {
        return Err(Error::invalid(format!("conv2d supports stride in {{1,2}} and pad in {{0,1}}, got stride {stride} pad {pad}")));
    }
    if xs[2] + 2 * pad < K || xs[3] + 2 * pad < K {
        return Err(Error::invalid(format!("conv2d input {}x{} too small for a 3x3 kernel with pad {pad}", xs[2], xs[3])));
    }
    Ok(())
}

pub(crate) fn out_hw(h: usize, w: usize, stride: usize, pad: usize) -> (usize, usize) {
    ((h + 2 * pad - K) / stride + 1, (w + 2 * pad - K) / stride + 1)
}

pub(crate) fn forward(
    x: &[f64],
    xs: &[usize],
    w: &[f64],
    ws: &[usize],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let f = ws[0];
    let (ho, wo) = out_hw(h, wd, stride, pad);
    let mut out = vec![0.0; n * f * ho * wo];
    for ni in 0..n {
        for fi in 0..f {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..K {
                            let iy = oy * stride + ky;
                            if iy < pad || iy - pad >= h {
                                continue;
                            }
                            for kx in 0..K {
                                let ix = ox * stride + kx;
                                if ix < pad || ix - pad >= wd {
                                    continue;
                                }
                                let xi = ((ni * c + ci) * h + (iy - pad)) * wd + (ix - pad);
                                let wi = ((fi * c + ci) * K + ky) * K + kx;
                                acc += x[xi] * w[wi];
                            }
                        }
                    }
                    out[((ni * f + fi) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (out, vec![n, f, ho, wo])
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    d: &[f64],
    x: &[f64],
    xs: &[usize],
    w: &[f64],
    ws: &[usize],
    stride: usize,
    pad: usize,
    dx: &mut [f64],
    dw: &mut [f64],
) {
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let f = ws[0];
    let (ho, wo) = out_hw(h, wd, stride, pad);
    for ni in 0..n {
        for fi in 0..f {
            for oy in 0..ho {
                for ox in 0..wo {
                    let g = d[((ni * f + fi) * ho + oy) * wo + ox];
                    if g == 0.0 {
                        continue;
                    }
                    for ci in 0..c {
                        for ky in 0..K {
                            let iy = oy * stride + ky;
                            if iy < pad || iy - pad >= h {
                                continue;
                            }
                            for kx in 0..K {
                                let ix = ox * stride + kx;
                                if ix < pad || ix - pad >= wd {
                                    continue;
                                }
                                let xi = ((ni * c + ci) * h + (iy - pad)) * wd + (ix - pad);
                                let wi = ((fi * c + ci) * K + ky) * K + kx;
                                dx[xi] += g * w[wi];
                                dw[wi] += g * x[xi];
                            }
                        }
                    }
                }
            }
        }
    }
}
