#![allow(dead_code, clippy::needless_range_loop)]

use arfa_core::metrics::GAUSSIAN_11;
use arfa_core::nn::ConvSpec;
use arfa_core::{Prng, Tensor};

/// Direct nested-loop convolution in f64.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, spec: ConvSpec) -> Tensor<f64> {
    let (n, h, wd) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    let (cout, cin_g, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let cout_g = cout / spec.groups;
    let (s, p) = (spec.stride, spec.padding as isize);
    let oh = (h + 2 * spec.padding - k) / s + 1;
    let ow = (wd + 2 * spec.padding - k) / s + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for bi in 0..n {
        for co in 0..cout {
            let g = co / cout_g;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co];
                    for ci in 0..cin_g {
                        let c = g * cin_g + ci;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p;
                                let ix = (ox * s + kx) as isize - p;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.get(&[bi, c, iy as usize, ix as usize]) * w.get(&[co, ci, ky, kx]);
                            }
                        }
                    }
                    out[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[n, cout, oh, ow], out).unwrap()
}

/// Adjoints of [`naive_conv`] by scattering every multiply-add.
pub fn naive_conv_backward(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    dy: &Tensor<f64>,
    spec: ConvSpec,
) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, cin_g, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let cout_g = cout / spec.groups;
    let (oh, ow) = (dy.shape()[2], dy.shape()[3]);
    let (s, p) = (spec.stride, spec.padding as isize);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; cout];
    for bi in 0..n {
        for co in 0..cout {
            let g = co / cout_g;
            for oy in 0..oh {
                for ox in 0..ow {
                    let d = dy.get(&[bi, co, oy, ox]);
                    db[co] += d;
                    for ci in 0..cin_g {
                        let c = g * cin_g + ci;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p;
                                let ix = (ox * s + kx) as isize - p;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xi = ((bi * cin + c) * h + iy as usize) * wd + ix as usize;
                                let wi = ((co * cin_g + ci) * k + ky) * k + kx;
                                dx[xi] += d * w.data()[wi];
                                dw[wi] += d * x.data()[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), dx).unwrap(),
        Tensor::from_vec(w.shape(), dw).unwrap(),
        Tensor::from_vec(&[cout], db).unwrap(),
    )
}

/// Mean SSIM of one plane, recomputing every window's moments from the
/// full 2-D Gaussian weights.
pub fn naive_ssim(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..=h - 11 {
        for j in 0..=w - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for a in 0..11 {
                for b in 0..11 {
                    let g = GAUSSIAN_11[a] * GAUSSIAN_11[b];
                    mx += g * x[(i + a) * w + j + b];
                    my += g * y[(i + a) * w + j + b];
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for a in 0..11 {
                for b in 0..11 {
                    let g = GAUSSIAN_11[a] * GAUSSIAN_11[b];
                    let dx = x[(i + a) * w + j + b] - mx;
                    let dy = y[(i + a) * w + j + b] - my;
                    vx += g * dx * dx;
                    vy += g * dy * dy;
                    cov += g * dx * dy;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// A random convolution case with `k ∈ {1, 3, 9, 11}`, stride 1, same
/// padding and `groups ∈ {1, C}`.
pub struct ConvCase {
    pub x: Tensor<f32>,
    pub w: Tensor<f32>,
    pub b: Tensor<f32>,
    pub spec: ConvSpec,
}

pub fn random_conv_case(rng: &mut Prng) -> ConvCase {
    let k = [1, 3, 9, 11][rng.next_below(4) as usize];
    let c = 1 + rng.next_below(6) as usize;
    let depthwise = rng.next_below(2) == 1;
    let (groups, cout) = if depthwise { (c, c) } else { (1, 1 + rng.next_below(6) as usize) };
    let h = 1 + rng.next_below(14) as usize;
    let wd = 1 + rng.next_below(14) as usize;
    let n = 1 + rng.next_below(2) as usize;
    let bound = (1.0 / ((c / groups) * k * k) as f64).sqrt();
    ConvCase {
        x: Tensor::uniform(&[n, c, h, wd], -1.0, 1.0, rng).unwrap(),
        w: Tensor::uniform(&[cout, c / groups, k, k], -bound, bound, rng).unwrap(),
        b: Tensor::uniform(&[cout], -1.0, 1.0, rng).unwrap(),
        spec: ConvSpec::same(k, groups),
    }
}

pub fn max_abs_diff_f32_f64(a: &Tensor<f32>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max)
}
