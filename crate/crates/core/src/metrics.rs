//! MSE, MAE, PSNR and SSIM over frame sequences `[B, N, C, H, W]`.
//!
//! MSE and MAE are per-frame pixel sums averaged over frames; per-pixel
//! means are reported alongside.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Normalized 11-tap Gaussian, σ = 1.5.
pub const GAUSSIAN_11: [f64; 11] = [
    0.00102838008447911,
    0.007598758135239185,
    0.03600077212843083,
    0.10936068950970002,
    0.2130055377112537,
    0.26601172486179436,
    0.2130055377112537,
    0.10936068950970002,
    0.03600077212843083,
    0.007598758135239185,
    0.00102838008447911,
];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair<T: Scalar>(op: &'static str, pred: &Tensor<T>, target: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch { op, left: pred.shape().to_vec(), right: target.shape().to_vec() });
    }
    match *pred.shape() {
        [b, n, c, h, w] => Ok((b, n, c, h, w)),
        _ => Err(Error::InvalidShape { shape: pred.shape().to_vec(), reason: "expected [B, N, C, H, W]" }),
    }
}

fn frames<T: Scalar>(t: &Tensor<T>, frame_len: usize) -> impl Iterator<Item = &[T]> {
    t.data().chunks(frame_len)
}

/// Frame-summed `(mse, mae)`.
pub fn mse_mae_framesum<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, f64)> {
    let (b, n, c, h, w) = check_pair("mse_mae_framesum", pred, target)?;
    let frame_len = c * h * w;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, t) in frames(pred, frame_len).zip(frames(target, frame_len)) {
        let (s, a) = frame_errors(p, t);
        se += s;
        ae += a;
    }
    let nf = (b * n) as f64;
    Ok((se / nf, ae / nf))
}

fn frame_errors<T: Scalar>(p: &[T], t: &[T]) -> (f64, f64) {
    p.iter().zip(t).fold((0.0, 0.0), |(s, a), (&p, &t)| {
        let d = p.as_f64() - t.as_f64();
        (s + d * d, a + d.abs())
    })
}

/// `10·log10(range² / mse)`; `+∞` when `mse == 0`.
pub fn psnr_from_mse(per_pixel_mse: f64, data_range: f64) -> f64 {
    if per_pixel_mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (data_range * data_range / per_pixel_mse).log10()
    }
}

/// Per-frame PSNR averaged over frames.
pub fn psnr<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, data_range: f64) -> Result<f64> {
    let (b, n, c, h, w) = check_pair("psnr", pred, target)?;
    if data_range.is_nan() || data_range <= 0.0 {
        return Err(Error::Config(format!("psnr data range must be > 0, got {data_range}")));
    }
    let frame_len = c * h * w;
    let total: f64 = frames(pred, frame_len)
        .zip(frames(target, frame_len))
        .map(|(p, t)| psnr_from_mse(frame_errors(p, t).0 / frame_len as f64, data_range))
        .sum();
    Ok(total / (b * n) as f64)
}

/// Mean local SSIM over valid 11×11 windows of one `h×w` plane.
pub fn ssim_plane<T: Scalar>(x: &[T], y: &[T], h: usize, w: usize, data_range: f64) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::geometry("ssim", format!("frame {h}×{w} is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window")));
    }
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);

    // five moment planes, filtered horizontally then vertically
    let mut rows = vec![[0.0f64; 5]; h * ow];
    for i in 0..h {
        for j in 0..ow {
            let mut m = [0.0; 5];
            for (k, g) in GAUSSIAN_11.iter().enumerate() {
                let a = x[i * w + j + k].as_f64();
                let b = y[i * w + j + k].as_f64();
                m[0] += g * a;
                m[1] += g * b;
                m[2] += g * a * a;
                m[3] += g * b * b;
                m[4] += g * a * b;
            }
            rows[i * ow + j] = m;
        }
    }
    let mut total = 0.0;
    for i in 0..oh {
        for j in 0..ow {
            let mut m = [0.0; 5];
            for (k, g) in GAUSSIAN_11.iter().enumerate() {
                let r = &rows[(i + k) * ow + j];
                for q in 0..5 {
                    m[q] += g * r[q];
                }
            }
            let [mx, my, xx, yy, xy] = m;
            let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (oh * ow) as f64)
}

/// Mean SSIM over frames and channels.
pub fn ssim<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, data_range: f64) -> Result<f64> {
    let (b, n, c, h, w) = check_pair("ssim", pred, target)?;
    let plane = h * w;
    let mut total = 0.0;
    for (p, t) in frames(pred, plane).zip(frames(target, plane)) {
        total += ssim_plane(p, t, h, w, data_range)?;
    }
    Ok(total / (b * n * c) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub mse: f64,
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub mse_per_pixel: f64,
    pub mae_per_pixel: f64,
    pub n_sequences: usize,
    pub n_frames: usize,
}

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

impl MetricsReport {
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("mse", fmt_f64(self.mse)),
            ("mae", fmt_f64(self.mae)),
            ("psnr", fmt_f64(self.psnr)),
            ("ssim", fmt_f64(self.ssim)),
            ("mse_per_pixel", format!("{:.9}", self.mse_per_pixel)),
            ("mae_per_pixel", format!("{:.9}", self.mae_per_pixel)),
            ("n_sequences", self.n_sequences.to_string()),
            ("n_frames", self.n_frames.to_string()),
        ]
    }

    /// One `name=value` per line.
    pub fn to_kv_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Space-separated `name=value` record on a single line.
impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pairs: Vec<String> = self.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&pairs.join(" "))
    }
}

/// Streams batches in sequence-major order and averages per frame.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    data_range: f64,
    se: f64,
    ae: f64,
    psnr: f64,
    ssim: f64,
    frames: usize,
    sequences: usize,
    frame_len: usize,
}

impl MetricsAccumulator {
    pub fn new(data_range: f64) -> Self {
        MetricsAccumulator { data_range, se: 0.0, ae: 0.0, psnr: 0.0, ssim: 0.0, frames: 0, sequences: 0, frame_len: 0 }
    }

    pub fn add<T: Scalar>(&mut self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
        let (b, n, c, h, w) = check_pair("metrics", pred, target)?;
        let frame_len = c * h * w;
        if self.frames > 0 && frame_len != self.frame_len {
            return Err(Error::Config(format!("frame size changed from {} to {frame_len}", self.frame_len)));
        }
        self.frame_len = frame_len;
        let plane = h * w;
        for (p, t) in frames(pred, frame_len).zip(frames(target, frame_len)) {
            let (se, ae) = frame_errors(p, t);
            self.se += se;
            self.ae += ae;
            self.psnr += psnr_from_mse(se / frame_len as f64, self.data_range);
            let mut s = 0.0;
            for (pp, tp) in p.chunks(plane).zip(t.chunks(plane)) {
                s += ssim_plane(pp, tp, h, w, self.data_range)?;
            }
            self.ssim += s / c as f64;
        }
        self.frames += b * n;
        self.sequences += b;
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricsReport> {
        if self.frames == 0 {
            return Err(Error::Config("no frames were evaluated".into()));
        }
        let nf = self.frames as f64;
        let (mse, mae) = (self.se / nf, self.ae / nf);
        Ok(MetricsReport {
            mse,
            mae,
            psnr: self.psnr / nf,
            ssim: self.ssim / nf,
            mse_per_pixel: mse / self.frame_len as f64,
            mae_per_pixel: mae / self.frame_len as f64,
            n_sequences: self.sequences,
            n_frames: self.frames,
        })
    }
}

pub fn evaluate_pair<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, data_range: f64) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::new(data_range);
    acc.add(pred, target)?;
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    #[test]
    fn gaussian_constants() {
        let raw: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
        let s: f64 = raw.iter().sum();
        for (g, r) in GAUSSIAN_11.iter().zip(&raw) {
            assert!((g - r / s).abs() < 1e-12);
        }
        assert!((GAUSSIAN_11.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn framesum_fixture() {
        let pred = Tensor::<f64>::full(&[1, 1, 1, 2, 2], 0.5).unwrap();
        let target = Tensor::zeros(&[1, 1, 1, 2, 2]).unwrap();
        assert_eq!(mse_mae_framesum(&pred, &target).unwrap(), (1.0, 2.0));
        assert_eq!(mse_mae_framesum(&pred, &pred).unwrap(), (0.0, 0.0));
        assert!(mse_mae_framesum(&pred, &Tensor::zeros(&[1, 1, 2, 2]).unwrap()).is_err());
    }

    #[test]
    fn psnr_values() {
        assert_eq!(psnr_from_mse(0.01, 1.0), 20.0);
        assert!((psnr_from_mse(1.5849e-4, 1.0) - 38.0).abs() < 1e-3);
        let x = Tensor::<f64>::full(&[1, 2, 1, 4, 4], 0.3).unwrap();
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
        let y = x.map(|v| v + 0.1);
        assert!((psnr(&x, &y, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&x, &y, 0.0).is_err());
    }

    #[test]
    fn ssim_identities() {
        let mut rng = Prng::new(1);
        let x = Tensor::<f64>::uniform(&[2, 1, 1, 16, 16], 0.0, 1.0, &mut rng).unwrap();
        let y = Tensor::<f64>::uniform(&[2, 1, 1, 16, 16], 0.0, 1.0, &mut rng).unwrap();
        assert!((ssim(&x, &x, 1.0).unwrap() - 1.0).abs() < 1e-6);
        assert!((ssim(&x, &y, 1.0).unwrap() - ssim(&y, &x, 1.0).unwrap()).abs() < 1e-12);
        let bin = x.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        assert!(ssim(&bin, &bin.map(|v| 1.0 - v), 1.0).unwrap() < 0.0);
        let small = Tensor::<f64>::zeros(&[1, 1, 1, 10, 16]).unwrap();
        assert!(ssim(&small, &small, 1.0).is_err());
    }

    #[test]
    fn report_text() {
        let x = Tensor::<f32>::full(&[1, 1, 1, 12, 12], 0.5).unwrap();
        let r = evaluate_pair(&x, &x, 1.0).unwrap();
        assert_eq!(r.psnr, f64::INFINITY);
        assert!(r.to_kv_text().contains("psnr=inf\n"));
        assert_eq!(r.to_string().lines().count(), 1);
        let parsed = crate::kv::parse(&r.to_kv_text()).unwrap();
        assert_eq!(parsed.len(), 8);
    }
}
