use super::Image;
use crate::{Error, Result};

/// Side length of the uniform SSIM window.
pub const SSIM_WINDOW: usize = 8;
/// `(0.01 * 255)²`
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
/// `(0.03 * 255)²`
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Peak signal-to-noise ratio in dB for peak 255. Identical inputs give `+inf`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b, "psnr")?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

/// Mean SSIM over all 8x8 windows (stride 1, population moments), averaged
/// over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b, "ssim")?;
    let (h, w, c) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let mut total = 0.0;
    for ch in 0..c {
        total += ssim_plane(a.plane(ch), b.plane(ch), h, w);
    }
    Ok(total / c as f64)
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    // summed-area tables of a, b, a², b², ab
    let sw = w + 1;
    let mut tables = vec![[0.0f64; 5]; (h + 1) * sw];
    for y in 0..h {
        let mut row = [0.0f64; 5];
        for x in 0..w {
            let (p, q) = (a[y * w + x], b[y * w + x]);
            let vals = [p, q, p * p, q * q, p * q];
            for k in 0..5 {
                row[k] += vals[k];
                tables[(y + 1) * sw + x + 1][k] = tables[y * sw + x + 1][k] + row[k];
            }
        }
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..=h - SSIM_WINDOW {
        for x in 0..=w - SSIM_WINDOW {
            let (y1, x1) = (y + SSIM_WINDOW, x + SSIM_WINDOW);
            let mut s = [0.0f64; 5];
            for (k, sk) in s.iter_mut().enumerate() {
                *sk = tables[y1 * sw + x1][k] - tables[y * sw + x1][k] - tables[y1 * sw + x][k]
                    + tables[y * sw + x][k];
            }
            let (ma, mb) = (s[0] / n, s[1] / n);
            let va = (s[2] / n - ma * ma).max(0.0);
            let vb = (s[3] / n - mb * mb).max(0.0);
            let cov = s[4] / n - ma * mb;
            sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
        }
    }
    sum / count as f64
}

/// Bad matching percentage: share of samples with `|pred - truth| > delta`, in percent.
pub fn bmp(pred: &Image, truth: &Image, delta: f64) -> Result<f64> {
    pred.ensure_same_shape(truth, "bmp")?;
    let bad = pred.data().iter().zip(truth.data()).filter(|(p, t)| (*p - *t).abs() > delta).count();
    Ok(100.0 * bad as f64 / pred.data().len() as f64)
}

/// Quality of a restored image against ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    /// Only reported for depth tasks.
    pub bmp: Option<f64>,
}

impl MetricReport {
    pub fn compute(pred: &Image, truth: &Image, bmp_delta: Option<f64>) -> Result<Self> {
        Ok(Self {
            psnr: psnr(pred, truth)?,
            ssim: ssim(pred, truth)?,
            bmp: bmp_delta.map(|d| bmp(pred, truth, d)).transpose()?,
        })
    }

    pub const CSV_HEADER: &'static str = "psnr,ssim,bmp";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{}",
            self.psnr,
            self.ssim,
            self.bmp.map(|b| format!("{b:.6}")).unwrap_or_default()
        )
    }
}
