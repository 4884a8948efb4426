use super::Image;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    /// Keeps the top-left sample of every `factor x factor` block.
    NearestDown,
    /// Bilinear interpolation with half-pixel centers (align-corners false)
    /// and edge replication.
    BilinearUp,
}

pub fn resample(img: &Image, factor: usize, mode: Resample) -> Result<Image> {
    if factor == 0 {
        return Err(Error::InvalidArgument("resample factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (h, w, c) = img.shape();
    match mode {
        Resample::NearestDown => {
            if h % factor != 0 || w % factor != 0 {
                return Err(Error::InvalidArgument(format!(
                    "{h}x{w} is not divisible by factor {factor}"
                )));
            }
            let (oh, ow) = (h / factor, w / factor);
            let mut out = Image::zeros(oh, ow, c);
            for ch in 0..c {
                for y in 0..oh {
                    for x in 0..ow {
                        out.set(ch, y, x, img.get(ch, y * factor, x * factor));
                    }
                }
            }
            Ok(out)
        }
        Resample::BilinearUp => {
            let (oh, ow) = (h * factor, w * factor);
            let ys: Vec<(usize, usize, f64)> = (0..oh).map(|i| taps(i, factor, h)).collect();
            let xs: Vec<(usize, usize, f64)> = (0..ow).map(|i| taps(i, factor, w)).collect();
            let mut out = Image::zeros(oh, ow, c);
            for ch in 0..c {
                let src = img.plane(ch);
                let dst = out.plane_mut(ch);
                for (y, &(y0, y1, ty)) in ys.iter().enumerate() {
                    for (x, &(x0, x1, tx)) in xs.iter().enumerate() {
                        let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
                        let bot = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
                        dst[y * ow + x] = top * (1.0 - ty) + bot * ty;
                    }
                }
            }
            Ok(out)
        }
    }
}

fn taps(i: usize, factor: usize, n: usize) -> (usize, usize, f64) {
    let s = ((i as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, s - i0 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_one_is_identity() {
        let img = Image::from_fn(3, 5, |y, x| (y * 7 + x) as f64);
        assert_eq!(resample(&img, 1, Resample::NearestDown).unwrap(), img);
        assert_eq!(resample(&img, 1, Resample::BilinearUp).unwrap(), img);
    }

    #[test]
    fn nearest_down_takes_top_left() {
        let img = Image::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = resample(&img, 2, Resample::NearestDown).unwrap();
        assert_eq!(out.data(), &[1.0]);
    }

    #[test]
    fn indivisible_rejected() {
        let img = Image::zeros(5, 4, 1);
        assert!(resample(&img, 2, Resample::NearestDown).is_err());
    }

    #[test]
    fn constants_survive_round_trip() {
        let img = Image::filled(6, 4, 2, 17.5);
        let up = resample(&img, 2, Resample::BilinearUp).unwrap();
        assert!(up.data().iter().all(|&v| (v - 17.5).abs() < 1e-12));
        let down = resample(&up, 2, Resample::NearestDown).unwrap();
        assert!(down.data().iter().all(|&v| (v - 17.5).abs() < 1e-12));
    }

    #[test]
    fn bilinear_half_pixel_centers() {
        // 1-D ramp [0, 4] upsampled x2: centers at -0.25, 0.25, 0.75, 1.25 (clamped)
        let img = Image::new(1, 2, 1, vec![0.0, 4.0]).unwrap();
        let up = resample(&img, 2, Resample::BilinearUp).unwrap();
        assert_eq!(up.data(), &[0.0, 1.0, 3.0, 4.0, 0.0, 1.0, 3.0, 4.0]);
    }
}
