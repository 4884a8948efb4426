use super::{GradientField, Image};

/// Neumann forward differences of one plane. The last column of `dx` and the
/// last row of `dy` are zero.
pub fn gradient_plane(u: &[f64], height: usize, width: usize, dx: &mut [f64], dy: &mut [f64]) {
    debug_assert_eq!(u.len(), height * width);
    for y in 0..height {
        let row = &u[y * width..(y + 1) * width];
        let out = &mut dx[y * width..(y + 1) * width];
        for x in 0..width - 1 {
            out[x] = row[x + 1] - row[x];
        }
        out[width - 1] = 0.0;
    }
    for y in 0..height - 1 {
        for x in 0..width {
            dy[y * width + x] = u[(y + 1) * width + x] - u[y * width + x];
        }
    }
    dy[(height - 1) * width..].fill(0.0);
}

/// Exact adjoint of [`gradient_plane`] (negative divergence). Entries of `dx`
/// in the last column and of `dy` in the last row are outside the range of
/// the forward operator and are ignored.
pub fn gradient_adjoint_plane(dx: &[f64], dy: &[f64], height: usize, width: usize, out: &mut [f64]) {
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let mut s = 0.0;
            if x > 0 {
                s += dx[i - 1];
            }
            if x + 1 < width {
                s -= dx[i];
            }
            if y > 0 {
                s += dy[i - width];
            }
            if y + 1 < height {
                s -= dy[i];
            }
            out[i] = s;
        }
    }
}

pub fn gradient(img: &Image) -> GradientField {
    let (h, w, c) = img.shape();
    let mut g = GradientField::zeros(h, w, c);
    let n = h * w;
    for ch in 0..c {
        gradient_plane(
            img.plane(ch),
            h,
            w,
            &mut g.dx[ch * n..(ch + 1) * n],
            &mut g.dy[ch * n..(ch + 1) * n],
        );
    }
    g
}

pub fn gradient_adjoint(v: &GradientField) -> Image {
    let (h, w, c) = v.shape();
    let mut out = Image::zeros(h, w, c);
    for ch in 0..c {
        gradient_adjoint_plane(v.dx_plane(ch), v.dy_plane(ch), h, w, out.plane_mut(ch));
    }
    out
}

/// Circulant forward differences (wrap-around at the last row/column).
pub fn gradient_periodic(img: &Image) -> GradientField {
    let (h, w, c) = img.shape();
    let mut g = GradientField::zeros(h, w, c);
    let n = h * w;
    for ch in 0..c {
        let u = img.plane(ch);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                g.dx[ch * n + i] = u[y * w + (x + 1) % w] - u[i];
                g.dy[ch * n + i] = u[((y + 1) % h) * w + x] - u[i];
            }
        }
    }
    g
}

/// Adjoint of [`gradient_periodic`].
pub fn gradient_periodic_adjoint(v: &GradientField) -> Image {
    let (h, w, c) = v.shape();
    let mut out = Image::zeros(h, w, c);
    for ch in 0..c {
        let (dx, dy) = (v.dx_plane(ch), v.dy_plane(ch));
        let o = out.plane_mut(ch);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let left = y * w + (x + w - 1) % w;
                let up = ((y + h - 1) % h) * w + x;
                o[i] = dx[left] - dx[i] + dy[up] - dy[i];
            }
        }
    }
    out
}

/// Euclidean inner product of two equally sized slices.
pub fn inner(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| rng.random_range(0.0..255.0))
    }

    #[test]
    fn constant_image_has_zero_gradient() {
        let g = gradient(&Image::filled(5, 7, 2, 42.0));
        assert!(g.dx.iter().chain(&g.dy).all(|&v| v == 0.0));
    }

    #[test]
    fn one_by_two() {
        let img = Image::new(1, 2, 1, vec![0.0, 3.0]).unwrap();
        let g = gradient(&img);
        assert_eq!(g.dx, vec![3.0, 0.0]);
        assert_eq!(g.dy, vec![0.0, 0.0]);
    }

    #[test]
    fn adjoint_of_zero_is_zero() {
        let out = gradient_adjoint(&GradientField::zeros(4, 3, 1));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjoint_of_gradient_is_neumann_laplacian() {
        let u = random_image(8, 8, 3);
        let lap = gradient_adjoint(&gradient(&u));
        // 5-point stencil with reflected neighbours: degree * u - Σ neighbours
        for y in 0..8 {
            for x in 0..8 {
                let mut deg = 0.0;
                let mut nb = 0.0;
                for (dy, dx) in [(-1i32, 0i32), (1, 0), (0, -1), (0, 1)] {
                    let (yy, xx) = (y as i32 + dy, x as i32 + dx);
                    if (0..8).contains(&yy) && (0..8).contains(&xx) {
                        deg += 1.0;
                        nb += u.get(0, yy as usize, xx as usize);
                    }
                }
                let expect = deg * u.get(0, y, x) - nb;
                assert!((lap.get(0, y, x) - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn periodic_pair_is_adjoint() {
        let u = random_image(5, 6, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut v = GradientField::zeros(5, 6, 1);
        v.dx.iter_mut().chain(v.dy.iter_mut()).for_each(|s| *s = rng.random_range(-1.0..1.0));
        let g = gradient_periodic(&u);
        let lhs = inner(&g.dx, &v.dx) + inner(&g.dy, &v.dy);
        let rhs = inner(u.data(), gradient_periodic_adjoint(&v).data());
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }
}
