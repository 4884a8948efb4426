use crate::{Error, Image, Result};

/// Mean absolute error over every sample of every image in the batch,
/// with gradient `sign(u - t) / count` (`sign(0) = 0`).
pub fn l1_loss(u: &[Image], t: &[Image]) -> Result<(f64, Vec<Image>)> {
    if u.len() != t.len() || u.is_empty() {
        return Err(Error::Shape(format!("l1 loss over {} outputs and {} targets", u.len(), t.len())));
    }
    let mut count = 0usize;
    for (a, b) in u.iter().zip(t) {
        a.ensure_same_shape(b, "l1 loss")?;
        count += a.data().len();
    }
    let norm = 1.0 / count as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(u.len());
    for (a, b) in u.iter().zip(t) {
        let mut g = Vec::with_capacity(a.data().len());
        for (x, y) in a.data().iter().zip(b.data()) {
            let d = x - y;
            total += d.abs();
            g.push(if d > 0.0 { norm } else if d < 0.0 { -norm } else { 0.0 });
        }
        grads.push(Image::new(a.height(), a.width(), a.channels(), g)?);
    }
    Ok((total * norm, grads))
}
