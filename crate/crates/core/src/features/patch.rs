use super::BBox;
use crate::error::{Error, Result};
use crate::numkit::Tensor;

/// Half-open index range of the pixels whose centers (`i + 0.5`) lie in
/// `[lo, hi)`.
pub fn pixel_span(lo: f64, hi: f64, size: usize) -> (usize, usize) {
    let first = (lo - 0.5).ceil().max(0.0) as usize;
    let last = ((hi - 0.5).ceil().max(0.0) as usize).min(size);
    (first.min(last), last)
}

/// Grid of per-cell, per-channel `(mean, std)` over a box.
///
/// `stack` is `[H, W, C]` or `[H, W]` (one channel). The box is clamped to
/// the image; cells that contain no pixel center contribute zeros. Output
/// layout is cell-row major, then cell column, then channel, then
/// `(mean, std)`, for a total of `grid * grid * C * 2` values.
pub fn patch_feature(stack: &Tensor, bbox: &BBox, grid: usize) -> Result<Vec<f64>> {
    if grid == 0 {
        return Err(Error::Config("patch grid must be at least 1".into()));
    }
    let (h, w, c) = match *stack.dims() {
        [h, w] => (h, w, 1),
        [h, w, c] => (h, w, c),
        ref d => {
            return Err(Error::Dimension(format!(
                "channel stack must be rank 2 or 3, got {d:?}"
            )))
        }
    };
    let b = bbox.clamp(w, h)?;
    let (x0, x1) = pixel_span(b.x_min, b.x_max, w);
    let (y0, y1) = pixel_span(b.y_min, b.y_max, h);
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::Geometry(format!("box {bbox:?} covers no pixel center")));
    }
    let cell_w = b.width() / grid as f64;
    let cell_h = b.height() / grid as f64;
    let cell_of = |center: f64, origin: f64, size: f64| -> usize {
        (((center - origin) / size).floor().max(0.0) as usize).min(grid - 1)
    };
    let col_cell: Vec<usize> = (x0..x1).map(|x| cell_of(x as f64 + 0.5, b.x_min, cell_w)).collect();

    let cells = grid * grid;
    let mut count = vec![0usize; cells];
    let mut sum = vec![0.0; cells * c];
    let data = stack.data();
    for y in y0..y1 {
        let cy = cell_of(y as f64 + 0.5, b.y_min, cell_h);
        for (x, &cx) in (x0..x1).zip(&col_cell) {
            let cell = cy * grid + cx;
            count[cell] += 1;
            let px = &data[(y * w + x) * c..(y * w + x + 1) * c];
            for (s, v) in sum[cell * c..(cell + 1) * c].iter_mut().zip(px) {
                *s += v;
            }
        }
    }
    let mean: Vec<f64> = sum
        .iter()
        .enumerate()
        .map(|(i, s)| match count[i / c] {
            0 => 0.0,
            n => s / n as f64,
        })
        .collect();
    let mut sq = vec![0.0; cells * c];
    for y in y0..y1 {
        let cy = cell_of(y as f64 + 0.5, b.y_min, cell_h);
        for (x, &cx) in (x0..x1).zip(&col_cell) {
            let cell = cy * grid + cx;
            let px = &data[(y * w + x) * c..(y * w + x + 1) * c];
            for (k, v) in px.iter().enumerate() {
                let d = v - mean[cell * c + k];
                sq[cell * c + k] += d * d;
            }
        }
    }
    let mut out = Vec::with_capacity(cells * c * 2);
    for cell in 0..cells {
        for k in 0..c {
            let i = cell * c + k;
            out.push(mean[i]);
            out.push(match count[cell] {
                0 => 0.0,
                n => (sq[i] / n as f64).sqrt(),
            });
        }
    }
    Ok(out)
}
