use super::{ActivityMap, BBox};
use crate::error::{Error, Result};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Integer cells `(x, y)` with `floor(x1) <= x < ceil(x2)` (same for `y`),
/// clamped to the grid. Returned as half-open column and row ranges.
pub fn box_cells(b: &BBox, height: usize, width: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let clamp = |v: f64, hi: usize| -> usize { v.max(0.0).min(hi as f64) as usize };
    let xs = clamp(b.x1.floor(), width)..clamp(b.x2.ceil(), width);
    let ys = clamp(b.y1.floor(), height)..clamp(b.y2.ceil(), height);
    (xs, ys)
}

fn box_sum(map: &ActivityMap, b: &BBox, field: usize) -> f64 {
    let (xs, ys) = box_cells(b, map.height(), map.width());
    let mut s = 0.0;
    for y in ys {
        for x in xs.clone() {
            s += map.get(y, x, field);
        }
    }
    s
}

/// Group activity read off the group fields: per class, the sum of field
/// values inside every person box (grid units). Returns the winning class and
/// the per-class scores.
pub fn decode_group_by_pooling(map: &ActivityMap, boxes: &[BBox]) -> Result<(usize, Vec<f64>)> {
    if boxes.is_empty() {
        return Err(Error::InvalidArgument(
            "group pooling decode needs at least one box".into(),
        ));
    }
    let labels = map.labels();
    let scores: Vec<f64> = (0..labels.n_group)
        .map(|g| {
            boxes
                .iter()
                .map(|b| box_sum(map, b, labels.n_individual + g))
                .sum()
        })
        .collect();
    Ok((argmax_first(&scores), scores))
}

/// Individual action of one person: the individual field with the largest
/// sum inside the person's box (grid units).
pub fn decode_individual_by_pooling(map: &ActivityMap, b: &BBox) -> Result<usize> {
    let n = map.labels().n_individual;
    if n == 0 {
        return Err(Error::InvalidArgument(
            "map has no individual fields to decode".into(),
        ));
    }
    let scores: Vec<f64> = (0..n).map(|i| box_sum(map, b, i)).collect();
    Ok(argmax_first(&scores))
}
