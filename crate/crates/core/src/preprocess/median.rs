use crate::error::{Error, Result};
use crate::raster::Raster;

/// Per-pixel median of a stack of same-shaped rasters.
///
/// NaN samples are ignored position by position; a position that is NaN in
/// every layer stays NaN. With an even number of valid samples the result
/// is the mean of the two middle values.
pub fn temporal_median(stack: &[Raster]) -> Result<Raster> {
    let first = stack
        .first()
        .ok_or_else(|| Error::Usage("temporal_median on an empty stack".into()))?;
    for (i, r) in stack.iter().enumerate() {
        if r.channels() != first.channels() || !r.same_extent(first) || r.kind() != first.kind() {
            return Err(Error::dim(format!(
                "stack layer {i} is {}x{}x{} {:?}, layer 0 is {}x{}x{} {:?}",
                r.channels(),
                r.height(),
                r.width(),
                r.kind(),
                first.channels(),
                first.height(),
                first.width(),
                first.kind()
            )));
        }
    }
    let mut column = Vec::with_capacity(stack.len());
    let data = (0..first.data().len())
        .map(|i| {
            column.clear();
            column.extend(stack.iter().map(|r| r.data()[i]).filter(|v| !v.is_nan()));
            column.sort_unstable_by(f32::total_cmp);
            match column.len() {
                0 => f32::NAN,
                n if n % 2 == 1 => column[n / 2],
                n => ((column[n / 2 - 1] as f64 + column[n / 2] as f64) / 2.0) as f32,
            }
        })
        .collect();
    Raster::new(first.channels(), first.height(), first.width(), first.kind(), data)
}
