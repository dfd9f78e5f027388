//! Splits a recorded irregular tensor into an initial tensor and a sequence
//! of update batches, as a live stream would have delivered it.

use ndarray::s;

use crate::error::{Error, Result};
use crate::tensor::{IrregularTensor, SliceMatrix, UpdateBatch};

/// First time step that is not part of the initial tensor.
pub fn init_boundary(duration: usize, init_fraction: f64) -> usize {
    (init_fraction * duration as f64).ceil() as usize
}

fn rows_between(slice: &SliceMatrix, from: usize, to: usize) -> Option<SliceMatrix> {
    let lo = from.max(slice.first_time_step);
    let hi = to.min(slice.end_time_step());
    (lo < hi).then(|| {
        let a = lo - slice.first_time_step;
        let b = hi - slice.first_time_step;
        SliceMatrix::new(
            slice.id.clone(),
            slice.rows.slice(s![a..b, ..]).to_owned(),
            lo,
        )
    })
}

/// Partitions `tensor` along the time axis.
///
/// The initial tensor holds every row with time step below
/// `ceil(init_fraction × duration)`. The remaining steps are cut into
/// consecutive windows of `update_cycle` steps (the last may be shorter).
/// Windows in which no slice has data are skipped; batch indices stay
/// consecutive over the emitted batches.
pub fn replay(
    tensor: &IrregularTensor,
    init_fraction: f64,
    update_cycle: usize,
) -> Result<(IrregularTensor, Vec<UpdateBatch>)> {
    if !(init_fraction > 0.0 && init_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "init fraction must lie in (0, 1), got {init_fraction}"
        )));
    }
    if update_cycle == 0 {
        return Err(Error::InvalidArgument(
            "update cycle must be at least 1".into(),
        ));
    }
    let duration = tensor.duration();
    let boundary = init_boundary(duration, init_fraction);

    let initial: Vec<_> = tensor
        .slices()
        .iter()
        .filter_map(|s| rows_between(s, 0, boundary))
        .collect();
    if initial.is_empty() {
        return Err(Error::EmptyInitialTensor);
    }
    let initial = IrregularTensor::new(initial)?;

    let mut batches = Vec::new();
    let mut start = boundary;
    while start < duration {
        let end = (start + update_cycle).min(duration);
        let mut existing_rows = Vec::new();
        let mut new_slices = Vec::new();
        for slice in tensor.slices() {
            if let Some(part) = rows_between(slice, start, end) {
                if slice.first_time_step < start {
                    existing_rows.push(part);
                } else {
                    new_slices.push(part);
                }
            }
        }
        if !(existing_rows.is_empty() && new_slices.is_empty()) {
            batches.push(UpdateBatch {
                update_index: batches.len() + 1,
                existing_rows,
                new_slices,
                cycle_span: (start, end - 1),
            });
        }
        start = end;
    }
    Ok((initial, batches))
}

/// Number of update windows following the initial tensor.
pub fn window_count(duration: usize, init_fraction: f64, update_cycle: usize) -> usize {
    let boundary = init_boundary(duration, init_fraction);
    duration.saturating_sub(boundary).div_ceil(update_cycle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn ramp(id: &str, rows: usize, first: usize) -> SliceMatrix {
        let m = Array2::from_shape_fn((rows, 2), |(i, j)| (first + i) as f64 + 0.1 * j as f64);
        SliceMatrix::new(id, m, first)
    }

    #[test]
    fn fig3_arithmetic_gives_forty_batches() {
        let t = IrregularTensor::new(vec![ramp("a", 1000, 0)]).unwrap();
        let (init, batches) = replay(&t, 0.2, 20).unwrap();
        assert_eq!(init.slices()[0].nrows(), 200);
        assert_eq!(batches.len(), 40);
        assert_eq!(window_count(1000, 0.2, 20), 40);
        assert!(batches.iter().all(|b| b.existing_rows[0].nrows() == 20));
    }

    #[test]
    fn single_slice_half_split() {
        let t = IrregularTensor::new(vec![ramp("a", 10, 0)]).unwrap();
        let (init, batches) = replay(&t, 0.5, 5).unwrap();
        assert_eq!(init.slices()[0].nrows(), 5);
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].existing_rows[0].nrows(), 5);
    }

    #[test]
    fn late_slice_arrives_as_new_slice() {
        // boundary ceil(0.5 * 10) = 5, cycle 5: batch 1 covers steps 5..=9
        let t = IrregularTensor::new(vec![ramp("a", 10, 0), ramp("late", 3, 7)]).unwrap();
        let (_, batches) = replay(&t, 0.5, 5).unwrap();
        assert_eq!(batches.len(), 1);
        let b = &batches[0];
        assert_eq!(b.cycle_span, (5, 9));
        assert_eq!(b.new_slices.len(), 1);
        assert_eq!(b.new_slices[0].id, "late");
        assert_eq!(b.new_slices[0].first_time_step, 7);
        assert_eq!(b.new_slices[0].nrows(), 3);
    }

    #[test]
    fn slice_started_in_earlier_batch_becomes_existing() {
        let t = IrregularTensor::new(vec![ramp("a", 20, 0), ramp("late", 8, 11)]).unwrap();
        let (_, batches) = replay(&t, 0.5, 5).unwrap();
        assert_eq!(batches[0].new_slices[0].id, "late");
        assert!(batches[1].existing_rows.iter().any(|s| s.id == "late"));
    }

    #[test]
    fn empty_init_window_is_an_error() {
        let t = IrregularTensor::new(vec![ramp("a", 5, 50)]).unwrap();
        assert!(matches!(replay(&t, 0.1, 5), Err(Error::EmptyInitialTensor)));
    }

    #[test]
    fn bad_arguments_are_rejected() {
        let t = IrregularTensor::new(vec![ramp("a", 10, 0)]).unwrap();
        assert!(replay(&t, 0.0, 5).is_err());
        assert!(replay(&t, 1.0, 5).is_err());
        assert!(replay(&t, 0.5, 0).is_err());
    }
}
