#![allow(dead_code)]

use dash::parafac2::{parafac2_als, AlsOptions};
use dash::{replay, synthesize, IrregularTensor, StreamState, SynthParams, UpdateBatch};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.gen_range(lo..hi))
}

/// Frobenius norm of a difference.
pub fn dist(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(|x| x * x).sum().sqrt()
}

pub fn norm(a: &Array2<f64>) -> f64 {
    a.mapv(|x| x * x).sum().sqrt()
}

pub struct Stream {
    pub initial: IrregularTensor,
    pub batches: Vec<UpdateBatch>,
    pub state: StreamState,
}

/// A random noisy stream with late-arriving slices and a fitted initial
/// state.
pub fn random_stream(
    seed: u64,
    slices: usize,
    cols: usize,
    rank: usize,
    cycle: usize,
    updates: usize,
    lambda: f64,
) -> Stream {
    random_stream_scaled(seed, slices, cols, rank, cycle, updates, lambda, 1.0)
}

/// [`random_stream`] with every entry multiplied by `scale`.
#[allow(clippy::too_many_arguments)]
pub fn random_stream_scaled(
    seed: u64,
    slices: usize,
    cols: usize,
    rank: usize,
    cycle: usize,
    updates: usize,
    lambda: f64,
    scale: f64,
) -> Stream {
    let init = 4 * cycle;
    let duration = init + cycle * updates;
    let late = (slices / 5).max(1);
    let params = SynthParams {
        slices,
        cols,
        rank,
        duration,
        start_jitter: cycle,
        late_slices: late,
        late_after: init + 1,
        noise: 0.1,
        ..SynthParams::default()
    };
    let mut full = synthesize(&params, seed).unwrap();
    if scale != 1.0 {
        let slices = full
            .into_slices()
            .into_iter()
            .map(|mut s| {
                s.rows *= scale;
                s
            })
            .collect();
        full = IrregularTensor::new(slices).unwrap();
    }
    let fraction = init as f64 / duration as f64;
    let (initial, batches) = replay(&full, fraction, cycle).unwrap();
    let fit = parafac2_als(
        &initial,
        &AlsOptions {
            rank,
            iters: 10,
            seed,
            ..AlsOptions::default()
        },
    )
    .unwrap();
    let state = StreamState::initialize(&initial, fit.factors, lambda).unwrap();
    Stream {
        initial,
        batches,
        state,
    }
}
