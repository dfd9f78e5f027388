//! Fixtures shared by the benchmarks in `benches/`.

use dash::parafac2::{parafac2_als, AlsOptions};
use dash::{replay, synthesize, StreamState, SynthParams, UpdateBatch};

/// A fitted state and the batches that follow it.
pub struct Fixture {
    pub state: StreamState,
    pub batches: Vec<UpdateBatch>,
}

/// Synthetic stream of `slices` slices with `cols` columns, cut into
/// batches of `cycle` time steps after a 20% initial window.
pub fn fixture(slices: usize, cols: usize, rank: usize, cycle: usize, duration: usize) -> Fixture {
    let params = SynthParams {
        slices,
        cols,
        rank,
        duration,
        noise: 0.1,
        ..SynthParams::default()
    };
    let full = synthesize(&params, 0).expect("synthetic parameters are valid");
    let (initial, batches) = replay(&full, 0.2, cycle).expect("replay succeeds");
    // a single sweep is enough; benchmarks time updates, not fit quality
    let fit = parafac2_als(
        &initial,
        &AlsOptions {
            rank,
            iters: 1,
            ..AlsOptions::default()
        },
    )
    .expect("initial fit succeeds");
    let state = StreamState::initialize(&initial, fit.factors, 0.7).expect("helpers build");
    Fixture { state, batches }
}
