//! Seeded generator for planted PARAFAC2-style irregular tensors.
//!
//! Slice `k` at time step `t` is `x_k(t) = (u_k(t) ∘ w_k) · V(t)ᵀ + σ·ε`,
//! where `u_k(t)` is a smooth per-component sinusoid, `w_k` the slice weights
//! and `V(t)` the shared factor, optionally rotating with `drift` radians per
//! step. Rows inside `exact_prefix` are replaced by `Q_k·H` blocks with
//! column-orthonormal `Q_k`, so that prefix is an exact PARAFAC2 model.

use std::f64::consts::TAU;
use std::str::FromStr;

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::polar_factor;
use crate::tensor::{IrregularTensor, SliceMatrix};

/// An additive bias on a block of time steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    /// Slice index; `None` hits every slice.
    pub slice: Option<usize>,
    pub start: usize,
    pub len: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub slices: usize,
    pub cols: usize,
    pub rank: usize,
    pub duration: usize,
    /// Slices that are not late start uniformly in `[0, start_jitter]`.
    pub start_jitter: usize,
    /// The last `late_slices` slices start after `late_after`.
    pub late_slices: usize,
    pub late_after: usize,
    pub noise: f64,
    pub drift: f64,
    pub exact_prefix: Option<usize>,
    pub anomalies: Vec<Injection>,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            slices: 20,
            cols: 15,
            rank: 3,
            duration: 200,
            start_jitter: 0,
            late_slices: 0,
            late_after: 0,
            noise: 0.0,
            drift: 0.0,
            exact_prefix: None,
            anomalies: Vec::new(),
        }
    }
}

pub fn slice_id(k: usize) -> String {
    format!("s{k:04}")
}

struct Wave {
    offset: f64,
    amplitude: f64,
    period: f64,
    phase: f64,
}

impl Wave {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Self {
            offset: rng.gen_range(0.5..1.5),
            amplitude: rng.gen_range(0.25..0.75),
            period: rng.gen_range(25.0..250.0),
            phase: rng.gen_range(0.0..TAU),
        }
    }

    fn at(&self, t: usize) -> f64 {
        self.offset + self.amplitude * (TAU * t as f64 / self.period + self.phase).sin()
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

/// Applies the rotation of angle `theta` to consecutive row pairs of `v`.
fn rotate(v: &Array2<f64>, theta: f64) -> Array2<f64> {
    if theta == 0.0 {
        return v.clone();
    }
    let (sin, cos) = theta.sin_cos();
    let mut out = v.clone();
    for p in 0..v.nrows() / 2 {
        let (a, b) = (2 * p, 2 * p + 1);
        for r in 0..v.ncols() {
            out[[a, r]] = cos * v[[a, r]] - sin * v[[b, r]];
            out[[b, r]] = sin * v[[a, r]] + cos * v[[b, r]];
        }
    }
    out
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        if self.slices == 0 || self.cols == 0 || self.rank == 0 || self.duration == 0 {
            return Err(Error::InvalidArgument(
                "slices, cols, rank and duration must be positive".into(),
            ));
        }
        if self.late_slices > self.slices {
            return Err(Error::InvalidArgument(
                "late_slices cannot exceed slices".into(),
            ));
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return Err(Error::InvalidArgument(
                "noise must be finite and >= 0".into(),
            ));
        }
        let earliest_late_end = self.late_after + self.rank;
        if self.late_slices > 0 && earliest_late_end > self.duration {
            return Err(Error::InvalidArgument(format!(
                "late slices starting after {} cannot hold {} rows within {} steps",
                self.late_after, self.rank, self.duration
            )));
        }
        let min_rows = self.duration.saturating_sub(self.start_jitter);
        let limit = self.cols.min(min_rows);
        if self.rank > limit {
            return Err(Error::RankTooLarge {
                rank: self.rank,
                limit,
            });
        }
        Ok(())
    }

    /// Shared factor at time step `t`, before scaling by slice weights.
    pub fn factor_at(&self, v0: &Array2<f64>, t: usize) -> Array2<f64> {
        rotate(v0, self.drift * t as f64)
    }
}

/// Builds the tensor described by `params`; identical seeds give identical
/// tensors.
pub fn synthesize(params: &SynthParams, seed: u64) -> Result<IrregularTensor> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k_total, j, r) = (params.slices, params.cols, params.rank);

    let v0 = normal_matrix(&mut rng, j, r);
    let h = Array2::<f64>::eye(r) + normal_matrix(&mut rng, r, r) * 0.3;
    let weights = Array2::from_shape_simple_fn((k_total, r), || rng.gen_range(0.5..1.5));

    let late_from = k_total - params.late_slices;
    let starts: Vec<usize> = (0..k_total)
        .map(|k| {
            if k >= late_from {
                rng.gen_range(params.late_after..=params.duration - r)
            } else {
                rng.gen_range(0..=params.start_jitter)
            }
        })
        .collect();

    let factors_by_time: Vec<Array2<f64>> = if params.drift == 0.0 {
        vec![v0.clone()]
    } else {
        (0..params.duration)
            .map(|t| params.factor_at(&v0, t))
            .collect()
    };
    let factor_at = |t: usize| {
        if factors_by_time.len() == 1 {
            &factors_by_time[0]
        } else {
            &factors_by_time[t]
        }
    };

    let mut slices = Vec::with_capacity(k_total);
    for (k, &first) in starts.iter().enumerate() {
        let rows = params.duration - first;
        let waves: Vec<Wave> = (0..r).map(|_| Wave::draw(&mut rng)).collect();
        let mut u = Array2::from_shape_fn((rows, r), |(i, c)| waves[c].at(first + i));

        if let Some(prefix) = params.exact_prefix {
            let n = prefix.saturating_sub(first).min(rows);
            if n > 0 {
                if n < r {
                    return Err(Error::InvalidArgument(format!(
                        "slice {k} has {n} rows inside the exact prefix, fewer than rank {r}"
                    )));
                }
                let q = polar_factor(u.slice(s![..n, ..])).ok_or_else(|| Error::Decomposition {
                    slice: slice_id(k),
                    reason: "polar factor of generated rows".into(),
                })?;
                let block = q.dot(&h) * (n as f64).sqrt();
                u.slice_mut(s![..n, ..]).assign(&block);
            }
        }

        let w: Array1<f64> = weights.row(k).to_owned();
        let mut x = Array2::<f64>::zeros((rows, j));
        for i in 0..rows {
            let us = &u.row(i) * &w;
            x.row_mut(i).assign(&factor_at(first + i).dot(&us));
        }
        if params.noise > 0.0 {
            x.mapv_inplace(|v| v + params.noise * rng.sample::<f64, _>(StandardNormal));
        }
        for inj in &params.anomalies {
            if inj.slice.is_some_and(|s| s != k) {
                continue;
            }
            let lo = inj.start.max(first);
            let hi = (inj.start + inj.len).min(first + rows);
            if lo < hi {
                x.slice_mut(s![lo - first..hi - first, ..])
                    .mapv_inplace(|v| v + inj.magnitude);
            }
        }
        slices.push(SliceMatrix::new(slice_id(k), x, first));
    }
    IrregularTensor::new(slices)
}

fn parse_field<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value `{value}` for `{key}`")))
}

/// `key=value` pairs separated by commas, e.g.
/// `slices=20,cols=15,rank=3,duration=200,noise=0.01`.
///
/// Anomalies use `anomaly=<slice|*>:<start>:<len>:<magnitude>` and may
/// repeat.
impl FromStr for SynthParams {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let mut p = SynthParams::default();
        for field in spec.split(',').map(str::trim).filter(|f| !f.is_empty()) {
            let (key, value) = field.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("expected key=value, got `{field}`"))
            })?;
            match key {
                "slices" => p.slices = parse_field(key, value)?,
                "cols" => p.cols = parse_field(key, value)?,
                "rank" => p.rank = parse_field(key, value)?,
                "duration" => p.duration = parse_field(key, value)?,
                "start_jitter" => p.start_jitter = parse_field(key, value)?,
                "late_slices" => p.late_slices = parse_field(key, value)?,
                "late_after" => p.late_after = parse_field(key, value)?,
                "noise" => p.noise = parse_field(key, value)?,
                "drift" => p.drift = parse_field(key, value)?,
                "exact_prefix" => p.exact_prefix = Some(parse_field(key, value)?),
                "anomaly" => {
                    let parts: Vec<_> = value.split(':').collect();
                    let [slice, start, len, mag] = parts[..] else {
                        return Err(Error::InvalidArgument(format!(
                            "anomaly expects slice:start:len:magnitude, got `{value}`"
                        )));
                    };
                    p.anomalies.push(Injection {
                        slice: if slice == "*" {
                            None
                        } else {
                            Some(parse_field(key, slice)?)
                        },
                        start: parse_field(key, start)?,
                        len: parse_field(key, len)?,
                        magnitude: parse_field(key, mag)?,
                    });
                }
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown synth field `{other}`"
                    )))
                }
            }
        }
        Ok(p)
    }
}
