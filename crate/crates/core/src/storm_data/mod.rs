//! Synthetic storms: straight tracks crossing a rectangular coastal grid of
//! save points, with a closed-form surge field as ground truth.

mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use io::{read_dataset, write_dataset, Dataset, Manifest, StormEntry, DATASET_FORMAT, DATASET_FORMAT_VERSION};

pub const EARTH_RADIUS_KM: f64 = 6371.0;
pub const N_FEATURES: usize = 4;
/// Column order of the input features.
pub const FEATURE_NAMES: [&str; N_FEATURES] = ["lat", "lon", "dp", "rmw"];

/// Save points on a `grid_h × grid_w` lattice, row-major. Row 0 lies on the
/// coastline; later rows step inland (north) by `dlat` degrees, columns
/// step alongshore (east) by `dlon` degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub grid_h: usize,
    pub grid_w: usize,
    pub lat0: f64,
    pub lon0: f64,
    pub dlat: f64,
    pub dlon: f64,
}

impl GridSpec {
    pub fn desk() -> Self {
        Self {
            grid_h: 24,
            grid_w: 8,
            lat0: 28.5,
            lon0: -96.0,
            dlat: 0.05,
            dlon: 0.25,
        }
    }

    pub fn n_sp(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn sp_index(&self, row: usize, col: usize) -> Result<usize> {
        if row >= self.grid_h || col >= self.grid_w {
            return Err(Error::Contract(format!(
                "save point ({row}, {col}) outside a {}x{} grid",
                self.grid_h, self.grid_w
            )));
        }
        Ok(row * self.grid_w + col)
    }

    /// `(lat, lon)` of save point `s`.
    pub fn coords(&self, s: usize) -> (f64, f64) {
        let (r, c) = (s / self.grid_w, s % self.grid_w);
        (self.lat0 + r as f64 * self.dlat, self.lon0 + c as f64 * self.dlon)
    }

    pub fn center_lon(&self) -> f64 {
        self.lon0 + 0.5 * (self.grid_w - 1) as f64 * self.dlon
    }

    fn validate(&self) -> Result<()> {
        if self.grid_h == 0 || self.grid_w == 0 || !(self.dlat > 0.0 && self.dlon > 0.0) {
            return Err(Error::Config(format!("invalid grid {self:?}")));
        }
        Ok(())
    }
}

/// Closed interval `[lo, hi]` sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        self.lo + (self.hi - self.lo) * rng.gen::<f64>()
    }

    fn valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

/// Constants of the closed-form surge field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurgeParams {
    /// Metres of surge per millibar of pressure deficit.
    pub amplitude: f64,
    /// Gaussian width in units of the radius of maximum winds.
    pub width_factor: f64,
    /// Per-step exponential decay after landfall.
    pub decay_rate: f64,
    /// Fraction of the series over which the field ramps up from zero.
    pub ramp_fraction: f64,
}

impl Default for SurgeParams {
    fn default() -> Self {
        Self {
            amplitude: 0.025,
            width_factor: 3.0,
            decay_rate: 0.15,
            ramp_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_storms: usize,
    /// The last `n_test` storms form the test split.
    pub n_test: usize,
    pub n_steps: usize,
    pub landfall_step: usize,
    pub grid: GridSpec,
    pub seed: u64,
    /// Track heading, degrees clockwise from north.
    pub heading_deg: Interval,
    /// Alongshore landfall offset from the grid centre, km.
    pub landfall_offset_km: Interval,
    pub speed_km_per_step: Interval,
    pub dp_mb: Interval,
    pub rmw_km: Interval,
    /// Fraction of Δp lost by the final step (linear after landfall).
    pub dp_decay_fraction: f64,
    /// Fraction of R lost by the final step (linear after landfall).
    pub rmw_decay_fraction: f64,
    pub surge: SurgeParams,
}

impl GeneratorConfig {
    /// 24×8 grid, 40 steps with landfall at 29, 64 training and 8 test storms.
    pub fn desk() -> Self {
        Self {
            n_storms: 72,
            n_test: 8,
            n_steps: 40,
            landfall_step: 29,
            grid: GridSpec::desk(),
            seed: 2024,
            heading_deg: Interval::new(-30.0, 30.0),
            landfall_offset_km: Interval::new(-80.0, 80.0),
            speed_km_per_step: Interval::new(10.0, 20.0),
            dp_mb: Interval::new(20.0, 120.0),
            rmw_km: Interval::new(15.0, 80.0),
            dp_decay_fraction: 0.5,
            rmw_decay_fraction: 0.3,
            surge: SurgeParams::default(),
        }
    }

    /// Landfall at `round(0.72·T)`.
    pub fn default_landfall(n_steps: usize) -> usize {
        ((0.72 * n_steps as f64).round() as usize).clamp(1, n_steps.saturating_sub(1).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.n_steps < 2 || self.landfall_step == 0 || self.landfall_step >= self.n_steps {
            return bad(format!(
                "landfall_step {} must lie strictly inside 0..{}",
                self.landfall_step, self.n_steps
            ));
        }
        if self.n_storms == 0 || self.n_test > self.n_storms {
            return bad(format!("n_test {} exceeds n_storms {}", self.n_test, self.n_storms));
        }
        for (name, iv) in [
            ("heading_deg", self.heading_deg),
            ("landfall_offset_km", self.landfall_offset_km),
            ("speed_km_per_step", self.speed_km_per_step),
            ("dp_mb", self.dp_mb),
            ("rmw_km", self.rmw_km),
        ] {
            if !iv.valid() {
                return bad(format!("{name} interval {iv:?} is empty"));
            }
        }
        if self.dp_mb.lo <= 0.0 || self.rmw_km.lo <= 0.0 {
            return bad("dp_mb and rmw_km must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dp_decay_fraction) || !(0.0..1.0).contains(&self.rmw_decay_fraction) {
            return bad("decay fractions must lie in [0, 1)".into());
        }
        let s = &self.surge;
        if !(s.amplitude >= 0.0 && s.width_factor > 0.0 && s.decay_rate >= 0.0 && s.ramp_fraction > 0.0) {
            return bad(format!("invalid surge parameters {s:?}"));
        }
        Ok(())
    }

    pub fn n_train(&self) -> usize {
        self.n_storms - self.n_test
    }
}

/// One storm: inputs `[T, 4]` (lat, lon, Δp, R), surge `[T, n_sp]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StormRecord {
    pub inputs: Tensor,
    pub labels: Tensor,
    pub landfall_step: usize,
}

impl StormRecord {
    pub fn n_steps(&self) -> usize {
        self.inputs.shape()[0]
    }
}

/// Equirectangular distance in km with the cosine taken at the mean latitude.
pub fn distance_km(lat_a: f64, lon_a: f64, lat_b: f64, lon_b: f64) -> f64 {
    let mean_lat = (0.5 * (lat_a + lat_b)).to_radians();
    let x = (lon_b - lon_a).to_radians() * mean_lat.cos();
    let y = (lat_b - lat_a).to_radians();
    EARTH_RADIUS_KM * x.hypot(y)
}

/// Number of steps over which the field ramps up: `ceil(ramp_fraction·T)`.
pub fn ramp_steps(n_steps: usize, ramp_fraction: f64) -> usize {
    ((ramp_fraction * n_steps as f64).ceil() as usize).max(1)
}

/// Smoothstep from 0 at step 0 to 1 at `ramp_steps`.
pub fn ramp(t: usize, ramp_steps: usize) -> f64 {
    let x = (t as f64 / ramp_steps as f64).min(1.0);
    x * x * (3.0 - 2.0 * x)
}

/// `η(s,t) = A·Δp(t)·exp(−d²/(2(κR(t))²))·ramp(t)·exp(−λ·max(0, t−landfall))`.
pub fn surge_oracle(inputs: &Tensor, grid: &GridSpec, params: &SurgeParams, landfall_step: usize) -> Result<Tensor> {
    let s = inputs.shape();
    if s.len() != 2 || s[1] != N_FEATURES {
        return Err(Error::Dimension(format!(
            "storm inputs {s:?} are not [T, {N_FEATURES}]"
        )));
    }
    let t_len = s[0];
    let n_sp = grid.n_sp();
    let coords: Vec<(f64, f64)> = (0..n_sp).map(|i| grid.coords(i)).collect();
    let ramp_len = ramp_steps(t_len, params.ramp_fraction);
    let mut out = vec![0.0; t_len * n_sp];
    for (t, row) in out.chunks_exact_mut(n_sp).enumerate() {
        let x = &inputs.data()[t * N_FEATURES..(t + 1) * N_FEATURES];
        let (lat, lon, dp, rmw) = (x[0], x[1], x[2], x[3]);
        let gain = params.amplitude
            * dp
            * ramp(t, ramp_len)
            * (-params.decay_rate * t.saturating_sub(landfall_step) as f64).exp();
        if gain == 0.0 {
            continue;
        }
        let width = params.width_factor * rmw;
        let denom = 2.0 * width * width;
        for (eta, &(slat, slon)) in row.iter_mut().zip(&coords) {
            let d = distance_km(slat, slon, lat, lon);
            *eta = gain * (-d * d / denom).exp();
        }
    }
    Tensor::new(vec![t_len, n_sp], out)
}

/// Draws storm `index` from the stream `(cfg.seed, index)`.
pub fn generate_storm(cfg: &GeneratorConfig, index: usize) -> Result<StormRecord> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let heading = cfg.heading_deg.sample(&mut rng).to_radians();
    let offset = cfg.landfall_offset_km.sample(&mut rng);
    let speed = cfg.speed_km_per_step.sample(&mut rng);
    let dp0 = cfg.dp_mb.sample(&mut rng);
    let rmw0 = cfg.rmw_km.sample(&mut rng);

    let g = &cfg.grid;
    let km_per_deg = EARTH_RADIUS_KM.to_radians();
    let coast_cos = g.lat0.to_radians().cos();
    let land_lat = g.lat0;
    let land_lon = g.center_lon() + offset / (km_per_deg * coast_cos);
    let (t_len, lf) = (cfg.n_steps, cfg.landfall_step);
    let after = (t_len - 1 - lf).max(1) as f64;

    let mut inputs = Vec::with_capacity(t_len * N_FEATURES);
    for t in 0..t_len {
        let travelled = speed * (t as f64 - lf as f64);
        let lat = land_lat + travelled * heading.cos() / km_per_deg;
        let lon = land_lon + travelled * heading.sin() / (km_per_deg * coast_cos);
        let frac = t.saturating_sub(lf) as f64 / after;
        let dp = dp0 * (1.0 - cfg.dp_decay_fraction * frac);
        let rmw = rmw0 * (1.0 - cfg.rmw_decay_fraction * frac);
        inputs.extend_from_slice(&[lat, lon, dp, rmw]);
    }
    let inputs = Tensor::new(vec![t_len, N_FEATURES], inputs)?;
    let labels = surge_oracle(&inputs, g, &cfg.surge, lf)?;
    Ok(StormRecord {
        inputs,
        labels,
        landfall_step: lf,
    })
}

pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Vec<StormRecord>> {
    (0..cfg.n_storms).map(|i| generate_storm(cfg, i)).collect()
}

/// Shifts a record so its landfall falls on `target_step`. Inputs are padded
/// with their edge rows; surge is zero-padded before the original start and
/// edge-padded past its end.
pub fn synchronize_landfall(record: &StormRecord, target_step: usize) -> Result<StormRecord> {
    let t_len = record.n_steps();
    if target_step == 0 || target_step >= t_len {
        return Err(Error::Contract(format!(
            "landfall target {target_step} outside [1, {}]",
            t_len - 1
        )));
    }
    let shift = target_step as isize - record.landfall_step as isize;
    let n_sp = record.labels.shape()[1];
    let mut inputs = Vec::with_capacity(t_len * N_FEATURES);
    let mut labels = Vec::with_capacity(t_len * n_sp);
    for t in 0..t_len as isize {
        let src = t - shift;
        let clamped = src.clamp(0, t_len as isize - 1) as usize;
        inputs.extend_from_slice(&record.inputs.data()[clamped * N_FEATURES..(clamped + 1) * N_FEATURES]);
        if src < 0 {
            labels.extend(std::iter::repeat_n(0.0, n_sp));
        } else {
            labels.extend_from_slice(&record.labels.data()[clamped * n_sp..(clamped + 1) * n_sp]);
        }
    }
    Ok(StormRecord {
        inputs: Tensor::new(vec![t_len, N_FEATURES], inputs)?,
        labels: Tensor::new(vec![t_len, n_sp], labels)?,
        landfall_step: target_step,
    })
}

/// Stacks records into `[N, T, 4]` inputs and `[N, T, n_sp]` labels.
pub fn stack_records(records: &[StormRecord]) -> Result<(Tensor, Tensor)> {
    if records.is_empty() {
        return Err(Error::Contract("no storm records to stack".into()));
    }
    let inputs: Vec<Tensor> = records.iter().map(|r| r.inputs.clone()).collect();
    let labels: Vec<Tensor> = records.iter().map(|r| r.labels.clone()).collect();
    Ok((Tensor::stack(&inputs)?, Tensor::stack(&labels)?))
}
