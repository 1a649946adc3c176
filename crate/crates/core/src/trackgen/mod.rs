//! Synthetic track degradation, chord-offset observation, splits and windows.

mod io;
mod scenario;
mod simulate;

pub use io::{read_dataset, write_dataset, FORMAT_VERSION};
pub use scenario::{MaintenancePolicy, NoiseLevels, Sensitivities, TrackScenario};
pub use simulate::simulate;

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::embed::ExogenousBundle;
use crate::error::{Error, Result};
use crate::nn::Tensor3;

/// Irregularity channels, in panel order.
pub const CHANNELS: [&str; 10] = [
    "vertical_left",
    "vertical_right",
    "lateral_left",
    "lateral_right",
    "gauge",
    "cross_level",
    "twist",
    "vertical_vibration",
    "lateral_vibration",
    "speed",
];
pub const VERTICAL_LEFT: usize = 0;
pub const VERTICAL_RIGHT: usize = 1;
pub const TARGET_CHANNELS: usize = 2;
pub const SIDES: [&str; 2] = ["left", "right"];

/// Half the chord length in metres.
pub const CHORD_HALF: usize = 5;

/// (inspections, 10, positions).
pub type IrregularityPanel = Tensor3;

/// Index beyond either end reflected through the end point, so affine
/// profiles continue straight past the boundary.
fn reflected(u: &[f64], i: isize) -> f64 {
    let n = u.len() as isize;
    if i < 0 {
        2.0 * u[0] - u[(-i) as usize]
    } else if i >= n {
        2.0 * u[(n - 1) as usize] - u[(2 * (n - 1) - i) as usize]
    } else {
        u[i as usize]
    }
}

/// 10 m chord offset without measurement noise.
pub fn chord_offset_exact(u: &[f64]) -> Result<Vec<f64>> {
    if u.len() < 2 * CHORD_HALF + 1 {
        return Err(Error::Size(format!(
            "chord offset needs at least {} positions, got {}",
            2 * CHORD_HALF + 1,
            u.len()
        )));
    }
    let h = CHORD_HALF as isize;
    Ok((0..u.len() as isize)
        .map(|l| u[l as usize] - (reflected(u, l - h) + reflected(u, l + h)) / 2.0)
        .collect())
}

/// Chord offset plus `N(0, sigma^2)` noise drawn from `rng`.
pub fn chord_offset_with<R: Rng>(u: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    let mut v = chord_offset_exact(u)?;
    if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("sigma: {e}")))?;
        for x in &mut v {
            *x += n.sample(rng);
        }
    } else if sigma < 0.0 {
        return Err(Error::Config(format!("sigma must be >= 0, got {sigma}")));
    }
    Ok(v)
}

/// `v(l) = u(l) - (u(l-5) + u(l+5)) / 2 + eps`. Ends use point reflection of `u`.
pub fn chord_offset(u: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = crate::rng::substream(seed, "chord_offset");
    chord_offset_with(u, sigma, &mut rng)
}

/// Inspections, observations and exogenous data for one stretch of track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackDataset {
    /// Day stamps, strictly increasing.
    pub dates: Vec<i64>,
    pub irregularities: IrregularityPanel,
    pub exogenous: ExogenousBundle,
    /// (inspections, 2, positions), simulator only.
    pub ground_truth_u: Option<Tensor3>,
    pub provenance: String,
}

impl TrackDataset {
    pub fn inspections(&self) -> usize {
        self.dates.len()
    }

    pub fn positions(&self) -> usize {
        self.irregularities.positions()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.dates.len();
        let (pt, pc, pl) = self.irregularities.dims();
        let mut problems = Vec::new();
        if pt != t || pc != CHANNELS.len() {
            problems.push(format!(
                "irregularities - - shape ({pt}, {pc}, {pl}) does not match {t} inspections x {} channels",
                CHANNELS.len()
            ));
        }
        if let Some(w) = self.dates.windows(2).position(|w| w[1] <= w[0]) {
            problems.push(format!("dates {} - not strictly increasing", w + 1));
        }
        if self.exogenous.inspections() != t || self.exogenous.positions() != pl {
            problems.push(format!(
                "exogenous - - shape ({}, {}) does not match ({t}, {pl})",
                self.exogenous.inspections(),
                self.exogenous.positions()
            ));
        } else {
            problems.extend(self.exogenous.violations());
        }
        if let Some(u) = &self.ground_truth_u {
            if u.dims() != (t, TARGET_CHANNELS, pl) {
                problems.push(format!("ground_truth_u - - shape {:?} does not match", u.dims()));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Inspections `range`, all tensors sliced consistently.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        let len = range.len();
        Ok(Self {
            dates: self.dates[range.clone()].to_vec(),
            irregularities: self.irregularities.window(range.start, len)?,
            exogenous: self.exogenous.slice_time(range.start, len)?,
            ground_truth_u: match &self.ground_truth_u {
                Some(u) => Some(u.window(range.start, len)?),
                None => None,
            },
            provenance: self.provenance.clone(),
        })
    }

    /// Years spanned by the inspection dates (365.25-day years).
    pub fn years_spanned(&self) -> f64 {
        match (self.dates.first(), self.dates.last()) {
            (Some(a), Some(b)) => (b - a) as f64 / 365.25,
            _ => 0.0,
        }
    }
}

/// Train, validation and test parts of one dataset.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: TrackDataset,
    pub validation: TrackDataset,
    pub test: TrackDataset,
}

/// Splits at two date cut points: `[.., c1)`, `[c1, c2)`, `[c2, ..]`.
pub fn split_by_time(dataset: &TrackDataset, cut1: i64, cut2: i64) -> Result<Splits> {
    let (first, last) = match (dataset.dates.first(), dataset.dates.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::Range("dataset has no inspections".into())),
    };
    if cut1 > cut2 {
        return Err(Error::Range(format!("cut points out of order: {cut1} > {cut2}")));
    }
    for c in [cut1, cut2] {
        if c < first || c > last {
            return Err(Error::Range(format!("cut point {c} outside dates {first}..={last}")));
        }
    }
    let a = dataset.dates.partition_point(|&d| d < cut1);
    let b = dataset.dates.partition_point(|&d| d < cut2);
    let t = dataset.inspections();
    for (name, n) in [("training", a), ("validation", b - a), ("test", t - b)] {
        if n == 0 {
            return Err(Error::Range(format!("{name} split would be empty")));
        }
    }
    Ok(Splits {
        train: dataset.slice(0..a)?,
        validation: dataset.slice(a..b)?,
        test: dataset.slice(b..t)?,
    })
}

/// Cut points placing `ratios.0` of the inspections in training and
/// `ratios.1` in validation (rounded to whole inspections).
pub fn ratio_cuts(dataset: &TrackDataset, ratios: (f64, f64)) -> Result<(i64, i64)> {
    let t = dataset.inspections();
    let (r1, r2) = ratios;
    if !(r1 > 0.0 && r2 > 0.0 && r1 + r2 < 1.0) {
        return Err(Error::Config(format!("split ratios ({r1}, {r2}) must be positive and sum below 1")));
    }
    let a = (r1 * t as f64).round() as usize;
    let b = ((r1 + r2) * t as f64).round() as usize;
    if a == 0 || b <= a || b >= t {
        return Err(Error::Range(format!("ratios ({r1}, {r2}) leave an empty split of {t} inspections")));
    }
    Ok((dataset.dates[a], dataset.dates[b]))
}

/// Default proportions, about 6 / 1.5 / 2.6 years.
pub const DEFAULT_SPLIT: (f64, f64) = (0.60, 0.15);

pub fn split_by_ratio(dataset: &TrackDataset, ratios: (f64, f64)) -> Result<Splits> {
    let (c1, c2) = ratio_cuts(dataset, ratios)?;
    split_by_time(dataset, c1, c2)
}

/// One training example: inputs at `inputs`, target at `target = inputs.end`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub inputs: Range<usize>,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowedSet {
    pub tau: usize,
    pub windows: Vec<Window>,
}

/// Stride-1 windows over a split of `inspections` steps.
pub fn make_windows(inspections: usize, tau: usize) -> Result<WindowedSet> {
    if tau == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    if inspections < tau + 1 {
        return Err(Error::Size(format!(
            "{inspections} inspections cannot hold a window of {tau} plus a target"
        )));
    }
    let windows = (0..inspections - tau)
        .map(|s| Window {
            inputs: s..s + tau,
            target: s + tau,
        })
        .collect();
    Ok(WindowedSet { tau, windows })
}
