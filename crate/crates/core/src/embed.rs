//! Exogenous data container and its embedding into dense per-step features.
//!
//! Channel layout of one embedded step (all sources enabled, 62 channels):
//!
//! | block            | channels | construction                                  |
//! |------------------|----------|-----------------------------------------------|
//! | maintenance      | 9 x 4    | one-hot(flag) -> shared dense 2->4, per category |
//! | under-structure  | 4        | one-hot(category) -> dense 5->4, same every step |
//! | rail joint       | 4 x 4    | one-hot(flag) -> shared dense 2->4, per joint type |
//! | ballast age      | 1        | passthrough                                   |
//! | tonnage          | 1        | passthrough                                   |
//! | rainfall         | 4        | passthrough                                   |
//!
//! Binary flags are one-hot encoded as `1 -> (1, 0)` and `0 -> (0, 1)` so no
//! dense layer ever sees an all-zero input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cells::Crop;
use crate::error::{Error, Result};
use crate::nn::{GradientTape, ParamId, ParamStore, Tensor2, Tensor3, Var};

pub const EMBED_DIM: usize = 4;

pub const MAINTENANCE_CATEGORIES: [&str; 9] = [
    "uneven_fixing",
    "multiple_tie_tamper",
    "manual_tamping",
    "ballast_replacement",
    "right_rail_replacement",
    "left_rail_replacement",
    "sleeper_maintenance",
    "mud_pumping_remediation",
    "others",
];

pub const STRUCTURE_TYPES: [&str; 5] = ["bridge", "tunnel", "overpass", "embankment", "excavation"];
pub const BRIDGE: u8 = 0;

pub const JOINT_TYPES: [&str; 4] = ["insulated", "welded", "expansion_left", "expansion_right"];

pub const RAINFALL_CHANNELS: [&str; 4] = ["accumulated", "max_10min", "max_hourly", "max_daily"];

/// Number of raw real-valued passthrough channels (ballast, tonnage, 4 x rainfall).
pub const PASSTHROUGH_CHANNELS: usize = 6;

/// The six exogenous sources, in embedding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Maintenance,
    Structure,
    RailJoint,
    BallastAge,
    Tonnage,
    Rainfall,
}

impl Source {
    pub const ALL: [Source; 6] = [
        Source::Maintenance,
        Source::Structure,
        Source::RailJoint,
        Source::BallastAge,
        Source::Tonnage,
        Source::Rainfall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Source::Maintenance => "maintenance",
            Source::Structure => "structure",
            Source::RailJoint => "rail_joint",
            Source::BallastAge => "ballast_age",
            Source::Tonnage => "tonnage",
            Source::Rainfall => "rainfall",
        }
    }

    /// Channels this source contributes to an embedded step.
    pub fn channels(self) -> usize {
        match self {
            Source::Maintenance => MAINTENANCE_CATEGORIES.len() * EMBED_DIM,
            Source::Structure => EMBED_DIM,
            Source::RailJoint => JOINT_TYPES.len() * EMBED_DIM,
            Source::BallastAge | Source::Tonnage => 1,
            Source::Rainfall => RAINFALL_CHANNELS.len(),
        }
    }
}

/// Which exogenous sources feed the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExogenousFlags {
    pub maintenance: bool,
    pub structure: bool,
    pub rail_joint: bool,
    pub ballast_age: bool,
    pub tonnage: bool,
    pub rainfall: bool,
}

impl Default for ExogenousFlags {
    fn default() -> Self {
        Self::all()
    }
}

impl ExogenousFlags {
    pub fn all() -> Self {
        Self {
            maintenance: true,
            structure: true,
            rail_joint: true,
            ballast_age: true,
            tonnage: true,
            rainfall: true,
        }
    }

    pub fn none() -> Self {
        Self {
            maintenance: false,
            structure: false,
            rail_joint: false,
            ballast_age: false,
            tonnage: false,
            rainfall: false,
        }
    }

    pub fn get(&self, s: Source) -> bool {
        match s {
            Source::Maintenance => self.maintenance,
            Source::Structure => self.structure,
            Source::RailJoint => self.rail_joint,
            Source::BallastAge => self.ballast_age,
            Source::Tonnage => self.tonnage,
            Source::Rainfall => self.rainfall,
        }
    }

    pub fn set(&mut self, s: Source, on: bool) {
        match s {
            Source::Maintenance => self.maintenance = on,
            Source::Structure => self.structure = on,
            Source::RailJoint => self.rail_joint = on,
            Source::BallastAge => self.ballast_age = on,
            Source::Tonnage => self.tonnage = on,
            Source::Rainfall => self.rainfall = on,
        }
    }

    pub fn without(mut self, s: Source) -> Self {
        self.set(s, false);
        self
    }

    /// Embedded channel count for these flags (62 when all are on).
    pub fn channels(&self) -> usize {
        Source::ALL
            .iter()
            .filter(|&&s| self.get(s))
            .map(|s| s.channels())
            .sum()
    }
}

/// Exogenous data aligned to inspections and 1 m positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousBundle {
    inspections: usize,
    positions: usize,
    /// (inspections, 9, positions), entries in {0, 1}
    pub maintenance: Vec<u8>,
    /// (positions), entries in 0..5
    pub under_structure: Vec<u8>,
    /// (positions, 4), entries in {0, 1}
    pub rail_joint: Vec<u8>,
    /// (inspections, positions), years
    pub ballast_age: Vec<f64>,
    /// (inspections, positions), weight since the previous inspection
    pub tonnage: Vec<f64>,
    /// (inspections, 4, positions)
    pub rainfall: Vec<f64>,
}

impl ExogenousBundle {
    pub fn zeros(inspections: usize, positions: usize) -> Self {
        let m = MAINTENANCE_CATEGORIES.len();
        Self {
            inspections,
            positions,
            maintenance: vec![0; inspections * m * positions],
            under_structure: vec![0; positions],
            rail_joint: vec![0; positions * JOINT_TYPES.len()],
            ballast_age: vec![0.0; inspections * positions],
            tonnage: vec![0.0; inspections * positions],
            rainfall: vec![0.0; inspections * RAINFALL_CHANNELS.len() * positions],
        }
    }

    pub fn inspections(&self) -> usize {
        self.inspections
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn maintenance_at(&self, t: usize, category: usize, l: usize) -> u8 {
        self.maintenance[(t * MAINTENANCE_CATEGORIES.len() + category) * self.positions + l]
    }

    pub fn set_maintenance(&mut self, t: usize, category: usize, l: usize, v: u8) {
        let i = (t * MAINTENANCE_CATEGORIES.len() + category) * self.positions + l;
        self.maintenance[i] = v;
    }

    pub fn joint_at(&self, l: usize, joint: usize) -> u8 {
        self.rail_joint[l * JOINT_TYPES.len() + joint]
    }

    pub fn set_joint(&mut self, l: usize, joint: usize, v: u8) {
        self.rail_joint[l * JOINT_TYPES.len() + joint] = v;
    }

    pub fn ballast_at(&self, t: usize, l: usize) -> f64 {
        self.ballast_age[t * self.positions + l]
    }

    pub fn tonnage_at(&self, t: usize, l: usize) -> f64 {
        self.tonnage[t * self.positions + l]
    }

    pub fn rainfall_at(&self, t: usize, channel: usize, l: usize) -> f64 {
        self.rainfall[(t * RAINFALL_CHANNELS.len() + channel) * self.positions + l]
    }

    pub fn set_rainfall(&mut self, t: usize, channel: usize, l: usize, v: f64) {
        let i = (t * RAINFALL_CHANNELS.len() + channel) * self.positions + l;
        self.rainfall[i] = v;
    }

    /// Any maintenance category flagged at (t, l).
    pub fn maintained(&self, t: usize, l: usize) -> bool {
        (0..MAINTENANCE_CATEGORIES.len()).any(|k| self.maintenance_at(t, k, l) != 0)
    }

    /// Raw passthrough value for channel `k` of [ballast, tonnage, rain x4].
    pub fn passthrough_at(&self, t: usize, k: usize, l: usize) -> f64 {
        match k {
            0 => self.ballast_at(t, l),
            1 => self.tonnage_at(t, l),
            _ => self.rainfall_at(t, k - 2, l),
        }
    }

    /// Restrict to inspections `start..start + len`.
    pub fn slice_time(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.inspections {
            return Err(Error::Range(format!(
                "inspections {start}..{} outside bundle of {}",
                start + len,
                self.inspections
            )));
        }
        let l = self.positions;
        let m = MAINTENANCE_CATEGORIES.len();
        let r = RAINFALL_CHANNELS.len();
        Ok(Self {
            inspections: len,
            positions: l,
            maintenance: self.maintenance[start * m * l..(start + len) * m * l].to_vec(),
            under_structure: self.under_structure.clone(),
            rail_joint: self.rail_joint.clone(),
            ballast_age: self.ballast_age[start * l..(start + len) * l].to_vec(),
            tonnage: self.tonnage[start * l..(start + len) * l].to_vec(),
            rainfall: self.rainfall[start * r * l..(start + len) * r * l].to_vec(),
        })
    }

    /// Every invariant violation, one line each: `<source> <t> <l> <message>`
    /// (`-` for the time of spatial-only sources).
    pub fn violations(&self) -> Vec<String> {
        let (t_n, l_n) = (self.inspections, self.positions);
        let m = MAINTENANCE_CATEGORIES.len();
        let r = RAINFALL_CHANNELS.len();
        let mut out = Vec::new();
        let sizes = [
            ("maintenance", self.maintenance.len(), t_n * m * l_n),
            ("under_structure", self.under_structure.len(), l_n),
            ("rail_joint", self.rail_joint.len(), l_n * JOINT_TYPES.len()),
            ("ballast_age", self.ballast_age.len(), t_n * l_n),
            ("tonnage", self.tonnage.len(), t_n * l_n),
            ("rainfall", self.rainfall.len(), t_n * r * l_n),
        ];
        for (name, got, want) in sizes {
            if got != want {
                out.push(format!("{name} - - has {got} values, expected {want}"));
            }
        }
        if !out.is_empty() {
            return out;
        }
        for t in 0..t_n {
            for k in 0..m {
                for l in 0..l_n {
                    let v = self.maintenance_at(t, k, l);
                    if v > 1 {
                        out.push(format!(
                            "maintenance {t} {l} value {v} for {} is not binary",
                            MAINTENANCE_CATEGORIES[k]
                        ));
                    }
                }
            }
        }
        for l in 0..l_n {
            let s = self.under_structure[l];
            if s as usize >= STRUCTURE_TYPES.len() {
                out.push(format!("under_structure - {l} category {s} is not in 0..5"));
            }
            for j in 0..JOINT_TYPES.len() {
                let v = self.joint_at(l, j);
                if v > 1 {
                    out.push(format!(
                        "rail_joint - {l} value {v} for {} is not binary",
                        JOINT_TYPES[j]
                    ));
                }
            }
        }
        let check_real = |out: &mut Vec<String>, name: &str, t: usize, l: usize, v: f64| {
            if !v.is_finite() {
                out.push(format!("{name} {t} {l} value {v} is not finite"));
            } else if v < 0.0 {
                out.push(format!("{name} {t} {l} value {v} is negative"));
            }
        };
        for t in 0..t_n {
            for l in 0..l_n {
                let b = self.ballast_at(t, l);
                check_real(&mut out, "ballast_age", t, l, b);
                if self.under_structure[l] == BRIDGE && b != 0.0 {
                    out.push(format!("ballast_age {t} {l} bridge position has age {b}, expected 0"));
                }
                check_real(&mut out, "tonnage", t, l, self.tonnage_at(t, l));
                for c in 0..r {
                    check_real(&mut out, "rainfall", t, l, self.rainfall_at(t, c, l));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// `1 -> (1, 0)`, `0 -> (0, 1)`.
pub fn encode_binary(b: u8) -> Result<[f64; 2]> {
    match b {
        1 => Ok([1.0, 0.0]),
        0 => Ok([0.0, 1.0]),
        other => Err(Error::Encoding(format!("binary value must be 0 or 1, got {other}"))),
    }
}

pub fn encode_structure(category: u8) -> Result<[f64; 5]> {
    let k = category as usize;
    if k >= STRUCTURE_TYPES.len() {
        return Err(Error::Encoding(format!(
            "under-structure category must be in 0..5, got {category}"
        )));
    }
    let mut v = [0.0; 5];
    v[k] = 1.0;
    Ok(v)
}

/// One dense layer (weight `(4, in, 1)`, bias `(4, 1)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseIds {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
}

/// One embedding layer per sparse data format, each with a 4-dim output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingParams {
    pub maintenance: DenseIds,
    pub structure: DenseIds,
    pub rail_joint: DenseIds,
}

impl EmbeddingParams {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let mut dense = |name: &str, inputs: usize| -> Result<DenseIds> {
            Ok(DenseIds {
                weight: store.add_uniform(format!("embed.{name}.w"), vec![EMBED_DIM, inputs, 1], inputs, rng)?,
                bias: store.add_uniform(format!("embed.{name}.b"), vec![EMBED_DIM, 1], inputs, rng)?,
                inputs,
            })
        };
        Ok(Self {
            maintenance: dense("maintenance", 2)?,
            structure: dense("structure", STRUCTURE_TYPES.len())?,
            rail_joint: dense("rail_joint", 2)?,
        })
    }

    pub fn ids(&self) -> [ParamId; 6] {
        [
            self.maintenance.weight,
            self.maintenance.bias,
            self.structure.weight,
            self.structure.bias,
            self.rail_joint.weight,
            self.rail_joint.bias,
        ]
    }
}

/// Affine standardization of the six passthrough channels: `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct PassthroughScaling {
    pub mean: [f64; PASSTHROUGH_CHANNELS],
    pub std: [f64; PASSTHROUGH_CHANNELS],
}

impl Default for PassthroughScaling {
    fn default() -> Self {
        Self::identity()
    }
}

impl PassthroughScaling {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; PASSTHROUGH_CHANNELS],
            std: [1.0; PASSTHROUGH_CHANNELS],
        }
    }

    /// Mean and standard deviation per channel over every (t, l) of `bundle`;
    /// a constant channel keeps unit scale.
    pub fn fit(bundle: &ExogenousBundle) -> Self {
        let mut out = Self::identity();
        let n = (bundle.inspections() * bundle.positions()) as f64;
        for k in 0..PASSTHROUGH_CHANNELS {
            let mut sum = 0.0;
            for t in 0..bundle.inspections() {
                for l in 0..bundle.positions() {
                    sum += bundle.passthrough_at(t, k, l);
                }
            }
            let mean = sum / n;
            let mut ss = 0.0;
            for t in 0..bundle.inspections() {
                for l in 0..bundle.positions() {
                    ss += (bundle.passthrough_at(t, k, l) - mean).powi(2);
                }
            }
            let std = (ss / n).sqrt();
            out.mean[k] = mean;
            out.std[k] = if std > 1e-12 { std } else { 1.0 };
        }
        out
    }

    pub fn apply(&self, k: usize, v: f64) -> f64 {
        (v - self.mean[k]) / self.std[k]
    }
}

/// One-hot and passthrough inputs for one step, restricted to a position range.
#[derive(Debug, Clone)]
pub struct EncodedStep {
    /// 9 tensors of shape (2, len)
    pub maintenance: Vec<Tensor2>,
    /// (6, len), already scaled
    pub passthrough: Tensor2,
}

/// Encoded inputs for a whole window.
#[derive(Debug, Clone)]
pub struct EncodedWindow {
    pub steps: Vec<EncodedStep>,
    /// (5, len)
    pub structure: Tensor2,
    /// 4 tensors of shape (2, len)
    pub rail_joint: Vec<Tensor2>,
}

fn binary_rows(len: usize, get: impl Fn(usize) -> u8) -> Result<Tensor2> {
    let mut t = Tensor2::zeros(2, len);
    for l in 0..len {
        let [a, b] = encode_binary(get(l))?;
        t.set(0, l, a);
        t.set(1, l, b);
    }
    Ok(t)
}

/// Encodes inspections `window` (absolute indices) over positions `crop`.
pub fn encode_window(
    bundle: &ExogenousBundle,
    window: std::ops::Range<usize>,
    crop: Crop,
    scaling: &PassthroughScaling,
) -> Result<EncodedWindow> {
    if window.is_empty() || window.end > bundle.inspections() {
        return Err(Error::Range(format!(
            "window {window:?} outside bundle of {} inspections",
            bundle.inspections()
        )));
    }
    if crop.len == 0 || crop.start + crop.len > bundle.positions() {
        return Err(Error::Range(format!(
            "positions {}..{} outside bundle of {}",
            crop.start,
            crop.start + crop.len,
            bundle.positions()
        )));
    }
    let (s, len) = (crop.start, crop.len);
    let mut structure = Tensor2::zeros(STRUCTURE_TYPES.len(), len);
    for l in 0..len {
        let v = encode_structure(bundle.under_structure[s + l])?;
        for (k, x) in v.iter().enumerate() {
            structure.set(k, l, *x);
        }
    }
    let rail_joint = (0..JOINT_TYPES.len())
        .map(|j| binary_rows(len, |l| bundle.joint_at(s + l, j)))
        .collect::<Result<Vec<_>>>()?;
    let steps = window
        .map(|t| {
            let maintenance = (0..MAINTENANCE_CATEGORIES.len())
                .map(|k| binary_rows(len, |l| bundle.maintenance_at(t, k, s + l)))
                .collect::<Result<Vec<_>>>()?;
            let mut passthrough = Tensor2::zeros(PASSTHROUGH_CHANNELS, len);
            for k in 0..PASSTHROUGH_CHANNELS {
                for l in 0..len {
                    passthrough.set(k, l, scaling.apply(k, bundle.passthrough_at(t, k, s + l)));
                }
            }
            Ok(EncodedStep {
                maintenance,
                passthrough,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodedWindow {
        steps,
        structure,
        rail_joint,
    })
}

/// Records the embedding of an encoded window; returns one `(C_e, len)` node per step.
///
/// Spatial-only embeddings are computed once and reused at every step.
pub fn embed_tape(
    tape: &mut GradientTape,
    store: &ParamStore,
    params: &EmbeddingParams,
    encoded: &EncodedWindow,
    flags: &ExogenousFlags,
) -> Result<Vec<Var>> {
    let dense = |tape: &mut GradientTape, ids: &DenseIds, input: Var| -> Result<Var> {
        let w = tape.param(store, ids.weight);
        let b = tape.param(store, ids.bias);
        tape.linear(input, w, Some(b))
    };
    let structure = if flags.structure {
        let x = tape.constant(encoded.structure.clone());
        Some(dense(tape, &params.structure, x)?)
    } else {
        None
    };
    let joints = if flags.rail_joint {
        let mut v = Vec::with_capacity(JOINT_TYPES.len());
        for j in &encoded.rail_joint {
            let x = tape.constant(j.clone());
            v.push(dense(tape, &params.rail_joint, x)?);
        }
        v
    } else {
        Vec::new()
    };

    let mut out = Vec::with_capacity(encoded.steps.len());
    for step in &encoded.steps {
        let mut parts = Vec::new();
        if flags.maintenance {
            for m in &step.maintenance {
                let x = tape.constant(m.clone());
                parts.push(dense(tape, &params.maintenance, x)?);
            }
        }
        parts.extend(structure);
        parts.extend(joints.iter().copied());
        let pass: Vec<usize> = [
            (flags.ballast_age, 0..1),
            (flags.tonnage, 1..2),
            (flags.rainfall, 2..6),
        ]
        .into_iter()
        .filter(|(on, _)| *on)
        .flat_map(|(_, r)| r)
        .collect();
        if !pass.is_empty() {
            let len = step.passthrough.positions();
            let mut t = Tensor2::zeros(pass.len(), len);
            for (row, &k) in pass.iter().enumerate() {
                t.row_mut(row).copy_from_slice(step.passthrough.row(k));
            }
            parts.push(tape.constant(t));
        }
        if parts.is_empty() {
            return Err(Error::Usage("no exogenous source enabled".into()));
        }
        out.push(tape.concat(&parts)?);
    }
    Ok(out)
}

/// Embedded exogenous tensor `(τ, 62, L)` for inspections `window`, all sources on.
pub fn embed_bundle(
    bundle: &ExogenousBundle,
    params: &EmbeddingParams,
    store: &ParamStore,
    window: std::ops::Range<usize>,
    scaling: &PassthroughScaling,
) -> Result<Tensor3> {
    bundle.validate()?;
    let crop = Crop {
        start: 0,
        len: bundle.positions(),
    };
    let encoded = encode_window(bundle, window, crop, scaling)?;
    let mut tape = GradientTape::new();
    let steps = embed_tape(&mut tape, store, params, &encoded, &ExogenousFlags::all())?;
    let slices: Vec<Tensor2> = steps.iter().map(|&v| tape.value(v).clone()).collect();
    Tensor3::from_slices(&slices)
}
