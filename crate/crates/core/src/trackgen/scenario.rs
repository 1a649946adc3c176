use serde::{Deserialize, Serialize};

use crate::embed::MAINTENANCE_CATEGORIES;
use crate::error::{Error, Result};

/// Coefficients of each driver on the settlement rate. All must be `>= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sensitivities {
    /// mm/day per year of ballast age.
    pub ballast_age: f64,
    /// Weight of the tonnage load factor, in [0, 1].
    pub tonnage: f64,
    /// Weight of the rainfall wetness factor, in [0, 1].
    pub rainfall: f64,
    /// Peak extra mm/day at a structure boundary.
    pub structure_boundary: f64,
    /// Peak extra mm/day at a rail joint.
    pub joint: f64,
    /// Extra mm/day per mm of dip 4 m behind (dynamic wheel load).
    pub dynamic_load: f64,
}

impl Default for Sensitivities {
    fn default() -> Self {
        Self {
            ballast_age: 0.0006,
            tonnage: 0.5,
            rainfall: 0.3,
            structure_boundary: 0.03,
            joint: 0.03,
            dynamic_load: 0.004,
        }
    }
}

/// When, where and how well repairs happen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaintenancePolicy {
    /// Observed vertical alignment (mm) below which a repair may be scheduled.
    pub threshold: f64,
    /// Chance that a stretch below threshold is scheduled at a given inspection.
    pub trigger_probability: f64,
    /// Chance per inspection of a preventive campaign on one stretch that is
    /// below half the threshold somewhere.
    pub campaign_probability: f64,
    /// Metres added on each side of a triggered stretch.
    pub margin: usize,
    /// Inspections between detection and the work.
    pub scheduling_delay: usize,
    /// Relative frequency of each category.
    pub category_weights: [f64; 9],
    /// Fraction of `u` removed by each category, in (0, 1].
    pub effectiveness: [f64; 9],
}

impl Default for MaintenancePolicy {
    fn default() -> Self {
        Self {
            threshold: -5.0,
            trigger_probability: 0.5,
            campaign_probability: 0.3,
            margin: 4,
            scheduling_delay: 0,
            category_weights: [0.15, 0.35, 0.2, 0.05, 0.04, 0.04, 0.07, 0.05, 0.05],
            effectiveness: [0.5, 0.9, 0.6, 0.95, 0.5, 0.5, 0.4, 0.7, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseLevels {
    /// Measurement noise on every chord-offset channel, mm.
    pub measurement_sigma: f64,
    /// Per-interval process noise on `u`, mm.
    pub process_sigma: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self {
            measurement_sigma: 0.25,
            process_sigma: 0.0,
        }
    }
}

/// Simulator configuration. The default is the desk scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackScenario {
    pub positions: usize,
    pub inspections: usize,
    /// Mean days between inspections.
    pub interval_days: i64,
    /// Uniform integer jitter, `interval ± jitter`; must stay below the interval.
    pub interval_jitter_days: i64,
    /// Inspections simulated and discarded before the first recorded one.
    pub burn_in: usize,
    /// Settlement rate everywhere, mm/day.
    pub base_rate: f64,
    /// Relative spread of the per-position base rate.
    pub roughness: f64,
    /// Mean metres between localized weak spots.
    pub hotspot_spacing: f64,
    /// Peak extra rate of a weak spot, mm/day.
    pub hotspot_rate: f64,
    pub sensitivity: Sensitivities,
    pub maintenance: MaintenancePolicy,
    pub noise: NoiseLevels,
    pub seed: u64,
}

impl Default for TrackScenario {
    fn default() -> Self {
        Self {
            positions: 512,
            inspections: 120,
            interval_days: 10,
            interval_jitter_days: 2,
            burn_in: 30,
            base_rate: 0.004,
            roughness: 1.0,
            hotspot_spacing: 40.0,
            hotspot_rate: 0.05,
            sensitivity: Sensitivities::default(),
            maintenance: MaintenancePolicy::default(),
            noise: NoiseLevels::default(),
            seed: 0,
        }
    }
}

impl TrackScenario {
    /// Every rate, noise and sensitivity set to zero: a static track.
    pub fn static_track(positions: usize, inspections: usize) -> Self {
        Self {
            positions,
            inspections,
            base_rate: 0.0,
            roughness: 0.0,
            hotspot_rate: 0.0,
            sensitivity: Sensitivities {
                ballast_age: 0.0,
                tonnage: 0.0,
                rainfall: 0.0,
                structure_boundary: 0.0,
                joint: 0.0,
                dynamic_load: 0.0,
            },
            noise: NoiseLevels {
                measurement_sigma: 0.0,
                process_sigma: 0.0,
            },
            ..Self::default()
        }
    }

    /// Default track with repairs triggered and campaigned more eagerly.
    pub fn maintenance_heavy() -> Self {
        Self {
            maintenance: MaintenancePolicy {
                trigger_probability: 0.8,
                campaign_probability: 0.5,
                ..MaintenancePolicy::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                bad.push(msg);
            }
        };
        need(self.positions >= 11, format!("positions: need at least 11, got {}", self.positions));
        need(self.inspections >= 2, format!("inspections: need at least 2, got {}", self.inspections));
        need(self.interval_days >= 1, format!("interval_days: must be >= 1, got {}", self.interval_days));
        need(
            self.interval_jitter_days >= 0 && self.interval_jitter_days < self.interval_days,
            format!(
                "interval_jitter_days: must lie in [0, interval_days), got {}",
                self.interval_jitter_days
            ),
        );
        for (name, v) in [
            ("base_rate", self.base_rate),
            ("roughness", self.roughness),
            ("hotspot_rate", self.hotspot_rate),
            ("sensitivity.ballast_age", self.sensitivity.ballast_age),
            ("sensitivity.structure_boundary", self.sensitivity.structure_boundary),
            ("sensitivity.joint", self.sensitivity.joint),
            ("sensitivity.dynamic_load", self.sensitivity.dynamic_load),
            ("noise.measurement_sigma", self.noise.measurement_sigma),
            ("noise.process_sigma", self.noise.process_sigma),
        ] {
            need(v.is_finite() && v >= 0.0, format!("{name}: must be finite and >= 0, got {v}"));
        }
        for (name, v) in [
            ("sensitivity.tonnage", self.sensitivity.tonnage),
            ("sensitivity.rainfall", self.sensitivity.rainfall),
            ("maintenance.trigger_probability", self.maintenance.trigger_probability),
            ("maintenance.campaign_probability", self.maintenance.campaign_probability),
        ] {
            need((0.0..=1.0).contains(&v), format!("{name}: must lie in [0, 1], got {v}"));
        }
        need(
            self.hotspot_spacing > 0.0,
            format!("hotspot_spacing: must be > 0, got {}", self.hotspot_spacing),
        );
        need(
            self.maintenance.threshold < 0.0,
            format!("maintenance.threshold: must be negative, got {}", self.maintenance.threshold),
        );
        let m = &self.maintenance;
        for (k, name) in MAINTENANCE_CATEGORIES.iter().enumerate() {
            let e = m.effectiveness[k];
            need(e > 0.0 && e <= 1.0, format!("maintenance.effectiveness.{name}: must lie in (0, 1], got {e}"));
            let w = m.category_weights[k];
            need(w.is_finite() && w >= 0.0, format!("maintenance.category_weights.{name}: must be >= 0, got {w}"));
        }
        need(
            m.category_weights.iter().sum::<f64>() > 0.0,
            "maintenance.category_weights: at least one must be positive".into(),
        );
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }
}
