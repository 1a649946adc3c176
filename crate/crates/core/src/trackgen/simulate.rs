//! Degradation model.
//!
//! Each rail side `s` carries an absolute alignment `u_s(l)` (mm, negative is
//! settlement). Between inspections `t` and `t + 1`, `days` apart:
//!
//! ```text
//! rate(l)  = site(l) + c_age * age(l) + c_dyn * max(0, -v_true(l - 4))
//! u(l)    -= days * rate(l) * load_t * wet_t(l) + process noise
//! ```
//!
//! `site` is a per-position base rate plus localized weak spots, structure
//! boundary and joint bumps (reduced on bridges). `load` and `wet` are
//! `(1 - c) + c * ratio` of this interval's tonnage and rainfall to their
//! long-run means. Work flagged at inspection `t` is applied after the
//! interval's settlement, `u <- (1 - eff) * u` over the flagged stretch, so it
//! shows up at `t + 1`. Rail-replacement categories act on one side only.
//!
//! Observations are chord offsets of `u` plus measurement noise. The other
//! eight channels are simple autoregressive processes loosely tied to `u`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, WeightedIndex};

use super::{chord_offset_exact, chord_offset_with, TrackDataset, TrackScenario, CHANNELS};
use crate::embed::{ExogenousBundle, BRIDGE, JOINT_TYPES, MAINTENANCE_CATEGORIES};
use crate::error::{Error, Result};
use crate::nn::Tensor3;
use crate::rng::{substream, Rng as StreamRng, SIMULATE};

const RIGHT_RAIL_REPLACEMENT: usize = 4;
const LEFT_RAIL_REPLACEMENT: usize = 5;
const BALLAST_REPLACEMENT: usize = 3;
const DYNAMIC_LAG: usize = 4;
const BRIDGE_RATE_FACTOR: f64 = 0.3;
const DAILY_TONNAGE: f64 = 0.25;
const DAILY_RAIN: f64 = 4.0;
const DAYS_PER_YEAR: f64 = 365.25;

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("finite non-negative sd")
}

fn structure_layout(n: usize, rng: &mut StreamRng) -> Vec<u8> {
    let weights = WeightedIndex::new([0.15, 0.1, 0.1, 0.4, 0.25]).expect("valid weights");
    let mut out = Vec::with_capacity(n);
    let mut prev = u8::MAX;
    while out.len() < n {
        let mut cat = weights.sample(rng) as u8;
        while cat == prev {
            cat = weights.sample(rng) as u8;
        }
        let len = rng.gen_range(40..=160);
        out.extend(std::iter::repeat(cat).take(len));
        prev = cat;
    }
    out.truncate(n);
    out
}

/// Distance from each position to the nearest change of structure type.
fn boundary_distance(structure: &[u8]) -> Vec<f64> {
    let changes: Vec<f64> = (1..structure.len())
        .filter(|&b| structure[b] != structure[b - 1])
        .map(|b| b as f64 - 0.5)
        .collect();
    (0..structure.len())
        .map(|l| {
            changes
                .iter()
                .map(|c| (l as f64 - c).abs())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// One joint every 15 to 60 m; `(position, type)`.
fn joint_layout(n: usize, rng: &mut StreamRng) -> Vec<(usize, usize)> {
    let weights = WeightedIndex::new([0.3, 0.4, 0.15, 0.15]).expect("valid weights");
    let mut out = Vec::new();
    let mut l = rng.gen_range(5..30);
    while l < n {
        out.push((l, weights.sample(rng)));
        l += rng.gen_range(15..=60);
    }
    out
}

fn ballast_layout(structure: &[u8], rng: &mut StreamRng) -> Vec<f64> {
    let n = structure.len();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let age = rng.gen_range(0.0..25.0);
        let len = rng.gen_range(50..=200);
        out.extend(std::iter::repeat(age).take(len));
    }
    out.truncate(n);
    for (a, &s) in out.iter_mut().zip(structure) {
        if s == BRIDGE {
            *a = 0.0;
        }
    }
    out
}

/// Time-invariant part of the settlement rate, per side.
fn site_rates(
    s: &TrackScenario,
    structure: &[u8],
    joints: &[(usize, usize)],
    rng: &mut StreamRng,
) -> [Vec<f64>; 2] {
    let n = s.positions;
    let spread = 0.5 * s.roughness;
    let z = normal(1.0);
    let common: Vec<f64> = (0..n).map(|_| z.sample(rng)).collect();
    let mut rates = [vec![0.0; n], vec![0.0; n]];
    for r in rates.iter_mut() {
        for (l, x) in r.iter_mut().enumerate() {
            let xi = 0.7 * common[l] + 0.71 * z.sample(rng);
            *x = s.base_rate * (spread * xi - spread * spread / 2.0).exp();
        }
    }

    let hotspots = (n as f64 / s.hotspot_spacing).round() as usize;
    for _ in 0..hotspots {
        let centre = rng.gen_range(0.0..n as f64);
        let width: f64 = rng.gen_range(1.5..5.0);
        let amp = s.hotspot_rate * rng.gen_range(0.1..1.0);
        let sides = [rng.gen_range(0.6..1.4), rng.gen_range(0.6..1.4)];
        let reach = (4.0 * width).ceil() as isize;
        let c = centre.floor() as isize;
        for l in (c - reach).max(0)..(c + reach + 1).min(n as isize) {
            let d = l as f64 - centre;
            let bump = amp * (-d * d / (2.0 * width * width)).exp();
            for (side, r) in rates.iter_mut().enumerate() {
                r[l as usize] += sides[side] * bump;
            }
        }
    }

    let dist = boundary_distance(structure);
    let joint_strength = [1.0, 0.5, 1.0, 1.0];
    for l in 0..n {
        let mut extra = s.sensitivity.structure_boundary * (-dist[l] * dist[l] / 18.0).exp();
        for &(p, kind) in joints {
            let d = l as f64 - p as f64;
            if d.abs() <= 6.0 {
                extra += s.sensitivity.joint * joint_strength[kind] * (-d * d / 4.5).exp();
            }
        }
        for r in rates.iter_mut() {
            r[l] += extra;
            if structure[l] == BRIDGE {
                r[l] *= BRIDGE_RATE_FACTOR;
            }
        }
    }
    rates
}

/// Rainfall over one interval for one region: accumulated, max 10 min,
/// max hourly, max daily.
fn rainfall(days: i64, day: i64, rng: &mut StreamRng) -> [f64; 4] {
    let season = 1.0 + 0.6 * (2.0 * std::f64::consts::PI * day as f64 / DAYS_PER_YEAR).sin();
    let mean = DAILY_RAIN * season * days as f64;
    let acc = Gamma::new(2.0, mean / 2.0).expect("positive mean").sample(rng);
    let daily = acc * rng.gen_range(0.15..0.5);
    let hourly = daily * rng.gen_range(0.1..0.35);
    let ten_min = hourly * rng.gen_range(0.25..0.6);
    [acc, ten_min, hourly, daily]
}

/// Scheduled work: stretch `start..end`, category, due inspection.
#[derive(Debug, Clone, Copy)]
struct Work {
    due: usize,
    start: usize,
    end: usize,
    category: usize,
}

struct Interval {
    tonnage: f64,
    rain: [[f64; 4]; 2],
}

fn draw_interval(days: i64, day: i64, rng: &mut StreamRng) -> Interval {
    let tonnage = days as f64 * DAILY_TONNAGE * (1.0 + normal(0.15).sample(rng)).max(0.0);
    Interval {
        tonnage,
        rain: [rainfall(days, day, rng), rainfall(days, day, rng)],
    }
}

pub fn simulate(s: &TrackScenario) -> Result<TrackDataset> {
    s.validate()?;
    let mut rng = substream(s.seed, SIMULATE);
    let n = s.positions;
    let total = s.burn_in + s.inspections;

    let structure = structure_layout(n, &mut rng);
    let joints = joint_layout(n, &mut rng);
    let mut age = ballast_layout(&structure, &mut rng);
    let site = site_rates(s, &structure, &joints, &mut rng);
    let region = |l: usize| usize::from(l >= n / 2);

    let mut days = vec![0i64; total];
    for k in 1..total {
        let j = s.interval_jitter_days;
        days[k] = days[k - 1] + s.interval_days + rng.gen_range(-j..=j);
    }
    let origin = days[s.burn_in];
    for d in &mut days {
        *d -= origin;
    }

    let mut bundle = ExogenousBundle::zeros(s.inspections, n);
    bundle.under_structure.copy_from_slice(&structure);
    for &(p, kind) in &joints {
        bundle.set_joint(p, kind, 1);
    }
    let mut panel = Tensor3::zeros(s.inspections, CHANNELS.len(), n);
    let mut truth = Tensor3::zeros(s.inspections, 2, n);

    let cat_weights = WeightedIndex::new(s.maintenance.category_weights)
        .map_err(|e| Error::Config(format!("maintenance.category_weights: {e}")))?;
    let process = normal(s.noise.process_sigma);
    let small = normal(1.0);

    let mut u = [vec![0.0; n], vec![0.0; n]];
    let mut lateral = [vec![0.0; n], vec![0.0; n]];
    let mut gauge = vec![0.0; n];
    let mut pending: Vec<Work> = Vec::new();
    let mut scheduled = vec![false; n];
    let first_len = s.interval_days;
    let mut interval = draw_interval(first_len, days[0] - first_len, &mut rng);

    for k in 0..total {
        let record = k.checked_sub(s.burn_in);
        let sigma = s.noise.measurement_sigma;

        let v = [
            chord_offset_with(&u[0], sigma, &mut rng)?,
            chord_offset_with(&u[1], sigma, &mut rng)?,
        ];
        let lat = [
            chord_offset_with(&lateral[0], sigma, &mut rng)?,
            chord_offset_with(&lateral[1], sigma, &mut rng)?,
        ];
        let cross_u: Vec<f64> = u[0].iter().zip(&u[1]).map(|(a, b)| a - b).collect();
        let cross = chord_offset_with(&cross_u, sigma, &mut rng)?;
        let speed_base = 260.0 + 5.0 * small.sample(&mut rng);
        for g in gauge.iter_mut() {
            *g = 0.9 * *g + 0.1 * small.sample(&mut rng);
        }

        if let Some(t) = record {
            for l in 0..n {
                let speed = speed_base - if structure[l] == 1 { 30.0 } else { 0.0 } + small.sample(&mut rng);
                let twist = cross[l] - cross[l.saturating_sub(5)];
                let values = [
                    v[0][l],
                    v[1][l],
                    lat[0][l],
                    lat[1][l],
                    gauge[l] + 0.3 * (lat[0][l] - lat[1][l]),
                    cross[l],
                    twist,
                    0.05 * speed / 250.0 * (v[0][l].abs() + v[1][l].abs()) + 0.02 * small.sample(&mut rng).abs(),
                    0.05 * (lat[0][l].abs() + lat[1][l].abs()) + 0.02 * small.sample(&mut rng).abs(),
                    speed,
                ];
                for (c, x) in values.iter().enumerate() {
                    panel.set(t, c, l, *x);
                }
                truth.set(t, 0, l, u[0][l]);
                truth.set(t, 1, l, u[1][l]);
                bundle.ballast_age[t * n + l] = age[l];
                bundle.tonnage[t * n + l] = interval.tonnage;
                for c in 0..4 {
                    bundle.set_rainfall(t, c, l, interval.rain[region(l)][c]);
                }
            }
        }

        if k + 1 == total {
            break;
        }

        // Scheduling from this inspection's observations.
        let m = &s.maintenance;
        let below = |l: usize| v[0][l] < m.threshold || v[1][l] < m.threshold;
        let mut l = 0;
        while l < n {
            if below(l) && !scheduled[l] {
                let start = l;
                // Gaps of up to two metres join one stretch.
                let mut end = l + 1;
                while let Some(j) = (end..(end + 3).min(n)).find(|&j| below(j) && !scheduled[j]) {
                    end = j + 1;
                }
                if rng.gen_bool(m.trigger_probability) {
                    pending.push(Work {
                        due: k + m.scheduling_delay,
                        start: start.saturating_sub(m.margin),
                        end: (end + m.margin).min(n),
                        category: cat_weights.sample(&mut rng),
                    });
                    for x in &mut scheduled[start.saturating_sub(m.margin)..(end + m.margin).min(n)] {
                        *x = true;
                    }
                }
                l = end;
            } else {
                l += 1;
            }
        }
        if rng.gen_bool(m.campaign_probability) {
            let start = rng.gen_range(0..n);
            let end = (start + rng.gen_range(20..=80)).min(n);
            let worst = (start..end)
                .map(|l| v[0][l].min(v[1][l]))
                .fold(f64::INFINITY, f64::min);
            if worst < m.threshold / 2.0 {
                pending.push(Work {
                    due: k + m.scheduling_delay,
                    start,
                    end,
                    category: cat_weights.sample(&mut rng),
                });
            }
        }

        let due: Vec<Work> = pending.iter().filter(|w| w.due == k).copied().collect();
        pending.retain(|w| w.due != k);
        for w in &due {
            for x in &mut scheduled[w.start..w.end] {
                *x = false;
            }
        }
        for w in &pending {
            for x in &mut scheduled[w.start..w.end] {
                *x = true;
            }
        }
        if let Some(t) = record {
            for w in &due {
                for l in w.start..w.end {
                    bundle.set_maintenance(t, w.category, l, 1);
                }
            }
        }

        // Settlement over the interval k -> k + 1.
        let dt = days[k + 1] - days[k];
        interval = draw_interval(dt, days[k + 1], &mut rng);
        let sens = &s.sensitivity;
        let load = (1.0 - sens.tonnage) + sens.tonnage * interval.tonnage / (DAILY_TONNAGE * dt as f64);
        let wet = |l: usize| {
            let ratio = interval.rain[region(l)][0] / (DAILY_RAIN * dt as f64);
            (1.0 - sens.rainfall) + sens.rainfall * ratio
        };
        for side in 0..2 {
            let v_true = chord_offset_exact(&u[side])?;
            for l in 0..n {
                let dip = if l >= DYNAMIC_LAG { (-v_true[l - DYNAMIC_LAG]).max(0.0) } else { 0.0 };
                let rate = site[side][l] + sens.ballast_age * age[l] + sens.dynamic_load * dip;
                u[side][l] -= dt as f64 * rate * load * wet(l);
                if s.noise.process_sigma > 0.0 {
                    u[side][l] += process.sample(&mut rng);
                }
            }
        }
        let drift = (dt as f64 / 10.0).sqrt();
        for side in lateral.iter_mut() {
            for x in side.iter_mut() {
                *x = 0.995 * *x + 0.05 * drift * small.sample(&mut rng);
            }
        }
        for l in 0..n {
            if structure[l] != BRIDGE {
                age[l] += dt as f64 / DAYS_PER_YEAR;
            }
        }

        for w in &due {
            let eff = m.effectiveness[w.category];
            let sides: &[usize] = match w.category {
                RIGHT_RAIL_REPLACEMENT => &[1],
                LEFT_RAIL_REPLACEMENT => &[0],
                _ => &[0, 1],
            };
            for &side in sides {
                for x in &mut u[side][w.start..w.end] {
                    *x *= 1.0 - eff;
                }
            }
            if w.category == BALLAST_REPLACEMENT {
                for l in w.start..w.end {
                    if structure[l] != BRIDGE {
                        age[l] = 0.0;
                    }
                }
            }
        }
    }
    debug_assert_eq!(MAINTENANCE_CATEGORIES.len(), 9);
    debug_assert_eq!(JOINT_TYPES.len(), 4);

    let provenance = format!("simulated seed={} scenario={:016x}", s.seed, scenario_hash(s));
    Ok(TrackDataset {
        dates: days[s.burn_in..].to_vec(),
        irregularities: panel,
        exogenous: bundle,
        ground_truth_u: Some(truth),
        provenance,
    })
}

/// FNV-1a over the scenario's JSON form.
fn scenario_hash(s: &TrackScenario) -> u64 {
    let text = serde_json::to_string(s).expect("scenario serializes");
    text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
