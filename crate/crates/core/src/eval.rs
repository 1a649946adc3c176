//! Forecast metrics, threshold subsets, report tables, ablation grid and the
//! maintenance-frequency diagnostic.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embed::{ExogenousFlags, Source, MAINTENANCE_CATEGORIES};
use crate::error::{Error, Result};
use crate::forecast::{linear_baseline, train, ForecastModel, ModelConfig, TrainConfig, TrainOutcome};
use crate::nn::Tensor2;
use crate::par;
use crate::trackgen::{make_windows, Splits, TrackDataset, Window, TARGET_CHANNELS, VERTICAL_LEFT};

/// One observation and its forecast, tagged with where it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub y: f64,
    pub y_hat: f64,
    pub t: usize,
    pub l: usize,
    pub side: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSet {
    pairs: Vec<Pair>,
}

impl PairSet {
    /// Rejects repeated `(t, l, side)` indices.
    pub fn new(pairs: Vec<Pair>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for p in &pairs {
            if !seen.insert((p.t, p.l, p.side)) {
                return Err(Error::Usage(format!(
                    "duplicate pair index (t={}, l={}, side={})",
                    p.t, p.l, p.side
                )));
            }
        }
        Ok(Self { pairs })
    }

    /// Pairs from parallel slices, indexed by position on side 0 of step 0.
    pub fn from_values(y: &[f64], y_hat: &[f64]) -> Result<Self> {
        if y.len() != y_hat.len() {
            return Err(Error::dim(format!("{} observations vs {} predictions", y.len(), y_hat.len())));
        }
        Ok(Self {
            pairs: y
                .iter()
                .zip(y_hat)
                .enumerate()
                .map(|(l, (&y, &y_hat))| Pair { y, y_hat, t: 0, l, side: 0 })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    fn require_nonempty(&self, what: &str) -> Result<()> {
        if self.pairs.is_empty() {
            Err(Error::Usage(format!("{what} of an empty pair set")))
        } else {
            Ok(())
        }
    }
}

/// `sqrt(mean((y - ŷ)^2))`.
pub fn rmse(pairs: &PairSet) -> Result<f64> {
    pairs.require_nonempty("rmse")?;
    let ss: f64 = pairs.pairs.iter().map(|p| (p.y - p.y_hat).powi(2)).sum();
    Ok((ss / pairs.len() as f64).sqrt())
}

/// `1 - SS_res / SS_tot` around the mean of the observations.
pub fn r_squared(pairs: &PairSet) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::Degenerate(format!("r_squared needs at least 2 pairs, got {}", pairs.len())));
    }
    let n = pairs.len() as f64;
    let mean = pairs.pairs.iter().map(|p| p.y).sum::<f64>() / n;
    let ss_tot: f64 = pairs.pairs.iter().map(|p| (p.y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Degenerate("observations are constant (SS_tot = 0)".into()));
    }
    let ss_res: f64 = pairs.pairs.iter().map(|p| (p.y - p.y_hat).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Percentage of pairs with `|y - ŷ| < epsilon` (strict).
pub fn accuracy(pairs: &PairSet, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Usage(format!("tolerance must be > 0, got {epsilon}")));
    }
    pairs.require_nonempty("accuracy")?;
    let inside = pairs.pairs.iter().filter(|p| (p.y - p.y_hat).abs() < epsilon).count();
    Ok(100.0 * inside as f64 / pairs.len() as f64)
}

/// Pairs whose observed value is below `alpha`.
pub fn threshold_subset(pairs: &PairSet, alpha: f64) -> PairSet {
    PairSet {
        pairs: pairs.pairs.iter().filter(|p| p.y < alpha).copied().collect(),
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Degenerate("spearman needs at least 2 values".into()));
    }
    let (ra, rb) = (ranks(a)?, ranks(b)?);
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Degenerate("spearman of a constant series".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

fn ranks(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::Numeric {
            name: "spearman".into(),
            detail: "NaN input".into(),
        });
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    Ok(out)
}

/// Threshold levels and tolerances reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub alphas: Vec<f64>,
    pub epsilons: Vec<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            alphas: vec![-4.0, -6.0],
            epsilons: vec![0.3, 0.5, 1.0],
        }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for e in &self.epsilons {
            if !(*e > 0.0) {
                bad.push(format!("evaluation.epsilons: {e} must be > 0"));
            }
        }
        for a in &self.alphas {
            if !a.is_finite() {
                bad.push(format!("evaluation.alphas: {a} must be finite"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }
}

/// Metrics on one subset; `None` marks a metric absent because the subset is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetMetrics {
    pub alpha: Option<f64>,
    pub n: usize,
    pub rmse: Option<f64>,
    /// `(epsilon, accuracy)`.
    pub accuracy: Vec<(f64, Option<f64>)>,
}

impl SubsetMetrics {
    fn compute(pairs: &PairSet, alpha: Option<f64>, epsilons: &[f64]) -> Result<Self> {
        let empty = pairs.is_empty();
        Ok(Self {
            alpha,
            n: pairs.len(),
            rmse: if empty { None } else { Some(rmse(pairs)?) },
            accuracy: epsilons
                .iter()
                .map(|&e| Ok((e, if empty { None } else { Some(accuracy(pairs, e)?) })))
                .collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub entire: SubsetMetrics,
    /// Entire set only.
    pub r_squared: Option<f64>,
    pub subsets: Vec<SubsetMetrics>,
    /// Both sides pooled per position.
    pub per_position_rmse: Vec<f64>,
}

impl EvalReport {
    pub fn subset(&self, alpha: f64) -> Option<&SubsetMetrics> {
        self.subsets.iter().find(|s| s.alpha == Some(alpha))
    }
}

pub fn evaluate_pairs(pairs: &PairSet, positions: usize, settings: &EvalSettings) -> Result<EvalReport> {
    settings.validate()?;
    let entire = SubsetMetrics::compute(pairs, None, &settings.epsilons)?;
    let r2 = match r_squared(pairs) {
        Ok(v) => Some(v),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    let subsets = settings
        .alphas
        .iter()
        .map(|&a| SubsetMetrics::compute(&threshold_subset(pairs, a), Some(a), &settings.epsilons))
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        entire,
        r_squared: r2,
        subsets,
        per_position_rmse: per_position_rmse(pairs, positions)?,
    })
}

/// RMSE per position over both sides; positions without pairs are NaN.
pub fn per_position_rmse(pairs: &PairSet, positions: usize) -> Result<Vec<f64>> {
    let mut ss = vec![0.0; positions];
    let mut n = vec![0usize; positions];
    for p in &pairs.pairs {
        if p.l >= positions {
            return Err(Error::dim(format!("pair at position {} outside {positions}", p.l)));
        }
        ss[p.l] += (p.y - p.y_hat).powi(2);
        n[p.l] += 1;
    }
    Ok(ss
        .iter()
        .zip(&n)
        .map(|(s, &k)| if k == 0 { f64::NAN } else { (s / k as f64).sqrt() })
        .collect())
}

/// Pairs for every window target, predictions from `predict`.
pub fn collect_pairs<F>(ds: &TrackDataset, windows: &[Window], predict: F) -> Result<PairSet>
where
    F: Fn(&Window) -> Result<Tensor2> + Sync + Send,
{
    let preds = par::map(windows, |w| predict(w));
    let mut pairs = Vec::with_capacity(windows.len() * TARGET_CHANNELS * ds.positions());
    for (w, pred) in windows.iter().zip(preds) {
        let pred = pred?;
        if pred.channels() != TARGET_CHANNELS || pred.positions() != ds.positions() {
            return Err(Error::dim("prediction shape does not match the target"));
        }
        for side in 0..TARGET_CHANNELS {
            let y = ds.irregularities.row(w.target, VERTICAL_LEFT + side);
            for (l, (&y, &y_hat)) in y.iter().zip(pred.row(side)).enumerate() {
                pairs.push(Pair {
                    y,
                    y_hat,
                    t: w.target,
                    l,
                    side,
                });
            }
        }
    }
    Ok(PairSet { pairs })
}

pub fn evaluate_model(model: &ForecastModel, split: &TrackDataset, settings: &EvalSettings) -> Result<EvalReport> {
    let set = make_windows(split.inspections(), model.config.tau)?;
    let pairs = collect_pairs(split, &set.windows, |w| model.forecast_window(split, w))?;
    evaluate_pairs(&pairs, split.positions(), settings)
}

/// Linear baseline on the same targets a model with window `tau` would see.
pub fn evaluate_linear(split: &TrackDataset, tau: usize, settings: &EvalSettings) -> Result<EvalReport> {
    let set = make_windows(split.inspections(), tau)?;
    let pairs = collect_pairs(split, &set.windows, |w| linear_baseline(split, w))?;
    evaluate_pairs(&pairs, split.positions(), settings)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn metric_header(settings: &EvalSettings) -> String {
    let mut h = String::from("n_entire,rmse_entire,r2_entire");
    for a in &settings.alphas {
        let _ = write!(h, ",n_lt_{a},rmse_lt_{a}");
    }
    for a in &settings.alphas {
        for e in &settings.epsilons {
            let _ = write!(h, ",acc_lt_{a}_eps_{e}");
        }
    }
    h
}

fn metric_fields(r: Option<&EvalReport>, settings: &EvalSettings) -> String {
    let cols = 3 + 2 * settings.alphas.len() + settings.alphas.len() * settings.epsilons.len();
    let Some(r) = r else {
        return vec![""; cols].join(",");
    };
    let mut f = format!("{},{},{}", r.entire.n, opt(r.entire.rmse), opt(r.r_squared));
    for s in &r.subsets {
        let _ = write!(f, ",{},{}", s.n, opt(s.rmse));
    }
    for s in &r.subsets {
        for (_, acc) in &s.accuracy {
            let _ = write!(f, ",{}", opt(*acc));
        }
    }
    f
}

/// `comparison.csv`: one row per model.
pub fn comparison_csv(rows: &[(String, EvalReport)], settings: &EvalSettings) -> String {
    let mut s = format!("model,{}\n", metric_header(settings));
    for (name, r) in rows {
        let _ = writeln!(s, "{name},{}", metric_fields(Some(r), settings));
    }
    s
}

/// One row of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationCase {
    WithAll,
    Without(Source),
    WithoutAll,
}

impl AblationCase {
    /// The full grid in table order.
    pub fn grid() -> Vec<AblationCase> {
        let mut v = vec![AblationCase::WithAll];
        v.extend(Source::ALL.iter().map(|&s| AblationCase::Without(s)));
        v.push(AblationCase::WithoutAll);
        v
    }

    pub fn name(&self) -> String {
        match self {
            AblationCase::WithAll => "with-all".into(),
            AblationCase::WithoutAll => "without-all".into(),
            AblationCase::Without(s) => format!("without-{}", s.name().replace('_', "-")),
        }
    }

    pub fn flags(&self) -> ExogenousFlags {
        match self {
            AblationCase::WithAll => ExogenousFlags::all(),
            AblationCase::WithoutAll => ExogenousFlags::none(),
            AblationCase::Without(s) => ExogenousFlags::all().without(*s),
        }
    }

    /// Comma-separated case names.
    pub fn parse_list(list: &str) -> Result<Vec<AblationCase>> {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl FromStr for AblationCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationCase::grid()
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                let names: Vec<String> = AblationCase::grid().iter().map(|c| c.name()).collect();
                Error::Usage(format!("unknown ablation case `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub case: AblationCase,
    pub config: ModelConfig,
    /// Test-split report, or the failure message.
    pub outcome: std::result::Result<EvalReport, String>,
    /// Present when training succeeded.
    pub trained: Option<TrainOutcome>,
}

/// Trains one model per case with everything but the exogenous flags shared,
/// and evaluates it on the test split.
pub fn run_ablation(
    base: &ModelConfig,
    training: &TrainConfig,
    splits: &Splits,
    cases: &[AblationCase],
    seed: u64,
    settings: &EvalSettings,
) -> Vec<AblationRow> {
    par::map(cases, |&case| {
        let config = ModelConfig {
            exogenous: case.flags(),
            ..base.clone()
        };
        let trained = ForecastModel::new(config.clone(), splits.train.positions(), seed)
            .and_then(|model| train(model, &splits.train, &splits.validation, training, seed));
        match trained.and_then(|t| Ok((evaluate_model(&t.model, &splits.test, settings)?, t))) {
            Ok((report, t)) => AblationRow {
                case,
                config,
                outcome: Ok(report),
                trained: Some(t),
            },
            Err(e) => AblationRow {
                case,
                config,
                outcome: Err(e.to_string()),
                trained: None,
            },
        }
    })
}

/// `ablation.csv`: flags per source, status, then the metric columns.
pub fn ablation_csv(rows: &[AblationRow], settings: &EvalSettings) -> String {
    let mut s = String::from("case");
    for src in Source::ALL {
        let _ = write!(s, ",{}", src.name());
    }
    let _ = writeln!(s, ",status,{}", metric_header(settings));
    for r in rows {
        let _ = write!(s, "{}", r.case.name());
        for src in Source::ALL {
            let _ = write!(s, ",{}", u8::from(r.config.exogenous.get(src)));
        }
        let status = match &r.outcome {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("failed: {}", e.replace([',', '\n'], ";")),
        };
        let _ = writeln!(s, ",{status},{}", metric_fields(r.outcome.as_ref().ok(), settings));
    }
    s
}

/// Maintenance flags (all categories) per position per year of `ds`.
pub fn maintenance_frequency(ds: &TrackDataset) -> Result<Vec<f64>> {
    let years = ds.years_spanned();
    if !(years > 0.0) {
        return Err(Error::Degenerate("dataset spans no time".into()));
    }
    let x = &ds.exogenous;
    Ok((0..ds.positions())
        .map(|l| {
            let flags: usize = (0..ds.inspections())
                .map(|t| {
                    (0..MAINTENANCE_CATEGORIES.len())
                        .filter(|&k| x.maintenance_at(t, k, l) != 0)
                        .count()
                })
                .sum();
            flags as f64 / years
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyRow {
    pub position: usize,
    pub annual_maintenance_count: f64,
    pub rmse_model_a: f64,
    pub rmse_model_b: f64,
}

pub fn maintenance_frequency_report(ds: &TrackDataset, rmse_a: &[f64], rmse_b: &[f64]) -> Result<Vec<FrequencyRow>> {
    let l_n = ds.positions();
    if rmse_a.len() != l_n || rmse_b.len() != l_n {
        return Err(Error::dim(format!(
            "per-position RMSE lengths {} and {} do not match {l_n} positions",
            rmse_a.len(),
            rmse_b.len()
        )));
    }
    let freq = maintenance_frequency(ds)?;
    Ok((0..l_n)
        .map(|l| FrequencyRow {
            position: l,
            annual_maintenance_count: freq[l],
            rmse_model_a: rmse_a[l],
            rmse_model_b: rmse_b[l],
        })
        .collect())
}

pub fn frequency_csv(rows: &[FrequencyRow]) -> String {
    let mut s = String::from("position,annual_maintenance_count,rmse_model_a,rmse_model_b\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6}",
            r.position, r.annual_maintenance_count, r.rmse_model_a, r.rmse_model_b
        );
    }
    s
}
