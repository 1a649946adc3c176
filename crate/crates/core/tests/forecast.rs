use trackcast::cells::{unroll, CellKind};
use trackcast::embed::{embed_bundle, ExogenousFlags, PassthroughScaling, Source};
use trackcast::forecast::{
    linear_baseline, linear_forecast, load_checkpoint, save_checkpoint, train, ForecastModel, ModelConfig,
    Standardization, TrainConfig, CHECKPOINT_VERSION,
};
use trackcast::nn::{conv1d, ConvKernel1D, Tensor2, Tensor3};
use trackcast::trackgen::{make_windows, simulate, split_by_ratio, TrackDataset, TrackScenario, DEFAULT_SPLIT};
use trackcast::Error;

fn toy_config(variant: CellKind) -> ModelConfig {
    ModelConfig {
        variant,
        tau: 2,
        depth: 1,
        hidden: 2,
        kernel_width: 3,
        ..ModelConfig::default()
    }
}

fn toy_data(positions: usize, inspections: usize, seed: u64) -> TrackDataset {
    simulate(&TrackScenario {
        positions,
        inspections,
        seed,
        ..TrackScenario::default()
    })
    .unwrap()
}

fn quick_train() -> TrainConfig {
    TrainConfig {
        epochs: 4,
        learning_rate: 0.01,
        batch_size: 4,
        crop: 24,
        crop_margin: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_network_outputs_its_bias() {
    let ds = toy_data(24, 8, 0);
    let mut model = ForecastModel::new(toy_config(CellKind::ConvLstm), 24, 1).unwrap();
    for id in model.store.ids().collect::<Vec<_>>() {
        model.store.get_mut(id).data.fill(0.0);
    }
    model.store.get_mut(model.output_bias).data.copy_from_slice(&[0.3, -0.7]);
    let w = &make_windows(ds.inspections(), 2).unwrap().windows[3];
    let y = model.forecast_window(&ds, w).unwrap();
    assert!(y.row(0).iter().all(|&v| v == 0.3));
    assert!(y.row(1).iter().all(|&v| v == -0.7));
}

#[test]
fn forecast_equals_manual_composition() {
    let ds = toy_data(16, 8, 2);
    for variant in [CellKind::ConvLstm, CellKind::Lstm, CellKind::Gru] {
        let mut config = toy_config(variant);
        config.depth = 2;
        let model = ForecastModel::new(config.clone(), 16, 5).unwrap();
        let window = 3..5;

        let z = embed_bundle(&ds.exogenous, &model.embedding, &model.store, window.clone(), &PassthroughScaling::identity())
            .unwrap();
        let mut seq: Vec<Tensor2> = window
            .clone()
            .enumerate()
            .map(|(k, t)| {
                let x = ds.irregularities.slice(t);
                let zk = z.slice(k);
                Tensor2::from_vec(72, 16, [x.data(), zk.data()].concat()).unwrap()
            })
            .collect();
        for layer in &model.layers {
            seq = unroll(layer, &model.store, &seq).unwrap();
        }
        let features: Vec<f64> = seq.iter().flat_map(|h| h.data().iter().copied()).collect();
        let features = Tensor2::from_vec(2 * 2, 16, features).unwrap();
        let width = config.output_width();
        let kernel = ConvKernel1D::new(
            2,
            4,
            width,
            model.store.get(model.output_weight).data.clone(),
            model.store.get(model.output_bias).data.clone(),
        )
        .unwrap();
        let want = conv1d(&features, &kernel).unwrap();

        let x_window = ds.irregularities.window(3, 2).unwrap();
        let exo_window = ds.exogenous.slice_time(3, 2).unwrap();
        let got = model.forecast(&x_window, &exo_window).unwrap();
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12, "{variant:?}: {a} vs {b}");
        }
    }
}

#[test]
fn exogenous_flags_set_input_width() {
    let mut c = ModelConfig::default();
    assert_eq!(c.input_channels(), 72);
    c.exogenous = ExogenousFlags::none();
    assert_eq!(c.input_channels(), 10);
    c.exogenous = ExogenousFlags::all().without(Source::Maintenance);
    assert_eq!(c.input_channels(), 36);
}

#[test]
fn all_variants_share_the_embedding() {
    let models: Vec<ForecastModel> = [CellKind::ConvLstm, CellKind::Lstm, CellKind::Gru]
        .into_iter()
        .map(|v| ForecastModel::new(toy_config(v), 16, 9).unwrap())
        .collect();
    let embed = |m: &ForecastModel| -> Vec<Vec<f64>> {
        m.embedding.ids().iter().map(|&id| m.store.get(id).data.clone()).collect()
    };
    assert_eq!(embed(&models[0]), embed(&models[1]));
    assert_eq!(embed(&models[0]), embed(&models[2]));
    for m in &models {
        assert_eq!(m.layers[0].input_channels(), 72);
    }
}

#[test]
fn wrong_shapes_are_dimension_errors() {
    let ds = toy_data(16, 8, 0);
    let model = ForecastModel::new(toy_config(CellKind::ConvLstm), 20, 0).unwrap();
    let w = &make_windows(8, 2).unwrap().windows[0];
    assert!(matches!(model.forecast_window(&ds, w), Err(Error::Dimension(_))));
    let model = ForecastModel::new(toy_config(CellKind::ConvLstm), 16, 0).unwrap();
    let x = ds.irregularities.window(0, 3).unwrap();
    let exo = ds.exogenous.slice_time(0, 3).unwrap();
    assert!(matches!(model.forecast(&x, &exo), Err(Error::Dimension(_))));
    assert!(ForecastModel::new(ModelConfig { kernel_width: 4, ..ModelConfig::default() }, 16, 0).is_err());
}

#[test]
fn constant_target_is_learned() {
    let ds = simulate(&TrackScenario::static_track(16, 16)).unwrap();
    let s = split_by_ratio(&ds, (0.5, 0.25)).unwrap();
    let model = ForecastModel::new(toy_config(CellKind::ConvLstm), 16, 3).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let out = train(model, &s.train, &s.validation, &cfg, 3).unwrap();
    let h = &out.history.train;
    assert!(h[0] > 1e-3, "initial loss {}", h[0]);
    assert!(h[199] < h[0] * 1e-3, "loss went from {} to {}", h[0], h[199]);
}

#[test]
fn training_is_reproducible_and_keeps_the_best_epoch() {
    let ds = toy_data(48, 30, 1);
    let s = split_by_ratio(&ds, DEFAULT_SPLIT).unwrap();
    let run = || {
        let model = ForecastModel::new(toy_config(CellKind::ConvLstm), 48, 7).unwrap();
        train(model, &s.train, &s.validation, &quick_train(), 7).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history.to_csv(), b.history.to_csv());
    assert_eq!(save_checkpoint(&a.model), save_checkpoint(&b.model));

    let best = a.history.best_so_far();
    assert!(best.windows(2).all(|w| w[1] <= w[0]));
    let argmin = a
        .history
        .validation
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    assert_eq!(a.best_epoch, argmin.0 + 1);
    assert!(a.history.to_csv().starts_with("epoch,train_loss,val_loss\n1,"));
}

#[test]
fn non_finite_loss_names_the_epoch() {
    let mut ds = toy_data(24, 20, 0);
    for v in ds.irregularities.data_mut() {
        *v *= 1e160;
    }
    let s = split_by_ratio(&ds, DEFAULT_SPLIT).unwrap();
    let model = ForecastModel::new(toy_config(CellKind::Gru), 24, 0).unwrap();
    let cfg = TrainConfig {
        standardize: false,
        ..quick_train()
    };
    match train(model, &s.train, &s.validation, &cfg, 0) {
        Err(e @ Error::Diverged { epoch: 1, .. }) => assert!(e.is_numeric()),
        other => panic!("expected divergence at epoch 1, got {:?}", other.map(|o| o.best_epoch)),
    }
}

#[test]
fn short_splits_are_rejected() {
    let ds = toy_data(16, 20, 0);
    let model = ForecastModel::new(toy_config(CellKind::Lstm), 16, 0).unwrap();
    let short = ds.slice(0..2).unwrap();
    assert!(matches!(train(model, &short, &ds, &quick_train(), 0), Err(Error::Size(_))));
}

fn trained_model() -> (ForecastModel, TrackDataset) {
    let ds = toy_data(32, 24, 4);
    let s = split_by_ratio(&ds, DEFAULT_SPLIT).unwrap();
    let model = ForecastModel::new(toy_config(CellKind::ConvLstm), 32, 1).unwrap();
    let out = train(model, &s.train, &s.validation, &quick_train(), 1).unwrap();
    (out.model, ds)
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (model, ds) = trained_model();
    assert_ne!(model.scaling, Standardization::identity());
    let bytes = save_checkpoint(&model);
    let back = load_checkpoint(&bytes).unwrap();
    assert_eq!(save_checkpoint(&back), bytes);
    assert_eq!(back.config, model.config);
    assert_eq!(back.scaling, model.scaling);
    for w in &make_windows(ds.inspections(), 2).unwrap().windows {
        let (a, b) = (model.forecast_window(&ds, w).unwrap(), back.forecast_window(&ds, w).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn corrupt_checkpoints_are_load_errors() {
    let (model, _) = trained_model();
    let bytes = save_checkpoint(&model);
    for cut in [0, 4, 8, 11, 20, 60, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(load_checkpoint(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut at {cut}");
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(matches!(load_checkpoint(&longer), Err(Error::Checkpoint(_))));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(load_checkpoint(&bad), Err(Error::Checkpoint(_))));

    let mut bad = bytes.clone();
    bad[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    match load_checkpoint(&bad) {
        Err(Error::Checkpoint(m)) => assert!(m.contains("version"), "{m}"),
        other => panic!("expected a version error, got {:?}", other.map(|m| m.config)),
    }

    // Flip the hidden size in the config block so the shape table no longer fits.
    let text = String::from_utf8_lossy(&bytes).into_owned();
    let at = text.find("\"hidden\":2").expect("config block holds the hidden size");
    let mut bad = bytes.clone();
    bad[at + "\"hidden\":".len()] = b'3';
    assert!(matches!(load_checkpoint(&bad), Err(Error::Checkpoint(_))));
}

#[test]
fn linear_baseline_fits_the_last_three_inspections() {
    let ds = toy_data(16, 12, 6);
    let w = &make_windows(ds.inspections(), 6).unwrap().windows[2];
    let got = linear_baseline(&ds, w).unwrap();
    for c in 0..2 {
        for l in 0..16 {
            let pts: Vec<(f64, f64)> = (w.inputs.end - 3..w.inputs.end)
                .map(|t| (ds.dates[t] as f64, ds.irregularities.get(t, c, l)))
                .collect();
            // Normal equations solved directly, uncentred.
            let n = 3.0;
            let (sx, sy) = (pts.iter().map(|p| p.0).sum::<f64>(), pts.iter().map(|p| p.1).sum::<f64>());
            let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
            let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
            let b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
            let a = (sy - b * sx) / n;
            let want = a + b * ds.dates[w.target] as f64;
            assert!((got.get(c, l) - want).abs() < 1e-9, "c {c} l {l}");
            assert_eq!(got.get(c, l), linear_forecast(&pts, ds.dates[w.target] as f64).unwrap());
        }
    }
    let short = make_windows(ds.inspections(), 2).unwrap();
    assert!(matches!(linear_baseline(&ds, &short.windows[0]), Err(Error::Size(_))));
}

#[test]
fn maintenance_response_stays_local() {
    let ds = toy_data(96, 60, 8);
    let s = split_by_ratio(&ds, DEFAULT_SPLIT).unwrap();
    let config = ModelConfig::desk();
    let model = ForecastModel::new(config.clone(), 96, 2).unwrap();
    let out = train(
        model,
        &s.train,
        &s.validation,
        &TrainConfig {
            epochs: 2,
            ..TrainConfig::desk()
        },
        2,
    )
    .unwrap();
    let w = &make_windows(ds.inspections(), config.tau).unwrap().windows[10];
    let x: Tensor3 = ds.irregularities.window(w.inputs.start, config.tau).unwrap();
    let exo = ds.exogenous.slice_time(w.inputs.start, config.tau).unwrap();
    let base = out.model.forecast(&x, &exo).unwrap();
    let (t, l0) = (config.tau - 1, 20);
    let mut flagged = exo.clone();
    let was = flagged.maintenance_at(t, 0, l0);
    flagged.set_maintenance(t, 0, l0, 1 - was);
    let moved = out.model.forecast(&x, &flagged).unwrap();
    let delta = |l: usize| (0..2).map(|c| (moved.get(c, l) - base.get(c, l)).abs()).fold(0.0, f64::max);
    let near = delta(l0);
    let far = (l0 + 50..96).map(delta).fold(0.0, f64::max);
    assert!(near > 0.0);
    assert!(near > 10.0 * far, "near {near}, far {far}");
}
