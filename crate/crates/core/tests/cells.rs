use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trackcast::cells::{
    convlstm_step, gru_step, lstm_step, unroll, CellKind, CellState, ConvLstmCellParams,
    PointwiseRnnParams, RecurrentLayer,
};
use trackcast::nn::{ParamStore, Tensor2};

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn scalar(v: f64) -> Tensor2 {
    Tensor2::filled(1, 1, v)
}

fn conv_cell(store: &mut ParamStore, cin: usize, h: usize, width: usize, len: usize, seed: u64) -> ConvLstmCellParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ConvLstmCellParams::init(store, "cell", cin, h, width, len, &mut rng).unwrap()
}

#[test]
fn convlstm_zero_parameters_halve_the_cell() {
    let mut store = ParamStore::new();
    let p = conv_cell(&mut store, 2, 3, 3, 5, 1);
    store.zero_all();
    let x = Tensor2::filled(2, 5, 0.7);
    let c0 = Tensor2::from_vec(3, 5, (0..15).map(|k| k as f64 - 7.0).collect()).unwrap();
    let prev = CellState {
        hidden: Tensor2::filled(3, 5, 0.3),
        cell: c0.clone(),
    };
    let next = convlstm_step(&x, &prev, &p, &store).unwrap();
    for k in 0..15 {
        let c = c0.data()[k];
        assert_eq!(next.cell.data()[k], 0.5 * c);
        assert_eq!(next.hidden.data()[k], 0.5 * (0.5 * c).tanh());
    }

    let still = convlstm_step(&Tensor2::zeros(2, 5), &CellState::zeros(3, 5), &p, &store).unwrap();
    assert!(still.hidden.data().iter().all(|&v| v == 0.0));
    assert!(still.cell.data().iter().all(|&v| v == 0.0));
}

#[test]
fn convlstm_scalar_matches_transcribed_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..50 {
        let mut store = ParamStore::new();
        let p = conv_cell(&mut store, 1, 1, 1, 1, seed);
        let v = |store: &ParamStore, id| store.get(id).data.clone();
        let (wx, wh, b) = (v(&store, p.w_x), v(&store, p.w_h), v(&store, p.bias));
        let (wci, wcf, wco) = (v(&store, p.peep_i)[0], v(&store, p.peep_f)[0], v(&store, p.peep_o)[0]);
        let (x, h0, c0) = (
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-2.0..2.0),
        );
        let i = sig(wx[0] * x + wh[0] * h0 + wci * c0 + b[0]);
        let f = sig(wx[1] * x + wh[1] * h0 + wcf * c0 + b[1]);
        let c = f * c0 + i * (wx[2] * x + wh[2] * h0 + b[2]).tanh();
        let o = sig(wx[3] * x + wh[3] * h0 + wco * c + b[3]);
        let h = o * c.tanh();

        let prev = CellState {
            hidden: scalar(h0),
            cell: scalar(c0),
        };
        let next = convlstm_step(&scalar(x), &prev, &p, &store).unwrap();
        assert!((next.cell.data()[0] - c).abs() < 1e-12);
        assert!((next.hidden.data()[0] - h).abs() < 1e-12);
    }
}

#[test]
fn convlstm_rejects_wrong_shapes() {
    let mut store = ParamStore::new();
    let p = conv_cell(&mut store, 2, 3, 3, 5, 1);
    assert!(convlstm_step(&Tensor2::zeros(3, 5), &CellState::zeros(3, 5), &p, &store).is_err());
    assert!(convlstm_step(&Tensor2::zeros(2, 6), &CellState::zeros(3, 6), &p, &store).is_err());
}

#[test]
fn convlstm_single_step_is_spatially_local() {
    let (cin, h, width, len) = (2, 2, 5, 20);
    let mut store = ParamStore::new();
    let p = conv_cell(&mut store, cin, h, width, len, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = Tensor2::from_vec(cin, len, (0..cin * len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let prev = CellState {
        hidden: Tensor2::from_vec(h, len, (0..h * len).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap(),
        cell: Tensor2::from_vec(h, len, (0..h * len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
    };
    let a = convlstm_step(&base, &prev, &p, &store).unwrap();
    let l0 = 9;
    let mut bumped = base.clone();
    bumped.set(1, l0, base.get(1, l0) + 0.5);
    let b = convlstm_step(&bumped, &prev, &p, &store).unwrap();
    for ch in 0..h {
        for l in 0..len {
            let changed = a.hidden.get(ch, l) != b.hidden.get(ch, l);
            if l.abs_diff(l0) > width / 2 {
                assert!(!changed, "position {l} changed");
            }
        }
    }
}

fn pointwise(kind: CellKind, cin: usize, h: usize, seed: u64) -> (ParamStore, PointwiseRnnParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = PointwiseRnnParams::init(&mut store, "rnn", kind, cin, h, &mut rng).unwrap();
    (store, p)
}

#[test]
fn lstm_zero_parameter_algebra() {
    let (mut store, p) = pointwise(CellKind::Lstm, 2, 2, 1);
    store.zero_all();
    let z = lstm_step(&Tensor2::zeros(2, 1), &CellState::zeros(2, 1), &p, &store).unwrap();
    assert!(z.hidden.data().iter().chain(z.cell.data()).all(|&v| v == 0.0));

    let prev = CellState {
        hidden: Tensor2::zeros(2, 1),
        cell: Tensor2::from_vec(2, 1, vec![1.5, -3.0]).unwrap(),
    };
    let next = lstm_step(&Tensor2::filled(2, 1, 0.4), &prev, &p, &store).unwrap();
    for k in 0..2 {
        let c0 = prev.cell.data()[k];
        assert_eq!(next.cell.data()[k], 0.5 * c0);
        assert_eq!(next.hidden.data()[k], 0.5 * (0.5 * c0).tanh());
    }
}

#[test]
fn lstm_scalar_matches_transcribed_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..50 {
        let (store, p) = pointwise(CellKind::Lstm, 1, 1, seed);
        let v = |id| store.get(id).data.clone();
        let (wx, wh, bx, bh) = (v(p.w_x), v(p.w_h), v(p.b_x), v(p.b_h));
        let (x, h0, c0) = (rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0));
        let pre = |k: usize| wx[k] * x + bx[k] + wh[k] * h0 + bh[k];
        let (i, f, g, o) = (sig(pre(0)), sig(pre(1)), pre(2).tanh(), sig(pre(3)));
        let c = f * c0 + i * g;
        let h = o * c.tanh();
        let next = lstm_step(
            &scalar(x),
            &CellState {
                hidden: scalar(h0),
                cell: scalar(c0),
            },
            &p,
            &store,
        )
        .unwrap();
        assert!((next.cell.data()[0] - c).abs() < 1e-12);
        assert!((next.hidden.data()[0] - h).abs() < 1e-12);
    }
}

#[test]
fn gru_zero_parameter_algebra() {
    let (mut store, p) = pointwise(CellKind::Gru, 3, 2, 1);
    store.zero_all();
    let h = gru_step(&Tensor2::filled(3, 1, 1.0), &Tensor2::zeros(2, 1), &p, &store).unwrap();
    assert!(h.data().iter().all(|&v| v == 0.0));
    let h0 = Tensor2::from_vec(2, 1, vec![0.8, -0.4]).unwrap();
    let h = gru_step(&Tensor2::filled(3, 1, 1.0), &h0, &p, &store).unwrap();
    assert_eq!(h.data(), &[0.4, -0.2]);
}

#[test]
fn gru_scalar_matches_transcribed_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..50 {
        let (store, p) = pointwise(CellKind::Gru, 1, 1, seed);
        let v = |id| store.get(id).data.clone();
        let (wx, wh, bx, bh) = (v(p.w_x), v(p.w_h), v(p.b_x), v(p.b_h));
        let (x, h0) = (rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0));
        let r = sig(wx[0] * x + bx[0] + wh[0] * h0 + bh[0]);
        let z = sig(wx[1] * x + bx[1] + wh[1] * h0 + bh[1]);
        let n = (wx[2] * x + bx[2] + r * (wh[2] * h0 + bh[2])).tanh();
        let h = (1.0 - z) * n + z * h0;
        let got = gru_step(&scalar(x), &scalar(h0), &p, &store).unwrap();
        assert!((got.data()[0] - h).abs() < 1e-12);
    }
}

#[test]
fn pointwise_cells_never_mix_positions() {
    for kind in [CellKind::Lstm, CellKind::Gru] {
        let (store, p) = pointwise(kind, 2, 3, 11);
        let layer = RecurrentLayer::Pointwise(p);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<Tensor2> = (0..3)
            .map(|_| Tensor2::from_vec(2, 8, (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let a = unroll(&layer, &store, &xs).unwrap();
        let mut ys = xs.clone();
        ys[0].set(0, 3, 5.0);
        let b = unroll(&layer, &store, &ys).unwrap();
        for (ha, hb) in a.iter().zip(&b) {
            for c in 0..3 {
                for l in 0..8 {
                    if l != 3 {
                        assert_eq!(ha.get(c, l), hb.get(c, l));
                    }
                }
            }
        }
    }
}

#[test]
fn unroll_matches_chained_steps() {
    let mut store = ParamStore::new();
    let p = conv_cell(&mut store, 2, 2, 3, 6, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xs: Vec<Tensor2> = (0..3)
        .map(|_| Tensor2::from_vec(2, 6, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let layer = RecurrentLayer::ConvLstm(p);
    let hs = unroll(&layer, &store, &xs).unwrap();
    let mut state = CellState::zeros(2, 6);
    for (x, h) in xs.iter().zip(&hs) {
        state = convlstm_step(x, &state, &p, &store).unwrap();
        assert_eq!(&state.hidden, h);
    }
    assert_eq!(unroll(&layer, &store, &xs[..1]).unwrap().len(), 1);
    assert!(unroll(&layer, &store, &[]).is_err());

    store.zero_all();
    let zeros = vec![Tensor2::zeros(2, 6); 4];
    assert!(unroll(&layer, &store, &zeros)
        .unwrap()
        .iter()
        .all(|h| h.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn gates_keep_hidden_in_open_unit_interval() {
    let mut store = ParamStore::new();
    let p = conv_cell(&mut store, 2, 2, 3, 7, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let x = Tensor2::from_vec(2, 7, (0..14).map(|_| rng.gen_range(-50.0..50.0)).collect()).unwrap();
        let prev = CellState {
            hidden: Tensor2::from_vec(2, 7, (0..14).map(|_| rng.gen_range(-0.99..0.99)).collect()).unwrap(),
            cell: Tensor2::from_vec(2, 7, (0..14).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap(),
        };
        let next = convlstm_step(&x, &prev, &p, &store).unwrap();
        assert!(next.hidden.data().iter().all(|&h| h > -1.0 && h < 1.0));
    }
}
