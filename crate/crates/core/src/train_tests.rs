use super::*;
use crate::config::{CorpusConfig, ModelConfig};
use crate::data::generate_corpus;
use crate::tensor::Tensor;

fn scalar_store(x: f64) -> (ParamStore<f64>, ParamId) {
    let mut store = ParamStore::new();
    let id = store.register("x", ParamGroup::Sl, Tensor::vector(vec![x]).unwrap());
    (store, id)
}

#[test]
fn adam_zero_gradient() {
    let (mut store, id) = scalar_store(1.5);
    let mut adam = Adam::new(&store);
    store.reset_grads(&[id]).unwrap();
    adam.step(&mut store, &[id], 1e-3).unwrap();
    assert_eq!(store.get(id).data(), &[1.5]);
    adam.m[0][0] = 0.2;
    adam.v[0][0] = 0.3;
    adam.step(&mut store, &[id], 1e-3).unwrap();
    assert!((adam.m[0][0] - 0.18).abs() < 1e-15);
    assert!((adam.v[0][0] - 0.2997).abs() < 1e-15);
}

#[test]
fn adam_constant_gradient_moves_by_lr() {
    let (mut store, id) = scalar_store(0.0);
    let mut adam = Adam::new(&store);
    let mut prev = 0.0;
    for _ in 0..2000 {
        store.zero_grads();
        store.get_mut(id).accumulate_grad(&[-3.0]).unwrap();
        adam.step(&mut store, &[id], 0.01).unwrap();
        let x = store.get(id).data()[0];
        let step = x - prev;
        assert!(step > 0.0);
        prev = x;
    }
    store.zero_grads();
    store.get_mut(id).accumulate_grad(&[-3.0]).unwrap();
    adam.step(&mut store, &[id], 0.01).unwrap();
    assert!((store.get(id).data()[0] - prev - 0.01).abs() < 1e-8);
}

#[test]
fn adam_matches_hand_recursion() {
    // f(x) = (x − 2)², gradient 2(x − 2).
    let (mut store, id) = scalar_store(5.0);
    let mut adam = Adam::new(&store);
    let (mut x, mut m, mut v) = (5.0f64, 0.0f64, 0.0f64);
    let lr = 0.1;
    for t in 1..=3 {
        let g = 2.0 * (x - 2.0);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let m_hat = m / (1.0 - 0.9f64.powi(t));
        let v_hat = v / (1.0 - 0.999f64.powi(t));
        x -= lr * m_hat / (v_hat.sqrt() + 1e-8);

        let cur = store.get(id).data()[0];
        store.zero_grads();
        store.get_mut(id).accumulate_grad(&[2.0 * (cur - 2.0)]).unwrap();
        adam.step(&mut store, &[id], lr).unwrap();
        assert!((store.get(id).data()[0] - x).abs() < 1e-12);
    }
}

#[test]
fn adam_requires_gradients() {
    let (mut store, id) = scalar_store(1.0);
    let mut adam = Adam::new(&store);
    assert!(matches!(adam.step(&mut store, &[id], 0.1), Err(TensorError::Contract(_))));
    assert_eq!(adam.t, 0);
}

#[test]
fn plateau_schedule() {
    let mut p = Plateau::new(3, 1e-3);
    for loss in [1.0, 0.9, 0.8, 0.7, 0.6999, 0.6998] {
        assert!(!p.observe(loss));
    }
    assert!(p.observe(0.6997));
    // The next decision needs a full window after the decay.
    assert!(!p.observe(0.6997));
    assert!(!p.observe(0.6997));
    assert!(p.observe(0.6997));
}

#[test]
fn interval_samplers() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gt = Segment::new(3, 6);
    let mut sub_counts = std::collections::HashMap::new();
    for _ in 0..20_000 {
        assert!(gt.contains(sample_inside(gt, &mut rng)));
        let o = sample_outside(gt, 10, &mut rng).unwrap();
        assert!(!gt.contains(o) && o < 10);
        let s = sample_sub_interval(gt, &mut rng);
        assert!(gt.start <= s.start && s.end <= gt.end);
        *sub_counts.entry(s).or_insert(0usize) += 1;
        let n = sample_outside_interval(gt, 10, &mut rng).unwrap();
        assert!(n.end < gt.start || n.start > gt.end);
        assert!(n.end < 10);
    }
    assert_eq!(sub_counts.len(), 10);
    assert!(sub_counts.values().all(|&c| (1600..2400).contains(&c)));
    assert_eq!(sample_outside(Segment::new(0, 4), 5, &mut rng), None);
    assert_eq!(sample_outside_interval(Segment::new(0, 4), 5, &mut rng), None);
}

pub(crate) fn tiny_setup(epochs: usize) -> (TrainState<f64>, Vec<ExampleRecord>) {
    let corpus_cfg = CorpusConfig {
        frames: 16,
        words: 3,
        d_in: 8,
        vocab: 4,
        min_len: 2,
        max_len: 6,
        ..CorpusConfig::default()
    };
    let corpus = generate_corpus(&corpus_cfg, 0, 24).unwrap();
    let model_cfg = ModelConfig {
        d_in: 8,
        d_model: 8,
        heads: 2,
        graph_layers: 1,
    };
    let config = TrainConfig {
        epochs_stage1: epochs,
        epochs_stage2: epochs,
        epochs_stage3: epochs,
        batch_size: 8,
        lr: 1e-3,
        check_finite: true,
        ..TrainConfig::default()
    };
    let model = Model::new(&model_cfg, 5).unwrap();
    (TrainState::new(model, config).unwrap(), corpus)
}

#[test]
fn zero_epochs_leave_parameters_unchanged() {
    let (mut state, corpus) = tiny_setup(0);
    let before = state.model.store.clone();
    assert!(train_stage1(&mut state, &corpus).unwrap().is_empty());
    assert_eq!(state.model.store, before);
}

#[test]
fn stages_freeze_the_other_half() {
    let (mut state, corpus) = tiny_setup(1);
    let bp_before = state.model.store.snapshot(ParamGroup::Bp);
    let sl_before = state.model.store.snapshot(ParamGroup::Sl);
    train_stage1(&mut state, &corpus).unwrap();
    assert_eq!(state.model.store.snapshot(ParamGroup::Bp), bp_before);
    let sl_after1 = state.model.store.snapshot(ParamGroup::Sl);
    assert_ne!(sl_after1, sl_before);
    train_stage2(&mut state, &corpus).unwrap();
    assert_eq!(state.model.store.snapshot(ParamGroup::Sl), sl_after1);
    assert_ne!(state.model.store.snapshot(ParamGroup::Bp), bp_before);
    let reports = train_stage3(&mut state, &corpus).unwrap();
    assert_eq!(reports.len(), 1);
    let l = reports[0].loss;
    assert!(l.class > 0.0 && l.matching >= 0.0 && l.conf > 0.0);
    assert!((l.total - (l.class + l.matching + l.conf)).abs() < 1e-9);
    assert_ne!(state.model.store.snapshot(ParamGroup::Sl), sl_after1);
}

#[test]
fn stage3_reaches_every_parameter() {
    let (state, corpus) = tiny_setup(1);
    let coverage = gradient_coverage(&state.model, &state.config, &corpus, 3, 3).unwrap();
    assert_eq!(coverage.len(), state.model.store.len());
    let missing: Vec<&String> = coverage.iter().filter(|(_, h)| !h).map(|(n, _)| n).collect();
    assert!(missing.is_empty(), "no gradient reached {missing:?}");
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let (mut state, corpus) = tiny_setup(1);
            let mut losses = train_stage1(&mut state, &corpus).unwrap();
            losses.extend(train_stage2(&mut state, &corpus).unwrap());
            (state.model.store, losses.iter().map(|r| r.loss.total.to_bits()).collect::<Vec<_>>())
        })
    };
    let (a, la) = run(1);
    let (b, lb) = run(4);
    assert_eq!(a, b);
    assert_eq!(la, lb);
}

#[test]
fn max_pool_training_skips_update_weights() {
    let (mut state, corpus) = tiny_setup(1);
    state.config.update_strategy = UpdateStrategy::MaxPool;
    let ids = trainable_ids(&state.model, 2, UpdateStrategy::MaxPool);
    assert_eq!(ids.len(), 6);
    let update: Vec<Vec<f64>> = state.model.bp.update_ids().iter().map(|&i| state.model.store.get(i).data().to_vec()).collect();
    train_stage2(&mut state, &corpus).unwrap();
    let after: Vec<Vec<f64>> = state.model.bp.update_ids().iter().map(|&i| state.model.store.get(i).data().to_vec()).collect();
    assert_eq!(update, after);
}

#[test]
fn single_activity_corpus_is_rejected_for_matching() {
    let (mut state, mut corpus) = tiny_setup(1);
    for e in &mut corpus {
        e.activity_id = 0;
    }
    assert!(matches!(train_stage2(&mut state, &corpus), Err(TensorError::Contract(_))));
    assert!(train_stage(&mut state, 4, &corpus, |_, _| Ok(())).is_err());
}
