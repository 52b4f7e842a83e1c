use std::path::Path;

use egoexo::bench::{filter_mcqs, generate_mcqs};
use egoexo::distill::grid::{aggregate, check_ordering, grid_csv, run_ablation_grid, GridContext, GridRow, EGO_PLUS_EXO_REFERENCE, TABLE3_REFERENCE};
use egoexo::distill::student::{feature_mse_loss, pooled_visual};
use egoexo::distill::*;
use egoexo::vlm::checkpoint::param_hash;
use egoexo::vlm::{role_of, Vlm, VlmConfig};
use egoexo::world::{build_dataset, Dataset, DatasetConfig, Split, WorldConfig};
use egoexo::Error;

struct Fixture {
    _dir: tempfile::TempDir,
    ds: Dataset,
    teacher: Vlm<f32>,
    store: FeatureStore,
    triples: Vec<InstructionTriple>,
}

fn fixture(train: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let dc = DatasetConfig { train_clips: train, eval_clips: 4, world: WorldConfig::default(), dry_run: false };
    build_dataset(&dc, 3, &dir.path().join("ds"), false).unwrap();
    let ds = Dataset::open(&dir.path().join("ds")).unwrap();
    let mut teacher = Vlm::<f32>::new(VlmConfig::desk(), 1).unwrap();
    teacher.set_trainable(&[]);
    let ids = ds.ids(Split::Train);
    let store = FeatureStore::build(&ds, &teacher, &ids, Views::BOTH, 0).unwrap();
    let (triples, _) = generate_instructions(&teacher, "t", &ds, &ids, 5, 6).unwrap();
    Fixture { _dir: dir, ds, teacher, store, triples }
}

fn tiny_cfg() -> TrainConfig {
    TrainConfig { epochs: 1, batch_size: 2, teacher_epochs: 1, ..TrainConfig::desk() }
}

fn inputs<'a>(f: &'a Fixture, ego_model: Option<&'a Vlm<f32>>) -> StudentInputs<'a> {
    StudentInputs { dataset: &f.ds, teacher: &f.teacher, features: &f.store, triples: &f.triples, ego_model, query_seed: 5 }
}

#[test]
fn unknown_strategy_names_are_rejected_with_the_valid_list() {
    match "distill_everything".parse::<Strategy>() {
        Err(Error::Config(m)) => {
            for s in Strategy::ALL {
                assert!(m.contains(s.name()));
            }
        }
        other => panic!("expected config error, got {other:?}"),
    }
    for s in Strategy::ALL {
        assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
    }
    assert_eq!(Strategy::ALL.len(), 11);
}

#[test]
fn zero_epochs_returns_the_initial_student() {
    let f = fixture(3);
    let cfg = TrainConfig { epochs: 0, ..tiny_cfg() };
    let spec = StrategySpec::new(Strategy::SeqDistPlusTokens);
    let run = train_student(&inputs(&f, None), &spec, &cfg, 4).unwrap();
    let init = init_student(&f.teacher, &spec, 4).unwrap();
    assert_eq!(param_hash(&run.model.params), param_hash(&init.params));
    assert!(run.log.steps == 0 && run.log.epochs.is_empty());
}

#[test]
fn students_start_from_the_teacher() {
    let f = fixture(2);
    let s = init_student(&f.teacher, &StrategySpec::new(Strategy::SeqDistPlusTokens), 9).unwrap();
    for (_, p) in f.teacher.params.iter() {
        assert_eq!(&s.params.by_name(&p.name).unwrap().value, &p.value, "{}", p.name);
    }
    assert!(s.params.by_name("bank.0.tokens").is_some());
    let plain = init_student(&f.teacher, &StrategySpec::new(Strategy::SeqDist), 9).unwrap();
    assert!(plain.params.by_name("bank.0.tokens").is_none());
}

#[test]
fn every_strategy_leaves_frozen_groups_bit_identical() {
    let f = fixture(4);
    let cfg = tiny_cfg();
    let ego = train_ego_token_model(&f.teacher, &f.ds, &f.store, 4, &cfg, 5, 2).unwrap();
    let teacher_hash = param_hash(&f.teacher.params);
    for s in Strategy::ALL {
        let spec = StrategySpec::new(s);
        let init = init_student(&f.teacher, &spec, 6).unwrap();
        let run = train_student(&inputs(&f, Some(&ego.model)), &spec, &cfg, 6).unwrap();
        assert!(run.log.diverged.is_none());
        let mut moved = false;
        for (_, p) in run.model.params.iter() {
            let before = &init.params.by_name(&p.name).unwrap().value;
            if STUDENT_TRAINABLE.contains(&role_of(&p.name)) {
                moved |= before != &p.value;
            } else {
                assert_eq!(before, &p.value, "{s}: frozen `{}` changed", p.name);
            }
        }
        assert!(moved, "{s}: nothing trained");
        assert_eq!(run.log.trainable_params, run.model.params.numel(true));
    }
    assert_eq!(param_hash(&f.teacher.params), teacher_hash);
}

#[test]
fn bank_inconsistencies_are_config_errors() {
    let f = fixture(2);
    let cfg = tiny_cfg();
    for s in [Strategy::EgoadaVis, Strategy::PretrainedCa, Strategy::LlavidalStyle] {
        let r = train_student(&inputs(&f, None), &StrategySpec::new(s), &cfg, 1);
        assert!(matches!(r, Err(Error::Config(_))), "{s}");
    }
    let r = train_student(&inputs(&f, None), &StrategySpec::new(Strategy::EgoTokensOnly).with_k(0), &cfg, 1);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn missing_triples_are_reported() {
    let f = fixture(3);
    let keep: Vec<InstructionTriple> = f.triples.iter().filter(|t| t.clip_id != f.store.clips[0].id).cloned().collect();
    let inp = StudentInputs { triples: &keep, ..inputs(&f, None) };
    let r = train_student(&inp, &StrategySpec::new(Strategy::SeqDist), &tiny_cfg(), 1);
    assert!(matches!(r, Err(Error::Missing(_))));
}

#[test]
fn feature_mse_of_a_model_with_itself_is_zero() {
    let f = fixture(2);
    let cache = &f.store.clips[0].exo.as_ref().unwrap().cache;
    for pooling in [Pooling::Mean, Pooling::Max] {
        let target = pooled_visual(&f.teacher, cache, pooling).unwrap();
        let mut tape = egoexo_tensor::Tape::inference();
        let enc = f.teacher.bind_cache(&mut tape, cache);
        let z = f.teacher.connect(&mut tape, enc.final_x).unwrap();
        let l = feature_mse_loss(&mut tape, z, &target, pooling).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);
    }
}

#[test]
fn instruction_generation_needs_a_frozen_teacher_and_keeps_it_intact() {
    let f = fixture(3);
    let ids = f.ds.ids(Split::Train);
    let (again, report) = generate_instructions(&f.teacher, "t", &f.ds, &ids, 5, 6).unwrap();
    assert_eq!(again, f.triples);
    assert_eq!(report.params_before, report.params_after);
    assert_eq!(report.generated + report.dropped_empty, 3 * ids.len());
    assert!(again.iter().all(|t| t.teacher_hash == "t" && t.answer.len() <= 6));
    let mut open = f.teacher.clone();
    open.set_trainable(&[egoexo::vlm::ParamRole::Connector]);
    assert!(matches!(generate_instructions(&open, "t", &f.ds, &ids, 5, 6), Err(Error::Contract(_))));
    let path = f._dir.path().join("inst.jsonl");
    write_instructions(&path, &again).unwrap();
    assert_eq!(read_instructions(&path).unwrap(), again);
    assert!(matches!(read_instructions(Path::new("/nonexistent/inst.jsonl")), Err(Error::Missing(_))));
}

#[test]
fn sequence_distillation_never_reads_scripts() {
    let f = fixture(3);
    let spec = StrategySpec::new(Strategy::SeqDistPlusTokens);
    let cfg = tiny_cfg();
    let a = train_student(&inputs(&f, None), &spec, &cfg, 2).unwrap();
    for id in f.ds.ids(Split::Train) {
        std::fs::write(f.ds.clip_dir(&id).join("script.json"), "{}").unwrap();
    }
    let b = train_student(&inputs(&f, None), &spec, &cfg, 2).unwrap();
    assert_eq!(param_hash(&a.model.params), param_hash(&b.model.params));
    // ground-truth strategies do read them
    assert!(train_student(&inputs(&f, None), &StrategySpec::new(Strategy::ExoBaseline), &cfg, 2).is_err());
}

#[test]
fn teacher_training_moves_only_teacher_groups() {
    let f = fixture(3);
    let mut t = Vlm::<f32>::new(VlmConfig::desk(), 2).unwrap();
    let before = t.params.clone();
    let log = train_teacher(&mut t, &f.ds, &f.ds.ids(Split::Train), &tiny_cfg(), 1).unwrap();
    assert_eq!(log.epochs.len(), 1);
    for (_, p) in t.params.iter() {
        let changed = before.by_name(&p.name).unwrap().value != p.value;
        if p.name.contains(".lora_") {
            assert!(!changed, "{}", p.name);
        }
    }
    assert!(before.by_name("enc.patch.w").unwrap().value != t.params.by_name("enc.patch.w").unwrap().value);
    let banked = Vlm::<f32>::new(VlmConfig::desk().with_bank(2, egoexo::vlm::TokenStrategy::CrossAttention), 2);
    assert!(train_teacher(&mut banked.unwrap(), &f.ds, &f.ds.ids(Split::Train), &tiny_cfg(), 1).is_err());
}

#[test]
fn single_cell_grid_and_csv_shape() {
    let f = fixture(3);
    let eval_ids = f.ds.ids(Split::Eval);
    let eval_store = FeatureStore::build(&f.ds, &f.teacher, &eval_ids, Views::EXO, 0).unwrap();
    let (items, _) = generate_mcqs(&f.ds, &eval_ids, 1).unwrap();
    let scripts = eval_ids.iter().map(|i| (i.clone(), f.ds.script(i).unwrap())).collect();
    let (items, _) = filter_mcqs(&items, &scripts);
    let cfg = tiny_cfg();
    let ctx = GridContext { inputs: inputs(&f, None), eval_store: &eval_store, items: &items, cfg: &cfg };
    let mut seen = 0;
    let res = run_ablation_grid(&ctx, &[StrategySpec::new(Strategy::SeqDist)], &[1], |_| seen += 1);
    assert_eq!((res.rows.len(), seen, res.failures()), (1, 1, 0));
    let csv = grid_csv(&res).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "strategy,k_tokens,seed,action_understanding,task_region,hoi,hand_identification,avg,spread,status");
    assert!(lines.iter().all(|l| l.split(',').count() == 10));
    assert!(lines[2].ends_with("aggregate"));

    // a failing run is kept as a marked row
    let res = run_ablation_grid(&ctx, &[StrategySpec::new(Strategy::EgoadaVis)], &[1, 2], |_| {});
    assert_eq!(res.failures(), 2);
    assert!(grid_csv(&res).unwrap().contains("FAILED"));
    assert_eq!(check_ordering("table3", &res).unwrap().len(), 3);
    assert!(check_ordering("nonsense", &res).is_err());
}

#[test]
fn aggregates_use_sample_spread() {
    let row = |seed, avg: f64| GridRow {
        strategy: Strategy::SeqDist,
        k_tokens: 4,
        seed,
        accuracies: vec![avg; 4],
        average: avg,
        failure: None,
    };
    let agg = aggregate(&[row(1, 0.2), row(2, 0.4), row(3, 0.6)]);
    assert_eq!(agg.len(), 1);
    assert!((agg[0].average - 0.4).abs() < 1e-12);
    assert!((agg[0].spread - 0.2).abs() < 1e-12);
    assert_eq!(agg[0].runs, 3);
}

#[test]
fn reference_orderings_are_embedded() {
    let vals: Vec<f64> = TABLE3_REFERENCE.iter().map(|r| r.1).collect();
    assert!(vals.windows(2).all(|w| w[0] < w[1]));
    assert!(EGO_PLUS_EXO_REFERENCE - TABLE3_REFERENCE[0].1 < 2.0);
}

#[test]
fn config_rejects_unknown_fields_and_bad_values() {
    let mut v = serde_json::to_value(TrainConfig::desk()).unwrap();
    v["surprise"] = serde_json::json!(1);
    assert!(serde_json::from_value::<TrainConfig>(v).is_err());
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::desk() }.validate().is_err());
    assert!(TrainConfig { lr: f64::NAN, ..TrainConfig::desk() }.validate().is_err());
    assert!(TrainConfig::paper_meta().lr < TrainConfig::desk().lr);
}
