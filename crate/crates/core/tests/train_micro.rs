//! Minutes-scale end-to-end smoke: generate a small dataset, pretrain a
//! tiny base, finetune the module, and check the qualitative behavior the
//! architecture promises — converging auxiliary loss, rising accuracy,
//! quiet gates on distractors, and a correctly extracted request.

use igc_core::codec::Operator;
use igc_core::config::{Mode, RunConfig};
use igc_core::data::{self, build_vocab, Split};
use igc_core::model::IgcModel;
use igc_core::train::{self, evaluate};

fn micro_cfg() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model.width = 48;
    cfg.model.layers = 2;
    cfg.model.heads = 4;
    cfg.model.ff_mult = 2;
    cfg.model.context = 48;
    cfg.igc.insertion_layer = 1;
    cfg.igc.query_dim = 32;
    cfg.igc.value_dim = 48;
    cfg.igc.trunk_dim = 128;
    cfg.igc.mlp_hidden = 128;
    cfg.igc.relpos_dim_in = 8;
    cfg.igc.relpos_dim_out = 8;
    cfg.igc.payload_slot_dim = 4;
    cfg.igc.summary_dim = 8;

    cfg.data.seed = 5;
    cfg.data.n_train = 700;
    cfg.data.n_eval_bigbench = 120;
    cfg.data.n_eval_alt = 60;
    cfg.data.n_eval_distractor = 30;
    cfg.data.digit_len_weights = vec![0.6, 0.4];
    cfg.data.distractor_frac = 0.12;

    cfg.pretrain.n_samples = 5000;
    cfg.pretrain.epochs = 14;
    cfg.pretrain.batch_size = 16;
    cfg.pretrain.lr = 2e-3;
    cfg.pretrain.digit_len_weights = vec![0.6, 0.4];

    cfg.train.epochs = 80;
    cfg.train.batch_size = 16;
    cfg.train.lr = 4e-3;
    cfg.train.eval_cadence = 8;
    cfg.train.eval_subset = 60;
    cfg.train.seeds = vec![0];
    cfg
}

#[test]
fn micro_end_to_end() {
    let cfg = micro_cfg();
    let vocab = build_vocab();

    // data
    let gen = data::generate(&cfg, &vocab).expect("generate");
    let corpus = data::generate_pretrain(&cfg, &vocab).expect("pretrain corpus");
    let (head, tail) = corpus.split_at(300);
    let holdout: Vec<_> = head
        .iter()
        .filter(|r| r.kind == data::PretrainKind::Arith)
        .map(|r| r.seq.clone())
        .take(100)
        .collect();
    let seqs: Vec<_> = tail.iter().map(|r| r.seq.clone()).collect();

    // pretrain: the base learns the grammar
    let pre = train::pretrain_base(&cfg, &vocab, &seqs, &holdout).expect("pretrain");
    println!("structural ppl: {:.4}", pre.structural_ppl);
    assert!(
        pre.structural_ppl < 1.5,
        "structural perplexity {} too high",
        pre.structural_ppl
    );

    // finetune the module on the frozen base
    let mut model = IgcModel::new(&cfg, vocab.len(), 1234);
    let tmp = tempfile::tempdir().unwrap();
    pre.model.save(tmp.path()).unwrap();
    model.load_base(tmp.path()).unwrap();
    model.freeze_base().unwrap();
    let outcome = train::train_igc(
        &cfg,
        &mut model,
        &vocab,
        &gen.records,
        0,
        cfg.train.epochs,
        Mode::Igc,
    )
    .expect("train");

    for row in &outcome.metrics {
        println!(
            "epoch {:>3} {:<22} overall {:.3} add {:.3} mul {:.3} aux {:.3} lm {:.4} gate {:.4}",
            row.epoch,
            row.split,
            row.overall,
            row.acc_add,
            row.acc_mul,
            row.aux_loss,
            row.lm_loss,
            row.mean_gate_distractor
        );
    }
    let ev = &outcome.final_bigbench;
    println!(
        "final: overall {:.3}, gates on distractors {:.4}",
        ev.accuracy(),
        ev.mean_gate_distractor
    );

    // at this scale the run verifies mechanics and direction, not the
    // headline numbers: extraction and emission losses must have collapsed
    // from their uniform starting points and accuracy must be well above
    // the base model's
    let last_eval = outcome
        .metrics
        .iter()
        .rev()
        .find(|r| r.split == "eval-bigbench-style")
        .unwrap();
    assert!(
        last_eval.aux_loss < 1.5,
        "aux loss should collapse from ~49, got {:.3}",
        last_eval.aux_loss
    );
    assert!(
        last_eval.lm_loss < 0.5,
        "teacher-forced lm loss should collapse, got {:.3}",
        last_eval.lm_loss
    );
    assert!(
        ev.accuracy() > 0.25,
        "micro accuracy should clear the untrained baseline by a wide margin, got {:.3}",
        ev.accuracy()
    );
    assert!(
        ev.mean_gate_distractor < 0.55,
        "distractor gates should not saturate, got {:.3}",
        ev.mean_gate_distractor
    );

    // the trained input mapping extracts (4, 4, ADD) from "What is 4 + 4?"
    let (seq, anchor) = data::assemble_sequence(&vocab, "What is 4 + 4?", "8").unwrap();
    let mut tape = igc_core::array::tape::Tape::new(&model.store);
    let f = model
        .forward_train(&mut tape, &seq.ids, Some(anchor), None, Mode::Igc, false, false)
        .unwrap();
    let req = f.request.expect("request produced");
    let d = igc_core::calculator::discretize(&req);
    assert_eq!(d.operator, Operator::Add);
    assert_eq!(d.a.value(), Some(4));
    assert_eq!(d.b.value(), Some(4));

    // evaluation never substitutes ground truth: corrupting annotations
    // changes scores but not generations
    let mut corrupted = gen.records.clone();
    for r in corrupted.iter_mut() {
        if let Some(a) = r.annotation.as_mut() {
            a.result += 1;
        }
    }
    let ev2 = evaluate(
        &model,
        &vocab,
        &corrupted,
        Split::EvalBigbench,
        Mode::Igc,
        Some(50),
        None,
    )
    .unwrap();
    assert!(
        ev2.accuracy() < 0.1,
        "scoring must use the annotation, generation must not"
    );
}
