use criterion::{criterion_group, criterion_main, Criterion};
use igc_core::array::optim::{Optimizer, OptimizerConfig};
use igc_core::array::tape::Tape;
use igc_core::config::{Mode, RunConfig};
use igc_core::data::{assemble_sequence, build_vocab, ArithAnnotation};
use igc_core::codec::Operator;
use igc_core::model::IgcModel;
use std::hint::black_box;

fn small_cfg() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model.width = 80;
    cfg.model.layers = 2;
    cfg.model.heads = 4;
    cfg.model.context = 48;
    cfg
}

fn bench_train_step(c: &mut Criterion) {
    let cfg = small_cfg();
    let vocab = build_vocab();
    let mut model = IgcModel::new(&cfg, vocab.len(), 3);
    model.pretrained = true;
    model.freeze_base().unwrap();
    let (seq, anchor) = assemble_sequence(&vocab, "What is 12345 * 678?", "8369910").unwrap();
    let ann = ArithAnnotation {
        operator: Operator::Mul,
        operand_a: 12345,
        operand_b: 678,
        result: 8_369_910,
        anchor_index: anchor,
    };
    let mut opt = Optimizer::new(OptimizerConfig::default());

    c.bench_function("forward_train_backward_step", |b| {
        b.iter(|| {
            model.store.zero_grads();
            let grads = {
                let mut tape = Tape::new(&model.store);
                let f = model
                    .forward_train(&mut tape, &seq.ids, Some(anchor), Some(&ann), Mode::Igc, true, false)
                    .unwrap();
                let aux = f.aux_loss.unwrap();
                let total = tape.add(f.lm_loss, aux).unwrap();
                tape.backward(total).unwrap()
            };
            model.store.absorb(grads);
            opt.step(&mut model.store, 1.0).unwrap();
            black_box(());
        })
    });
}

criterion_group!(benches, bench_train_step);
criterion_main!(benches);
