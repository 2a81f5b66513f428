use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use attnguide::code::parse_corpus;
use attnguide::exec;
use attnguide::harness::{gen_corpus, CorpusParams};
use attnguide::model::{apply_mlm_mask, total_loss, Example, GuidedModel, ModelConfig, Target};
use attnguide::patterns::{assign_heads, parse_pattern_list};
use attnguide::subtok::{build_vocab, encode};

fn setup() -> (GuidedModel, Vec<Example>) {
    let recs = gen_corpus(&CorpusParams {
        num_snippets: 64,
        seed: 7,
    });
    let units = parse_corpus(&recs).unwrap();
    let vocab = build_vocab(&units, 256).unwrap();
    let cfg = ModelConfig::toy(vocab.len(), 0);
    let guiding = assign_heads(
        cfg.num_layers,
        cfg.heads,
        0.5,
        &parse_pattern_list("syntax,ast").unwrap(),
    )
    .unwrap();
    let model = GuidedModel::new(cfg.clone(), guiding.clone(), 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let examples = units
        .iter()
        .map(|u| {
            let seq = encode(u, &vocab, cfg.max_len);
            let m = apply_mlm_mask(&seq, vocab.len(), cfg.mask_rate, &mut rng);
            Example::new(m.ids, &seq, u, Target::Mlm(m.targets), &guiding).unwrap()
        })
        .collect();
    (model, examples)
}

fn bench(c: &mut Criterion) {
    let (model, examples) = setup();
    let loss = |ex: &Example| total_loss(&model, std::slice::from_ref(ex), 0.0).unwrap().total;
    let forward = |ex: &Example| model.forward(&ex.ids, ex.real_len, &[]).unwrap().attention.len();

    let mut g = c.benchmark_group("loss_64_snippets");
    g.sample_size(10);
    g.bench_function("sequential", |b| b.iter(|| black_box(exec::map_seq(&examples, loss))));
    #[cfg(feature = "parallel")]
    g.bench_function("parallel", |b| b.iter(|| black_box(exec::map_par(&examples, loss))));
    g.finish();

    let mut g = c.benchmark_group("forward_64_snippets");
    g.sample_size(10);
    g.bench_function("sequential", |b| b.iter(|| black_box(exec::map_seq(&examples, forward))));
    #[cfg(feature = "parallel")]
    g.bench_function("parallel", |b| b.iter(|| black_box(exec::map_par(&examples, forward))));
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
