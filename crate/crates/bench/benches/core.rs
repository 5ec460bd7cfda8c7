use bns_core::data::{parse_corpus, CorpusFormat, Dataset, PreprocessConfig, Split, SMOKE_CORPUS};
use bns_core::numeric::{Graph, Tensor};
use bns_core::segment::{segment, SegmentationConfig};
use bns_core::text::analyze;
use bns_core::{BnsModel, ModelConfig, RuleTagger, SentimentLexicon};
use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn softmin(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::new(vec![10, 64], (0..640).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap();
    c.bench_function("softmin_10x64", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let v = g.constant(x.clone());
            black_box(g.softmin(v).unwrap());
        })
    });
}

fn segmentation(c: &mut Criterion) {
    let lexicon = SentimentLexicon::bundled();
    let tagger = RuleTagger::new();
    let tokens = analyze(
        "I just love waiting for hours at the station while the trains are late again!",
        &tagger,
        &lexicon,
    );
    let config = SegmentationConfig::new(4).unwrap();
    c.bench_function("segment_15_tokens", |b| b.iter(|| black_box(segment(&tokens, &config))));
}

fn forward(c: &mut Criterion) {
    let corpus = parse_corpus(SMOKE_CORPUS, "smoke", CorpusFormat::Plain, Split::Train).unwrap();
    let ds = Dataset::build(
        &corpus,
        None,
        None,
        &PreprocessConfig::default(),
        1,
        &SentimentLexicon::bundled(),
        &RuleTagger::new(),
    )
    .unwrap();
    let model = BnsModel::new(ModelConfig::default(), ds.vocab.len(), 3).unwrap();
    let ex = &ds.train[0];
    c.bench_function("forward_default_model", |b| {
        b.iter(|| black_box(model.predict(&ex.model_input()).unwrap()))
    });
    c.bench_function("forward_backward_default_model", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let out = model.forward(&mut g, model.params(), &ex.model_input(), None).unwrap();
            let (loss, _) = model.joint_loss(&mut g, &out, &ex.labels).unwrap();
            g.backward(loss).unwrap();
            black_box(g.len())
        })
    });
}

criterion_group!(benches, softmin, segmentation, forward);
criterion_main!(benches);
