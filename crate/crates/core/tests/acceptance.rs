//! One test per acceptance criterion. Each prints a `PASS`/`FAIL` line;
//! run with `--nocapture` to see them.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use attnguide::analysis::{
    bonferroni, fix_accounting, mann_whitney, paired_t, partition_tensor, Partition, TestKind, TestResult,
};
use attnguide::code::{parse, parse_corpus, SyntaxClass};
use attnguide::harness::{gen_corpus, run_cloze, sweep, CorpusParams, ExperimentSpec, SweepAxis};
use attnguide::model::{
    ag_loss, apply_mlm_mask, gradient_check, total_loss, train, AttentionMatrix, Example, GuidedModel, ModelConfig,
    Target, Task, TrainHyper, TrainItem,
};
use attnguide::patterns::{assign_heads, build_pattern, pattern_group, HeadAssignment, PatternMatrix, PatternSpec};
use attnguide::subtok::{build_vocab, encode, MASK};

const PATTERN_RUNTIME: Duration = Duration::from_secs(1);
const LOSS_TOL: f64 = 1e-12;
const GRAD_EPS: f64 = 1e-4;
const GRAD_SAMPLES: usize = 200;
const GRAD_MAX_REL: f64 = 1e-3;
const GRAD_RUNTIME: Duration = Duration::from_secs(60);
const ROW_SUM_TOL: f64 = 1e-6;
const NORM_SEEDS: u64 = 100;
const MASK_POSITIONS: usize = 10_000;
const MASK_RATE: f64 = 0.15;
const SELECTED_RANGE: (f64, f64) = (0.14, 0.16);
const SPLIT_TOL: f64 = 0.02;
const MW_CASES: usize = 100;
const PAIRED_T_P: f64 = 0.0742;
const PAIRED_T_TOL: f64 = 5e-4;
const BONFERRONI_THRESHOLD: f64 = 0.01;
const PARTITION_CASES: u64 = 100;
const FIX_CASES: usize = 1000;
const DIRECTIONAL_SNIPPETS: usize = 2000;
const DIRECTIONAL_SEEDS: u64 = 5;
const DIRECTIONAL_P: f64 = 0.01;
const ACCURACY_SLACK: f64 = 0.005;
const DIRECTIONAL_RUNTIME: Duration = Duration::from_secs(15 * 60);

fn report(n: u32, name: &str, ok: bool, detail: String) {
    println!("{} criterion {n:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn brute_force_pattern(seq: &attnguide::subtok::AlignedSequence, unit: &attnguide::code::CodeUnit, class: SyntaxClass) -> Vec<f64> {
    let n = seq.len();
    let cols: Vec<usize> = (0..n)
        .filter(|&c| matches!(seq.alignment[c], Some(s) if unit.tokens[s].syntax_class == class))
        .collect();
    let mut m = vec![0.0; n * n];
    if cols.is_empty() {
        return m;
    }
    for r in 0..seq.real_len {
        for &c in &cols {
            m[r * n + c] = 1.0 / cols.len() as f64;
        }
    }
    m
}

#[test]
fn criterion_01_pattern_oracle() {
    let start = Instant::now();
    let unit = parse("sum", "sum = num1 + num2 ;").unwrap();
    let vocab = build_vocab(std::slice::from_ref(&unit), 64).unwrap();
    let seq = encode(&unit, &vocab, 8);
    assert_eq!(seq.real_len, 8);
    let ident = build_pattern(&seq, &unit, PatternSpec::Syntax(SyntaxClass::Identifier)).unwrap();
    let op = build_pattern(&seq, &unit, PatternSpec::Syntax(SyntaxClass::Operator)).unwrap();
    let mut ok = true;
    for r in ident.included_rows() {
        for c in 0..8 {
            let want = if [1, 3, 5].contains(&c) { 1.0 / 3.0 } else { 0.0 };
            ok &= ident.get(r, c) == want;
        }
    }
    for r in op.included_rows() {
        for c in 0..8 {
            let want = if [2, 4].contains(&c) { 0.5 } else { 0.0 };
            ok &= op.get(r, c) == want;
        }
    }
    ok &= ident.included_rows().count() == 8 && op.included_rows().count() == 8;
    let brute_ident = brute_force_pattern(&seq, &unit, SyntaxClass::Identifier);
    let brute_op = brute_force_pattern(&seq, &unit, SyntaxClass::Operator);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ok &= bits(&ident.values) == bits(&brute_ident) && bits(&op.values) == bits(&brute_op);
    let elapsed = start.elapsed();
    report(
        1,
        "pattern oracle",
        ok && elapsed < PATTERN_RUNTIME,
        format!("identifier 1/3 at 1,3,5; operator 1/2 at 2,4; bit-exact vs brute force; {elapsed:?}"),
    );
}

fn small_model(alpha0: f64, guiding: HeadAssignment, vocab_size: usize, max_len: usize, seed: u64) -> GuidedModel {
    let cfg = ModelConfig {
        num_layers: 2,
        heads: 2,
        model_dim: 8,
        ffn_dim: 16,
        vocab_size,
        max_len,
        mask_rate: MASK_RATE,
        seed,
    };
    GuidedModel::new(cfg, guiding, alpha0).unwrap()
}

#[test]
fn criterion_02_loss_identities() {
    let h = AttentionMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let pat = |values: Vec<f64>| PatternMatrix {
        spec: PatternSpec::Syntax(SyntaxClass::Identifier),
        unit_id: "t".into(),
        n: 2,
        real_len: 2,
        values,
        row_included: vec![true, true],
    };
    let same = ag_loss(&h, &pat(vec![1.0, 0.0, 0.0, 1.0])).unwrap();
    let swapped = ag_loss(&h, &pat(vec![0.0, 1.0, 1.0, 0.0])).unwrap();

    let unit = parse("u", "public int f ( int a ) { if ( a > 0 ) { return a ; } return 0 ; }").unwrap();
    let vocab = build_vocab(std::slice::from_ref(&unit), 60).unwrap();
    let guiding = assign_heads(2, 2, 1.0, &pattern_group("syntax").unwrap()).unwrap();
    let model = small_model(3.0, guiding.clone(), vocab.len(), 32, 4);
    let seq = encode(&unit, &vocab, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let m = apply_mlm_mask(&seq, vocab.len(), MASK_RATE, &mut rng);
    let ex = Example::new(m.ids, &seq, &unit, Target::Mlm(m.targets), &guiding).unwrap();
    let end = total_loss(&model, std::slice::from_ref(&ex), 1.0).unwrap();
    let mid = total_loss(&model, std::slice::from_ref(&ex), 0.5).unwrap();

    let items: Vec<TrainItem> = (0..5)
        .map(|_| TrainItem {
            seq: seq.clone(),
            unit: unit.clone(),
            label: None,
        })
        .collect();
    let mut trained = model.clone();
    let hyper = TrainHyper {
        lr: 1e-3,
        epochs: 3,
        batch_size: 2,
        data_seed: 1,
    };
    let log = train(&mut trained, &items, Task::Cloze, &hyper).unwrap();
    let total = log.rows.len() as f64;
    let schedule_ok = log
        .rows
        .iter()
        .all(|r| r.alpha == 3.0 * (1.0 - r.step as f64 / total));

    let ok = same.abs() < LOSS_TOL
        && (swapped - 2.0).abs() < LOSS_TOL
        && end.total.to_bits() == end.task.to_bits()
        && end.sag > 0.0
        && mid.alpha == 1.5
        && schedule_ok;
    report(
        2,
        "loss identities",
        ok,
        format!(
            "ag(H=P)={same}, ag(2x2)={swapped}, total(t=1)={} task={}, {} logged steps on schedule",
            end.total, end.task, log.rows.len()
        ),
    );
}

#[test]
fn criterion_03_gradient_check() {
    let start = Instant::now();
    let unit = parse("g", "int a = b + c ;").unwrap();
    let vocab = build_vocab(std::slice::from_ref(&unit), 30).unwrap();
    let guiding = HeadAssignment::from_per_head(2, vec![Some(PatternSpec::Syntax(SyntaxClass::Identifier)), None]);
    let model = small_model(1.0, guiding.clone(), vocab.len(), 12, 11);
    let seq = encode(&unit, &vocab, 12);
    let target = Target::Mlm(vec![(2, seq.ids[2]), (5, seq.ids[5])]);
    let ex = Example::new(seq.ids.clone(), &seq, &unit, target, &guiding).unwrap();
    let r = gradient_check(&model, &[ex], 0.25, GRAD_EPS, GRAD_SAMPLES, 9).unwrap();
    let elapsed = start.elapsed();
    report(
        3,
        "gradient check",
        r.checked >= GRAD_SAMPLES && r.max_rel_error < GRAD_MAX_REL && elapsed < GRAD_RUNTIME,
        format!("{} params, max relative error {:.3e}, {elapsed:?}", r.checked, r.max_rel_error),
    );
}

#[test]
fn criterion_04_attention_normalization() {
    let mut worst: f64 = 0.0;
    let mut pad_mass: f64 = 0.0;
    for seed in 0..NORM_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 16;
        let model = small_model(0.0, HeadAssignment::none(2, 2), 40, n, seed);
        let real = rng.random_range(3..=n);
        let mut ids: Vec<u32> = (0..n).map(|_| rng.random_range(0..40)).collect();
        for id in &mut ids[real..] {
            *id = attnguide::subtok::PAD;
        }
        let trace = model.forward(&ids, real, &[]).unwrap();
        for a in &trace.attention {
            for r in 0..real {
                let row = a.row(r);
                let s: f64 = row[..real].iter().sum();
                worst = worst.max((s - 1.0).abs());
                pad_mass = pad_mass.max(row[real..].iter().fold(0.0, |m, v| m.max(v.abs())));
            }
        }
    }
    report(
        4,
        "attention normalization",
        worst <= ROW_SUM_TOL && pad_mass == 0.0,
        format!("max |row sum - 1| = {worst:.2e}, max pad weight = {pad_mass} over {NORM_SEEDS} seeds"),
    );
}

#[test]
fn criterion_05_masking_statistics() {
    let recs = gen_corpus(&CorpusParams {
        num_snippets: 1500,
        seed: 5,
    });
    let units = parse_corpus(&recs).unwrap();
    let vocab = build_vocab(&units, 256).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut maskable, mut selected, mut masked, mut kept, mut random) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for u in &units {
        let seq = encode(u, &vocab, 64);
        maskable += (0..seq.real_len).filter(|&p| seq.alignment[p].is_some()).count();
        let m = apply_mlm_mask(&seq, vocab.len(), MASK_RATE, &mut rng);
        for &(p, orig) in &m.targets {
            selected += 1;
            if m.ids[p] == MASK {
                masked += 1;
            } else if m.ids[p] == orig {
                kept += 1;
            } else {
                random += 1;
            }
        }
    }
    let frac = selected as f64 / maskable as f64;
    let share = |k: usize| k as f64 / selected as f64;
    let ok = maskable >= MASK_POSITIONS
        && (SELECTED_RANGE.0..=SELECTED_RANGE.1).contains(&frac)
        && (share(masked) - 0.8).abs() <= SPLIT_TOL
        && (share(kept) - 0.1).abs() <= SPLIT_TOL
        && (share(random) - 0.1).abs() <= SPLIT_TOL;
    report(
        5,
        "masking statistics",
        ok,
        format!(
            "{maskable} positions, selected {frac:.4}, mask/keep/random = {:.3}/{:.3}/{:.3}",
            share(masked),
            share(kept),
            share(random)
        ),
    );
}

fn pairwise_u(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

fn t_density(x: f64, df: f64) -> f64 {
    // Only df = 2 is needed: f(x) = (2 + x^2)^(-3/2).
    assert_eq!(df, 2.0);
    (2.0 + x * x).powf(-1.5)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, steps: usize) -> f64 {
    let h = (b - a) / steps as f64;
    let mut s = f(a) + f(b);
    for i in 1..steps {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn criterion_06_statistics_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut u_ok = true;
    for _ in 0..MW_CASES {
        let na = rng.random_range(1..=6);
        let nb = rng.random_range(1..=6);
        let a: Vec<f64> = (0..na).map(|_| rng.random_range(0..6) as f64).collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0..6) as f64).collect();
        let r = mann_whitney(&a, &b).unwrap();
        u_ok &= r.statistic == pairwise_u(&a, &b);
    }
    let exact = mann_whitney(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();

    let t = paired_t(&[1.0, 2.0, 3.0]).unwrap();
    let tail = simpson(|x| t_density(x, 2.0), t.statistic, 2000.0, 2_000_000);
    let oracle_p = 2.0 * tail;

    let mk = |p| TestResult {
        element: String::new(),
        test: TestKind::MannWhitney,
        statistic: 0.0,
        p_value: p,
        significant_after_bonferroni: false,
    };
    let mut rs = vec![mk(0.0099), mk(BONFERRONI_THRESHOLD), mk(0.0101), mk(1e-9)];
    bonferroni(&mut rs, BONFERRONI_THRESHOLD, 1);
    let flags: Vec<bool> = rs.iter().map(|r| r.significant_after_bonferroni).collect();

    let ok = u_ok
        && exact.statistic == 0.0
        && (exact.p_value - 0.1).abs() < LOSS_TOL
        && (oracle_p - PAIRED_T_P).abs() <= PAIRED_T_TOL
        && (t.p_value - oracle_p).abs() <= PAIRED_T_TOL
        && flags == [true, false, false, true];
    report(
        6,
        "statistics oracles",
        ok,
        format!(
            "U matches pairwise count on {MW_CASES} cases: {u_ok}; exact p = {}; paired-t p = {:.5} (oracle {:.5}); flags {flags:?}",
            exact.p_value, t.p_value, oracle_p
        ),
    );
}

#[test]
fn criterion_07_partition_oracle() {
    let hand = partition_tensor(&[
        Some(vec![vec![0.9, 0.8], vec![0.7, 0.9]]),
        Some(vec![vec![0.1, 0.2], vec![0.1, 0.0]]),
    ]);
    let mut conserved = true;
    for seed in 0..PARTITION_CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, l, h) = (rng.random_range(1..30), rng.random_range(1..5), rng.random_range(1..6));
        let w: Vec<Option<Vec<Vec<f64>>>> = (0..n)
            .map(|_| {
                rng.random_bool(0.9).then(|| {
                    (0..l)
                        .map(|_| (0..h).map(|_| rng.random_range(0..4) as f64 / 4.0).collect())
                        .collect()
                })
            })
            .collect();
        let labels = partition_tensor(&w);
        let count = |p| labels.iter().filter(|&&x| x == p).count();
        conserved &= labels.len() == n
            && count(Partition::High) + count(Partition::Low) + count(Partition::Excluded) == n;
    }
    let equal = partition_tensor(&vec![Some(vec![vec![0.37; 4]; 4]); 9]);
    let ok = hand == [Partition::High, Partition::Low] && conserved && equal.iter().all(|&p| p == Partition::Low);
    report(
        7,
        "partition oracle",
        ok,
        format!("handcrafted {hand:?}; conservation over {PARTITION_CASES} tensors: {conserved}; all-equal -> Low"),
    );
}

#[test]
fn criterion_08_fix_accounting() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ok = true;
    for _ in 0..FIX_CASES {
        let n = rng.random_range(0..40);
        let targets: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let base: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let guided: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let f = fix_accounting(&base, &guided, &targets);
        let correct = |p: &[u8]| p.iter().zip(&targets).filter(|(a, b)| a == b).count();
        ok &= f.correct_guided == f.correct_baseline + f.fixed - f.broken
            && f.correct_baseline == correct(&base)
            && f.correct_guided == correct(&guided);
    }
    report(
        8,
        "fix accounting",
        ok,
        format!("correct_guided = correct_baseline + fixed - broken on {FIX_CASES} random pairs"),
    );
}

#[test]
fn criterion_09_directional_guiding_effect() {
    let start = Instant::now();
    let (mut guided_mass, mut baseline_mass) = (Vec::new(), Vec::new());
    let mut per_seed = Vec::new();
    for seed in 0..DIRECTIONAL_SEEDS {
        let mut spec = ExperimentSpec::toy(Task::Cloze, DIRECTIONAL_SNIPPETS, seed);
        spec.folds = 1;
        let out = run_cloze(&spec).unwrap();
        let f = &out.folds[0];
        guided_mass.extend(&f.guided.target_mass);
        baseline_mass.extend(&f.baseline.target_mass);
        per_seed.push((f.baseline.accuracy, f.guided.accuracy));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mw = mann_whitney(&guided_mass, &baseline_mass).unwrap();
    let mass_ok = mean(&guided_mass) > mean(&baseline_mass) && mw.p_value < DIRECTIONAL_P;
    let acc_ok = per_seed.iter().all(|(b, g)| *g >= *b - ACCURACY_SLACK);
    let elapsed = start.elapsed();
    let seeds: Vec<String> = per_seed
        .iter()
        .map(|(b, g)| format!("{:.2}->{:.2}", 100.0 * b, 100.0 * g))
        .collect();
    report(
        9,
        "directional guiding effect",
        mass_ok && acc_ok && elapsed < DIRECTIONAL_RUNTIME,
        format!(
            "target mass {:.4} vs {:.4} (p = {:.2e}); accuracy per seed {}; {elapsed:?}",
            mean(&guided_mass),
            mean(&baseline_mass),
            mw.p_value,
            seeds.join(", ")
        ),
    );
}

#[test]
fn criterion_10_sweep_plumbing() {
    let mut spec = ExperimentSpec::toy(Task::Cloze, 120, 3);
    spec.folds = 1;
    spec.model.num_layers = 1;
    spec.model.heads = 2;
    spec.model.model_dim = 8;
    spec.model.ffn_dim = 8;
    spec.model.max_len = 48;
    spec.hyper.epochs = 1;
    spec.hyper.batch_size = 16;
    spec.probes_per_snippet = 1;
    let table = sweep(&spec, SweepAxis::Fraction, None).unwrap();
    let values: Vec<f64> = table.rows.iter().map(|r| r.value).collect();
    let sizes: Vec<usize> = table.rows.iter().map(|r| r.train_size).collect();
    let csv = table.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    let width = lines[0].split(',').count();
    let complete = lines.len() == 5
        && lines[1..]
            .iter()
            .all(|l| l.split(',').count() == width && l.split(',').all(|f| !f.is_empty()));
    let ok = values == [0.25, 0.5, 0.75, 1.0] && sizes.windows(2).all(|w| w[0] <= w[1]) && complete;
    report(
        10,
        "sweep plumbing",
        ok,
        format!("grid {values:?}, train sizes {sizes:?}, {} complete rows", lines.len() - 1),
    );
}
