//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Data comes from the cue-word corpus generator (`CueCorpus`): sentences of
//! 4 to 10 neutral filler words, half of them with one sentiment cue word
//! inserted at a random position; label 1 iff a cue is present.

use std::process::ExitCode;
use std::time::Instant;

use attrib_core::attribution::mlp::{LrpRule, ReluMlp};
use attrib_core::attribution::{lat_layer_relevance, lrp_relevance, AttributionConfig, Method};
use attrib_core::data::{encode_dataset, CueCorpus, CueCorpusSpec, Dataset, Vocabulary};
use attrib_core::evaluation::{
    cross_dataset, deletion_curve, random_deletion_curve, seed_robustness, AblationCurve, CorrelationReport,
    ModelUnderTest,
};
use attrib_core::model::{fit, forward, Checkpoint, Hyper, ModelConfig, Mode};
use attrib_core::verify::{gradcheck, GradcheckOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRADIENT_TOL: f64 = 1e-4;
const GRADIENT_MODELS: usize = 20;
const CONSERVATION_TOL: f64 = 1e-6;
const CONSERVATION_INPUTS: usize = 60;
const COSINE_TOL: f64 = 1e-6;
const RELU_NETS: usize = 12;
const TRAIN_SIZE: usize = 2000;
const DEV_SIZE: usize = 500;
const TEST_SIZE: usize = 500;
const K_MAX: usize = 5;
const RANDOM_REPEATS: usize = 10;
const RANDOM_SEED: u64 = 17;
const SEEDS: (u64, u64) = (0, 1);
const MIN_COUNT: usize = 5;
const MIN_SEED_R: f64 = 0.3;
const MIN_DEV_ACCURACY: f64 = 0.95;
const MAX_EPOCHS: usize = 10;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: &str, name: &str, pass: bool, detail: String, started: Instant) {
        if !pass {
            self.failed += 1;
        }
        println!(
            "criterion {id} [{}] {name}: {detail} ({:.1}s)",
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
    }
}

fn corpus(name: &str, n: usize, seed: u64) -> Dataset {
    CueCorpus::generate(name, CueCorpusSpec { n_examples: n, seed, ..Default::default() })
}

fn default_config(vocab: &Vocabulary) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        ..Default::default()
    }
}

fn hyper() -> Hyper {
    Hyper {
        epochs: MAX_EPOCHS,
        ..Default::default()
    }
}

fn train(train: &Dataset, dev: &Dataset) -> (Vocabulary, Checkpoint) {
    let vocab = Vocabulary::build(train, 1);
    let ckpt = fit(&default_config(&vocab), &vocab, train, dev, &hyper()).expect("training succeeds");
    (vocab, ckpt)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Everything criteria 5 to 7 produce, plus their serialized artifacts.
struct Artifacts {
    main: (Vocabulary, Checkpoint),
    curves: Vec<AblationCurve>,
    seed_reports: Vec<CorrelationReport>,
    cross_report: CorrelationReport,
    bytes: Vec<(String, Vec<u8>)>,
}

fn produce_artifacts() -> Artifacts {
    let train_set = corpus("train", TRAIN_SIZE, 100);
    let dev_set = corpus("dev", DEV_SIZE, 101);
    let test_set = corpus("test", TEST_SIZE, 102);

    let (vocab, ckpt) = train(&train_set, &dev_set);
    let test = encode_dataset(&vocab, &test_set, ckpt.params.config.max_seq_len);
    let mut curves: Vec<AblationCurve> = Method::ALL
        .iter()
        .map(|&m| deletion_curve(&ckpt.params, &test, &AttributionConfig::new(m), K_MAX).expect("deletion curve"))
        .collect();
    curves.push(random_deletion_curve(&ckpt.params, &test, K_MAX, RANDOM_REPEATS, RANDOM_SEED).expect("random curve"));

    let seed_reports = seed_robustness(
        &default_config(&vocab),
        &vocab,
        &hyper(),
        &train_set,
        &dev_set,
        &test_set,
        SEEDS,
        &[Method::Gs, Method::Gi],
        MIN_COUNT,
    )
    .expect("seed robustness");

    // two disjoint slices, each with its own vocabulary and model
    let big_train = corpus("slices-train", 2 * TRAIN_SIZE, 200);
    let big_dev = corpus("slices-dev", 2 * DEV_SIZE, 201);
    let big_test = corpus("slices-test", 2 * TEST_SIZE, 202);
    let half = |ds: &Dataset, first: bool| {
        let n = ds.len() / 2;
        let part = if first { &ds.examples[..n] } else { &ds.examples[n..] };
        Dataset {
            name: format!("{}-{}", ds.name, if first { "a" } else { "b" }),
            examples: part.to_vec(),
        }
    };
    let slices: Vec<(Dataset, Vocabulary, Checkpoint)> = [true, false]
        .into_iter()
        .map(|first| {
            let (v, c) = train(&half(&big_train, first), &half(&big_dev, first));
            (half(&big_test, first), v, c)
        })
        .collect();
    let models: Vec<ModelUnderTest> = slices
        .iter()
        .map(|(t, v, c)| ModelUnderTest { params: &c.params, vocab: v, test: t })
        .collect();
    let labels = vec!["slice-a".to_string(), "slice-b".to_string()];
    let cross_report = cross_dataset(&models, &labels, &AttributionConfig::new(Method::Gs), MIN_COUNT).expect("cross dataset");

    let mut csv = String::from("method,k,accuracy,n\n");
    curves.iter().for_each(|c| csv.push_str(&c.csv_rows()));
    let bytes = vec![
        ("ablation.csv".to_string(), csv.into_bytes()),
        ("ablation.json".to_string(), serde_json::to_vec_pretty(&curves).unwrap()),
        ("seeds.json".to_string(), serde_json::to_vec_pretty(&seed_reports).unwrap()),
        ("datasets.json".to_string(), serde_json::to_vec_pretty(&cross_report).unwrap()),
        ("checkpoint.bin".to_string(), ckpt.to_bytes()),
    ];
    Artifacts {
        main: (vocab, ckpt),
        curves,
        seed_reports,
        cross_report,
        bytes,
    }
}

fn main() -> ExitCode {
    // `cargo test -- <filter>` style arguments are ignored; `--list` reports nothing.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut report = Report { failed: 0 };

    // 1. input gradients against central differences on random models
    let t = Instant::now();
    let opts = GradcheckOptions::new(
        ModelConfig {
            vocab_size: 64,
            max_seq_len: 16,
            ..Default::default()
        },
        GRADIENT_MODELS,
        7,
    );
    let g = gradcheck(&opts).expect("gradcheck runs");
    report.line(
        "1",
        "gradient fidelity",
        g.max_gradient_error < GRADIENT_TOL,
        format!("max relative error {:.2e} < {GRADIENT_TOL:e} over {GRADIENT_MODELS} default-size models", g.max_gradient_error),
        t,
    );

    let t_all = Instant::now();
    let first = produce_artifacts();
    let build_time = t_all.elapsed().as_secs_f64();
    let (vocab, ckpt) = &first.main;
    let test_set = corpus("test", TEST_SIZE, 102);
    let inputs: Vec<Vec<usize>> = encode_dataset(vocab, &test_set, ckpt.params.config.max_seq_len)
        .into_iter()
        .take(CONSERVATION_INPUTS)
        .map(|e| e.ids)
        .collect();

    // 2. LRP conservation on trained-model inputs
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for ids in &inputs {
        let trace = forward(&ckpt.params, ids, Mode::Eval).unwrap();
        for (alpha, beta) in [(1.0, 0.0), (2.0, 1.0)] {
            let cfg = AttributionConfig {
                lrp_alpha: alpha,
                lrp_beta: beta,
                ..AttributionConfig::new(Method::Lrp)
            };
            let out = lrp_relevance(&ckpt.params, &trace, &cfg).unwrap();
            let token_sum: f64 = (0..out.input.rows()).map(|r| out.input.row(r).iter().sum::<f64>()).sum();
            worst = worst.max((token_sum - out.seed).abs() / out.seed.abs().max(1.0));
        }
    }
    report.line(
        "2",
        "LRP conservation",
        worst <= CONSERVATION_TOL,
        format!("max |sum R - f_c(x)| / max(1, |f_c(x)|) = {worst:.2e} <= {CONSERVATION_TOL:e} over {} inputs x 2 (alpha, beta)", inputs.len()),
        t,
    );

    // 3. LAT conservation at every layer
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for ids in &inputs {
        let trace = forward(&ckpt.params, ids, Mode::Eval).unwrap();
        for dist in lat_layer_relevance(&trace).unwrap() {
            worst = worst.max((dist.iter().sum::<f64>() - 1.0).abs());
        }
    }
    report.line(
        "3",
        "LAT conservation",
        worst <= CONSERVATION_TOL,
        format!("max |layer total - 1| = {worst:.2e} <= {CONSERVATION_TOL:e} over {} inputs", inputs.len()),
        t,
    );

    // 4. basic LRP equals gradient x input on ReLU networks
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst, mut checked, mut skipped) = (f64::INFINITY, 0, 0);
    while checked < RELU_NETS {
        let depth = rng.random_range(3..=5);
        let sizes: Vec<usize> = (0..=depth).map(|_| rng.random_range(4..=32)).collect();
        let net = ReluMlp::random(&sizes, 0.1, rng.random());
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let trace = net.forward(&x);
        let gi = net.gradient_times_input(&x, 0);
        if trace.min_abs_preactivation() <= 1e-9 || gi.iter().all(|v| *v == 0.0) {
            skipped += 1;
            continue;
        }
        worst = worst.min(cosine(&net.lrp(&x, 0, LrpRule::Z), &gi));
        checked += 1;
    }
    report.line(
        "4",
        "LRP / gradient x input equivalence",
        worst >= 1.0 - COSINE_TOL,
        format!("min cosine {worst:.12} >= 1 - {COSINE_TOL:e} over {checked} networks ({skipped} degenerate skipped)"),
        t,
    );

    // 5. guided deletion beats random deletion
    let random = first.curves.iter().find(|c| c.random).unwrap();
    let random_mean = random.mean_over(1, K_MAX);
    let mut ok = true;
    let mut parts = Vec::new();
    for c in first.curves.iter().filter(|c| !c.random) {
        let m = c.mean_over(1, K_MAX);
        if c.method != "lat" {
            ok &= m < random_mean;
        }
        parts.push(format!("{} {m:.4}", c.method));
    }
    report.line(
        "5",
        "deletion trend",
        ok,
        format!(
            "mean accuracy k=1..{K_MAX}: {} vs random({RANDOM_REPEATS}) {random_mean:.4}; gs, gi, lrp must be lower (subset {})",
            parts.join(", "),
            random.subset
        ),
        t_all,
    );

    // 6. word-level agreement across training seeds
    let rs: Vec<String> = first
        .seed_reports
        .iter()
        .map(|r| format!("{} r={:.4} over {} words", r.method, r.matrix[0][1], r.shared[0][1]))
        .collect();
    report.line(
        "6",
        "seed robustness",
        first.seed_reports.iter().all(|r| r.matrix[0][1] > MIN_SEED_R),
        format!("{} (need r > {MIN_SEED_R}, seeds {SEEDS:?}, min count {MIN_COUNT})", rs.join("; ")),
        t_all,
    );

    // 7. cross-dataset correlation on disjoint slices
    let m = &first.cross_report.matrix;
    let symmetric = (m[0][1] - m[1][0]).abs() <= 1e-12;
    let unit = (m[0][0] - 1.0).abs() <= 1e-12 && (m[1][1] - 1.0).abs() <= 1e-12;
    report.line(
        "7",
        "cross-dataset consistency",
        symmetric && unit && m[0][1] > 0.0,
        format!("gs matrix {m:?} over {} common words: symmetric {symmetric}, unit diagonal {unit}", first.cross_report.shared[0][1]),
        t_all,
    );

    // 8. rerun 5 to 7 and compare artifacts byte for byte
    let t = Instant::now();
    let second = produce_artifacts();
    let differing: Vec<&str> = first
        .bytes
        .iter()
        .zip(&second.bytes)
        .filter(|(a, b)| a.1 != b.1)
        .map(|(a, _)| a.0.as_str())
        .collect();
    report.line(
        "8",
        "determinism",
        differing.is_empty() && first.bytes.len() == second.bytes.len(),
        format!(
            "{} artifacts compared ({}); differing: {:?}",
            first.bytes.len(),
            first.bytes.iter().map(|b| b.0.as_str()).collect::<Vec<_>>().join(", "),
            differing
        ),
        t,
    );

    // 9. trainability on the cue corpus
    let meta = &ckpt.metadata;
    report.line(
        "9",
        "trainability",
        meta.dev_accuracy > MIN_DEV_ACCURACY && meta.best_epoch <= MAX_EPOCHS,
        format!(
            "dev accuracy {:.4} > {MIN_DEV_ACCURACY} at epoch {} of {} ({TRAIN_SIZE} train / {DEV_SIZE} dev, default config)",
            meta.dev_accuracy, meta.best_epoch, meta.epochs
        ),
        t_all,
    );
    println!("artifact build time {build_time:.1}s per run");

    if report.failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", report.failed);
        ExitCode::FAILURE
    }
}
