use std::path::{Path, PathBuf};

use attrib_core::attribution::{attribute_dataset, AttributionConfig, Method, RelevanceRecord};
use attrib_core::data::{encode_dataset, load_tsv, CueCorpus, CueCorpusSpec, Dataset, EncodedExample, Vocabulary};
use attrib_core::derive_seed;
use attrib_core::evaluation::{
    cross_dataset, deletion_curve, random_deletion_curve, seed_robustness, top_bottom, word_table_from_tokens,
    AblationCurve, CorrelationReport, ModelUnderTest,
};
use attrib_core::model::{fit, Checkpoint};
use attrib_core::verify::{gradcheck as run_gradcheck, GradcheckOptions, VerifyError};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::failure::Failure;
use crate::heatmap;
use crate::manifest::Recorder;
use crate::{AblateArgs, AttributeArgs, CorrelateArgs, CorrelateMode, GenToyArgs, GradcheckArgs, LrpArgs, RankArgs, SplitArgs, TrainArgs};

fn out_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))
}

fn load(path: &Path, rec: &mut Recorder) -> Result<Dataset, Failure> {
    rec.input(path);
    load_tsv(path).map_err(Failure::input)
}

fn load_checkpoint(path: &Path, rec: &mut Recorder) -> Result<Checkpoint, Failure> {
    rec.input(path);
    Ok(Checkpoint::load(path)?)
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(Failure::internal)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn encode_checked(ckpt: &Checkpoint, ds: &Dataset) -> Result<Vec<EncodedExample>, Failure> {
    ds.check_labels(ckpt.config().n_classes).map_err(Failure::input)?;
    Ok(encode_dataset(&ckpt.vocab, ds, ckpt.config().max_seq_len))
}

fn attribution_config(method: Method, target: crate::TargetArg, lrp: &LrpArgs, class: Option<usize>) -> Result<AttributionConfig, Failure> {
    let cfg = AttributionConfig {
        target: target.into(),
        lrp_alpha: lrp.alpha,
        lrp_beta: lrp.beta,
        class,
        ..AttributionConfig::new(method)
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> Result<(), Failure> {
    let mut rec = Recorder::new("train");
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(p) = &a.config {
        rec.input(p);
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let train = load(&a.train, &mut rec)?;
    let dev = load(&a.dev, &mut rec)?;
    let vocab = Vocabulary::build(&train, cfg.min_freq);
    if cfg.vocab_size.is_some_and(|v| v != vocab.len()) {
        return Err(Failure::input(format!(
            "config vocab_size {} does not match the {} entries built from the training corpus",
            cfg.vocab_size.unwrap(),
            vocab.len()
        )));
    }
    let model = cfg.model(vocab.len());
    let ckpt = fit(&model, &vocab, &train, &dev, &cfg.hyper())?;

    out_dir(&a.out)?;
    rec.write(&a.out.join("model.ckpt"), &ckpt.to_bytes())?;
    rec.write(&a.out.join("train_log.json"), &json_bytes(&ckpt.metadata)?)?;
    println!(
        "best epoch {} of {}, dev accuracy {:.4}, vocabulary {} entries",
        ckpt.metadata.best_epoch,
        ckpt.metadata.epochs,
        ckpt.metadata.dev_accuracy,
        vocab.len()
    );
    let resolved = json!({ "model": model, "hyper": cfg.hyper(), "min_freq": cfg.min_freq });
    rec.finish(&a.out.join("manifest.json"), resolved, Some(cfg.seed))
}

pub fn attribute(a: &AttributeArgs) -> Result<(), Failure> {
    let mut rec = Recorder::new("attribute");
    let ckpt = load_checkpoint(&a.ckpt, &mut rec)?;
    let data = load(&a.data, &mut rec)?;
    let cfg = attribution_config(a.method, a.target, &a.lrp, a.class)?;
    let encoded = encode_checked(&ckpt, &data)?;
    let ids: Vec<Vec<usize>> = encoded.into_iter().map(|e| e.ids).collect();
    let maps = attribute_dataset(&ckpt.params, &ids, &cfg)?;
    let records: Vec<RelevanceRecord> = maps.iter().map(|m| RelevanceRecord::from_map(m, &ckpt.vocab, a.dims)).collect();

    let mut lines = String::new();
    for r in &records {
        lines.push_str(&r.to_json_line());
        lines.push('\n');
    }
    out_dir(&a.out)?;
    rec.write(&a.out.join("relevance.jsonl"), lines.as_bytes())?;
    let title = format!("{} relevance, {}", a.method, a.data.display());
    rec.write(&a.out.join("heatmap.html"), heatmap::render(&title, &records).as_bytes())?;
    println!("{} sentences attributed with {}", records.len(), a.method);
    let resolved = json!({
        "method": a.method,
        "target": cfg.target,
        "class": cfg.class,
        "lrp_alpha": cfg.lrp_alpha,
        "lrp_beta": cfg.lrp_beta,
        "lrp_epsilon": cfg.lrp_epsilon,
        "dims": a.dims,
    });
    rec.finish(&a.out.join("manifest.json"), resolved, None)
}

pub fn ablate(a: &AblateArgs) -> Result<(), Failure> {
    let mut rec = Recorder::new("ablate");
    let ckpt = load_checkpoint(&a.ckpt, &mut rec)?;
    let data = load(&a.data, &mut rec)?;
    let encoded = encode_checked(&ckpt, &data)?;
    let mut curves: Vec<AblationCurve> = Vec::new();
    for &m in &a.methods {
        let cfg = attribution_config(m, a.target, &a.lrp, None)?;
        curves.push(deletion_curve(&ckpt.params, &encoded, &cfg, a.kmax)?);
    }
    curves.push(random_deletion_curve(&ckpt.params, &encoded, a.kmax, a.random_repeats, a.seed)?);

    let mut csv = String::from("method,k,accuracy,n\n");
    for c in &curves {
        csv.push_str(&c.csv_rows());
        println!("{:<6} mean accuracy k=1..{}: {:.4}", c.method, a.kmax, if a.kmax > 0 { c.mean_over(1, a.kmax) } else { 1.0 });
    }
    out_dir(&a.out)?;
    rec.write(&a.out.join("ablation.csv"), csv.as_bytes())?;
    rec.write(&a.out.join("ablation.json"), &json_bytes(&curves)?)?;
    let resolved = json!({
        "methods": a.methods,
        "kmax": a.kmax,
        "random_repeats": a.random_repeats,
        "target": attrib_core::model::Target::from(a.target),
        "lrp_alpha": a.lrp.alpha,
        "lrp_beta": a.lrp.beta,
    });
    rec.finish(&a.out.join("manifest.json"), resolved, Some(a.seed))
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    p.as_deref().ok_or_else(|| Failure::input(format!("--mode seeds requires {flag}")))
}

pub fn correlate(a: &CorrelateArgs) -> Result<(), Failure> {
    let mut rec = Recorder::new("correlate");
    let (reports, resolved, seed): (Vec<CorrelationReport>, serde_json::Value, Option<u64>) = match a.mode {
        CorrelateMode::Seeds => {
            let [s0, s1] = a.seeds[..] else {
                return Err(Failure::input("--mode seeds requires --seeds A,B"));
            };
            let cfg = RunConfig::load(a.config.as_deref())?;
            if let Some(p) = &a.config {
                rec.input(p);
            }
            let train = load(require(&a.train, "--train")?, &mut rec)?;
            let dev = load(require(&a.dev, "--dev")?, &mut rec)?;
            let test = load(require(&a.test, "--test")?, &mut rec)?;
            let vocab = Vocabulary::build(&train, cfg.min_freq);
            let model = cfg.model(vocab.len());
            let reports = seed_robustness(&model, &vocab, &cfg.hyper(), &train, &dev, &test, (s0, s1), &a.methods, a.min_count)?;
            let resolved = json!({
                "mode": "seeds",
                "model": model,
                "hyper": cfg.hyper(),
                "methods": a.methods,
                "seeds": [s0, s1],
                "min_count": a.min_count,
            });
            (reports, resolved, Some(s0))
        }
        CorrelateMode::Datasets => {
            if a.pairs.len() < 2 {
                return Err(Failure::input("--mode datasets requires at least two --pair CKPT=DATA"));
            }
            let mut loaded = Vec::new();
            for p in &a.pairs {
                let (c, d) = p
                    .split_once('=')
                    .ok_or_else(|| Failure::input(format!("--pair `{p}` is not of the form CKPT=DATA")))?;
                let ckpt = load_checkpoint(Path::new(c), &mut rec)?;
                let data = load(Path::new(d), &mut rec)?;
                loaded.push((ckpt, data));
            }
            let models: Vec<ModelUnderTest> = loaded
                .iter()
                .map(|(c, d)| ModelUnderTest { params: &c.params, vocab: &c.vocab, test: d })
                .collect();
            let labels: Vec<String> = a.pairs.clone();
            let reports = a
                .methods
                .iter()
                .map(|&m| cross_dataset(&models, &labels, &AttributionConfig::new(m), a.min_count))
                .collect::<Result<Vec<_>, _>>()?;
            let resolved = json!({ "mode": "datasets", "methods": a.methods, "min_count": a.min_count });
            (reports, resolved, None)
        }
    };
    let mut csv = String::from("method,row,col,r,shared\n");
    for r in &reports {
        csv.push_str(&r.csv_rows());
        println!("{}: {:?}", r.method, r.matrix);
    }
    out_dir(&a.out)?;
    rec.write(&a.out.join("correlation.csv"), csv.as_bytes())?;
    rec.write(&a.out.join("correlation.json"), &json_bytes(&reports)?)?;
    rec.finish(&a.out.join("manifest.json"), resolved, seed)
}

pub fn rank(a: &RankArgs) -> Result<(), Failure> {
    let mut rec = Recorder::new("rank");
    rec.input(&a.maps);
    let text = std::fs::read_to_string(&a.maps).map_err(|e| Failure::input(format!("{}: {e}", a.maps.display())))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r = RelevanceRecord::parse(line).map_err(|e| Failure::input(format!("{} line {}: {e}", a.maps.display(), i + 1)))?;
        if r.tokens.len() != r.scores.len() {
            return Err(Failure::input(format!("{} line {}: tokens and scores differ in length", a.maps.display(), i + 1)));
        }
        records.push(r);
    }
    let table = word_table_from_tokens(
        records.iter().map(|r| (r.tokens.as_slice(), r.scores.as_slice())),
        a.min_count,
        !a.keep_punct,
    );
    let (top, bottom) = top_bottom(&table, a.k);
    for w in &top {
        println!("top    {:<16} {:.6e} ({})", w.word, w.mean, w.count);
    }
    for w in &bottom {
        println!("bottom {:<16} {:.6e} ({})", w.word, w.mean, w.count);
    }
    out_dir(&a.out)?;
    rec.write(&a.out.join("rank.json"), &json_bytes(&json!({ "top": top, "bottom": bottom }))?)?;
    let resolved = json!({ "min_count": a.min_count, "k": a.k, "exclude_punct": !a.keep_punct });
    rec.finish(&a.out.join("manifest.json"), resolved, None)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), Failure> {
    let mut rec = Recorder::new("gradcheck");
    let cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(p) = &a.config {
        rec.input(p);
    }
    let model = cfg.model(cfg.vocab_size.unwrap_or(attrib_core::model::ModelConfig::default().vocab_size));
    let opts = GradcheckOptions {
        corrupt_vjp: a.corrupt_vjp,
        ..GradcheckOptions::new(model.clone(), a.trials, a.seed)
    };
    let report = run_gradcheck(&opts).map_err(|e| match e {
        VerifyError::NoTrials => Failure::input(e),
        VerifyError::Model(m) => m.into(),
        VerifyError::Attribution(x) => x.into(),
    })?;
    println!("trials                  {}", report.trials);
    println!("max gradient rel error  {:.3e}", report.max_gradient_error);
    println!("max lrp conservation    {:.3e}", report.max_lrp_error);
    println!("max lat conservation    {:.3e}", report.max_lat_error);
    if let Some(out) = &a.out {
        out_dir(out)?;
        rec.write(&out.join("gradcheck.json"), &json_bytes(&report)?)?;
    }
    if !report.passed() {
        return Err(Failure::internal(format!("{} checks failed:\n  {}", report.failures.len(), report.failures.join("\n  "))));
    }
    if let Some(out) = &a.out {
        rec.finish(&out.join("manifest.json"), json!({ "model": model, "trials": a.trials }), Some(a.seed))?;
    }
    Ok(())
}

pub fn gen_toy(a: &GenToyArgs) -> Result<(), Failure> {
    let mut rec = Recorder::new("gen-toy");
    out_dir(&a.out)?;
    for (k, (name, n)) in [("train", a.train), ("dev", a.dev), ("test", a.test)].into_iter().enumerate() {
        let spec = CueCorpusSpec {
            n_examples: n,
            seed: derive_seed(a.seed, 0x544f_5959, k as u64),
            ..Default::default()
        };
        rec.write(&a.out.join(format!("{name}.tsv")), CueCorpus::generate(name, spec).to_tsv().as_bytes())?;
    }
    println!("cue words: {}", CueCorpus::cue_words().join(", "));
    let resolved = json!({ "train": a.train, "dev": a.dev, "test": a.test });
    rec.finish(&a.out.join("manifest.json"), resolved, Some(a.seed))
}

pub fn split(a: &SplitArgs) -> Result<(), Failure> {
    let mut rec = Recorder::new("split");
    let ds = load(&a.input, &mut rec)?;
    let (dev, test) = ds.split_alternating();
    out_dir(&a.out)?;
    rec.write(&a.out.join("dev.tsv"), dev.to_tsv().as_bytes())?;
    rec.write(&a.out.join("test.tsv"), test.to_tsv().as_bytes())?;
    println!("{} dev rows, {} test rows", dev.len(), test.len());
    rec.finish(&a.out.join("manifest.json"), json!({}), None)
}
