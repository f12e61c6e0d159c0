use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use artilang::corpus::{manifest_path, read_corpus_all, CorpusManifest, Sequence};
use artilang::generators::{
    corpus_stats, validate_corpus_file, write_generated, write_histogram_csv, BigramSource, DistributionSource,
    Generator, GeneratorSpec, Grammar, PairingRule, StatsOptions, Target, DEFAULT_SEQ_LEN_RANGE,
};
use artilang::mlm::{
    checkpoint_dtype, load_checkpoint, save_checkpoint, train, DType, MaskingPolicy, MlmConfig, MlmModel, Real,
    TrainConfig, TrainingMetadata,
};
use artilang::probe::{block_concentration, probe_corpus};
use artilang::transfer::{
    build_downstream_task, finetune_seeds, make_adversarial_pairs, remap_model, write_examples, MultiSeedReport, RemapContext, RemapStrategy, TaskData, TaskKind,
};
use artilang::vocab::{Vocabulary, DESK_CONTENT_SIZE};

use super::config::{ProbeConfig, RunConfig, Snapshot};
use super::{
    AdvArgs, CliError, FinetuneArgs, GenerateArgs, Kind, Pairing, PretrainArgs, ProbeArgs, RemapArg, StatsArgs,
    TaskArg, ValidateArgs,
};

const DEFAULT_SEQUENCES: u64 = 10_000;
const DEFAULT_PROBE_SEQUENCES: usize = 1000;
const NESTING_PUSH_PROB: f64 = 0.4;

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(artilang::Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn paths<'a>(entries: &[(&'a str, &Path)]) -> BTreeMap<&'a str, PathBuf> {
    entries.iter().map(|(k, p)| (*k, p.to_path_buf())).collect()
}

fn grammar_kind(g: &Grammar) -> Kind {
    match g {
        Grammar::Uniform => Kind::Uniform,
        Grammar::Unigram { .. } => Kind::Unigram,
        Grammar::Bigram { .. } => Kind::Bigram,
        Grammar::FlatParens { .. } => Kind::Flat,
        Grammar::NestingParens { .. } => Kind::Nesting,
        Grammar::Shuffle { .. } => Kind::Shuffle,
    }
}

fn flag_distribution(a: &GenerateArgs) -> Result<Option<DistributionSource>, CliError> {
    let given = [a.zipf.is_some(), a.distribution.is_some(), a.reference.is_some()];
    if given.iter().filter(|&&g| g).count() > 1 {
        return Err(CliError::Usage("give at most one of --zipf, --distribution, --reference".into()));
    }
    Ok(if let Some(exponent) = a.zipf {
        Some(DistributionSource::Zipf { exponent })
    } else if let Some(path) = &a.distribution {
        Some(DistributionSource::File { path: path.clone() })
    } else {
        a.reference.clone().map(|path| DistributionSource::Corpus { path })
    })
}

fn resolve_grammar(a: &GenerateArgs, base: Option<&Grammar>) -> Result<Grammar, CliError> {
    let kind = a
        .kind
        .or(base.map(grammar_kind))
        .ok_or_else(|| CliError::Usage("--kind is required (or a [generator] section in --config)".into()))?;
    let base = base.filter(|g| grammar_kind(g) == kind);
    let base_distribution = base.and_then(|g| match g {
        Grammar::Unigram { distribution }
        | Grammar::FlatParens { distribution, .. }
        | Grammar::NestingParens { distribution, .. } => Some(distribution.clone()),
        _ => None,
    });
    let distribution = flag_distribution(a)?.or(base_distribution);
    Ok(match kind {
        Kind::Uniform => Grammar::Uniform,
        Kind::Unigram => Grammar::Unigram {
            distribution: distribution.ok_or_else(|| {
                CliError::Usage("unigram needs --zipf, --distribution or --reference".into())
            })?,
        },
        Kind::Bigram => {
            let model = match (&a.bigram, &a.reference, base) {
                (Some(path), _, _) => BigramSource::File { path: path.clone() },
                (None, Some(path), _) => BigramSource::Corpus { path: path.clone() },
                (None, None, Some(Grammar::Bigram { model })) => model.clone(),
                _ => return Err(CliError::Usage("bigram needs --bigram or --reference".into())),
            };
            Grammar::Bigram { model }
        }
        Kind::Flat => Grammar::FlatParens {
            distribution: distribution.unwrap_or(DistributionSource::Uniform),
            max_span: match (a.max_span, base) {
                (Some(l), _) => l,
                (None, Some(Grammar::FlatParens { max_span, .. })) => *max_span,
                _ => return Err(CliError::Usage("flat needs --max-span".into())),
            },
        },
        Kind::Nesting => Grammar::NestingParens {
            distribution: distribution.unwrap_or(DistributionSource::Uniform),
            push_prob: match (a.push_prob, base) {
                (Some(p), _) => p,
                (None, Some(Grammar::NestingParens { push_prob, .. })) => *push_prob,
                _ => NESTING_PUSH_PROB,
            },
        },
        Kind::Shuffle => Grammar::Shuffle {
            block_size: match (a.n, base) {
                (Some(n), _) => n,
                (None, Some(Grammar::Shuffle { block_size })) => *block_size,
                _ => return Err(CliError::Usage("shuffle needs --n".into())),
            },
        },
    })
}

pub fn generate(a: GenerateArgs) -> Result<(), CliError> {
    let config = RunConfig::load(a.config.as_deref())?;
    let base = config.generator.as_ref();
    let grammar = resolve_grammar(&a, base.map(|s| &s.grammar))?;
    let [min, max] = base.map(|s| s.seq_len_range).unwrap_or(DEFAULT_SEQ_LEN_RANGE);
    let spec = GeneratorSpec {
        grammar,
        content_size: a.content_size.or(base.map(|s| s.content_size)).unwrap_or(DESK_CONTENT_SIZE),
        seq_len_range: [a.min_len.unwrap_or(min), a.max_len.unwrap_or(max)],
        num_sequences: a.sequences.or(base.map(|s| s.num_sequences)).unwrap_or(DEFAULT_SEQUENCES),
        master_seed: a.seed.or(base.map(|s| s.master_seed)).unwrap_or(0),
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let generator = Generator::new(spec.clone())?;
    let manifest = write_generated(&generator, &a.out)?;
    Snapshot {
        command: "generate",
        paths: paths(&[("out", &a.out)]),
        config: RunConfig {
            generator: Some(spec),
            ..RunConfig::default()
        },
    }
    .write(&sidecar(&a.out, ".config.toml"))?;
    println!(
        "wrote {} sequences ({} tokens) to {}",
        manifest.num_sequences,
        manifest.token_count,
        a.out.display()
    );
    Ok(())
}

fn manifest_spec(corpus: &Path) -> Result<Option<GeneratorSpec>, CliError> {
    let path = manifest_path(corpus);
    if !path.exists() {
        return Ok(None);
    }
    let manifest = CorpusManifest::read(&path)?;
    Ok(serde_json::from_value(manifest.generator_spec).ok())
}

fn corpus_spec(corpus: &Path, config: &RunConfig) -> Result<Option<GeneratorSpec>, CliError> {
    match &config.generator {
        Some(spec) => Ok(Some(spec.clone())),
        None => manifest_spec(corpus),
    }
}

pub fn validate(a: ValidateArgs) -> Result<(), CliError> {
    let config = RunConfig::load(a.config.as_deref())?;
    let spec = corpus_spec(&a.corpus, &config)?.ok_or_else(|| {
        CliError::Usage("no generator spec: the corpus has no manifest and --config has no [generator]".into())
    })?;
    let generator = Generator::new(spec.clone())?;
    let report = validate_corpus_file(&a.corpus, &generator)?;
    println!("{}", report.summary());
    for v in &report.violations {
        match v.line {
            Some(line) => println!("  line {line}: {}", v.message),
            None => println!("  {}", v.message),
        }
    }
    if let Some(path) = &a.report {
        write_json(path, &report)?;
        Snapshot {
            command: "validate",
            paths: paths(&[("corpus", &a.corpus), ("report", path)]),
            config: RunConfig {
                generator: Some(spec),
                ..RunConfig::default()
            },
        }
        .write(&sidecar(path, ".config.toml"))?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{} violations", report.violation_count)))
    }
}

fn content_size_of(corpus: &Path, fallback: Option<u32>) -> Result<u32, CliError> {
    let path = manifest_path(corpus);
    if path.exists() {
        return Ok(CorpusManifest::read(&path)?.content_size);
    }
    fallback.ok_or_else(|| CliError::Usage(format!("{} has no manifest; give the content size in --config", corpus.display())))
}

pub fn stats(a: StatsArgs) -> Result<(), CliError> {
    let config = RunConfig::load(a.config.as_deref())?;
    let spec = corpus_spec(&a.corpus, &config)?;
    let content_size = match &spec {
        Some(s) => s.content_size,
        None => content_size_of(&a.corpus, None)?,
    };
    let corpus = read_corpus_all(&a.corpus, Some(Vocabulary::new(content_size)?))?;
    let generator = spec.clone().map(Generator::new).transpose()?;
    let pairing = match a.pairing {
        Some(Pairing::Consecutive) => Some(PairingRule::Consecutive),
        Some(Pairing::Stack) => Some(PairingRule::Stack),
        Some(Pairing::None) => None,
        None => spec.as_ref().and_then(|s| s.grammar.pairing_rule()),
    };
    let (unigram, bigram) = match generator.as_ref().map(Generator::target) {
        Some(Target::Unigram(d)) => (Some(d), None),
        Some(Target::Bigram(m)) => (None, Some(m)),
        _ => (None, None),
    };
    let report = corpus_stats(
        &corpus,
        &StatsOptions {
            content_size,
            reference_unigram: unigram,
            reference_bigram: bigram,
            pairing,
        },
    )?;
    create_dir(&a.out)?;
    write_json(&a.out.join("stats.json"), &report)?;
    write_histogram_csv(a.out.join("length_histogram.csv"), ("length", "count"), &report.length_histogram)?;
    if let Some(spans) = &report.span_histogram {
        write_histogram_csv(a.out.join("span_histogram.csv"), ("span", "count"), spans)?;
    }
    Snapshot {
        command: "stats",
        paths: paths(&[("corpus", &a.corpus), ("out", &a.out)]),
        config: RunConfig {
            generator: spec,
            ..RunConfig::default()
        },
    }
    .write(&a.out.join("config.toml"))?;
    println!("{} sequences, {} tokens", report.sequences, report.tokens);
    if let Some(kl) = report.unigram_kl {
        println!("uni-gram KL {kl:.5}");
    }
    if let Some(spans) = &report.span_histogram {
        println!("span buckets: {}", spans.len());
    }
    Ok(())
}

fn corpus_provenance(corpus: &Path) -> Result<serde_json::Value, CliError> {
    let path = manifest_path(corpus);
    let manifest = if path.exists() {
        Some(CorpusManifest::read(&path)?)
    } else {
        None
    };
    Ok(serde_json::json!({
        "path": corpus.display().to_string(),
        "manifest": manifest,
    }))
}

fn pretrain_as<F: Real>(
    model_config: MlmConfig,
    corpus: &[Sequence],
    train_config: &TrainConfig,
    policy: &MaskingPolicy,
    frequencies: Option<Vec<u64>>,
    corpus_path: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let model = MlmModel::<F>::new(model_config, train_config.seed)?;
    let outcome = train(model, corpus, train_config, policy)?;
    let meta = TrainingMetadata {
        steps: outcome.steps,
        train: Some(train_config.clone()),
        masking: Some(policy.clone()),
        final_loss: outcome.curve.last(),
        token_frequencies: frequencies,
        corpus: Some(corpus_provenance(corpus_path)?),
    };
    save_checkpoint(&outcome.model, &meta, out.join("model.json"))?;
    outcome.curve.write_csv(out.join("loss.csv"))?;
    if let Some(loss) = outcome.curve.last() {
        println!("trained {} steps, final loss {loss:.4}", outcome.steps);
    }
    Ok(())
}

pub fn pretrain(a: PretrainArgs) -> Result<(), CliError> {
    let config = RunConfig::load(a.config.as_deref())?;
    let content_size = content_size_of(&a.corpus, config.generator.as_ref().map(|g| g.content_size))?;
    let vocab = Vocabulary::new(content_size)?;
    let corpus = read_corpus_all(&a.corpus, Some(vocab))?;
    let mut model_config = config.model.clone().unwrap_or_else(|| MlmConfig::desk(vocab));
    model_config.vocab_size = vocab.total_size() as usize;
    if let Some(p) = a.dropout {
        model_config.dropout = p;
    }
    let mut train_config = config.train.clone().unwrap_or_else(TrainConfig::desk);
    train_config.total_steps = a.steps.unwrap_or(train_config.total_steps);
    train_config.batch_size = a.batch_size.unwrap_or(train_config.batch_size);
    train_config.learning_rate = a.lr.unwrap_or(train_config.learning_rate);
    train_config.seed = a.seed.unwrap_or(train_config.seed);
    train_config.warmup_steps = a.warmup.unwrap_or(train_config.warmup_steps.min(train_config.total_steps));
    let policy = config.masking.clone().unwrap_or_default();
    let dtype = a.dtype.or(config.dtype).unwrap_or(DType::F32);
    model_config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    train_config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    policy.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let frequencies = {
        let path = manifest_path(&a.corpus);
        let from_manifest = if path.exists() {
            CorpusManifest::read(&path)?.token_frequencies
        } else {
            None
        };
        from_manifest.or_else(|| {
            let mut counts = vec![0u64; content_size as usize];
            corpus.iter().flatten().for_each(|&t| counts[t as usize] += 1);
            Some(counts)
        })
    };
    create_dir(&a.out)?;
    Snapshot {
        command: "pretrain",
        paths: paths(&[("corpus", &a.corpus), ("out", &a.out)]),
        config: RunConfig {
            dtype: Some(dtype),
            model: Some(model_config.clone()),
            train: Some(train_config.clone()),
            masking: Some(policy.clone()),
            ..RunConfig::default()
        },
    }
    .write(&a.out.join("config.toml"))?;
    match dtype {
        DType::F32 => pretrain_as::<f32>(model_config, &corpus, &train_config, &policy, frequencies, &a.corpus, &a.out),
        DType::F64 => pretrain_as::<f64>(model_config, &corpus, &train_config, &policy, frequencies, &a.corpus, &a.out),
    }
}

fn probe_as<F: Real>(a: &ProbeArgs, probe: &ProbeConfig) -> Result<(), CliError> {
    let (model, _) = load_checkpoint::<F>(&a.checkpoint)?;
    let corpus = read_corpus_all(&a.corpus, Some(model.vocab()))?;
    let max = probe.max_sequences.unwrap_or(DEFAULT_PROBE_SEQUENCES);
    let (histogram, results) = probe_corpus(&model, &corpus, max)?;
    histogram.write_csv(a.out.join("histogram.csv"))?;
    let summary = histogram.summary();
    let block = probe.block_size.map(|n| block_concentration(&results, n));
    write_json(
        &a.out.join("summary.json"),
        &serde_json::json!({ "summary": summary, "block_concentration": block }),
    )?;
    match summary.modal_offset {
        Some(k) => println!(
            "probed {} sequences, modal offset {k:+} ({:.1}%)",
            summary.total,
            100.0 * summary.modal_fraction
        ),
        None => println!("probed {} sequences", summary.total),
    }
    Ok(())
}

pub fn probe(a: ProbeArgs) -> Result<(), CliError> {
    let config = RunConfig::load(a.config.as_deref())?;
    let base = config.probe.clone().unwrap_or_default();
    let probe = ProbeConfig {
        max_sequences: a.max_sequences.or(base.max_sequences).or(Some(DEFAULT_PROBE_SEQUENCES)),
        block_size: a.block_size.or(base.block_size),
    };
    create_dir(&a.out)?;
    Snapshot {
        command: "probe",
        paths: paths(&[("checkpoint", &a.checkpoint), ("corpus", &a.corpus), ("out", &a.out)]),
        config: RunConfig {
            probe: Some(probe.clone()),
            ..RunConfig::default()
        },
    }
    .write(&a.out.join("config.toml"))?;
    match checkpoint_dtype(&a.checkpoint)? {
        DType::F32 => probe_as::<f32>(&a, &probe),
        DType::F64 => probe_as::<f64>(&a, &probe),
    }
}

fn downstream_frequencies(data: &TaskData, content_size: u32) -> Vec<u64> {
    let mut counts = vec![0u64; content_size as usize];
    for t in data.train.iter().flat_map(|e| &e.tokens) {
        if let Some(c) = counts.get_mut(*t as usize) {
            *c += 1;
        }
    }
    counts
}

fn write_epochs_csv(path: &Path, report: &MultiSeedReport) -> Result<(), CliError> {
    let mut out = String::from("seed,epoch,train_loss,accuracy,macro_f1\n");
    for run in &report.runs {
        for e in &run.report.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                run.seed, e.epoch, e.train_loss, e.dev.accuracy, e.dev.macro_f1
            ));
        }
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

pub fn finetune(a: FinetuneArgs) -> Result<(), CliError> {
    let config = RunConfig::load(a.config.as_deref())?;
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be positive".into()));
    }
    let pretrained = a.checkpoint.as_ref().map(|p| load_checkpoint::<f32>(p)).transpose()?;

    let mut task = config.task.clone().unwrap_or_default();
    if config.task.is_none() {
        if let Some((model, _)) = &pretrained {
            task.content_size = model.vocab().content_size();
        }
    }
    task.kind = match a.task {
        Some(TaskArg::PermPair) => TaskKind::PermPair,
        Some(TaskArg::DupPresence) => TaskKind::DupPresence,
        None => task.kind,
    };
    task.seed = a.task_seed.unwrap_or(task.seed);
    task.train_size = a.train_size.unwrap_or(task.train_size);
    task.dev_size = a.dev_size.unwrap_or(task.dev_size);
    task.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let mut ft = config.finetune.clone().unwrap_or_default();
    ft.epochs = a.epochs.unwrap_or(ft.epochs);
    ft.learning_rate = a.lr.unwrap_or(ft.learning_rate);
    ft.batch_size = a.batch_size.unwrap_or(ft.batch_size);
    ft.pooling = a.pooling.unwrap_or(ft.pooling);
    ft.seed = a.seed.unwrap_or(ft.seed);

    let remap_seed = a.remap_seed.unwrap_or(0);
    let remap = match a.remap {
        Some(RemapArg::Identity) => RemapStrategy::Identity,
        Some(RemapArg::RandomPermutation) => RemapStrategy::RandomPermutation { seed: remap_seed },
        Some(RemapArg::FrequencyRank) => RemapStrategy::FrequencyRank,
        Some(RemapArg::ReinitEmbeddings) => RemapStrategy::ReinitEmbeddings { seed: remap_seed },
        None => config.remap.clone().unwrap_or(RemapStrategy::RandomPermutation { seed: remap_seed }),
    };
    let vocab = task.vocabulary()?;
    let model_config = match &pretrained {
        Some((model, _)) => model.config().clone(),
        None => config.model.clone().unwrap_or_else(|| MlmConfig::desk(vocab)),
    };
    if model_config.vocab_size != vocab.total_size() as usize {
        return Err(CliError::Usage(format!(
            "model vocabulary of {} ids does not fit a task with {} content ids",
            model_config.vocab_size,
            task.content_size
        )));
    }
    if task.max_input_len() > model_config.max_positions {
        return Err(CliError::Usage(format!(
            "task inputs reach {} tokens but the model has {} positions",
            task.max_input_len(),
            model_config.max_positions
        )));
    }

    create_dir(&a.out)?;
    let mut snapshot_paths = paths(&[("out", &a.out)]);
    if let Some(p) = &a.checkpoint {
        snapshot_paths.insert("checkpoint", p.clone());
    }
    Snapshot {
        command: "finetune",
        paths: snapshot_paths,
        config: RunConfig {
            model: pretrained.is_none().then(|| model_config.clone()),
            task: Some(task.clone()),
            finetune: Some(ft.clone()),
            remap: pretrained.is_some().then(|| remap.clone()),
            ..RunConfig::default()
        },
    }
    .write(&a.out.join("config.toml"))?;

    let data = build_downstream_task(&task)?;
    write_examples(a.out.join("train.txt"), &data.train)?;
    write_examples(a.out.join("dev.txt"), &data.dev)?;
    let context = RemapContext {
        pretrain_frequencies: pretrained.as_ref().and_then(|(_, meta)| meta.token_frequencies.clone()),
        downstream_frequencies: Some(downstream_frequencies(&data, task.content_size)),
    };
    let seeds: Vec<u64> = (0..a.seeds as u64).map(|k| ft.seed + k).collect();
    let report = finetune_seeds(
        |seed| match &pretrained {
            Some((model, _)) => remap_model(model, &remap, &context),
            None => MlmModel::new(model_config.clone(), seed),
        },
        &data,
        &ft,
        &seeds,
    )?;
    report.write_csv(a.out.join("metrics.csv"))?;
    write_epochs_csv(&a.out.join("epochs.csv"), &report)?;
    write_json(&a.out.join("report.json"), &report)?;
    let (mean, std) = report.accuracy_summary();
    println!("dev accuracy {mean:.4} ({std:.4}) over {} seed(s)", seeds.len());
    Ok(())
}

pub fn adv(a: AdvArgs) -> Result<(), CliError> {
    let count = make_adversarial_pairs(&a.input, &a.out)?;
    Snapshot {
        command: "adv",
        paths: paths(&[("in", &a.input), ("out", &a.out)]),
        config: RunConfig::default(),
    }
    .write(&sidecar(&a.out, ".config.toml"))?;
    println!("wrote {count} adversarial pairs to {}", a.out.display());
    Ok(())
}
