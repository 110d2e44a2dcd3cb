//! `dalc`: validate data sets, fit baselines, train the predictor network
//! and run leave-one-domain-out evaluations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use dalc_core::dataset::manifest::{atomic_write, write_manifest};
use dalc_core::dataset::AnchorSize;
use dalc_core::features::resolve_corpus_features;
use dalc_core::gbt::{gbt_fit, gbt_instance_rows};
use dalc_core::harness::{
    ablation_suite, build_training_set, corpus_rows, desk_net_config, distribution_report, generate_synthetic,
    instance_rows, leave_one_out, leave_one_out_all, EvalProtocol, EvalReport, PredictorKind, SyntheticSpec,
    DEFAULT_ANCHORS,
};
use dalc_core::net::{read_model, save_model, Ablation, PoolMerge, MODEL_MAGIC};
use dalc_core::{
    exp3_curve, exp3_fit, load_manifest, validate_dataset, AnchorObservation, CorpusFeatures, Exp3Params, GbtConfig,
    GbtModel, InstanceFeatures, LearningCurve, NetConfig, Split,
};

#[derive(Parser)]
#[command(name = "dalc", version, about = "Predict NMT domain-adaptation learning curves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a data set manifest and list every violation.
    Validate(ValidateArgs),
    /// Compute difficulty and corpus features.
    Featurize(FeaturizeArgs),
    /// Fit the exp3 curve to `size,score` points from a CSV file.
    FitExp3(FitExp3Args),
    /// Train the predictor network with one domain held out.
    Train(TrainArgs),
    /// Train a boosted-tree baseline with one domain held out.
    TrainGbt(TrainGbtArgs),
    /// Predict a domain's learning curve with a trained model.
    PredictCurve(PredictArgs),
    /// Run the leave-one-domain-out evaluation.
    Evaluate(EvaluateArgs),
    /// Compare train and test chrF distributions for a held-out domain.
    ReportDist(ReportDistArgs),
    /// Generate a synthetic data set.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ValidateArgs {
    /// Manifest file.
    manifest: PathBuf,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Only this domain (default: all).
    #[arg(long)]
    domain: Option<String>,
    /// Sizes for corpus features (default: 0 plus each registered sample).
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<AnchorSize>,
    /// Extrapolate corpus features past the largest sample.
    #[arg(long)]
    extrapolate: bool,
    /// Emit sentence features as TSV instead of JSON.
    #[arg(long)]
    tsv: bool,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitExp3Args {
    /// CSV file of `size,score` rows; a header row is optional.
    #[arg(long)]
    input: PathBuf,
    /// Extra sizes to evaluate the fitted curve at.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<AnchorSize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Domain excluded from training.
    #[arg(long)]
    holdout: String,
    /// Anchor sizes to train on.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ANCHORS)]
    sizes: Vec<AnchorSize>,
    /// Also train on the held-out domain's dev sentences at anchor 0.
    #[arg(long)]
    with_zero_anchor: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Merge {
    /// One block per window, side by side.
    Concat,
    /// Element-wise sum over windows.
    Sum,
}

#[derive(Args)]
struct NetArgs {
    /// Start from the small desk-scale configuration (32 hidden units, 40 epochs).
    #[arg(long)]
    desk: bool,
    /// Hidden units per fusion layer.
    #[arg(long)]
    hidden: Option<usize>,
    /// Number of fusion layers.
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Per-epoch learning-rate multiplier.
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    patience: Option<usize>,
    /// How the pooled outputs of the convolution windows are combined.
    #[arg(long, value_enum)]
    pool_merge: Option<Merge>,
    /// Inputs to zero: df, corpus, enc or a single feature name.
    #[arg(long, value_delimiter = ',')]
    drop_features: Vec<String>,
}

impl NetArgs {
    fn config(&self, encoder_dim: usize) -> NetConfig {
        let mut cfg = if self.desk {
            desk_net_config(encoder_dim)
        } else {
            NetConfig::new(encoder_dim)
        };
        if let Some(v) = self.hidden {
            cfg.fusion_hidden = v;
        }
        if let Some(v) = self.layers {
            cfg.fusion_layers = v;
        }
        if let Some(v) = self.epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.lr_decay {
            cfg.lr_decay_per_epoch = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(m) = self.pool_merge {
            cfg.pool_merge = match m {
                Merge::Concat => PoolMerge::Concat,
                Merge::Sum => PoolMerge::Sum,
            };
        }
        cfg
    }

    fn ablations(&self) -> Result<Vec<Ablation>, Failure> {
        Ok(self
            .drop_features
            .iter()
            .map(|s| Ablation::parse(s))
            .collect::<dalc_core::Result<_>>()?)
    }
}

#[derive(Args)]
struct GbtArgs {
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 10)]
    depth: usize,
    /// Shrinkage applied to each tree.
    #[arg(long, default_value_t = 0.1)]
    gbt_lr: f64,
    /// L2 penalty on leaf weights.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1)]
    min_leaf: usize,
}

impl GbtArgs {
    fn config(&self) -> GbtConfig {
        GbtConfig {
            n_trees: self.trees,
            max_depth: self.depth,
            learning_rate: self.gbt_lr,
            lambda_l2: self.lambda,
            min_samples_leaf: self.min_leaf,
            ..GbtConfig::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-epoch training log as JSON.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Level {
    Corpus,
    Instance,
}

#[derive(Args)]
struct TrainGbtArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    gbt: GbtArgs,
    #[arg(long, value_enum)]
    level: Level,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model file to write (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Predictor network or boosted-tree model file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Domain whose evaluation sentences and samples are used.
    #[arg(long)]
    domain: String,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ANCHORS)]
    sizes: Vec<AnchorSize>,
    /// Extrapolate corpus features past the largest sample.
    #[arg(long)]
    extrapolate: bool,
    #[arg(long)]
    tsv: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    /// Leave one domain out.
    Loo,
}

#[derive(Clone, Copy, ValueEnum)]
enum Predictor {
    Dalc,
    Exp3,
    GbtCorpus,
    GbtInstance,
}

impl Predictor {
    fn kind(self) -> PredictorKind {
        match self {
            Predictor::Dalc => PredictorKind::Dalc,
            Predictor::Exp3 => PredictorKind::Exp3,
            Predictor::GbtCorpus => PredictorKind::GbtCorpus,
            Predictor::GbtInstance => PredictorKind::GbtInstance,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "loo")]
    protocol: Protocol,
    #[arg(long, value_enum, default_value = "dalc")]
    predictor: Predictor,
    /// Held-out domain (default: each domain in turn).
    #[arg(long)]
    holdout: Option<String>,
    /// Number of seeds.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// First seed; runs use `base-seed .. base-seed + seeds`.
    #[arg(long, default_value_t = 11)]
    base_seed: u64,
    /// Anchor sizes trained on and scored.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ANCHORS)]
    sizes: Vec<AnchorSize>,
    /// Sizes predicted and reported but not trained on or scored.
    #[arg(long, value_delimiter = ',')]
    query_sizes: Vec<AnchorSize>,
    #[arg(long)]
    extrapolate: bool,
    #[arg(long)]
    with_zero_anchor: bool,
    /// Run the full model and then each `--drop-features` entry on its own.
    #[arg(long)]
    ablation_suite: bool,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    gbt: GbtArgs,
    /// Emit per-row TSV instead of JSON.
    #[arg(long)]
    tsv: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportDistArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    holdout: String,
    /// Emit the histogram as TSV instead of JSON.
    #[arg(long)]
    tsv: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Benchmark,
    Shifted,
    Small,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::Benchmark => "benchmark",
            Preset::Shifted => "shifted",
            Preset::Small => "small",
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for the manifest and its sibling files.
    #[arg(long)]
    out_dir: PathBuf,
    /// Manifest file name (default: `<preset>.manifest`).
    #[arg(long)]
    name: Option<String>,
}

/// Failure classes and their exit codes.
#[derive(Debug)]
enum Failure {
    /// Bad input or a data set that fails validation; exit 1.
    Input(String),
    /// A broken internal invariant; exit 2.
    Internal(String),
}

impl From<dalc_core::Error> for Failure {
    fn from(e: dalc_core::Error) -> Self {
        match e {
            dalc_core::Error::Isolation(_) => Failure::Internal(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Internal(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => Ok(atomic_write(path, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json(value: &impl Serialize) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize, Deserialize)]
struct CurvePoint {
    size: AnchorSize,
    chrf: f64,
}

fn points(curve: &LearningCurve) -> Vec<CurvePoint> {
    curve.0.iter().map(|(&size, &chrf)| CurvePoint { size, chrf }).collect()
}

fn curve_tsv(curve: &LearningCurve) -> String {
    let mut out = String::from("size\tchrf\n");
    for (n, v) in &curve.0 {
        out.push_str(&format!("{n}\t{v}\n"));
    }
    out
}

fn validate(a: &ValidateArgs) -> CliResult {
    let m = load_manifest(&a.manifest)?;
    let report = validate_dataset(&m);
    for v in &report.violations {
        println!("{v}");
    }
    if report.is_empty() {
        Ok(())
    } else {
        Err(Failure::Input(format!("{} violation(s)", report.violations.len())))
    }
}

#[derive(Serialize)]
struct SentenceFeatures {
    id: String,
    split: Split,
    features: InstanceFeatures,
}

#[derive(Serialize)]
struct SizedCorpusFeatures {
    size: AnchorSize,
    features: CorpusFeatures,
}

#[derive(Serialize)]
struct DomainFeatures {
    domain: String,
    corpus: Vec<SizedCorpusFeatures>,
    sentences: Vec<SentenceFeatures>,
}

fn featurize(a: &FeaturizeArgs) -> CliResult {
    let m = load_manifest(&a.manifest)?;
    if let Some(d) = &a.domain {
        if m.domain(d).is_none() {
            return Err(dalc_core::Error::UnknownDomain(d.clone()).into());
        }
    }
    let mut out = Vec::new();
    for dom in m
        .domains
        .iter()
        .filter(|d| a.domain.as_ref().is_none_or(|n| &d.name == n))
    {
        let sizes: Vec<AnchorSize> = if a.sizes.is_empty() {
            std::iter::once(0).chain(dom.samples.keys().copied()).collect()
        } else {
            a.sizes.clone()
        };
        let corpus = sizes
            .iter()
            .map(|&size| {
                Ok(SizedCorpusFeatures {
                    size,
                    features: resolve_corpus_features(&dom.samples, size, a.extrapolate)?,
                })
            })
            .collect::<dalc_core::Result<_>>()?;
        let sentences = dom
            .sentences
            .iter()
            .map(|s| {
                Ok(SentenceFeatures {
                    id: s.id.clone(),
                    split: s.split,
                    features: InstanceFeatures::from_record(s)?,
                })
            })
            .collect::<dalc_core::Result<_>>()?;
        out.push(DomainFeatures {
            domain: dom.name.clone(),
            corpus,
            sentences,
        });
    }
    let text = if a.tsv {
        let mut t = String::from("domain\tid\tsplit\tlc\tmargin\tentropy\txsim\n");
        for d in &out {
            for s in &d.sentences {
                let f = &s.features;
                let split = if s.split == Split::Dev { "dev" } else { "test" };
                t.push_str(&format!(
                    "{}\t{}\t{split}\t{}\t{}\t{}\t{}\n",
                    d.domain, s.id, f.least_confidence, f.margin, f.avg_entropy, f.xsim
                ));
            }
        }
        t
    } else {
        json(&out)?
    };
    emit(a.out.as_deref(), &text)
}

fn read_observations(path: &Path) -> CliResult<Vec<AnchorObservation>> {
    let input = |msg: String| Failure::Input(format!("{}: {msg}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| input(e.to_string()))?;
    let mut obs = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| input(e.to_string()))?;
        if rec.len() != 2 {
            return Err(input(format!("line {}: expected 2 fields, found {}", i + 1, rec.len())));
        }
        match (rec[0].parse::<AnchorSize>(), rec[1].parse::<f64>()) {
            (Ok(size), Ok(score)) if score.is_finite() => obs.push(AnchorObservation::new(size, score)),
            _ if i == 0 => continue,
            _ => return Err(input(format!("line {}: cannot parse {:?}", i + 1, rec.as_slice()))),
        }
    }
    Ok(obs)
}

#[derive(Serialize)]
struct Exp3Output {
    params: Exp3Params,
    sse: f64,
    curve: Vec<CurvePoint>,
}

fn fit_exp3(a: &FitExp3Args) -> CliResult {
    let obs = read_observations(&a.input)?;
    let params = exp3_fit(&obs)?;
    let mut sizes: Vec<AnchorSize> = obs.iter().map(|o| o.size).chain(a.sizes.iter().copied()).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let out = Exp3Output {
        params,
        sse: dalc_core::curvefit::exp3_sse(&params, &obs),
        curve: points(&exp3_curve(&params, &sizes)?),
    };
    emit(a.out.as_deref(), &json(&out)?)
}

fn protocol(data: &DataArgs, net: NetConfig) -> EvalProtocol {
    let mut p = EvalProtocol::new(data.holdout.clone(), net);
    p.anchor_sizes = data.sizes.clone();
    p.with_zero_anchor = data.with_zero_anchor;
    p
}

fn train(a: &TrainArgs) -> CliResult {
    eprintln!("seed: {}", a.seed);
    let m = load_manifest(&a.data.manifest)?;
    let cfg = NetConfig {
        seed: a.seed,
        ablations: a.net.ablations()?,
        ..a.net.config(m.tensor_dim)
    };
    let p = protocol(&a.data, cfg.clone());
    let set = build_training_set(&m, &p)?;
    let (model, log) = dalc_core::net::train(&set.instances, &cfg)?;
    save_model(&model, &a.out)?;
    if let Some(path) = &a.log {
        atomic_write(path, json(&log)?.as_bytes())?;
    }
    eprintln!(
        "trained on {} instances ({} validation), best epoch {} of {}",
        log.n_train,
        log.n_val,
        log.best_epoch,
        log.epochs.len()
    );
    Ok(())
}

/// On-disk boosted-tree model: the trees plus the feature level they read.
#[derive(Serialize, Deserialize)]
struct GbtFile {
    level: Level,
    model: GbtModel,
}

fn train_gbt(a: &TrainGbtArgs) -> CliResult {
    eprintln!("seed: {}", a.seed);
    let m = load_manifest(&a.data.manifest)?;
    let p = protocol(&a.data, NetConfig::new(m.tensor_dim));
    let set = build_training_set(&m, &p)?;
    let (rows, targets) = match a.level {
        Level::Corpus => corpus_rows(&set),
        Level::Instance => instance_rows(&m, &set)?,
    };
    let model = gbt_fit(&rows, &targets, &a.gbt.config(), a.seed)?;
    eprintln!("fit {} trees on {} rows", model.trees.len(), rows.len());
    let file = GbtFile { level: a.level, model };
    atomic_write(&a.out, json(&file)?.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct PredictOutput {
    domain: String,
    predictor: &'static str,
    curve: Vec<CurvePoint>,
}

fn predict(a: &PredictArgs) -> CliResult {
    let bytes = std::fs::read(&a.model).map_err(|e| Failure::Input(format!("model: {}: {e}", a.model.display())))?;
    let m = load_manifest(&a.manifest)?;
    let dom = m
        .domain(&a.domain)
        .ok_or_else(|| dalc_core::Error::UnknownDomain(a.domain.clone()))?;
    let sentences = dom.eval_sentences();
    let mut corpus = std::collections::BTreeMap::new();
    for &n in &a.sizes {
        corpus.insert(n, resolve_corpus_features(&dom.samples, n, a.extrapolate)?);
    }
    let (predictor, curve) = if bytes.starts_with(MODEL_MAGIC) {
        let model = read_model(&bytes)?;
        eprintln!("seed: {}", model.config.seed);
        ("dalc", model.predict_curve_with(&sentences, &corpus)?)
    } else {
        let file: GbtFile = serde_json::from_slice(&bytes)
            .map_err(|e| Failure::Input(format!("model: {}: unrecognised model file: {e}", a.model.display())))?;
        eprintln!("seed: {}", file.model.seed);
        let mut curve = LearningCurve::default();
        for (&n, cf) in &corpus {
            let v = match file.level {
                Level::Corpus => file.model.predict(&cf.to_array())?,
                Level::Instance => {
                    if sentences.is_empty() {
                        return Err(dalc_core::Error::EmptyList.into());
                    }
                    let mut sum = 0.0;
                    for s in &sentences {
                        sum += file.model.predict(&gbt_instance_rows(s, cf)?)?;
                    }
                    sum / sentences.len() as f64
                }
            };
            curve.0.insert(n, v);
        }
        let name = match file.level {
            Level::Corpus => "gbt-corpus",
            Level::Instance => "gbt-instance",
        };
        (name, curve)
    };
    let text = if a.tsv {
        curve_tsv(&curve)
    } else {
        json(&PredictOutput {
            domain: a.domain.clone(),
            predictor,
            curve: points(&curve),
        })?
    };
    emit(a.out.as_deref(), &text)
}

fn report_tsv(label: Option<&str>, r: &EvalReport) -> String {
    match label {
        None => r.to_tsv(),
        Some(l) => r
            .to_tsv()
            .lines()
            .skip(1)
            .map(|line| format!("{l}\t{line}\n"))
            .collect(),
    }
}

fn evaluate(a: &EvaluateArgs) -> CliResult {
    let Protocol::Loo = a.protocol;
    if a.seeds == 0 {
        return Err(Failure::Input("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (a.base_seed..a.base_seed + a.seeds).collect();
    eprintln!(
        "seeds: {}",
        seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
    );
    let m = load_manifest(&a.manifest)?;
    let first = m
        .domains
        .first()
        .ok_or_else(|| Failure::Input("manifest has no domains".into()))?;
    let mut p = EvalProtocol::new(
        a.holdout.clone().unwrap_or_else(|| first.name.clone()),
        a.net.config(m.tensor_dim),
    );
    p.seeds = seeds;
    p.anchor_sizes = a.sizes.clone();
    p.query_sizes = a.query_sizes.clone();
    p.extrapolate = a.extrapolate;
    p.with_zero_anchor = a.with_zero_anchor;
    p.ablations = a.net.ablations()?;
    p.gbt = a.gbt.config();
    let text = if a.ablation_suite {
        if a.holdout.is_none() {
            return Err(Failure::Input("--ablation-suite needs --holdout".into()));
        }
        let results = ablation_suite(&m, &p)?;
        for r in &results {
            eprintln!("{}: rmse {:.4}", r.label, r.report.average_rmse);
        }
        if a.tsv {
            let mut t = String::from("label\tdomain\tanchor\tseed\tgold\tpred\tabs_err\n");
            for r in &results {
                t.push_str(&report_tsv(Some(&r.label), &r.report));
            }
            t
        } else {
            json(&results)?
        }
    } else {
        let report = match &a.holdout {
            Some(_) => leave_one_out(&m, &p, a.predictor.kind())?,
            None => leave_one_out_all(&m, &p, a.predictor.kind())?,
        };
        eprintln!("{}: average rmse {:.4}", report.predictor.name(), report.average_rmse);
        if a.tsv {
            report_tsv(None, &report)
        } else {
            json(&report)?
        }
    };
    emit(a.out.as_deref(), &text)
}

fn report_dist(a: &ReportDistArgs) -> CliResult {
    let m = load_manifest(&a.manifest)?;
    let r = distribution_report(&m, &a.holdout)?;
    eprintln!("wasserstein: {:.4}", r.wasserstein);
    let text = if a.tsv { r.to_tsv() } else { json(&r)? };
    emit(a.out.as_deref(), &text)
}

fn synth(a: &SynthArgs) -> CliResult {
    eprintln!("seed: {}", a.seed);
    let spec = SyntheticSpec::preset(a.preset.name(), a.seed)?;
    let m = generate_synthetic(&spec)?;
    let name = a
        .name
        .clone()
        .unwrap_or_else(|| format!("{}.manifest", a.preset.name()));
    let path = write_manifest(&a.out_dir, &name, &m)?;
    println!("{}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Validate(a) => validate(a),
        Command::Featurize(a) => featurize(a),
        Command::FitExp3(a) => fit_exp3(a),
        Command::Train(a) => train(a),
        Command::TrainGbt(a) => train_gbt(a),
        Command::PredictCurve(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::ReportDist(a) => report_dist(a),
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::Input(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Ok(Err(Failure::Internal(msg))) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
        Err(_) => ExitCode::from(2),
    }
}
