//! Leave-one-domain-out evaluation, ablations, 0-anchor augmentation,
//! distribution-shift reports and the synthetic domain generator.

pub mod dist;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvefit::{exp3_curve, exp3_fit, AnchorObservation};
use crate::dataset::{AnchorSize, DomainEntry, LearningCurve, Manifest, SentenceRecord, Split};
use crate::error::{Error, Result};
use crate::features::{resolve_corpus_features, CorpusFeatures, InstanceFeatures};
use crate::gbt::{gbt_fit, gbt_instance_rows, GbtConfig};
use crate::metrics::rmse;
use crate::net::{train, Ablation, NetConfig, TrainingInstance};

pub use dist::{distribution_report, spearman, wasserstein_1, DistributionReport, HistogramBin};
pub use synth::{generate_synthetic, DomainSpec, SyntheticSpec};

pub const DEFAULT_SEEDS: [u64; 5] = [11, 12, 13, 14, 15];
pub const DEFAULT_ANCHORS: [AnchorSize; 5] = [0, 1000, 10_000, 20_000, 100_000];
/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "DALC_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    Dalc,
    GbtCorpus,
    GbtInstance,
    Exp3,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 4] = [Self::Dalc, Self::GbtCorpus, Self::GbtInstance, Self::Exp3];

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown predictor {s:?}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Dalc => "dalc",
            Self::GbtCorpus => "gbt-corpus",
            Self::GbtInstance => "gbt-instance",
            Self::Exp3 => "exp3",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub held_out_domain: String,
    pub seeds: Vec<u64>,
    /// Anchors used for training and scored on the held-out domain.
    pub anchor_sizes: Vec<AnchorSize>,
    /// Extra sizes predicted and reported for the held-out domain but not
    /// trained on or included in its RMSE.
    pub query_sizes: Vec<AnchorSize>,
    pub ablations: Vec<Ablation>,
    /// Add the held-out domain's dev sentences at anchor 0 to training;
    /// anchor 0 is then left out of the held-out RMSE.
    pub with_zero_anchor: bool,
    /// Extrapolate corpus features for sizes beyond the largest sample.
    pub extrapolate: bool,
    pub net: NetConfig,
    pub gbt: GbtConfig,
}

impl EvalProtocol {
    pub fn new(held_out_domain: impl Into<String>, net: NetConfig) -> Self {
        Self {
            held_out_domain: held_out_domain.into(),
            seeds: DEFAULT_SEEDS.to_vec(),
            anchor_sizes: DEFAULT_ANCHORS.to_vec(),
            query_sizes: Vec::new(),
            ablations: Vec::new(),
            with_zero_anchor: false,
            extrapolate: false,
            net,
            gbt: GbtConfig::default(),
        }
    }

    pub fn check(&self, manifest: &Manifest) -> Result<()> {
        if manifest.domain(&self.held_out_domain).is_none() {
            return Err(Error::UnknownDomain(self.held_out_domain.clone()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.anchor_sizes.is_empty() {
            return Err(Error::InvalidConfig("at least one anchor size is required".into()));
        }
        let with_labels = manifest
            .domains
            .iter()
            .filter(|d| d.sentences.iter().any(|s| !s.gold_chrf.is_empty()))
            .count();
        if with_labels < 2 {
            return Err(Error::InsufficientDomains(with_labels));
        }
        Ok(())
    }

    /// Anchors that count towards the held-out RMSE.
    pub fn scored_anchors(&self) -> BTreeSet<AnchorSize> {
        self.anchor_sizes
            .iter()
            .copied()
            .filter(|&n| !(self.with_zero_anchor && n == 0))
            .collect()
    }

    fn eval_sizes(&self) -> Vec<AnchorSize> {
        let set: BTreeSet<AnchorSize> = self.anchor_sizes.iter().chain(&self.query_sizes).copied().collect();
        set.into_iter().collect()
    }
}

/// A network configuration small enough for desk-scale benchmarks on a
/// single core: 32-unit fusion layers and at most 40 epochs.
pub fn desk_net_config(encoder_dim: usize) -> NetConfig {
    NetConfig {
        fusion_hidden: 32,
        max_epochs: 40,
        lr: 2e-3,
        ..NetConfig::new(encoder_dim)
    }
}

/// Where a training instance came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InstanceSource {
    pub domain: usize,
    pub sentence: usize,
    pub anchor: AnchorSize,
}

/// One `(domain, anchor)` training point of the corpus-level predictors.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusPoint {
    pub domain: String,
    pub anchor: AnchorSize,
    pub features: CorpusFeatures,
    pub gold: f64,
}

/// Everything the predictors may learn from for one held-out domain.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub instances: Vec<TrainingInstance>,
    pub sources: Vec<InstanceSource>,
    pub corpus_points: Vec<CorpusPoint>,
    /// `(domain, sentence id)` of every sentence contributing instances.
    pub ids: BTreeSet<(String, String)>,
}

fn corpus_by_anchor(
    dom: &DomainEntry,
    sizes: impl IntoIterator<Item = AnchorSize>,
    extrapolate: bool,
) -> Result<BTreeMap<AnchorSize, CorpusFeatures>> {
    sizes
        .into_iter()
        .map(|n| Ok((n, resolve_corpus_features(&dom.samples, n, extrapolate)?)))
        .collect()
}

fn mean_label(sentences: &[&SentenceRecord], n: AnchorSize) -> Option<f64> {
    let vals: Vec<f64> = sentences.iter().filter_map(|s| s.gold_chrf.get(&n).copied()).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn push_instances(
    set: &mut TrainingSet,
    di: usize,
    dom: &DomainEntry,
    sentences: &[(usize, &SentenceRecord)],
    anchors: &[AnchorSize],
) -> Result<()> {
    let labelled: Vec<AnchorSize> = anchors
        .iter()
        .copied()
        .filter(|n| sentences.iter().any(|(_, s)| s.gold_chrf.contains_key(n)))
        .collect();
    let corpus = corpus_by_anchor(dom, labelled.iter().copied(), false)?;
    for &(si, s) in sentences {
        let df = InstanceFeatures::from_record(s)?;
        let mut used = false;
        for &n in &labelled {
            if let Some(&target) = s.gold_chrf.get(&n) {
                set.instances.push(TrainingInstance {
                    encoder_rep: Arc::clone(&s.encoder_rep),
                    df,
                    corpus: corpus[&n],
                    target,
                });
                set.sources.push(InstanceSource {
                    domain: di,
                    sentence: si,
                    anchor: n,
                });
                used = true;
            }
        }
        if used {
            set.ids.insert((dom.name.clone(), s.id.clone()));
        }
    }
    Ok(())
}

fn indexed(dom: &DomainEntry, keep: impl Fn(&SentenceRecord) -> bool) -> Vec<(usize, &SentenceRecord)> {
    dom.sentences.iter().enumerate().filter(|(_, s)| keep(s)).collect()
}

/// `(domain, sentence id)` of the held-out sentences a run is scored on.
pub fn eval_ids(manifest: &Manifest, held_out: &str) -> Result<BTreeSet<(String, String)>> {
    let held = manifest
        .domain(held_out)
        .ok_or_else(|| Error::UnknownDomain(held_out.to_string()))?;
    Ok(held
        .eval_sentences()
        .iter()
        .map(|s| (held.name.clone(), s.id.clone()))
        .collect())
}

/// Training data for `protocol`: every other domain's training sentences
/// at each anchor, plus, with `with_zero_anchor`, the held-out domain's dev
/// sentences at anchor 0. Fails with [`Error::Isolation`] if any held-out
/// evaluation sentence would be trained on.
pub fn build_training_set(manifest: &Manifest, protocol: &EvalProtocol) -> Result<TrainingSet> {
    protocol.check(manifest)?;
    let held = &protocol.held_out_domain;
    let mut set = TrainingSet {
        instances: Vec::new(),
        sources: Vec::new(),
        corpus_points: Vec::new(),
        ids: BTreeSet::new(),
    };
    for (di, dom) in manifest.domains.iter().enumerate() {
        if &dom.name == held {
            continue;
        }
        let train_ids: BTreeSet<&str> = dom.training_sentences().iter().map(|s| s.id.as_str()).collect();
        let sentences = indexed(dom, |s| train_ids.contains(s.id.as_str()));
        push_instances(&mut set, di, dom, &sentences, &protocol.anchor_sizes)?;
        let gold = dom.gold_mean_curve();
        for &n in &protocol.anchor_sizes {
            if let Some(g) = gold.get(n) {
                set.corpus_points.push(CorpusPoint {
                    domain: dom.name.clone(),
                    anchor: n,
                    features: resolve_corpus_features(&dom.samples, n, false)?,
                    gold: g,
                });
            }
        }
    }
    if protocol.with_zero_anchor {
        let (di, dom) = manifest
            .domains
            .iter()
            .enumerate()
            .find(|(_, d)| &d.name == held)
            .expect("checked");
        let dev = indexed(dom, |s| s.split == Split::Dev);
        if dev.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "with_zero_anchor needs dev sentences in held-out domain {held}"
            )));
        }
        push_instances(&mut set, di, dom, &dev, &[0])?;
        let dev_refs: Vec<&SentenceRecord> = dev.iter().map(|(_, s)| *s).collect();
        if let Some(g) = mean_label(&dev_refs, 0) {
            set.corpus_points.push(CorpusPoint {
                domain: dom.name.clone(),
                anchor: 0,
                features: CorpusFeatures::zero_anchor(),
                gold: g,
            });
        }
    }
    if let Some((_, id)) = eval_ids(manifest, held)?.intersection(&set.ids).next() {
        return Err(Error::Isolation(id.clone()));
    }
    Ok(set)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub domain: String,
    pub anchor: AnchorSize,
    pub seed: u64,
    pub gold: f64,
    pub pred: f64,
    pub abs_err: f64,
    /// Whether the row counts towards the RMSE.
    pub scored: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    pub rmse: f64,
    pub n_train: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub domain: String,
    /// Mean of the per-seed RMSEs.
    pub rmse: f64,
    pub seeds: Vec<SeedScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub predictor: PredictorKind,
    pub ablations: Vec<String>,
    pub with_zero_anchor: bool,
    pub rows: Vec<EvalRow>,
    pub domains: Vec<DomainScore>,
    /// Mean of the per-domain RMSEs.
    pub average_rmse: f64,
}

/// Result of one `(held-out domain, seed)` run.
#[derive(Clone, Debug)]
struct Run {
    domain: String,
    seed: u64,
    rows: Vec<EvalRow>,
    n_train: usize,
}

fn rows_rmse<'a>(rows: impl IntoIterator<Item = &'a EvalRow>) -> Result<f64> {
    let (pred, gold): (Vec<f64>, Vec<f64>) = rows.into_iter().filter(|r| r.scored).map(|r| (r.pred, r.gold)).unzip();
    rmse(&pred, &gold)
}

impl EvalReport {
    fn from_runs(predictor: PredictorKind, protocol: &EvalProtocol, runs: Vec<Run>) -> Result<Self> {
        let mut domains: Vec<DomainScore> = Vec::new();
        let mut rows = Vec::new();
        for run in runs {
            let score = SeedScore {
                seed: run.seed,
                rmse: rows_rmse(&run.rows)?,
                n_train: run.n_train,
            };
            match domains.iter_mut().find(|d| d.domain == run.domain) {
                Some(d) => d.seeds.push(score),
                None => domains.push(DomainScore {
                    domain: run.domain.clone(),
                    rmse: 0.0,
                    seeds: vec![score],
                }),
            }
            rows.extend(run.rows);
        }
        for d in &mut domains {
            d.rmse = d.seeds.iter().map(|s| s.rmse).sum::<f64>() / d.seeds.len() as f64;
        }
        let average_rmse = domains.iter().map(|d| d.rmse).sum::<f64>() / domains.len().max(1) as f64;
        Ok(Self {
            predictor,
            ablations: protocol.ablations.iter().map(Ablation::label).collect(),
            with_zero_anchor: protocol.with_zero_anchor,
            rows,
            domains,
            average_rmse,
        })
    }

    /// Recomputes every RMSE from the stored rows and compares within
    /// 1e-12.
    pub fn check_consistency(&self) -> Result<()> {
        let mut means = Vec::new();
        for d in &self.domains {
            let mut sum = 0.0;
            for s in &d.seeds {
                let r = rows_rmse(self.rows.iter().filter(|r| r.domain == d.domain && r.seed == s.seed))?;
                if (r - s.rmse).abs() > 1e-12 {
                    return Err(Error::InvalidConfig(format!(
                        "{} seed {}: stored RMSE {} but rows give {r}",
                        d.domain, s.seed, s.rmse
                    )));
                }
                sum += r;
            }
            let mean = sum / d.seeds.len() as f64;
            if (mean - d.rmse).abs() > 1e-12 {
                return Err(Error::InvalidConfig(format!("{}: inconsistent RMSE", d.domain)));
            }
            means.push(mean);
        }
        let avg = means.iter().sum::<f64>() / means.len().max(1) as f64;
        if (avg - self.average_rmse).abs() > 1e-12 {
            return Err(Error::InvalidConfig("inconsistent average RMSE".into()));
        }
        Ok(())
    }

    /// Per-domain mean over seeds of the RMSE restricted to rows accepted
    /// by `keep`, averaged over domains.
    pub fn rmse_where(&self, keep: impl Fn(&EvalRow) -> bool) -> Result<f64> {
        let mut total = 0.0;
        for d in &self.domains {
            let mut sum = 0.0;
            for s in &d.seeds {
                let (pred, gold): (Vec<f64>, Vec<f64>) = self
                    .rows
                    .iter()
                    .filter(|r| r.domain == d.domain && r.seed == s.seed && keep(r))
                    .map(|r| (r.pred, r.gold))
                    .unzip();
                sum += rmse(&pred, &gold)?;
            }
            total += sum / d.seeds.len() as f64;
        }
        Ok(total / self.domains.len().max(1) as f64)
    }

    /// Mean absolute error over every row at `anchor`.
    pub fn mae_at(&self, anchor: AnchorSize) -> Option<f64> {
        let errs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.anchor == anchor)
            .map(|r| r.abs_err)
            .collect();
        (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
    }

    pub fn domain(&self, name: &str) -> Option<&DomainScore> {
        self.domains.iter().find(|d| d.domain == name)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("domain\tanchor\tseed\tgold\tpred\tabs_err\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.domain, r.anchor, r.seed, r.gold, r.pred, r.abs_err
            ));
        }
        out
    }
}

/// Thread pool honoring `DALC_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Corpus-feature rows and gold means of the corpus-level points.
pub fn corpus_rows(set: &TrainingSet) -> (Vec<Vec<f64>>, Vec<f64>) {
    let rows = set
        .corpus_points
        .iter()
        .map(|p| p.features.to_array().to_vec())
        .collect();
    let targets = set.corpus_points.iter().map(|p| p.gold).collect();
    (rows, targets)
}

/// Instance-level boosted-tree rows and targets, one per training instance.
pub fn instance_rows(manifest: &Manifest, set: &TrainingSet) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut rows = Vec::with_capacity(set.instances.len());
    for (inst, src) in set.instances.iter().zip(&set.sources) {
        let rec = &manifest.domains[src.domain].sentences[src.sentence];
        rows.push(gbt_instance_rows(rec, &inst.corpus)?);
    }
    let targets = set.instances.iter().map(|i| i.target).collect();
    Ok((rows, targets))
}

/// Trains `kind` on `set` with `seed` and predicts the held-out curve at
/// `sizes`.
fn predict_held_out(
    kind: PredictorKind,
    protocol: &EvalProtocol,
    manifest: &Manifest,
    set: &TrainingSet,
    seed: u64,
    sizes: &[AnchorSize],
) -> Result<LearningCurve> {
    let held = manifest.domain(&protocol.held_out_domain).expect("checked");
    let corpus = corpus_by_anchor(held, sizes.iter().copied(), protocol.extrapolate)?;
    let eval = held.eval_sentences();
    match kind {
        PredictorKind::Dalc => {
            let cfg = NetConfig {
                seed,
                ablations: protocol.ablations.clone(),
                ..protocol.net.clone()
            };
            let (model, _) = train(&set.instances, &cfg)?;
            model.predict_curve_with(&eval, &corpus)
        }
        PredictorKind::Exp3 => {
            let obs: Vec<AnchorObservation> = set
                .corpus_points
                .iter()
                .map(|p| AnchorObservation::new(p.anchor, p.gold))
                .collect();
            exp3_curve(&exp3_fit(&obs)?, sizes)
        }
        PredictorKind::GbtCorpus => {
            let (rows, targets) = corpus_rows(set);
            let model = gbt_fit(&rows, &targets, &protocol.gbt, seed)?;
            sizes
                .iter()
                .map(|&n| Ok((n, model.predict(&corpus[&n].to_array())?)))
                .collect()
        }
        PredictorKind::GbtInstance => {
            let (rows, targets) = instance_rows(manifest, set)?;
            let model = gbt_fit(&rows, &targets, &protocol.gbt, seed)?;
            let mut curve = LearningCurve::default();
            for &n in sizes {
                let mut sum = 0.0;
                for s in &eval {
                    sum += model.predict(&gbt_instance_rows(s, &corpus[&n])?)?;
                }
                curve.0.insert(n, sum / eval.len() as f64);
            }
            Ok(curve)
        }
    }
}

struct Job<'a> {
    protocol: EvalProtocol,
    set: Arc<TrainingSet>,
    gold: LearningCurve,
    seed: u64,
    manifest: &'a Manifest,
}

fn prepare(manifest: &Manifest, protocol: &EvalProtocol) -> Result<(Arc<TrainingSet>, LearningCurve)> {
    let set = build_training_set(manifest, protocol)?;
    let held = manifest.domain(&protocol.held_out_domain).expect("checked");
    let gold = held.gold_mean_curve();
    for n in protocol.eval_sizes() {
        if gold.get(n).is_none() {
            return Err(Error::NoGoldLabels(format!("{}/{n}", held.name)));
        }
    }
    Ok((Arc::new(set), gold))
}

fn run_job(kind: PredictorKind, job: &Job) -> Result<Run> {
    let sizes = job.protocol.eval_sizes();
    let curve = predict_held_out(kind, &job.protocol, job.manifest, &job.set, job.seed, &sizes)?;
    let scored = job.protocol.scored_anchors();
    let rows = sizes
        .iter()
        .map(|&n| {
            let gold = job.gold.get(n).expect("checked");
            let pred = curve.get(n).expect("predicted every size");
            EvalRow {
                domain: job.protocol.held_out_domain.clone(),
                anchor: n,
                seed: job.seed,
                gold,
                pred,
                abs_err: (pred - gold).abs(),
                scored: scored.contains(&n),
            }
        })
        .collect();
    let n_train = match kind {
        PredictorKind::Dalc | PredictorKind::GbtInstance => job.set.instances.len(),
        PredictorKind::GbtCorpus | PredictorKind::Exp3 => job.set.corpus_points.len(),
    };
    Ok(Run {
        domain: job.protocol.held_out_domain.clone(),
        seed: job.seed,
        rows,
        n_train,
    })
}

fn run_jobs(kind: PredictorKind, protocol: &EvalProtocol, jobs: Vec<Job>) -> Result<EvalReport> {
    let pool = thread_pool()?;
    let runs: Vec<Result<Run>> = pool.install(|| jobs.par_iter().map(|j| run_job(kind, j)).collect());
    let report = EvalReport::from_runs(kind, protocol, runs.into_iter().collect::<Result<_>>()?)?;
    report.check_consistency()?;
    Ok(report)
}

/// Trains `kind` without the held-out domain once per seed and scores the
/// predicted held-out curve against its gold curve.
pub fn leave_one_out(manifest: &Manifest, protocol: &EvalProtocol, kind: PredictorKind) -> Result<EvalReport> {
    let (set, gold) = prepare(manifest, protocol)?;
    let jobs = protocol
        .seeds
        .iter()
        .map(|&seed| Job {
            protocol: protocol.clone(),
            set: Arc::clone(&set),
            gold: gold.clone(),
            seed,
            manifest,
        })
        .collect();
    run_jobs(kind, protocol, jobs)
}

/// [`leave_one_out`] with every domain held out in turn; the report's
/// average is the cross-domain average RMSE.
pub fn leave_one_out_all(manifest: &Manifest, protocol: &EvalProtocol, kind: PredictorKind) -> Result<EvalReport> {
    let mut jobs = Vec::new();
    for dom in &manifest.domains {
        let p = EvalProtocol {
            held_out_domain: dom.name.clone(),
            ..protocol.clone()
        };
        let (set, gold) = prepare(manifest, &p)?;
        for &seed in &protocol.seeds {
            jobs.push(Job {
                protocol: p.clone(),
                set: Arc::clone(&set),
                gold: gold.clone(),
                seed,
                manifest,
            });
        }
    }
    run_jobs(kind, protocol, jobs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub label: String,
    pub report: EvalReport,
}

/// DaLC leave-one-out with no ablation, then once per ablation in
/// `protocol.ablations`, each dropped on its own.
pub fn ablation_suite(manifest: &Manifest, protocol: &EvalProtocol) -> Result<Vec<AblationResult>> {
    let mut configs = vec![("full".to_string(), Vec::new())];
    for ab in &protocol.ablations {
        configs.push((ab.label(), vec![ab.clone()]));
    }
    configs
        .into_iter()
        .map(|(label, ablations)| {
            let p = EvalProtocol {
                ablations,
                ..protocol.clone()
            };
            Ok(AblationResult {
                label,
                report: leave_one_out(manifest, &p, PredictorKind::Dalc)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_net(d: usize) -> NetConfig {
        NetConfig {
            fusion_hidden: 8,
            fusion_layers: 2,
            max_epochs: 5,
            batch_size: 32,
            ..NetConfig::new(d)
        }
    }

    fn small() -> (Manifest, EvalProtocol) {
        let spec = SyntheticSpec::small(4);
        let m = generate_synthetic(&spec).unwrap();
        let mut p = EvalProtocol::new("law", tiny_net(spec.encoder_dim));
        p.seeds = vec![1, 2];
        p.anchor_sizes = vec![0, 100, 1000];
        (m, p)
    }

    #[test]
    fn report_structure_and_consistency() {
        let (m, p) = small();
        for kind in PredictorKind::ALL {
            let r = leave_one_out(&m, &p, kind).unwrap();
            assert_eq!(r.rows.len(), 6, "{kind:?}");
            assert_eq!(r.domains.len(), 1);
            assert_eq!(r.domains[0].seeds.len(), 2);
            r.check_consistency().unwrap();
            assert_eq!(r.rmse_where(|row| row.scored).unwrap(), r.average_rmse);
            assert!(r.rows.iter().all(|row| row.scored && (0.0..=1.0).contains(&row.pred)));
            let tsv = r.to_tsv();
            assert_eq!(tsv.lines().count(), 7);
            assert!(tsv.starts_with("domain\tanchor\tseed\tgold\tpred\tabs_err\n"));
        }
    }

    #[test]
    fn tampered_report_is_inconsistent() {
        let (m, p) = small();
        let mut r = leave_one_out(&m, &p, PredictorKind::Exp3).unwrap();
        r.rows[0].pred += 0.1;
        assert!(r.check_consistency().is_err());
    }

    #[test]
    fn exp3_ignores_the_held_out_domain() {
        let spec = SyntheticSpec {
            domains: (0..3)
                .map(|i| DomainSpec::from_latent(format!("d{i}"), i as f64 / 2.0))
                .collect(),
            ..SyntheticSpec::small(2)
        };
        let m = generate_synthetic(&spec).unwrap();
        let mut p = EvalProtocol::new("d0", tiny_net(spec.encoder_dim));
        p.seeds = vec![1];
        p.anchor_sizes = vec![0, 100, 300, 1000];
        let r = leave_one_out_all(&m, &p, PredictorKind::Exp3).unwrap();
        assert_eq!(r.domains.len(), 3);
        // the same global curve is fitted whenever the training pools
        // agree; here the pools differ, so compare d0 against a direct fit
        let set = build_training_set(&m, &p).unwrap();
        let obs: Vec<_> = set
            .corpus_points
            .iter()
            .map(|c| AnchorObservation::new(c.anchor, c.gold))
            .collect();
        let want = exp3_curve(&exp3_fit(&obs).unwrap(), &p.anchor_sizes).unwrap();
        for row in r.rows.iter().filter(|r| r.domain == "d0") {
            assert_eq!(row.pred, want.get(row.anchor).unwrap());
        }
        // and the curve does not depend on which sentences the held-out
        // domain has
        let mut m2 = m.clone();
        m2.domains[0].sentences.truncate(35);
        let r2 = leave_one_out(&m2, &p, PredictorKind::Exp3).unwrap();
        for (a, b) in r2.rows.iter().zip(r.rows.iter().filter(|r| r.domain == "d0")) {
            assert_eq!(a.pred, b.pred);
        }
    }

    #[test]
    fn zero_anchor_adds_exactly_the_dev_instances() {
        let (m, mut p) = small();
        let base = build_training_set(&m, &p).unwrap();
        p.with_zero_anchor = true;
        let aug = build_training_set(&m, &p).unwrap();
        let dev = m.domain("law").unwrap().split(Split::Dev).count();
        assert_eq!(aug.instances.len(), base.instances.len() + dev);
        assert_eq!(aug.corpus_points.len(), base.corpus_points.len() + 1);
        let r = leave_one_out(&m, &p, PredictorKind::Dalc).unwrap();
        for row in &r.rows {
            assert_eq!(row.scored, row.anchor != 0);
        }
        assert_eq!(r.domains[0].seeds[0].n_train, aug.instances.len());
    }

    #[test]
    fn zero_anchor_without_dev_split_fails() {
        let (mut m, mut p) = small();
        for s in &mut m.domains[0].sentences {
            s.split = Split::Test;
        }
        p.with_zero_anchor = true;
        assert!(matches!(build_training_set(&m, &p), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn protocol_errors() {
        let (m, mut p) = small();
        p.held_out_domain = "nope".into();
        assert!(matches!(
            leave_one_out(&m, &p, PredictorKind::Exp3),
            Err(Error::UnknownDomain(_))
        ));
        let (m, mut p) = small();
        p.seeds.clear();
        assert!(matches!(
            leave_one_out(&m, &p, PredictorKind::Exp3),
            Err(Error::InvalidConfig(_))
        ));
        let (mut m, p) = small();
        m.domains.truncate(1);
        assert!(matches!(
            leave_one_out(&m, &p, PredictorKind::Exp3),
            Err(Error::InsufficientDomains(1))
        ));
        let (m, mut p) = small();
        p.query_sizes = vec![5000];
        assert!(matches!(
            leave_one_out(&m, &p, PredictorKind::Exp3),
            Err(Error::NoGoldLabels(_))
        ));
    }

    #[test]
    fn query_sizes_are_reported_but_not_scored() {
        let spec = SyntheticSpec {
            label_sizes: vec![0, 100, 300, 1000, 2000],
            ..SyntheticSpec::small(3)
        };
        let m = generate_synthetic(&spec).unwrap();
        let mut p = EvalProtocol::new("it", tiny_net(spec.encoder_dim));
        p.seeds = vec![3];
        p.anchor_sizes = vec![0, 100, 1000];
        p.query_sizes = vec![300, 2000];
        assert!(matches!(
            leave_one_out(&m, &p, PredictorKind::GbtCorpus),
            Err(Error::MissingSample(2000))
        ));
        p.extrapolate = true;
        let r = leave_one_out(&m, &p, PredictorKind::GbtCorpus).unwrap();
        let scored: Vec<_> = r.rows.iter().filter(|r| r.scored).map(|r| r.anchor).collect();
        assert_eq!(scored, vec![0, 100, 1000]);
        assert_eq!(r.rows.len(), 5);
        assert!(r.mae_at(2000).is_some());
    }

    #[test]
    fn isolation_violation_is_caught() {
        let (mut m, p) = small();
        // a held-out test sentence masquerading under a training domain
        // cannot collide since ids are per domain; sharing the held-out
        // domain's name is what a faulty split would look like
        let mut p2 = p.clone();
        p2.with_zero_anchor = true;
        for s in &mut m.domains[0].sentences {
            s.split = Split::Dev;
        }
        // every held-out sentence is now dev, so evaluation falls back to
        // all sentences, including the ones trained at anchor 0
        assert!(matches!(build_training_set(&m, &p2), Err(Error::Isolation(_))));
    }

    #[test]
    fn ablation_suite_rows() {
        let (m, mut p) = small();
        p.seeds = vec![1];
        let plain = leave_one_out(&m, &p, PredictorKind::Dalc).unwrap();
        let suite = ablation_suite(&m, &p).unwrap();
        assert_eq!(suite.len(), 1);
        assert_eq!(suite[0].report, plain);
        p.ablations = vec![Ablation::DropEncoder, Ablation::DropDf];
        let suite = ablation_suite(&m, &p).unwrap();
        let labels: Vec<_> = suite.iter().map(|a| a.label.as_str()).collect();
        assert_eq!(labels[0], "full");
        assert_eq!(suite.len(), 3);
        assert_eq!(suite[1].report.ablations.len(), 1);
    }

    #[test]
    fn predictor_names_round_trip() {
        for k in PredictorKind::ALL {
            assert_eq!(PredictorKind::parse(k.name()).unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert!(PredictorKind::parse("xgb").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn training_never_sees_held_out_sentences(seed in any::<u64>(), held in 0usize..3, zero in any::<bool>()) {
            let spec = SyntheticSpec {
                domains: (0..3).map(|i| DomainSpec::from_latent(format!("d{i}"), i as f64 / 3.0)).collect(),
                dev_sentences: 4,
                test_sentences: 4,
                ..SyntheticSpec::small(seed)
            };
            let m = generate_synthetic(&spec).unwrap();
            let mut p = EvalProtocol::new(format!("d{held}"), tiny_net(spec.encoder_dim));
            p.anchor_sizes = vec![0, 100, 1000];
            p.with_zero_anchor = zero;
            let set = build_training_set(&m, &p).unwrap();
            let eval = eval_ids(&m, &p.held_out_domain).unwrap();
            prop_assert!(eval.is_disjoint(&set.ids));
            for src in &set.sources {
                let dom = &m.domains[src.domain];
                let s = &dom.sentences[src.sentence];
                prop_assert!(!eval.contains(&(dom.name.clone(), s.id.clone())));
                if dom.name == p.held_out_domain {
                    prop_assert!(zero && src.anchor == 0 && s.split == Split::Dev);
                }
            }
        }
    }
}
