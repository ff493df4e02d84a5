//! `slr-screen` command-line entry points.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use screening_core::classical::{
    phase3_protocol, training_ids, ClassicalError, LlmPredictions, Phase3Options,
};
use screening_core::corpus::{ingest, Corpus, CorpusError, IngestReport, Label, VariantTag};
use screening_core::evaluation::{self, summarize, trivial_baseline, MetricRow, WeightScheme};
use screening_core::gateway::{Gateway, GatewayError, Ledger, TraceIndex};
use screening_core::metaanalysis::{
    forest, pool_by_contrast, EffectEstimate, MetaError, PooledEffect, DEFAULT_SESOI,
};
use screening_core::orchestrator::ablation::{run_ablation, AblationSpec};
use screening_core::orchestrator::{
    collect_rounds, round_metrics, run_matrix, screening_decisions, agreement_by_criterion,
    AggregationRule, OrchestratorError, Outcome, ReviewError, ReviewStore, RunSpec,
};
use serde::{Deserialize, Serialize};

use crate::api::{self, AppState};
use crate::config::{ConfigError, RunConfig, TOKEN_ENV};
use crate::report::{
    self, write_json, AblationArtifact, Artifacts, BaselineArtifact, Layout, MetaArtifact,
    Operational, OutcomeCounts, ScreenArtifact, StatsArtifact, StatsUnit, ENGINE_VERSION,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "slr-screen", version, about = "LLM screening engine for systematic reviews")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Restrict to models of this provider name or model id (repeatable).
    #[arg(long, global = true)]
    pub provider: Vec<String>,
    #[arg(long, global = true)]
    pub rounds: Option<u32>,
    /// unanimity, majority or threshold:k.
    #[arg(long, global = true)]
    pub rule: Option<String>,
    /// Feature variant A-E (repeatable).
    #[arg(long, global = true)]
    pub variant: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate the corpus and write its normalized copy.
    Ingest,
    /// Run every prompt, aggregate rounds and enqueue the review store.
    Screen,
    /// Metadata-composition ablation with pooled contrasts.
    Ablate,
    /// Classical TF-IDF baselines on a held-out split.
    Baseline,
    /// Per-round metrics and run-to-run agreement from the trace ledger.
    Stats,
    /// Pool an effect CSV by contrast.
    Meta {
        /// Columns: unit_id, contrast, effect, ci_lower, ci_upper[, variance].
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        sesoi: Option<f64>,
    },
    /// Serve the review API and UI.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Built review UI assets.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
    /// Consolidated Markdown and CSV bundle.
    Report,
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn invalid(m: impl std::fmt::Display) -> CliError {
    CliError::Validation(m.to_string())
}

fn runtime(m: impl std::fmt::Display) -> CliError {
    CliError::Runtime(m.to_string())
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        runtime(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        invalid(e)
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Write(_) => runtime(e),
            _ => invalid(e),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::MissingCredential { .. } => invalid(format!(
                "{e}; export the variable or remove the model from the config"
            )),
            GatewayError::UnknownModel(_) | GatewayError::InvalidConfig(_) => invalid(e),
            _ => runtime(e),
        }
    }
}

impl From<OrchestratorError> for CliError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::Gateway(g) => g.into(),
            OrchestratorError::Corpus(c) => c.into(),
            OrchestratorError::ZeroRounds
            | OrchestratorError::NoModels
            | OrchestratorError::NoVariants
            | OrchestratorError::ThresholdTooLarge { .. }
            | OrchestratorError::InvalidRule(_)
            | OrchestratorError::Evaluation(_)
            | OrchestratorError::Meta(MetaError::MissingReference(_)) => invalid(e),
            _ => runtime(e),
        }
    }
}

impl From<ReviewError> for CliError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::InvalidFraction(_) | ReviewError::DuplicateStudy(_) => invalid(e),
            _ => runtime(e),
        }
    }
}

impl From<ClassicalError> for CliError {
    fn from(e: ClassicalError) -> Self {
        match e {
            ClassicalError::TrainSize { .. }
            | ClassicalError::Unlabeled(_)
            | ClassicalError::Leakage(_)
            | ClassicalError::InvalidFolds(_) => invalid(e),
            _ => runtime(e),
        }
    }
}

impl From<MetaError> for CliError {
    fn from(e: MetaError) -> Self {
        invalid(e)
    }
}

fn csv_error(e: csv::Error) -> CliError {
    runtime(e)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let ctx = Context::new(&cli)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(runtime)?;
    match &cli.command {
        Command::Ingest => ctx.ingest(),
        Command::Screen => rt.block_on(ctx.screen()),
        Command::Ablate => rt.block_on(ctx.ablate()),
        Command::Baseline => ctx.baseline(),
        Command::Stats => ctx.stats(),
        Command::Meta { input, sesoi } => ctx.meta(input.as_deref(), *sesoi),
        Command::Serve { addr, static_dir } => rt.block_on(ctx.serve(*addr, static_dir.as_deref())),
        Command::Report => ctx.report(),
    }
}

struct Context {
    config: Option<RunConfig>,
    layout: Layout,
}

fn apply_overrides(config: &mut RunConfig, cli: &Cli) -> Result<(), CliError> {
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(r) = cli.rounds {
        config.rounds = r;
    }
    if let Some(rule) = &cli.rule {
        config.rule = rule.parse::<AggregationRule>().map_err(invalid)?;
    }
    if !cli.variant.is_empty() {
        config.variants = cli
            .variant
            .iter()
            .map(|v| v.parse::<VariantTag>())
            .collect::<Result<_, _>>()?;
    }
    if !cli.provider.is_empty() {
        let picked: Vec<String> = config
            .providers
            .iter()
            .filter(|p| cli.provider.iter().any(|f| *f == p.provider_name || *f == p.model_id))
            .map(|p| p.model_id.clone())
            .collect();
        if picked.is_empty() {
            return Err(invalid(format!(
                "--provider {} matches no configured provider or model",
                cli.provider.join(",")
            )));
        }
        config.models = picked;
    }
    config.validate()?;
    Ok(())
}

impl Context {
    fn new(cli: &Cli) -> Result<Self, CliError> {
        let config = match &cli.config {
            Some(path) => {
                let mut c = RunConfig::load(path)?;
                apply_overrides(&mut c, cli)?;
                Some(c)
            }
            None => None,
        };
        let root = cli
            .out
            .clone()
            .or_else(|| config.as_ref().map(|c| c.output_dir.clone()))
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Self {
            config,
            layout: Layout::new(root),
        })
    }

    fn config(&self) -> Result<&RunConfig, CliError> {
        self.config
            .as_ref()
            .ok_or_else(|| invalid("this subcommand needs --config <run.toml>"))
    }

    fn load_corpus(&self) -> Result<(Corpus, IngestReport), CliError> {
        let c = self.config()?;
        let (corpus, report) = ingest(
            &c.corpus.path,
            c.corpus.format,
            &c.corpus.mapping,
            &c.corpus_name(),
            c.corpus.criteria.clone(),
        )?;
        for r in &report.rejected {
            log::warn!("row {} rejected: {}", r.row, r.reason);
        }
        Ok((corpus, report))
    }

    fn gateway(&self) -> Result<Gateway, CliError> {
        let providers = self.config()?.selected_providers();
        if providers.is_empty() {
            return Err(invalid("no providers configured"));
        }
        Ok(Gateway::from_configs(&providers, Path::new("."))?)
    }

    fn ingest(&self) -> Result<(), CliError> {
        let (corpus, report) = self.load_corpus()?;
        std::fs::create_dir_all(&self.layout.root)?;
        corpus.export_jsonl(&self.layout.corpus())?;
        write_json(&self.layout.ingest_report(), &report)?;
        println!(
            "ingested {} studies ({} rejected, {} duplicate-title pairs, {} without abstract, {} without keywords)",
            report.accepted,
            report.rejected.len(),
            report.duplicate_titles.len(),
            report.missing_abstract,
            report.missing_keywords
        );
        Ok(())
    }

    async fn screen(&self) -> Result<(), CliError> {
        let c = self.config()?;
        let (corpus, _) = self.load_corpus()?;
        let gateway = self.gateway()?;
        std::fs::create_dir_all(&self.layout.root)?;
        let ledger = Ledger::open(&self.layout.traces()).map_err(runtime)?;
        let spec = RunSpec {
            models: c.selected_models(),
            variants: c.variants.clone(),
            rounds: c.rounds,
            threshold: c.threshold,
            max_concurrency: c.max_concurrency,
            call_budget: None,
        };
        let run = run_matrix(&gateway, &ledger, &corpus, &spec).await?;

        let op = Operational {
            model_id: spec.models[0].clone(),
            variant: spec.variants[0],
            rule: c.rule,
        };
        let index = TraceIndex::from(&ledger);
        let rounds = collect_rounds(&index, &corpus, &op.model_id, op.variant, c.rounds, c.threshold);
        let decisions = screening_decisions(&rounds, c.rule)?;
        let store = ReviewStore::create(&self.layout.review(), &decisions)?
            .with_overturn_threshold(c.overturn_warning);
        let mut notes = vec![format!(
            "max_output_tokens per model: {}",
            c.selected_providers()
                .iter()
                .map(|p| format!("{}={}", p.model_id, p.max_output_tokens))
                .collect::<Vec<_>>()
                .join(", ")
        )];
        match store.draw_verification(c.verification_fraction, c.seed) {
            Ok(s) => notes.push(format!(
                "verification sample: {} of the auto-decided studies at fraction {}",
                s.len(),
                c.verification_fraction
            )),
            Err(ReviewError::NothingToSample) => notes.push("no auto-decided study to verify".into()),
            Err(e) => return Err(e.into()),
        }
        let progress = store.progress();
        let artifact = ScreenArtifact {
            engine_version: ENGINE_VERSION.into(),
            config: c.clone(),
            run,
            operational: op,
            progress,
            notes,
        };
        write_json(&self.layout.run_report(), &artifact)?;

        let r = &artifact.run;
        let p = &artifact.progress;
        println!(
            "traces {}/{} ({} fresh, {} reused); {} parse failures; {} provider failures; {} skipped",
            r.traces_present,
            r.expected_traces,
            r.fresh_traces,
            r.reused_traces,
            r.parse_failures.len(),
            r.provider_failures.len(),
            r.skipped.len()
        );
        println!(
            "auto-include {}  auto-exclude {}  conflict {}  automation rate {:.3}  conflict rate {:.3}  overturn rate {:.3}",
            p.auto_include, p.auto_exclude, p.conflicts, p.automation_rate, p.conflict_rate, p.overturn_rate
        );
        if p.systematic_error_warning {
            eprintln!(
                "WARNING: verification overturn rate {:.3} exceeds {:.3}",
                p.overturn_rate, p.overturn_threshold
            );
        }
        Ok(())
    }

    async fn ablate(&self) -> Result<(), CliError> {
        let c = self.config()?;
        let (corpus, _) = self.load_corpus()?;
        let gateway = self.gateway()?;
        std::fs::create_dir_all(&self.layout.root)?;
        let ledger = Ledger::open(&self.layout.traces()).map_err(runtime)?;
        let spec = AblationSpec {
            models: c.selected_models(),
            variants: VariantTag::ALL.to_vec(),
            rounds: c.rounds,
            threshold: c.threshold,
            sample_size: c.ablation.sample_size,
            seed: c.seed,
            replicates: c.ablation.replicates,
            level: c.ablation.level,
            sesoi: c.ablation.sesoi,
            max_concurrency: c.max_concurrency,
        };
        let report = run_ablation::<f64>(&gateway, &ledger, &[corpus], &spec).await?;
        let dir = self.layout.ablation_dir();
        write_pooled_bundle(&dir, &report.effects, &report.pooled)?;
        let rows: Vec<AccuracyRow> = report
            .accuracies
            .iter()
            .map(|a| AccuracyRow {
                unit_id: a.unit_id.clone(),
                corpus: a.corpus.clone(),
                model_id: a.model_id.clone(),
                variant: a.variant,
                n: a.n,
                accuracy: a.accuracy.point,
                ci_lower: a.accuracy.lower,
                ci_upper: a.accuracy.upper,
            })
            .collect();
        write_csv_file(&dir.join("accuracies.csv"), &rows)?;
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        print_pooled(&report.pooled);
        write_json(
            &dir.join("report.json"),
            &AblationArtifact {
                engine_version: ENGINE_VERSION.into(),
                config: c.clone(),
                report,
            },
        )?;
        Ok(())
    }

    fn baseline(&self) -> Result<(), CliError> {
        let c = self.config()?;
        let (corpus, _) = self.load_corpus()?;
        let opts = Phase3Options {
            train_size: c.baseline.train_size,
            folds: c.baseline.folds,
            seed: c.seed,
            replicates: c.baseline.replicates,
            hyperparameters: c.baseline.hyperparameters,
            ..Phase3Options::default()
        };
        let train = training_ids(&corpus, &opts)?;
        let mut llm = Vec::new();
        if self.layout.review().join(screening_core::orchestrator::store::DECISIONS_FILE).exists() {
            let store = ReviewStore::open(&self.layout.review())?;
            let mut by_model: BTreeMap<String, BTreeMap<String, Label>> = BTreeMap::new();
            for d in store.decisions() {
                if let (Some(label), false) = (d.final_label, train.contains(&d.study_id)) {
                    if corpus.get(&d.study_id).is_some() {
                        by_model.entry(d.model_id.clone()).or_default().insert(d.study_id, label);
                    }
                }
            }
            llm.extend(
                by_model
                    .into_iter()
                    .map(|(model_id, predictions)| LlmPredictions { model_id, predictions }),
            );
        }
        let (report, bundles) = phase3_protocol::<f64>(&corpus, &opts, &llm)?;
        let dir = self.layout.baseline_dir();
        std::fs::create_dir_all(dir.join("models"))?;
        for b in &bundles {
            b.save(&dir.join("models").join(format!("{}.json", b.classifier.kind())))?;
        }
        write_csv_file(&dir.join("metrics.csv"), &report.metric_rows())?;
        for h in report.classifiers.iter().chain(&report.llm) {
            println!(
                "{:<20} n={:<4} accuracy {:.4} [{:.4}, {:.4}]  F1 {:.4}{}",
                h.name,
                h.n,
                h.metrics.accuracy,
                h.accuracy_ci.lower,
                h.accuracy_ci.upper,
                h.metrics.f1,
                if h.degenerate { "  (degenerate)" } else { "" }
            );
        }
        println!("trivial baseline {:.4}", report.trivial_baseline.accuracy_all_excluded);
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        write_json(
            &dir.join("report.json"),
            &BaselineArtifact {
                engine_version: ENGINE_VERSION.into(),
                config: c.clone(),
                report,
            },
        )?;
        Ok(())
    }

    fn stats(&self) -> Result<(), CliError> {
        let c = self.config()?;
        let (corpus, _) = self.load_corpus()?;
        if !self.layout.traces().exists() {
            return Err(invalid(format!(
                "no trace ledger at {}; run `screen` first",
                self.layout.traces().display()
            )));
        }
        let ledger = Ledger::open(&self.layout.traces()).map_err(runtime)?;
        let index = TraceIndex::from(&ledger);
        let labels: Vec<Label> = corpus.studies.iter().filter_map(|s| s.label).collect();
        let baseline = trivial_baseline::<f64>(&labels).map_err(invalid)?.accuracy_all_excluded;
        let mut units = Vec::new();
        let mut metric_rows = Vec::new();
        let mut agreement_rows = Vec::new();
        for model in c.selected_models() {
            for &variant in &c.variants {
                let rounds = collect_rounds(&index, &corpus, &model, variant, c.rounds, c.threshold);
                if rounds.is_empty() {
                    continue;
                }
                let per_round = round_metrics::<f64>(&rounds, &corpus)?;
                let mut warnings = Vec::new();
                let agreement = match agreement_by_criterion::<f64>(
                    &rounds,
                    corpus.inclusion_criteria.len(),
                    WeightScheme::Quadratic,
                ) {
                    Ok(a) => a,
                    Err(e) => {
                        warnings.push(format!("agreement not computed: {e}"));
                        BTreeMap::new()
                    }
                };
                let decisions = screening_decisions(&rounds, c.rule)?;
                let count = |o: Outcome| decisions.iter().filter(|d| d.outcome == o).count();
                let acc: Vec<f64> = per_round.iter().map(|r| r.metrics.accuracy).collect();
                let f1: Vec<f64> = per_round.iter().map(|r| r.metrics.f1).collect();
                let rule = c.rule.to_string();
                for r in &per_round {
                    metric_rows.push(MetricRow::new(
                        (&corpus.name, &model, &variant.to_string(), &rule),
                        Some(r.round),
                        &r.counts,
                        &r.metrics,
                        baseline,
                    ));
                }
                for (criterion, a) in &agreement {
                    agreement_rows.push(AgreementRow {
                        model_id: model.clone(),
                        variant,
                        criterion: criterion + 1,
                        ac2: a.ac2,
                        percent_agreement: a.percent_agreement_weighted,
                        chance_agreement: a.chance_agreement,
                        subjects: a.n_subjects,
                        missing: a.n_missing,
                        weights: "quadratic".into(),
                    });
                }
                units.push(StatsUnit {
                    model_id: model.clone(),
                    variant,
                    studies: rounds.len(),
                    accuracy: summarize(&acc).map_err(runtime)?,
                    f1: summarize(&f1).map_err(runtime)?,
                    rounds: per_round,
                    agreement,
                    outcomes: OutcomeCounts {
                        auto_include: count(Outcome::AutoInclude),
                        auto_exclude: count(Outcome::AutoExclude),
                        conflict: count(Outcome::Conflict),
                    },
                    warnings,
                });
            }
        }
        if units.is_empty() {
            return Err(invalid("the ledger holds no traces for the configured models and variants"));
        }
        let dir = self.layout.stats_dir();
        write_csv_file(&dir.join("metrics.csv"), &metric_rows)?;
        write_csv_file(&dir.join("agreement.csv"), &agreement_rows)?;
        for u in &units {
            println!(
                "{} / {}: accuracy {:.4} ± {:.4}, F1 {:.4} ± {:.4} over {} rounds (baseline {:.4})",
                u.model_id,
                u.variant,
                u.accuracy.mean,
                u.accuracy.std,
                u.f1.mean,
                u.f1.std,
                u.rounds.len(),
                baseline
            );
        }
        write_json(
            &dir.join("stats.json"),
            &StatsArtifact {
                engine_version: ENGINE_VERSION.into(),
                config: c.clone(),
                corpus: corpus.name.clone(),
                trivial_baseline: baseline,
                units,
            },
        )?;
        Ok(())
    }

    fn meta(&self, input: Option<&Path>, sesoi: Option<f64>) -> Result<(), CliError> {
        let input = input
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.layout.ablation_dir().join("effects.csv"));
        if !input.exists() {
            return Err(invalid(format!("effect file {} does not exist", input.display())));
        }
        let sesoi = sesoi
            .or_else(|| self.config.as_ref().map(|c| c.ablation.sesoi))
            .unwrap_or(DEFAULT_SESOI);
        if !(sesoi > 0.0) {
            return Err(invalid(format!("sesoi must be positive, got {sesoi}")));
        }
        let effects = read_effects(&input)?;
        let pooled = pool_by_contrast(&effects, sesoi)?;
        write_pooled_bundle(&self.layout.meta_dir(), &effects, &pooled)?;
        print_pooled(&pooled);
        write_json(
            &self.layout.meta_dir().join("pooled.json"),
            &MetaArtifact {
                engine_version: ENGINE_VERSION.into(),
                input,
                sesoi,
                effects,
                pooled,
            },
        )?;
        Ok(())
    }

    async fn serve(&self, addr: SocketAddr, static_dir: Option<&Path>) -> Result<(), CliError> {
        let review = self.layout.review();
        if !review.join(screening_core::orchestrator::store::DECISIONS_FILE).exists() {
            return Err(invalid(format!(
                "no decision store at {}; run `screen` first",
                review.display()
            )));
        }
        let mut store = ReviewStore::open(&review)?;
        if let Some(c) = &self.config {
            store = store.with_overturn_threshold(c.overturn_warning);
        }
        let traces = if self.layout.traces().exists() {
            TraceIndex::from(&Ledger::open(&self.layout.traces()).map_err(runtime)?)
        } else {
            TraceIndex::new(Vec::new())
        };
        let corpus = if self.config.is_some() {
            Some(self.load_corpus()?.0)
        } else {
            None
        };
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        if token.is_none() {
            log::warn!("{TOKEN_ENV} is not set; the API accepts unauthenticated requests");
        }
        let static_dir = static_dir
            .map(Path::to_path_buf)
            .or_else(|| self.config.as_ref().and_then(|c| c.static_dir.clone()));
        let state = Arc::new(AppState {
            store,
            traces,
            corpus,
            token,
        });
        let app = api::router(state, static_dir.as_deref());
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(runtime)?;
        println!("serving review API on http://{}", listener.local_addr().map_err(runtime)?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(runtime)
    }

    fn report(&self) -> Result<(), CliError> {
        let artifacts = Artifacts::load(&self.layout)?;
        if artifacts.screen.is_none()
            && artifacts.stats.is_none()
            && artifacts.ablation.is_none()
            && artifacts.baseline.is_none()
            && artifacts.meta.is_none()
        {
            return Err(invalid(format!(
                "nothing to report under {}",
                self.layout.root.display()
            )));
        }
        let dir = self.layout.report_dir();
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("report.md"), report::render_markdown(&artifacts))?;
        write_json(&dir.join("checklist.json"), &report::checklist(&artifacts))?;
        let copies = [
            (self.layout.stats_dir(), "metrics.csv", "stats_metrics.csv"),
            (self.layout.stats_dir(), "agreement.csv", "agreement.csv"),
            (self.layout.ablation_dir(), "accuracies.csv", "ablation_accuracies.csv"),
            (self.layout.ablation_dir(), "effects.csv", "ablation_effects.csv"),
            (self.layout.ablation_dir(), "pooled.csv", "ablation_pooled.csv"),
            (self.layout.ablation_dir(), "forest.csv", "forest.csv"),
            (self.layout.ablation_dir(), "forest.svg", "forest.svg"),
            (self.layout.baseline_dir(), "metrics.csv", "baseline_metrics.csv"),
            (self.layout.meta_dir(), "pooled.csv", "meta_pooled.csv"),
            (self.layout.meta_dir(), "forest.csv", "meta_forest.csv"),
        ];
        for (src_dir, name, target) in copies {
            let src = src_dir.join(name);
            if src.exists() {
                std::fs::copy(&src, dir.join(target))?;
            }
        }
        println!("report written to {}", dir.join("report.md").display());
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct AccuracyRow {
    unit_id: String,
    corpus: String,
    model_id: String,
    variant: VariantTag,
    n: usize,
    accuracy: f64,
    ci_lower: f64,
    ci_upper: f64,
}

#[derive(Debug, Serialize)]
struct AgreementRow {
    model_id: String,
    variant: VariantTag,
    criterion: usize,
    ac2: f64,
    percent_agreement: f64,
    chance_agreement: f64,
    subjects: usize,
    missing: usize,
    weights: String,
}

#[derive(Debug, Serialize)]
struct PooledRow {
    contrast: VariantTag,
    k: usize,
    estimate: f64,
    se: f64,
    ci_lower: f64,
    ci_upper: f64,
    pi_lower: Option<f64>,
    pi_upper: Option<f64>,
    tau2: f64,
    i2: f64,
    q: f64,
    sesoi: f64,
    verdict: String,
}

#[derive(Debug, Deserialize)]
struct EffectRow {
    unit_id: String,
    contrast: VariantTag,
    effect: f64,
    ci_lower: f64,
    ci_upper: f64,
    #[serde(default)]
    variance: Option<f64>,
}

fn read_effects(path: &Path) -> Result<Vec<EffectEstimate<f64>>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<EffectRow>().enumerate() {
        let r = row.map_err(|e| invalid(format!("{} row {}: {e}", path.display(), i + 1)))?;
        if !(r.ci_lower <= r.effect && r.effect <= r.ci_upper) {
            return Err(invalid(format!(
                "{} row {}: effect {} lies outside [{}, {}]",
                path.display(),
                i + 1,
                r.effect,
                r.ci_lower,
                r.ci_upper
            )));
        }
        let mut e = EffectEstimate::from_interval(&r.unit_id, r.contrast, r.effect, r.ci_lower, r.ci_upper);
        if let Some(v) = r.variance {
            e.variance = v;
        }
        out.push(e);
    }
    if out.is_empty() {
        return Err(invalid(format!("{} holds no effects", path.display())));
    }
    Ok(out)
}

fn write_csv_file<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::fs::File::create(path)?;
    evaluation::write_csv(rows, file).map_err(csv_error)
}

fn write_pooled_bundle(
    dir: &Path,
    effects: &[EffectEstimate<f64>],
    pooled: &BTreeMap<VariantTag, PooledEffect<f64>>,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    write_csv_file(&dir.join("effects.csv"), effects)?;
    let rows: Vec<PooledRow> = pooled
        .iter()
        .map(|(&contrast, p)| PooledRow {
            contrast,
            k: p.k,
            estimate: p.estimate,
            se: p.se,
            ci_lower: p.ci_lower,
            ci_upper: p.ci_upper,
            pi_lower: p.prediction_lower,
            pi_upper: p.prediction_upper,
            tau2: p.tau2,
            i2: p.i2,
            q: p.q_stat,
            sesoi: p.sesoi,
            verdict: p.verdict.to_string(),
        })
        .collect();
    write_csv_file(&dir.join("pooled.csv"), &rows)?;
    let groups: BTreeMap<VariantTag, Vec<EffectEstimate<f64>>> =
        effects.iter().fold(BTreeMap::new(), |mut m, e| {
            m.entry(e.contrast).or_insert_with(Vec::new).push(e.clone());
            m
        });
    let panels: Vec<forest::ForestPanel<'_, f64>> = pooled
        .iter()
        .filter_map(|(tag, p)| {
            groups.get(tag).map(|effects| forest::ForestPanel { effects, pooled: p })
        })
        .collect();
    let file = std::fs::File::create(dir.join("forest.csv"))?;
    forest::write_csv(&panels, file).map_err(csv_error)?;
    std::fs::write(dir.join("forest.svg"), forest::render_svg(&panels))?;
    Ok(())
}

fn print_pooled(pooled: &BTreeMap<VariantTag, PooledEffect<f64>>) {
    for (tag, p) in pooled {
        println!(
            "{tag} vs A: k={} estimate {:.4} CI [{:.4}, {:.4}] tau2 {:.4} I2 {:.1}% -> {}",
            p.k, p.estimate, p.ci_lower, p.ci_upper, p.tau2, p.i2, p.verdict
        );
    }
}
