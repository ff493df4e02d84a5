//! Output layout, persisted artifacts and the consolidated Markdown report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use screening_core::classical::Phase3Report;
use screening_core::corpus::VariantTag;
use screening_core::evaluation::{AgreementReport, RoundSummary};
use screening_core::gateway::{Ledger, TraceIndex};
use screening_core::metaanalysis::{EffectEstimate, PooledEffect};
use screening_core::orchestrator::ablation::AblationReport;
use screening_core::orchestrator::{AggregationRule, Progress, RoundMetrics, RunReport};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// File locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.jsonl")
    }
    pub fn ingest_report(&self) -> PathBuf {
        self.root.join("ingest_report.json")
    }
    pub fn traces(&self) -> PathBuf {
        self.root.join("traces.jsonl")
    }
    pub fn review(&self) -> PathBuf {
        self.root.join("review")
    }
    pub fn run_report(&self) -> PathBuf {
        self.root.join("run_report.json")
    }
    pub fn stats_dir(&self) -> PathBuf {
        self.root.join("stats")
    }
    pub fn ablation_dir(&self) -> PathBuf {
        self.root.join("ablation")
    }
    pub fn baseline_dir(&self) -> PathBuf {
        self.root.join("baseline")
    }
    pub fn meta_dir(&self) -> PathBuf {
        self.root.join("meta")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Operational {
    pub model_id: String,
    pub variant: VariantTag,
    pub rule: AggregationRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenArtifact {
    pub engine_version: String,
    pub config: RunConfig,
    pub run: RunReport,
    pub operational: Operational,
    pub progress: Progress,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub auto_include: usize,
    pub auto_exclude: usize,
    pub conflict: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsUnit {
    pub model_id: String,
    pub variant: VariantTag,
    pub studies: usize,
    pub rounds: Vec<RoundMetrics<f64>>,
    pub accuracy: RoundSummary<f64>,
    pub f1: RoundSummary<f64>,
    pub agreement: BTreeMap<usize, AgreementReport<f64>>,
    pub outcomes: OutcomeCounts,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsArtifact {
    pub engine_version: String,
    pub config: RunConfig,
    pub corpus: String,
    pub trivial_baseline: f64,
    pub units: Vec<StatsUnit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationArtifact {
    pub engine_version: String,
    pub config: RunConfig,
    pub report: AblationReport<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineArtifact {
    pub engine_version: String,
    pub config: RunConfig,
    pub report: Phase3Report<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaArtifact {
    pub engine_version: String,
    pub input: PathBuf,
    pub sesoi: f64,
    pub effects: Vec<EffectEstimate<f64>>,
    pub pooled: BTreeMap<VariantTag, PooledEffect<f64>>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> std::io::Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Missing,
    Manual,
}

impl CheckStatus {
    fn mark(self) -> &'static str {
        match self {
            CheckStatus::Pass => "[x]",
            CheckStatus::Fail => "[!]",
            CheckStatus::Missing => "[ ]",
            CheckStatus::Manual => "[?]",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckItem {
    pub item: String,
    pub status: CheckStatus,
    pub evidence: String,
}

fn check(item: &str, status: CheckStatus, evidence: impl Into<String>) -> CheckItem {
    CheckItem {
        item: item.into(),
        status,
        evidence: evidence.into(),
    }
}

/// Everything the report is assembled from; absent artifacts stay `None`.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub screen: Option<ScreenArtifact>,
    pub stats: Option<StatsArtifact>,
    pub ablation: Option<AblationArtifact>,
    pub baseline: Option<BaselineArtifact>,
    pub meta: Option<MetaArtifact>,
    pub traces: Option<TraceIndex>,
}

impl Artifacts {
    pub fn load(layout: &Layout) -> std::io::Result<Self> {
        let traces = if layout.traces().exists() {
            let ledger = Ledger::open(&layout.traces()).map_err(std::io::Error::other)?;
            Some(TraceIndex::from(&ledger))
        } else {
            None
        };
        Ok(Self {
            screen: read_json(&layout.run_report())?,
            stats: read_json(&layout.stats_dir().join("stats.json"))?,
            ablation: read_json(&layout.ablation_dir().join("report.json"))?,
            baseline: read_json(&layout.baseline_dir().join("report.json"))?,
            meta: read_json(&layout.meta_dir().join("pooled.json"))?,
            traces,
        })
    }
}

/// Reporting checklist, machine-checked where the artifacts allow it.
pub fn checklist(a: &Artifacts) -> Vec<CheckItem> {
    use CheckStatus::*;
    let mut items = Vec::new();
    items.push(match &a.traces {
        Some(t) if !t.is_empty() => {
            let documented = t.iter().all(|x| !x.model_id.is_empty() && !x.provider_name.is_empty());
            let models: std::collections::BTreeSet<&str> = t.iter().map(|x| x.model_id.as_str()).collect();
            check(
                "Exact model and API identifiers documented",
                if documented { Pass } else { Fail },
                format!("{} traces; models: {}", t.len(), models.into_iter().collect::<Vec<_>>().join(", ")),
            )
        }
        _ => check("Exact model and API identifiers documented", Missing, "no trace ledger"),
    });
    items.push(match &a.traces {
        Some(t) if !t.is_empty() => {
            let temps: std::collections::BTreeSet<String> = t.iter().map(|x| format!("{}", x.temperature)).collect();
            let tokens: std::collections::BTreeSet<u32> = t.iter().map(|x| x.max_output_tokens).collect();
            check(
                "Inference parameters documented",
                Pass,
                format!(
                    "temperature {}; max_output_tokens {}",
                    temps.into_iter().collect::<Vec<_>>().join("/"),
                    tokens.iter().map(u32::to_string).collect::<Vec<_>>().join("/")
                ),
            )
        }
        _ => check("Inference parameters documented", Missing, "no trace ledger"),
    });
    items.push(match &a.traces {
        Some(t) if !t.is_empty() => {
            let bad = t.iter().filter(|x| !x.hash_matches()).count();
            check(
                "Prompts stored verbatim with content hashes",
                if bad == 0 { Pass } else { Fail },
                format!("{bad} hash mismatches"),
            )
        }
        _ => check("Prompts stored verbatim with content hashes", Missing, "no trace ledger"),
    });
    items.push(match &a.screen {
        Some(s) => check(
            "Run configuration and software version documented",
            Pass,
            format!("engine {}; config embedded in run_report.json", s.engine_version),
        ),
        None => check("Run configuration and software version documented", Missing, "no run report"),
    });
    items.push(match &a.stats {
        Some(s) => {
            let rounds = s.units.iter().map(|u| u.rounds.len()).max().unwrap_or(0);
            check(
                "Repeated rounds run and variability reported",
                if rounds >= 2 { Pass } else { Fail },
                format!("{rounds} rounds per unit"),
            )
        }
        None => check("Repeated rounds run and variability reported", Missing, "no stats"),
    });
    items.push(match &a.stats {
        Some(_) => check("Multiple metrics reported", Pass, "accuracy, precision, recall, F1"),
        None => check("Multiple metrics reported", Missing, "no stats"),
    });
    let baseline = a
        .stats
        .as_ref()
        .map(|s| s.trivial_baseline)
        .or_else(|| a.baseline.as_ref().map(|b| b.report.trivial_baseline.accuracy_all_excluded));
    items.push(match baseline {
        Some(b) => check("Trivial exclusion baseline computed", Pass, format!("{b:.4}")),
        None => check("Trivial exclusion baseline computed", Missing, "no stats or baseline"),
    });
    items.push(match &a.stats {
        Some(s) if s.units.iter().any(|u| !u.agreement.is_empty()) => {
            check("Run-to-run agreement computed", Pass, "Gwet AC2 per criterion")
        }
        _ => check("Run-to-run agreement computed", Missing, "no agreement table"),
    });
    items.push(match &a.screen {
        Some(s) if s.progress.verification_sampled > 0 => {
            let p = &s.progress;
            check(
                "Human verification sample of automated decisions",
                if p.systematic_error_warning { Fail } else { Pass },
                format!(
                    "{} sampled, {} pending, overturn rate {:.3}",
                    p.verification_sampled, p.verification_pending, p.overturn_rate
                ),
            )
        }
        Some(_) => check("Human verification sample of automated decisions", Missing, "no sample drawn"),
        None => check("Human verification sample of automated decisions", Missing, "no run report"),
    });
    items.push(match &a.baseline {
        Some(b) => check(
            "Classical baseline comparison",
            Pass,
            format!("{} classifiers on {} held-out studies", b.report.classifiers.len(), b.report.test_ids.len()),
        ),
        None => check("Classical baseline comparison", Missing, "no baseline report"),
    });
    items.push(check(
        "Data contamination risk discussed",
        Manual,
        "not machine-checkable",
    ));
    items
}

fn f(x: f64) -> String {
    format!("{x:.4}")
}

/// Renders the consolidated report. Output depends only on the artifacts.
pub fn render_markdown(a: &Artifacts) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Screening report\n");
    let _ = writeln!(md, "Engine version {ENGINE_VERSION}.\n");

    if let Some(s) = &a.screen {
        let r = &s.run;
        let p = &s.progress;
        let _ = writeln!(md, "## Screening run\n");
        let _ = writeln!(
            md,
            "Corpus `{}`; models {}; variants {}; {} rounds; {} criteria.\n",
            r.corpus,
            r.models.join(", "),
            r.variants.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "),
            r.rounds,
            r.criteria
        );
        let _ = writeln!(
            md,
            "Traces: {} of {} present ({} fresh, {} reused); {} parse failures; {} provider failures; {} skipped study/variant pairs.\n",
            r.traces_present,
            r.expected_traces,
            r.fresh_traces,
            r.reused_traces,
            r.parse_failures.len(),
            r.provider_failures.len(),
            r.skipped.len()
        );
        let _ = writeln!(
            md,
            "Operational configuration: model `{}`, variant {}, rule `{}`.\n",
            s.operational.model_id, s.operational.variant, s.operational.rule
        );
        let _ = writeln!(md, "| outcome | count |\n|---|---|");
        let _ = writeln!(md, "| auto include | {} |", p.auto_include);
        let _ = writeln!(md, "| auto exclude | {} |", p.auto_exclude);
        let _ = writeln!(md, "| conflict | {} ({} pending) |", p.conflicts, p.conflicts_pending);
        let _ = writeln!(md, "| verification sampled | {} ({} overturned) |\n", p.verification_sampled, p.overturned);
        let _ = writeln!(
            md,
            "Automation rate {}; conflict rate {}; overturn rate {}.\n",
            f(p.automation_rate),
            f(p.conflict_rate),
            f(p.overturn_rate)
        );
        if p.systematic_error_warning {
            let _ = writeln!(
                md,
                "**Warning: verification overturn rate {} exceeds {}; automated decisions may be systematically wrong.**\n",
                f(p.overturn_rate),
                f(p.overturn_threshold)
            );
        }
        for n in &s.notes {
            let _ = writeln!(md, "- {n}");
        }
        if !s.notes.is_empty() {
            md.push('\n');
        }
    }

    if let Some(s) = &a.stats {
        let _ = writeln!(md, "## Accuracy and agreement\n");
        let _ = writeln!(md, "Trivial all-excluded baseline: {}.\n", f(s.trivial_baseline));
        let _ = writeln!(
            md,
            "| model | variant | studies | accuracy mean | accuracy std | F1 mean | F1 std | include/exclude/conflict |\n|---|---|---|---|---|---|---|---|"
        );
        for u in &s.units {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} | {}/{}/{} |",
                u.model_id,
                u.variant,
                u.studies,
                f(u.accuracy.mean),
                f(u.accuracy.std),
                f(u.f1.mean),
                f(u.f1.std),
                u.outcomes.auto_include,
                u.outcomes.auto_exclude,
                u.outcomes.conflict
            );
        }
        let _ = writeln!(md, "\n| model | variant | criterion | AC2 | pa | pe | missing |\n|---|---|---|---|---|---|---|");
        for u in &s.units {
            for (c, g) in &u.agreement {
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} | {} | {} | {} |",
                    u.model_id,
                    u.variant,
                    c + 1,
                    f(g.ac2),
                    f(g.percent_agreement_weighted),
                    f(g.chance_agreement),
                    g.n_missing
                );
            }
        }
        md.push('\n');
    }

    let pooled = a
        .ablation
        .as_ref()
        .map(|x| &x.report.pooled)
        .or_else(|| a.meta.as_ref().map(|m| &m.pooled));
    if let Some(pooled) = pooled {
        let _ = writeln!(md, "## Metadata ablation\n");
        let _ = writeln!(
            md,
            "Contrasts against variant A in percentage points; DerSimonian-Laird random effects.\n"
        );
        let _ = writeln!(
            md,
            "| contrast | k | estimate | 95% CI | 95% PI | tau2 | I2 | verdict |\n|---|---|---|---|---|---|---|---|"
        );
        for (tag, p) in pooled {
            let pi = match (p.prediction_lower, p.prediction_upper) {
                (Some(l), Some(u)) => format!("[{:.2}, {:.2}]", l, u),
                _ => "n/a".into(),
            };
            let _ = writeln!(
                md,
                "| {tag} vs A | {} | {:.2} | [{:.2}, {:.2}] | {pi} | {:.3} | {:.1}% | {} |",
                p.k, p.estimate, p.ci_lower, p.ci_upper, p.tau2, p.i2, p.verdict
            );
        }
        let _ = writeln!(md, "\nForest-plot data: `forest.csv`.\n");
    }

    if let Some(b) = &a.baseline {
        let r = &b.report;
        let _ = writeln!(md, "## Classical baselines\n");
        let _ = writeln!(
            md,
            "{} training and {} held-out studies; trivial baseline {}.\n",
            r.train_ids.len(),
            r.test_ids.len(),
            f(r.trivial_baseline.accuracy_all_excluded)
        );
        let _ = writeln!(md, "| system | n | accuracy | 95% CI | F1 | degenerate | beats baseline |\n|---|---|---|---|---|---|---|");
        for h in r.classifiers.iter().chain(&r.llm) {
            let _ = writeln!(
                md,
                "| {} | {} | {} | [{}, {}] | {} | {} | {} |",
                h.name,
                h.n,
                f(h.metrics.accuracy),
                f(h.accuracy_ci.lower),
                f(h.accuracy_ci.upper),
                f(h.metrics.f1),
                h.degenerate,
                h.beats_baseline
            );
        }
        for w in &r.warnings {
            let _ = writeln!(md, "\n- {w}");
        }
        md.push('\n');
    }

    let _ = writeln!(md, "## Reporting checklist\n");
    for c in checklist(a) {
        let _ = writeln!(md, "- {} {} ({})", c.status.mark(), c.item, c.evidence);
    }
    md
}
