//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use screening_core::classical::protocol::ALL_EXCLUDED;
use screening_core::classical::{
    phase3_protocol, stratified_kfold, ClassifierKind, NaiveBayes, Phase3Options, SparseVector,
};
use screening_core::corpus::{Label, VariantTag};
use screening_core::evaluation::{gwet_ac2, trivial_baseline, WeightScheme};
use screening_core::gateway::{Ledger, MockProvider, TraceIndex};
use screening_core::metaanalysis::{bootstrap_accuracy, classify_sesoi, pool_dl_raw, SesoiVerdict};
use screening_core::orchestrator::ablation::{run_ablation, AblationSpec};
use screening_core::orchestrator::{collect_rounds, run_matrix, screening_decisions, AggregationRule, Outcome, RunSpec};
use screening_core::prompting::{decide, Decision, LikertScore};

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn trivial_baseline_reproduction() -> Check {
    for (excluded, total, expected) in [(77usize, 126usize, 0.6111), (265, 392, 0.6760)] {
        let labels: Vec<Label> = (0..total)
            .map(|i| if i < excluded { Label::Excluded } else { Label::Included })
            .collect();
        let b = trivial_baseline::<f64>(&labels).map_err(|e| e.to_string())?;
        ensure!(
            close(b.accuracy_all_excluded, expected, 5e-4),
            "{excluded}/{total}: {} vs {expected}",
            b.accuracy_all_excluded
        );
    }
    Ok(())
}

fn decision_rule_grid() -> Check {
    let mut cases = 0;
    for a in 1..=7u8 {
        for b in 1..=7u8 {
            let scores = [LikertScore::new(a as i64).unwrap(), LikertScore::new(b as i64).unwrap()];
            let expected = if a >= 5 && b >= 5 { Decision::Include } else { Decision::Exclude };
            let got = decide(&scores, 5).map_err(|e| e.to_string())?;
            ensure!(got == expected, "({a}, {b}) gave {got:?}");
            cases += 1;
        }
    }
    ensure!(cases == 49, "{cases} cases");
    Ok(())
}

fn weight(scheme: WeightScheme, q: usize, a: u8, b: u8) -> f64 {
    let d = (a as f64 - b as f64).abs() / (q as f64 - 1.0);
    match scheme {
        WeightScheme::Identity => (a == b) as u8 as f64,
        WeightScheme::Linear => 1.0 - d,
        WeightScheme::Quadratic => 1.0 - d * d,
    }
}

/// Mean weighted agreement over ordered pairs of distinct raters, chance
/// agreement from the pooled category shares.
fn pairwise_ac2(ratings: &[Vec<u8>], q: usize, scheme: WeightScheme) -> f64 {
    let pa = ratings
        .iter()
        .map(|r| {
            let mut sum = 0.0;
            for i in 0..r.len() {
                for j in 0..r.len() {
                    if i != j {
                        sum += weight(scheme, q, r[i], r[j]);
                    }
                }
            }
            sum / (r.len() * (r.len() - 1)) as f64
        })
        .sum::<f64>()
        / ratings.len() as f64;
    let share = |k: u8| {
        ratings
            .iter()
            .map(|r| r.iter().filter(|&&x| x == k).count() as f64 / r.len() as f64)
            .sum::<f64>()
            / ratings.len() as f64
    };
    let cats: Vec<u8> = (1..=q as u8).collect();
    let total: f64 = cats.iter().flat_map(|&a| cats.iter().map(move |&b| weight(scheme, q, a, b))).sum();
    let concentration: f64 = cats.iter().map(|&k| share(k).powi(2)).sum();
    let pe = total / (q * (q - 1)) as f64 * (1.0 - concentration);
    (pa - pe) / (1.0 - pe)
}

fn ac2_oracle_equivalence() -> Check {
    let fixtures: Vec<(Vec<Vec<u8>>, usize, WeightScheme, Option<f64>)> = vec![
        (vec![vec![1, 7], vec![7, 1]], 7, WeightScheme::Quadratic, Some(-49.0 / 59.0)),
        (vec![vec![1, 1], vec![2, 2], vec![1, 2]], 2, WeightScheme::Identity, Some(1.0 / 3.0)),
        (
            vec![vec![5, 6, 5, 5, 7], vec![2, 2, 3, 2, 2], vec![6, 6, 6, 5, 6], vec![1, 4, 2, 1, 1]],
            7,
            WeightScheme::Quadratic,
            None,
        ),
        (vec![vec![1, 2, 3], vec![3, 3, 3], vec![2, 1, 2], vec![3, 2, 1]], 3, WeightScheme::Linear, None),
    ];
    for (i, (rows, q, scheme, hand)) in fixtures.iter().enumerate() {
        let cells: Vec<Vec<Option<u8>>> = rows.iter().map(|r| r.iter().map(|&x| Some(x)).collect()).collect();
        let got = gwet_ac2::<f64>(&cells, *q, *scheme).map_err(|e| e.to_string())?.ac2;
        let oracle = pairwise_ac2(rows, *q, *scheme);
        ensure!(close(got, oracle, 1e-12), "fixture {i}: {got} vs oracle {oracle}");
        if let Some(h) = hand {
            ensure!(close(got, *h, 1e-12), "fixture {i}: {got} vs hand value {h}");
        }
    }
    let constant = vec![vec![Some(6u8); 5]; 8];
    let r = gwet_ac2::<f64>(&constant, 7, WeightScheme::Quadratic).map_err(|e| e.to_string())?;
    ensure!(r.ac2 == 1.0, "constant ratings gave {}", r.ac2);
    Ok(())
}

fn dl_pooling_oracle() -> Check {
    let err = |e: screening_core::metaanalysis::MetaError| e.to_string();
    let p = pool_dl_raw::<f64>(&[1.0, 3.0, 8.0], &[1.0, 1.0, 4.0], 2.0).map_err(err)?;
    ensure!(close(p.q_stat, 10.0, 1e-10), "Q {}", p.q_stat);
    ensure!(close(p.tau2, 6.0, 1e-10), "tau2 {}", p.tau2);
    ensure!(close(p.estimate, 32.0 / 9.0, 1e-10), "estimate {}", p.estimate);
    ensure!(close(p.se, (70.0f64 / 27.0).sqrt(), 1e-10), "se {}", p.se);
    ensure!(close(p.i2, 80.0, 1e-10), "I2 {}", p.i2);

    let one = pool_dl_raw::<f64>(&[2.5], &[0.25], 2.0).map_err(err)?;
    ensure!(one.estimate == 2.5 && one.se == 0.5 && one.tau2 == 0.0, "k=1: {one:?}");
    ensure!(one.i2 == 0.0 && one.prediction_lower.is_none(), "k=1: {one:?}");
    let two = pool_dl_raw::<f64>(&[1.5, 1.5], &[1.0, 1.0], 2.0).map_err(err)?;
    ensure!(two.estimate == 1.5 && two.tau2 == 0.0 && two.i2 == 0.0, "k=2: {two:?}");
    ensure!(two.q_stat == 0.0 && close(two.se, 0.5f64.sqrt(), 1e-15), "k=2: {two:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..1000 {
        let k = rng.random_range(1..=12);
        let y: Vec<f64> = (0..k).map(|_| rng.random_range(-30.0..30.0)).collect();
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..50.0)).collect();
        let p = pool_dl_raw::<f64>(&y, &v, 2.0).map_err(err)?;
        ensure!(p.tau2 >= 0.0 && p.i2 >= 0.0 && p.i2 <= 100.0, "trial {trial}: tau2 {} I2 {}", p.tau2, p.i2);
        ensure!(p.ci_lower <= p.estimate && p.estimate <= p.ci_upper, "trial {trial}: CI");
    }
    Ok(())
}

fn sesoi_classification() -> Check {
    for est in [0.28, -0.06, -0.99] {
        let v = classify_sesoi(est, est - 0.9, est + 0.9, 2.0);
        ensure!(v == SesoiVerdict::PracticallyEquivalent, "{est}: {v:?}");
    }
    let v = classify_sesoi(-5.55, -9.94, -1.16, 2.0);
    ensure!(v == SesoiVerdict::MeaningfulLoss, "-5.55: {v:?}");
    Ok(())
}

fn bootstrap_calibration() -> Check {
    const CORPORA: u64 = 500;
    // 177.5 of 250: no resampled mean can equal the true value.
    const STUDIES: usize = 250;
    const TRUE_ACCURACY: f64 = 0.71;
    let covered: Result<Vec<bool>, String> = (0..CORPORA)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + c);
            let outcomes: Vec<f64> = (0..STUDIES)
                .map(|_| if rng.random_bool(TRUE_ACCURACY) { 1.0 } else { 0.0 })
                .collect();
            let ci = bootstrap_accuracy(&outcomes, 2000, c, 0.95).map_err(|e| e.to_string())?;
            Ok(ci.lower <= TRUE_ACCURACY && TRUE_ACCURACY <= ci.upper)
        })
        .collect();
    let rate = covered?.iter().filter(|&&c| c).count() as f64 / CORPORA as f64;
    ensure!((0.93..=0.97).contains(&rate), "coverage {rate:.3}");
    println!("      coverage {rate:.3} over {CORPORA} corpora");
    Ok(())
}

async fn end_to_end_mock_run() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("traces.jsonl");
    let corpus = twenty_studies();
    let provider = Arc::new(MockProvider::new(variability_script()));
    let gw = gateway(&[MODEL], provider.clone());
    let spec = RunSpec::new(vec![MODEL.into()], vec![VariantTag::C], 5);
    {
        let ledger = Ledger::open(&path).map_err(|e| e.to_string())?;
        let partial = RunSpec {
            call_budget: Some(37),
            ..spec.clone()
        };
        let r = run_matrix(&gw, &ledger, &corpus, &partial).await.map_err(|e| e.to_string())?;
        ensure!(r.interrupted && r.traces_present == 37, "partial run: {} traces", r.traces_present);
    }
    let ledger = Ledger::open(&path).map_err(|e| e.to_string())?;
    let r = run_matrix(&gw, &ledger, &corpus, &spec).await.map_err(|e| e.to_string())?;
    ensure!(r.complete() && ledger.len() == 200, "{} traces", ledger.len());
    ensure!(provider.calls() == 200, "{} provider calls", provider.calls());
    ensure!(r.fresh_traces == 163 && r.reused_traces == 37, "fresh {} reused {}", r.fresh_traces, r.reused_traces);
    let rounds = collect_rounds(&TraceIndex::from(&ledger), &corpus, MODEL, VariantTag::C, 5, 5);
    let decisions = screening_decisions(&rounds, AggregationRule::Unanimity).map_err(|e| e.to_string())?;
    let conflicts: Vec<&str> = decisions
        .iter()
        .filter(|d| d.outcome == Outcome::Conflict)
        .map(|d| d.study_id.as_str())
        .collect();
    ensure!(conflicts == VARIABLE_STUDIES, "conflicts {conflicts:?}");
    Ok(())
}

async fn variant_e_degradation() -> Check {
    let corpora = ablation_corpora();
    let gw = gateway(&["m1", "m2"], Arc::new(abstract_sensitive(&corpora)));
    let ledger = Ledger::in_memory();
    let spec = AblationSpec {
        models: vec!["m1".into(), "m2".into()],
        replicates: 2000,
        ..AblationSpec::default()
    };
    let report = run_ablation::<f64>(&gw, &ledger, &corpora, &spec).await.map_err(|e| e.to_string())?;
    for tag in [VariantTag::B, VariantTag::C, VariantTag::D] {
        let p = &report.pooled[&tag];
        ensure!(p.verdict == SesoiVerdict::PracticallyEquivalent, "{tag}: {:?} at {:.2}", p.verdict, p.estimate);
    }
    let e = &report.pooled[&VariantTag::E];
    ensure!(e.verdict == SesoiVerdict::MeaningfulLoss, "E: {:?} at {:.2}", e.verdict, e.estimate);
    println!(
        "      E vs A: {:.2} pp [{:.2}, {:.2}] over k = {}",
        e.estimate, e.ci_lower, e.ci_upper, e.k
    );
    Ok(())
}

fn classical_stack_sanity() -> Check {
    let corpus = screening_core::synthetic::separable_corpus(40, 80, 7);
    let opts = Phase3Options {
        replicates: 500,
        ..Phase3Options::default()
    };
    let (report, _) = phase3_protocol::<f64>(&corpus, &opts, &[]).map_err(|e| e.to_string())?;
    let base = report.trivial_baseline.accuracy_all_excluded;
    for kind in ClassifierKind::ALL {
        let r = report.result(&kind.to_string()).ok_or(format!("{kind} missing"))?;
        ensure!(r.metrics.accuracy >= 0.95 && r.metrics.accuracy > base, "{kind}: {}", r.metrics.accuracy);
    }
    let degenerate = report.result(ALL_EXCLUDED).ok_or("degenerate row missing")?;
    ensure!(degenerate.metrics.f1 == 0.0 && degenerate.degenerate, "degenerate: {degenerate:?}");

    let x = [
        SparseVector::from_dense(&[2.0, 1.0]),
        SparseVector::from_dense(&[1.0, 0.0]),
        SparseVector::from_dense(&[0.0, 3.0]),
    ];
    let labels = [Label::Included, Label::Included, Label::Excluded];
    let nb = NaiveBayes::fit(&x, &labels, 1.0).map_err(|e| e.to_string())?;
    let posterior = nb.posterior_included(&SparseVector::from_dense(&[1.0, 1.0]));
    // (2/3)(4/6)(2/6) against (1/3)(1/5)(4/5)
    ensure!(close(posterior, 25.0 / 34.0, 1e-10), "NB posterior {posterior}");
    Ok(())
}

fn stratification_property() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut vectors = 0;
    while vectors < 200 {
        let n = rng.random_range(4..120);
        let k = rng.random_range(2..=10);
        let p = rng.random_range(0.1..0.9);
        let labels: Vec<Label> = (0..n)
            .map(|_| if rng.random_bool(p) { Label::Included } else { Label::Excluded })
            .collect();
        let Ok(folds) = stratified_kfold(&labels, k, vectors) else {
            continue;
        };
        for class in [Label::Included, Label::Excluded] {
            let total = labels.iter().filter(|&&l| l == class).count() as f64;
            for (f, fold) in folds.iter().enumerate() {
                let count = fold.test.iter().filter(|&&i| labels[i] == class).count() as f64;
                let share = total / k as f64;
                ensure!((count - share).abs() <= 1.0, "n={n} k={k} fold {f}: {count} vs {share:.2}");
            }
        }
        vectors += 1;
    }
    Ok(())
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    outcome: Check,
    elapsed: Duration,
}

fn timed(name: &'static str, budget_secs: u64, f: impl FnOnce() -> Check) -> Criterion {
    let start = Instant::now();
    let outcome = f();
    Criterion {
        name,
        budget: Duration::from_secs(budget_secs),
        outcome,
        elapsed: start.elapsed(),
    }
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let results: Vec<Criterion> = vec![
        timed("trivial-baseline reproduction", 1, trivial_baseline_reproduction),
        timed("decision-rule 7x7 grid", 1, decision_rule_grid),
        timed("AC2 oracle equivalence", 1, ac2_oracle_equivalence),
        timed("DL pooling oracle equivalence", 5, dl_pooling_oracle),
        timed("SESOI classification", 1, sesoi_classification),
        timed("bootstrap calibration", 120, bootstrap_calibration),
        timed("end-to-end mock run", 10, || rt.block_on(end_to_end_mock_run())),
        timed("variant-E degradation", 30, || rt.block_on(variant_e_degradation())),
        timed("classical-stack sanity", 60, classical_stack_sanity),
        timed("stratification property", 5, stratification_property),
    ];
    let mut failed = 0;
    for c in &results {
        let over = c.elapsed > c.budget;
        match (&c.outcome, over) {
            (Ok(()), false) => println!("PASS {} ({:.2?})", c.name, c.elapsed),
            (Ok(()), true) => {
                failed += 1;
                println!("FAIL {} ({:.2?} exceeds {:?})", c.name, c.elapsed, c.budget);
            }
            (Err(e), _) => {
                failed += 1;
                println!("FAIL {} ({:.2?}): {e}", c.name, c.elapsed);
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
