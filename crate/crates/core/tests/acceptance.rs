//! Acceptance criteria, one PASS/FAIL line each. Run with
//! `cargo test --test acceptance`.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::{asi_oracle, heads_of, random_rows, rng, scope_oracle, student, tensor};
use rand::Rng;
use scopenet::contrast::{asi_loss, cross_graph_loss, cross_scope_loss};
use scopenet::gradsuite::run_gradcheck;
use scopenet::graphs::{sem_adjacency, syn_adjacency};
use scopenet::harness::metrics::{masc_metrics, span_prf, MatchMode, SpanPrediction};
use scopenet::harness::{gen_synthetic, random_tree, SynthSpec};
use scopenet::ingest::{AnnotatedSample, Polarity};
use scopenet::model::jmasa::eval_jmasa;
use scopenet::model::train::{predict_polarities, predict_spans, train};
use scopenet::model::{Model, Task, TrainConfig, Vocab};
use scopenet::pretrain::{build_items, pretrain, PretrainModel};
use scopenet::scope::{compute_scope, Scope};
use scopenet::tensor::Tape;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn corpus(seed: u64, sentences: usize, distractor: f64, two_aspect: f64) -> Vec<AnnotatedSample> {
    gen_synthetic(&SynthSpec {
        distractor_rate: distractor,
        two_aspect_rate: two_aspect,
        ..SynthSpec::new(seed, sentences, 100)
    })
    .unwrap()
    .samples
}

fn acceptance_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 0.02,
        epochs: 50,
        seed,
        ..TrainConfig::default()
    }
}

fn scope_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2024);
    let mut targets = 0;
    for _ in 0..1000 {
        let n = r.gen_range(1..=12);
        let tree = random_tree(&mut r, n);
        let heads = heads_of(&tree);
        for t in 1..=n {
            let sc = compute_scope(&tree, t, t).map_err(|e| e.to_string())?;
            if (sc.start, sc.end, sc.anchor) != scope_oracle(&heads, t, t) {
                return Err(format!("mismatch on {heads:?}, target {t}"));
            }
            targets += 1;
        }
    }
    let s = student();
    let sc = compute_scope(&s.tree, 3, 3).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(
        (sc.start, sc.end) == (1, 5) && elapsed < Duration::from_secs(10),
        format!(
            "{targets} targets agree, student scope [{}, {}], {elapsed:.2?}",
            sc.start, sc.end
        ),
    )
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let report = run_gradcheck(0, false).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = report
        .components
        .iter()
        .map(|c| c.max_error)
        .fold(0.0, f64::max);
    let failed: Vec<&str> = report
        .components
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.component)
        .collect();
    ensure(
        failed.is_empty() && worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "{} components, max relative error {worst:.2e}, failed {failed:?}, {elapsed:.2?}",
            report.components.len()
        ),
    )
}

fn adjacency_invariants() -> Outcome {
    let mut r = rng(3);
    let mut worst_row = 0.0f64;
    for _ in 0..500 {
        let (s, d) = (r.gen_range(1..=9), r.gen_range(1..=8));
        let tape = Tape::new();
        let a = sem_adjacency(
            tape.leaf(tensor(&random_rows(&mut r, s, d))),
            tape.leaf(tensor(&random_rows(&mut r, d, d))),
            tape.leaf(tensor(&random_rows(&mut r, d, d))),
        )
        .map_err(|e| e.to_string())?
        .value();
        for i in 0..s {
            worst_row = worst_row.max((a.row(i).iter().sum::<f64>() - 1.0).abs());
        }
    }
    for _ in 0..500 {
        let n = r.gen_range(1..=12);
        let a = syn_adjacency(&random_tree(&mut r, n), false);
        let v = |i: usize, j: usize| a.data()[i * n + j];
        let mut off = 0;
        for i in 0..n {
            if v(i, i) != 1.0 {
                return Err("diagonal entry is not 1".into());
            }
            for j in 0..n {
                if v(i, j) != v(j, i) {
                    return Err("syntactic adjacency is not symmetric".into());
                }
                if i != j && v(i, j) == 1.0 {
                    off += 1;
                }
            }
        }
        if off != 2 * (n - 1) {
            return Err(format!("{off} off-diagonal ones for n = {n}"));
        }
    }
    ensure(
        worst_row < 1e-8,
        format!("worst semantic row-sum error {worst_row:.1e}"),
    )
}

fn loss_identities() -> Outcome {
    let samples = corpus(2, 20, 0.0, 0.5);
    let mut worst_lambda = 0.0f64;
    for task in [Task::Mate, Task::Masc] {
        let m = Model::new(task, TrainConfig::default(), Model::vocab_for(&samples))
            .map_err(|e| e.to_string())?;
        let tape = Tape::new();
        let bound = m.params.bind(&tape);
        for s in &samples {
            let Some(base) = m.sample_loss(&bound, s, 0.0).map_err(|e| e.to_string())? else {
                continue;
            };
            for lambda in [0.2, 1.0, 3.5] {
                let l = m
                    .sample_loss(&bound, s, lambda)
                    .map_err(|e| e.to_string())?
                    .unwrap();
                worst_lambda = worst_lambda
                    .max((l.total.item() - base.total.item() - lambda * l.asi.item()).abs());
            }
        }
    }

    let pre = corpus(11, 30, 0.0, 0.5);
    let items = build_items(&pre, 4).map_err(|e| e.to_string())?;
    let vocab = Vocab::build(
        items
            .iter()
            .flat_map(|it| it.aoe.positive.text.iter().chain(&it.aoe.positive.scene))
            .map(String::as_str),
    );
    let model = PretrainModel::new(
        TrainConfig::default(),
        vocab,
        items[0].itm.positive.image.len(),
    )
    .map_err(|e| e.to_string())?;
    let mut worst_sum = 0.0f64;
    for item in &items {
        let tape = Tape::new();
        let l = model
            .item_loss(&model.params.bind(&tape), item, None)
            .map_err(|e| e.to_string())?;
        let parts = l.q.item() + l.aoe.item() + l.itm.item() + l.assc.item();
        worst_sum = worst_sum.max((l.total.item() - parts).abs());
    }

    let mut worst_closed = 0.0f64;
    for (s, start, end, anchor) in [(6, 1, 5, 2), (9, 3, 9, 9), (4, 1, 4, 1)] {
        let tape = Tape::new();
        let v = tape.leaf(tensor(&vec![vec![0.3, -1.2, 0.5]; s]));
        let sc = Scope {
            target_start: anchor,
            target_end: anchor,
            anchor,
            start,
            end,
        };
        let k = (end - start) as f64;
        let ln_s = (s as f64).ln();
        let within = cross_scope_loss(v, &[sc], 0.1)
            .map_err(|e| e.to_string())?
            .item();
        let across = cross_graph_loss(v, v, &[sc], 0.1)
            .map_err(|e| e.to_string())?
            .item();
        worst_closed = worst_closed
            .max((within - k * ln_s).abs())
            .max((across - k * (ln_s - 2f64.ln())).abs());
    }
    ensure(
        worst_lambda < 1e-12 && worst_sum < 1e-12 && worst_closed < 1e-9,
        format!(
            "lambda linearity {worst_lambda:.1e}, pretraining sum {worst_sum:.1e}, closed forms {worst_closed:.1e}"
        ),
    )
}

fn contrast_oracle() -> Outcome {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let s = r.gen_range(2..=10);
        let d = r.gen_range(1..=8);
        let tree = random_tree(&mut r, s);
        let scopes: Vec<Scope> = (1..=s)
            .filter(|_| r.gen_bool(0.3))
            .map(|t| compute_scope(&tree, t, t).unwrap())
            .collect();
        let tau = r.gen_range(0.05..1.0);
        let (x, y) = (random_rows(&mut r, s, d), random_rows(&mut r, s, d));
        let triples: Vec<_> = scopes
            .iter()
            .map(|sc| (sc.anchor, sc.start, sc.end))
            .collect();
        let tape = Tape::new();
        let got = asi_loss(tape.leaf(tensor(&x)), tape.leaf(tensor(&y)), &scopes, tau)
            .map_err(|e| e.to_string())?
            .total
            .item();
        worst = worst.max((got - asi_oracle(&x, &y, &triples, tau)).abs());
    }
    ensure(
        worst < 1e-10,
        format!("worst deviation {worst:.1e} over 200 instances"),
    )
}

fn synthetic_extraction() -> Outcome {
    let start = Instant::now();
    let samples = corpus(42, 500, 0.3, 0.0);
    let out = train(Task::Mate, &samples, &acceptance_config(0)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let f1 = out.trace.last().unwrap().eval.headline();
    ensure(
        f1 >= 0.95 && elapsed < Duration::from_secs(300),
        format!("dev micro-F1 {f1:.4} after 50 epochs, {elapsed:.2?}"),
    )
}

fn scope_necessity() -> Outcome {
    let samples = corpus(42, 500, 0.0, 1.0);
    let full = train(Task::Masc, &samples, &acceptance_config(0)).map_err(|e| e.to_string())?;
    let acc = full.trace.last().unwrap().eval.headline();
    let mut ablated = Vec::new();
    for seed in 0..5 {
        let config = TrainConfig {
            ablate_scope: true,
            ..acceptance_config(seed)
        };
        let out = train(Task::Masc, &samples, &config).map_err(|e| e.to_string())?;
        ablated.push(out.trace.last().unwrap().eval.headline());
    }
    let mean = ablated.iter().sum::<f64>() / ablated.len() as f64;
    ensure(
        acc >= 0.90 && mean <= 0.60,
        format!("full accuracy {acc:.4}, ablated mean {mean:.4} over seeds {ablated:?}"),
    )
}

fn pretraining_objectives() -> Outcome {
    let samples = corpus(42, 200, 0.0, 1.0);
    let out = pretrain(&samples, &acceptance_config(0)).map_err(|e| e.to_string())?;
    let r = &out.report;
    ensure(
        r.aoe_acc >= 0.95 && r.itm_acc >= 0.95 && r.assc_acc >= 0.90,
        format!(
            "{} pairs per objective, held-out AOE {:.4}, ITM {:.4}, ASSC {:.4}",
            out.items.len(),
            r.aoe_acc,
            r.itm_acc,
            r.assc_acc
        ),
    )
}

fn joint_composition() -> Outcome {
    let samples = corpus(21, 150, 0.3, 0.5);
    let config = TrainConfig {
        epochs: 5,
        ..acceptance_config(0)
    };
    let mate = train(Task::Mate, &samples, &config)
        .map_err(|e| e.to_string())?
        .model;
    let masc = train(Task::Masc, &samples, &config)
        .map_err(|e| e.to_string())?
        .model;
    let fixtures = &samples[..50];
    let (mut gold, mut pred) = (Vec::new(), Vec::new());
    for s in fixtures {
        let spans = predict_spans(&mate, s).map_err(|e| e.to_string())?;
        let pols = predict_polarities(&masc, s, &spans).map_err(|e| e.to_string())?;
        pred.push(SpanPrediction::with_polarities(
            s.sample_id.clone(),
            spans.into_iter().zip(pols).collect(),
        ));
        gold.push(SpanPrediction::with_polarities(
            s.sample_id.clone(),
            s.aspects
                .iter()
                .map(|a| ((a.start, a.end), a.polarity))
                .collect(),
        ));
    }
    let manual = span_prf(&gold, &pred, MatchMode::SpanAndPolarity).map_err(|e| e.to_string())?;
    let got = eval_jmasa(&mate, &masc, fixtures).map_err(|e| e.to_string())?;

    use Polarity::*;
    let m = masc_metrics(&[Pos, Pos], &[Pos, Neg]).map_err(|e| e.to_string())?;
    let g = vec![SpanPrediction::with_polarities(
        "a",
        vec![((1, 1), Pos), ((3, 4), Neg)],
    )];
    let p = vec![SpanPrediction::with_polarities(
        "a",
        vec![((1, 1), Pos), ((3, 4), Pos), ((6, 6), Neu)],
    )];
    let spans = span_prf(&g, &p, MatchMode::Span).map_err(|e| e.to_string())?;
    let pairs = span_prf(&g, &p, MatchMode::SpanAndPolarity).map_err(|e| e.to_string())?;
    let empty = span_prf(
        &g,
        &[SpanPrediction::spans_only("a", vec![])],
        MatchMode::Span,
    )
    .map_err(|e| e.to_string())?;
    let examples_hold = m.acc == 0.5
        && (m.macro_f1 - 2.0 / 9.0).abs() < 1e-15
        && (spans.precision, spans.recall) == (2.0 / 3.0, 1.0)
        && (pairs.precision, pairs.recall) == (1.0 / 3.0, 0.5)
        && (pairs.f1 - 0.4).abs() < 1e-15
        && (empty.precision, empty.recall, empty.f1) == (0.0, 0.0, 0.0);
    ensure(
        got == manual && examples_hold,
        format!(
            "joint F1 {:.4} equals manual {:.4}; documented examples hold: {examples_hold}",
            got.f1, manual.f1
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_scopenet"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(out.stdout)
    } else {
        Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn command_outputs(root: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let spec = root.join("spec.json");
    fs::write(
        &spec,
        r#"{"seed":9,"sentences":80,"vocab_size":100,"distractor_rate":0.2,"two_aspect_rate":0.5}"#,
    )
    .map_err(|e| e.to_string())?;
    let config = root.join("config.json");
    fs::write(&config, r#"{"epochs":3,"lr":0.02,"seed":5}"#).map_err(|e| e.to_string())?;
    let corpus = root.join("corpus");
    let mut outputs = vec![(
        "gen-synthetic".to_string(),
        run_cli(&["gen-synthetic", "--spec", &s(&spec), "--out", &s(&corpus)])?,
    )];
    for f in ["corpus.conllu", "annotations.jsonl", "spec-echo.json"] {
        outputs.push((
            f.to_string(),
            fs::read(corpus.join(f)).map_err(|e| e.to_string())?,
        ));
    }
    outputs.push((
        "parse-scopes".into(),
        run_cli(&[
            "parse-scopes",
            "--conllu",
            &s(&corpus.join("corpus.conllu")),
        ])?,
    ));
    for cmd in ["train-mate", "train-masc"] {
        let out = root.join(cmd);
        let stdout = run_cli(&[
            cmd,
            "--config",
            &s(&config),
            "--corpus",
            &s(&corpus),
            "--out",
            &s(&out),
        ])?;
        outputs.push((cmd.to_string(), stdout));
        for f in ["model.json", "metrics.jsonl"] {
            outputs.push((
                format!("{cmd}/{f}"),
                fs::read(out.join(f)).map_err(|e| e.to_string())?,
            ));
        }
    }
    outputs.push((
        "eval-jmasa".into(),
        run_cli(&[
            "eval-jmasa",
            "--mate",
            &s(&root.join("train-mate/model.json")),
            "--masc",
            &s(&root.join("train-masc/model.json")),
            "--corpus",
            &s(&corpus),
        ])?,
    ));
    outputs.push((
        "pretrain".into(),
        run_cli(&[
            "pretrain",
            "--config",
            &s(&config),
            "--corpus",
            &s(&corpus),
            "--dump-pairs",
        ])?,
    ));
    outputs.push(("gradcheck".into(), run_cli(&["gradcheck", "--seed", "3"])?));
    Ok(outputs)
}

fn determinism() -> Outcome {
    let (a, b) = (
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    );
    let first = command_outputs(a.path())?;
    let second = command_outputs(b.path())?;
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    ensure(
        differing.is_empty(),
        format!("{} outputs compared, differing {differing:?}", first.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("scope oracle equivalence", scope_oracle_equivalence),
        ("gradient suite", gradient_suite),
        ("adjacency invariants", adjacency_invariants),
        ("loss identities", loss_identities),
        ("contrast oracle equivalence", contrast_oracle),
        ("synthetic extraction learning", synthetic_extraction),
        ("scope necessity", scope_necessity),
        ("pretraining objectives", pretraining_objectives),
        ("joint extraction and classification", joint_composition),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        match check() {
            Ok(detail) => println!(
                "PASS {:>2} {name}: {detail} [{:.1?}]",
                i + 1,
                start.elapsed()
            ),
            Err(detail) => {
                failures += 1;
                println!(
                    "FAIL {:>2} {name}: {detail} [{:.1?}]",
                    i + 1,
                    start.elapsed()
                );
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
