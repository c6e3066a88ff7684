//! Acceptance checks, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines appear in order; exits nonzero if any check fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use bughunt_core::bundle_io::load_run_artifacts;
use bughunt_core::diff::{diversity_diff, majority_diff, OutputMatrix};
use bughunt_core::eval::{
    classify_outcome, compute_metrics, repetition_protocol, round_verdicts, select_subsets, GroundTruth, RunConfig,
};
use bughunt_core::sandbox::{Sandbox, SandboxOptions};
use bughunt_core::variants::{filter_by_suite, passes_suite};
use bughunt_core::{
    Category, ElectionStrategy, EvalVerdict, FilterStatus, GeneratedInput, MetricsReport, PassFail, ProgramVariant,
    Provenance, SourceProgram, SuiteTestCase, TaskBundle, Validity, VariantOrigin,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Check = Result<String, String>;
type NamedCheck = (&'static str, Box<dyn Fn() -> Check>);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($msg)+)),
        }
    };
}

const TOL: f64 = 1e-12;

fn demo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

fn bughunt(args: &[&str]) -> Result<(PathBuf, Duration), String> {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_bughunt"))
        .args(args)
        .env("BUGHUNT_LOG", "warn")
        .output()
        .map_err(|e| format!("spawn failed: {e}"))?;
    let elapsed = start.elapsed();
    if !out.status.success() {
        return Err(format!(
            "bughunt {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    let path = String::from_utf8_lossy(&out.stdout).trim().to_owned();
    Ok((PathBuf::from(path), elapsed))
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn named(outs: &[&str]) -> Vec<(String, String)> {
    outs.iter()
        .enumerate()
        .map(|(i, o)| (format!("v{i}"), (*o).to_owned()))
        .collect()
}

/// Line-by-line reading of the election: gather dissenting outputs in
/// variant order, count each, keep the highest count (smallest string on a
/// tie); nothing gathered means the input is discarded.
fn reference_election(put: &str, outs: &[&str]) -> Option<(String, BTreeMap<String, usize>)> {
    let mut diff = Vec::new();
    for &o in outs {
        if o != put {
            diff.push(o);
        }
    }
    if diff.is_empty() {
        return None;
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for o in &diff {
        *counts.entry((*o).to_owned()).or_default() += 1;
    }
    let mut winner = String::new();
    let mut best = 0;
    for (o, &c) in &counts {
        if c > best {
            best = c;
            winner = o.clone();
        }
    }
    Some((winner, counts))
}

fn ac1_election_equivalence() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let symbols = ["a", "b", "c", "d"];
    let (mut discards, mut elections) = (0, 0);
    for _ in 0..1000 {
        let put = symbols[rng.random_range(0..4)];
        let n = rng.random_range(1..=6);
        let outs: Vec<&str> = (0..n).map(|_| symbols[rng.random_range(0..4)]).collect();
        let got = diversity_diff(put, &named(&outs)).map(|t| (t.winner, t.diff_multiset));
        let want = reference_election(put, &outs);
        ensure!(got == want, "put {put:?}, outs {outs:?}: got {got:?}, want {want:?}");
        if want.is_some() {
            elections += 1;
        } else {
            discards += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure!(discards > 0, "no discard case was sampled");
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "1000 populations, {elections} elections, {discards} discards, {elapsed:.2?}"
    ))
}

fn ac2_inherited_bug() -> Check {
    let outs = named(&["W", "W", "R"]);
    let diversity = diversity_diff("W", &outs).map(|t| t.winner);
    ensure!(diversity.as_deref() == Some("R"), "diversity gave {diversity:?}");
    let majority = majority_diff("W", &outs);
    ensure!(majority.is_none(), "majority gave {majority:?}");
    Ok("diversity elects R, majority yields no failing test".into())
}

fn ac3_filtering_soundness() -> Check {
    let sandbox = Sandbox::new(SandboxOptions::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let program = |glitch: Option<i64>| {
        let src = match glitch {
            None => "n = int(input())\nprint(n * n)\n".to_owned(),
            Some(g) => format!("n = int(input())\nprint(n * n - (1 if n == {g} else 0))\n"),
        };
        SourceProgram::new("python3", src).unwrap()
    };
    let (mut kept_total, mut mutants) = (0, 0);
    for trial in 0..15 {
        let size = rng.random_range(1..=3);
        let suite_inputs: Vec<i64> = (0..size).map(|_| rng.random_range(-9..10)).collect();
        let task = TaskBundle {
            task_id: format!("square-{trial}"),
            specification: "Print the square of n.".into(),
            put: program(None),
            suite: suite_inputs
                .iter()
                .map(|n| SuiteTestCase {
                    input: format!("{n}\n"),
                    expected_output: format!("{}\n", n * n),
                })
                .collect(),
            canonical: None,
            checker: None,
            difficulty: None,
        };
        let glitches: Vec<Option<i64>> = (0..4)
            .map(|i| match i {
                // One mutant always breaks a suite test.
                0 => Some(suite_inputs[rng.random_range(0..suite_inputs.len())]),
                _ if rng.random_bool(0.5) => Some(rng.random_range(-12..13)),
                _ => None,
            })
            .collect();
        let variants: Vec<ProgramVariant> = glitches
            .iter()
            .enumerate()
            .map(|(i, g)| ProgramVariant {
                variant_id: format!("v{i}"),
                source: program(*g),
                origin: VariantOrigin::PutGuided,
                llm_transcript_ref: String::new(),
                filter_status: FilterStatus::Unfiltered,
            })
            .collect();
        let kept = filter_by_suite(&sandbox, &task, &variants);
        for v in &kept {
            ensure!(
                passes_suite(&sandbox, &task, &v.source),
                "retained {} fails the suite",
                v.variant_id
            );
        }
        for (v, g) in variants.iter().zip(&glitches) {
            if g.is_some_and(|g| suite_inputs.contains(&g)) {
                mutants += 1;
                ensure!(
                    kept.iter().all(|k| k.variant_id != v.variant_id),
                    "mutant {} glitching on a suite input was retained",
                    v.variant_id
                );
            }
        }
        kept_total += kept.len();
    }
    Ok(format!(
        "15 suites, {kept_total} variants retained, {mutants} suite-breaking mutants excluded"
    ))
}

fn ac4_demo_end_to_end() -> Check {
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let task = demo().join("corpus/abc042a");
    let cache = demo().join("cache");
    let (report, elapsed) = bughunt(&[
        "run",
        task.to_str().unwrap(),
        "--backend",
        "replay",
        "--cache-dir",
        cache.to_str().unwrap(),
        "--input-pool",
        "100",
        "--out",
        out.path().to_str().unwrap(),
    ])?;
    ensure!(report.is_file(), "no report at {}", report.display());
    let run = load_run_artifacts(out.path()).map_err(|e| e.to_string())?;
    ensure!(run.inputs.len() <= 100, "pool larger than 100");
    let tc_inputs: Vec<&str> = run
        .testcases
        .iter()
        .zip(&run.verdicts)
        .filter(|(_, v)| v.category == Category::Tc && v.is_true_positive())
        .map(|(tc, _)| tc.input.payload.trim())
        .collect();
    ensure!(!tc_inputs.is_empty(), "no Tc test case");
    let sum17 = tc_inputs
        .iter()
        .filter(|p| {
            let mut v: Vec<i64> = p.split_whitespace().filter_map(|t| t.parse().ok()).collect();
            v.sort();
            v.iter().sum::<i64>() == 17 && v != [5, 5, 7]
        })
        .count();
    ensure!(sum17 > 0, "no sum-17 counterexample among {tc_inputs:?}");
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "{} Tc cases ({sum17} sum-17 counterexamples, e.g. \"{}\"), replay only, {elapsed:.2?}",
        tc_inputs.len(),
        tc_inputs[0]
    ))
}

fn input(id: &str) -> GeneratedInput {
    GeneratedInput {
        input_id: id.into(),
        payload: String::new(),
        provenance: Provenance::DirectLlm {
            transcript_ref: String::new(),
        },
        validity: Validity::Valid,
    }
}

fn ac5_repetition_arithmetic() -> Check {
    let plan = select_subsets(10, 4, 252, 0).map_err(|e| e.to_string())?;
    ensure!(
        plan.enumerated && plan.subsets.len() == 210,
        "got {} rounds",
        plan.subsets.len()
    );

    let some = |s: &str| Some(s.to_owned());
    let inputs: Vec<GeneratedInput> = (0..4).map(|i| input(&format!("i{i}"))).collect();
    // Round with v0: Tc, Tc, Tw, silent  -> tp 2, fp 1, fn 1.
    // Round with v1: Tc, pass, pass, silent -> tp 1, fp 0, fn 3.
    let matrix = OutputMatrix {
        inputs: inputs.clone(),
        variant_ids: vec!["v0".into(), "v1".into()],
        put: vec![some("YES"), some("YES"), some("YES"), some("YES")],
        variants: vec![
            vec![some("NO"), some("NO"), some("NO"), some("YES")],
            vec![some("NO"), some("YES"), some("YES"), some("YES")],
        ],
    };
    let truth = GroundTruth {
        canonical: vec![some("NO"), some("NO"), some("YES"), some("NO")],
        validity: vec![Validity::Valid; 4],
    };
    let config = RunConfig {
        k: 1,
        variant_pool: 2,
        ..RunConfig::default()
    };
    let report = repetition_protocol(&matrix, &truth, &config, true).map_err(|e| e.to_string())?;
    ensure!(report.rounds.len() == 2, "{} rounds", report.rounds.len());
    let counts: Vec<_> = report
        .rounds
        .iter()
        .map(|r| (r.metrics.tp, r.metrics.fp, r.metrics.fn_))
        .collect();
    ensure!(counts == [(2, 1, 1), (1, 0, 3)], "round counts {counts:?}");
    // Hand computation: P = (2/3 + 1) / 2 = 5/6, R = (2/3 + 1/4) / 2 = 11/24,
    // F1 = 2PR / (P + R) = 55/93.
    let m = &report.mean;
    ensure!((m.precision - 5.0 / 6.0).abs() < TOL, "precision {}", m.precision);
    ensure!((m.recall - 11.0 / 24.0).abs() < TOL, "recall {}", m.recall);
    ensure!((m.f1 - 55.0 / 93.0).abs() < TOL, "f1 {}", m.f1);
    ensure!(
        (m.tp - 1.5).abs() < TOL && (m.fp - 0.5).abs() < TOL && (m.fn_ - 2.0).abs() < TOL,
        "counts {m:?}"
    );

    let v = |i| round_verdicts(&matrix, &truth, &[i], ElectionStrategy::Diversity);
    ensure!(v(0).len() == 4 && v(1).len() == 4, "every input yields a verdict");
    Ok("C(10,4) = 210 rounds; two-round fixture P=5/6 R=11/24 F1=55/93 within 1e-12".into())
}

fn verdict(category: Category, pass_fail: PassFail) -> EvalVerdict {
    EvalVerdict {
        category,
        pass_fail,
        reason: String::new(),
    }
}

fn close(m: &MetricsReport, p: f64, r: f64, f: f64) -> bool {
    (m.precision - p).abs() < TOL && (m.recall - r).abs() < TOL && (m.f1 - f).abs() < TOL
}

fn ac6_metric_formulas() -> Check {
    use Category::*;
    use PassFail::*;
    let mut vs = vec![verdict(Tc, Failed); 3];
    vs.push(verdict(Tw, Failed));
    let m = compute_metrics(&vs, true);
    ensure!((m.tp, m.fp, m.fn_, m.tn) == (3, 1, 0, 0), "{m:?}");
    ensure!(close(&m, 0.75, 1.0, 6.0 / 7.0), "{m:?}");

    let m = compute_metrics(
        &[
            verdict(Tc, Failed),
            verdict(Terr, Failed),
            verdict(Tr, Passed),
            verdict(Tw, Passed),
        ],
        true,
    );
    ensure!((m.tp, m.fp, m.fn_, m.tn) == (1, 1, 2, 0), "{m:?}");
    ensure!(close(&m, 0.5, 1.0 / 3.0, 0.4), "{m:?}");

    let m = compute_metrics(&[verdict(Tr, Passed), verdict(Tr, Passed)], true);
    ensure!(close(&m, 0.0, 0.0, 0.0) && m.fn_ == 2, "all passed: {m:?}");
    let m = compute_metrics(&[], true);
    ensure!(close(&m, 0.0, 0.0, 0.0), "empty: {m:?}");

    let m = compute_metrics(&[verdict(Tw, Failed), verdict(Tw, Failed)], false);
    ensure!((m.tp, m.fp, m.fn_, m.tn) == (0, 2, 0, 0), "correct PUT: {m:?}");
    let m = compute_metrics(
        &[verdict(Tc, Failed), verdict(Terr, Failed), verdict(Tr, Passed)],
        false,
    );
    ensure!((m.tp, m.fp, m.fn_, m.tn) == (0, 2, 0, 1), "correct PUT mixed: {m:?}");
    ensure!(close(&m, 0.0, 0.0, 0.0), "{m:?}");
    Ok("buggy and correct PUT cases, zero denominators give 0".into())
}

fn evaluate(out: &Path, ks: &str) -> Result<(PathBuf, Duration), String> {
    let corpus = demo().join("corpus");
    let cache = demo().join("cache");
    bughunt(&[
        "evaluate",
        corpus.to_str().unwrap(),
        "--cache-dir",
        cache.to_str().unwrap(),
        "--k",
        ks,
        "--seed",
        "11",
        "--out",
        out.to_str().unwrap(),
    ])
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

const KS: &str = "2,4,10";

fn ac7_determinism(first: &Path) -> Check {
    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    evaluate(first, KS)?;
    evaluate(second.path(), KS)?;
    let (a, b) = (tree(first), tree(second.path()));
    ensure!(a.len() >= 3, "only {} report files", a.len());
    ensure!(
        a.keys().eq(b.keys()),
        "file sets differ: {:?} vs {:?}",
        a.keys().collect::<Vec<_>>(),
        b.keys().collect::<Vec<_>>()
    );
    for (path, bytes) in &a {
        ensure!(b[path] == *bytes, "{} differs", path.display());
    }
    Ok(format!("{} report files byte-identical across two runs", a.len()))
}

fn ac8_taxonomy_totality() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let outs = ["YES", "NO", "7", ""];
    let mut verdicts = Vec::new();
    let mut seen = BTreeMap::new();
    for _ in 0..10_000 {
        let validity = [Validity::Valid, Validity::Invalid, Validity::Unknown][rng.random_range(0..3)];
        let canon = rng.random_bool(0.9).then(|| outs[rng.random_range(0..4)]);
        let oracle = outs[rng.random_range(0..4)];
        let put = outs[rng.random_range(0..4)];
        let v = classify_outcome(validity, canon, oracle, put);
        let matches = [
            validity == Validity::Invalid || canon.is_none(),
            validity != Validity::Invalid && canon.is_some_and(|c| c != oracle),
            validity != Validity::Invalid && canon == Some(oracle) && put != oracle,
            validity != Validity::Invalid && canon == Some(oracle) && put == oracle,
        ];
        let which: Vec<Category> = [Category::Terr, Category::Tw, Category::Tc, Category::Tr]
            .into_iter()
            .zip(matches)
            .filter_map(|(c, m)| m.then_some(c))
            .collect();
        ensure!(
            which == [v.category],
            "case {validity:?} {canon:?} {oracle:?} {put:?} -> {:?}, rules {which:?}",
            v.category
        );
        *seen.entry(v.category).or_insert(0) += 1;
        verdicts.push(v);
    }
    ensure!(seen.len() == 4, "not every category was exercised: {seen:?}");
    for buggy in [true, false] {
        for chunk in verdicts.chunks(97) {
            let m = compute_metrics(chunk, buggy);
            ensure!(
                m.tp + m.fp + m.fn_ + m.tn == chunk.len(),
                "counts {m:?} for {} verdicts",
                chunk.len()
            );
        }
    }
    Ok(format!(
        "10000 fuzzed candidates, categories {seen:?}, counts sum to verdict totals"
    ))
}

fn ac9_ablation_shape(evaluated: &Path) -> Check {
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = demo().join("corpus");
    let cache = demo().join("cache");
    let (path, elapsed) = bughunt(&[
        "ablate",
        corpus.to_str().unwrap(),
        "--cache-dir",
        cache.to_str().unwrap(),
        "--k",
        KS,
        "--seed",
        "11",
        "--out",
        out.path().to_str().unwrap(),
    ])?;
    let ablation = read_json(&path)?;
    let ks: Vec<u64> = KS.split(',').map(|k| k.parse().unwrap()).collect();
    let rows = ablation["rows"].as_array().ok_or("rows missing")?;
    ensure!(rows.len() == 6 * ks.len(), "{} rows", rows.len());
    let mut shape = Vec::new();
    for r in rows {
        shape.push((r["pattern"].as_u64().unwrap_or(0), r["k"].as_u64().unwrap_or(0)));
    }
    let want: Vec<(u64, u64)> = (1..=6).flat_map(|p| ks.iter().map(move |&k| (p, k))).collect();
    ensure!(shape == want, "row layout {shape:?}");
    for t in ablation["tasks"].as_array().ok_or("tasks missing")? {
        ensure!(
            t["rows"].as_array().map_or(0, Vec::len) == 6 * ks.len(),
            "task rows for {}",
            t["task_id"]
        );
    }

    let aggregate = read_json(&evaluated.join("aggregate.json"))?;
    let mean = aggregate["mean"].as_array().ok_or("aggregate mean missing")?;
    for (i, &k) in ks.iter().enumerate() {
        let p6 = rows
            .iter()
            .find(|r| r["pattern"] == 6 && r["k"] == k)
            .ok_or("pattern 6 row missing")?;
        ensure!(
            p6["metrics"] == mean[i]["metrics"] && mean[i]["k"] == k,
            "k={k}: ablation {} vs evaluate {}",
            p6["metrics"],
            mean[i]["metrics"]
        );
    }
    for t in ablation["tasks"].as_array().unwrap() {
        let id = t["task_id"].as_str().unwrap_or_default();
        let per_task = read_json(&evaluated.join(format!("tasks/{id}.json")))?;
        for (i, &k) in ks.iter().enumerate() {
            let p6 = t["rows"]
                .as_array()
                .unwrap()
                .iter()
                .find(|r| r["pattern"] == 6 && r["k"] == k)
                .ok_or("task pattern 6 row missing")?;
            ensure!(
                p6["metrics"] == per_task["reports"][i]["mean"],
                "task {id} k={k} differs from evaluate"
            );
        }
    }
    Ok(format!(
        "6 patterns x {} k values, pattern 6 equals evaluate bit-for-bit, {elapsed:.2?}",
        ks.len()
    ))
}

fn main() {
    let eval_out = tempfile::tempdir().expect("tempdir");
    let eval_dir = eval_out.path().to_path_buf();
    let checks: Vec<NamedCheck> = vec![
        ("election matches reference trace", Box::new(ac1_election_equivalence)),
        ("inherited bug: diversity vs majority", Box::new(ac2_inherited_bug)),
        ("suite filtering soundness", Box::new(ac3_filtering_soundness)),
        ("demo bundle end to end", Box::new(ac4_demo_end_to_end)),
        ("repetition arithmetic", Box::new(ac5_repetition_arithmetic)),
        ("metric formulas", Box::new(ac6_metric_formulas)),
        (
            "evaluate determinism",
            Box::new({
                let d = eval_dir.clone();
                move || ac7_determinism(&d)
            }),
        ),
        ("taxonomy totality", Box::new(ac8_taxonomy_totality)),
        (
            "ablation matrix shape",
            Box::new({
                let d = eval_dir.clone();
                move || ac9_ablation_shape(&d)
            }),
        ),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| (*s).to_owned()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("AC{} PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("AC{} FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
