//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mixverify_core::backend::{MockBackend, ScriptedTextModel};
use mixverify_core::curation::{
    build_rewrite_prompt, build_score_prompt, load_records, run_pipeline, select_and_filter, CotSource,
    CurationConfig, CurationRecord, SourceKind, REWRITE_TEMPLATE, SCORE_TEMPLATE,
};
use mixverify_core::eval::{alpha_sweep, load_benchmark, run_eval, AlphaGrid, EvalConfig, Strategy};
use mixverify_core::gatemixer::{gate_mix, GateMixerParams};
use mixverify_core::objectives::{creg_loss, SimilarityMatrix, SimilarityMode};
use mixverify_core::selfverify::{confidence, self_verify, Branch, GenerationTrace, PromptMode, ScoredResponse};
use mixverify_core::tensor::Tensor;
use mixverify_core::trainer::{flatten, run_stage1, stage1_gradcheck, task_for, TrainConfig};

type Outcome = Result<String, String>;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        ensure(cfg.connector.d == 8 && cfg.batch_size == 4, || "default dims changed".into())?;
        let task = task_for(&cfg).map_err(|e| e.to_string())?;
        let params = GateMixerParams::init(&cfg.connector, seed).map_err(|e| e.to_string())?;
        let batch = task.batch(seed, 1 << 48, cfg.batch_size).map_err(|e| e.to_string())?;
        let r = stage1_gradcheck(&task, &batch, &params, &cfg).map_err(|e| e.to_string())?;
        worst = worst.max(r.max_rel_err);
    }
    let took = start.elapsed();
    ensure(worst <= 1e-4, || format!("max rel err {worst:.3e} > 1e-4"))?;
    ensure(took < Duration::from_secs(30), || format!("took {took:?}"))?;
    Ok(format!("max rel err {worst:.3e} over 10 seeds in {:.2}s", took.as_secs_f64()))
}

fn gate_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut entries = 0usize;
    for draw in 0..1000 {
        let n = rng.random_range(1..6);
        let d = rng.random_range(1..9);
        let h_v = random_matrix(&mut rng, n, d, 10.0);
        let h_c = random_matrix(&mut rng, n, d, 10.0);
        let w_g = random_matrix(&mut rng, d, 2 * d, 4.0);
        let b_g = Tensor::vector((0..d).map(|_| rng.random_range(-30.0..30.0)).collect()).unwrap();
        let (alpha, h) = gate_mix(&h_v, &h_c, &w_g, &b_g).map_err(|e| e.to_string())?;
        ensure(alpha.data().iter().all(|&a| a > 0.0 && a < 1.0), || format!("draw {draw}: alpha outside (0,1)"))?;
        for ((&x, &v), &c) in h.data().iter().zip(h_v.data()).zip(h_c.data()) {
            ensure(v.min(c) <= x && x <= v.max(c), || format!("draw {draw}: {x} outside [{v}, {c}]"))?;
        }
        entries += h.numel();
    }
    let h_v = random_matrix(&mut rng, 9, 8, 5.0);
    let h_c = random_matrix(&mut rng, 9, 8, 5.0);
    let (alpha, h) = gate_mix(&h_v, &h_c, &Tensor::zeros(&[8, 16]), &Tensor::zeros(&[8])).map_err(|e| e.to_string())?;
    ensure(alpha.data().iter().all(|&a| a == 0.5), || "zero gate alpha != 0.5".into())?;
    let mid = h_v.add(&h_c).unwrap().affine(0.5, 0.0).unwrap();
    ensure(h.data() == mid.data(), || "zero gate is not the exact midpoint".into())?;
    Ok(format!("1000 draws, {entries} entries bounded; zero gate is the exact midpoint"))
}

fn creg_oracle() -> Outcome {
    let sim = |b: usize, data: Vec<f64>| SimilarityMatrix {
        s: Tensor::matrix(b, b, data).unwrap(),
        mode: SimilarityMode::ExpCosine,
        tau: 1.0,
    };
    let one = creg_loss(&sim(1, vec![2.5])).map_err(|e| e.to_string())?;
    ensure(one.abs() <= 1e-12, || format!("b=1 loss {one}"))?;
    let e = std::f64::consts::E;
    let two = creg_loss(&sim(2, vec![e, 1.0, 1.0, e])).map_err(|e| e.to_string())?;
    let want = (1.0 + (-1.0f64).exp()).ln();
    ensure((two - want).abs() <= 1e-9, || format!("b=2 loss {two} != {want}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let b = rng.random_range(2..8);
        let data: Vec<f64> = (0..b * b).map(|_| rng.random_range(0.01..5.0)).collect();
        let mut perm: Vec<usize> = (0..b).collect();
        for i in (1..b).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted = (0..b * b).map(|k| data[perm[k / b] * b + perm[k % b]]).collect();
        let a = creg_loss(&sim(b, data)).map_err(|e| e.to_string())?;
        let p = creg_loss(&sim(b, permuted)).map_err(|e| e.to_string())?;
        worst = worst.max((a - p).abs());
    }
    ensure(worst <= 1e-12, || format!("permutation changed loss by {worst:e}"))?;
    Ok(format!("b=1 {one:e}, b=2 {two:.12}, permutation diff {worst:.1e}"))
}

fn confidence_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for p in [1.0, 0.99, 0.9, 0.75, 0.5, 0.3, 0.1, 0.01, 1e-4] {
        for len in [1, 2, 3, 7, 64, 1024] {
            let c = confidence(&vec![f64::ln(p); len]).map_err(|e| e.to_string())?;
            worst = worst.max((c - p).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("uniform sequences off by {worst:e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..2000 {
        let len = rng.random_range(1..50);
        let lp: Vec<f64> = (0..len).map(|_| rng.random_range(-6.0..0.0)).collect();
        let mut lower = lp.clone();
        lower[rng.random_range(0..len)] -= rng.random_range(1e-3..3.0);
        let (a, b) = (confidence(&lp).unwrap(), confidence(&lower).unwrap());
        ensure(b < a, || format!("trial {trial}: {b} !< {a}"))?;
    }
    Ok(format!("uniform error {worst:.1e}; 2000 decrease trials strict"))
}

fn response(answer: &str, s: f64, c: f64, mode: PromptMode) -> ScoredResponse {
    ScoredResponse {
        trace: GenerationTrace {
            text: answer.into(),
            token_logprobs: vec![c.max(1e-300).ln()],
            img_rep: vec![],
            txt_rep: vec![],
            prompt_mode: mode,
        },
        answer: answer.into(),
        s,
        c,
        sc: 0.0,
        alpha: 0.0,
    }
}

/// Literal transcription of the decision rule.
fn reference_rule(a_direct: &str, s_d: f64, c_d: f64, a_cot: &str, s_c: f64, c_c: f64, alpha: f64) -> String {
    if a_direct == a_cot {
        return a_cot.to_string();
    }
    let sc_direct = (1.0 - alpha) * s_d + alpha * c_d;
    let sc_cot = (1.0 - alpha) * s_c + alpha * c_c;
    if sc_cot >= sc_direct {
        a_cot.to_string()
    } else {
        a_direct.to_string()
    }
}

fn verify_equivalence() -> Outcome {
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut cells = 0usize;
    let mut mismatches = 0usize;
    for &alpha in &grid {
        for &s_d in &grid {
            for &c_d in &grid {
                for &s_c in &grid {
                    for &c_c in &grid {
                        let d = response("A", s_d, c_d, PromptMode::Direct);
                        let c = response("B", s_c, c_c, PromptMode::Cot);
                        let got = self_verify(&d, &c, alpha).map_err(|e| e.to_string())?;
                        if got.final_answer != reference_rule("A", s_d, c_d, "B", s_c, c_c, alpha) {
                            mismatches += 1;
                        }
                        cells += 1;
                    }
                }
            }
        }
    }
    for (direct, cot) in [((0.9, 0.9), (0.1, 0.1)), ((0.1, 0.1), (0.9, 0.9))] {
        let d = response("C", direct.0, direct.1, PromptMode::Direct);
        let c = response("C", cot.0, cot.1, PromptMode::Cot);
        let got = self_verify(&d, &c, 0.7).map_err(|e| e.to_string())?;
        let want = reference_rule("C", direct.0, direct.1, "C", cot.0, cot.1, 0.7);
        if got.final_answer != want || got.branch != Branch::CotByAgreement {
            mismatches += 1;
        }
        cells += 1;
    }
    ensure(mismatches == 0, || format!("{mismatches} mismatches over {cells} cells"))?;
    Ok(format!("{cells} cells, 0 mismatches"))
}

fn stage1_training() -> Outcome {
    let cfg = TrainConfig::default();
    ensure(cfg.steps == 300 && cfg.seed == 0, || "default config changed".into())?;
    let start = Instant::now();
    let run = run_stage1(&cfg).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let r = &run.report;
    ensure(r.final_loss <= 0.5 * r.initial_loss, || {
        format!("loss {:.4} -> {:.4} ({:.1}%)", r.initial_loss, r.final_loss, 100.0 * r.reduction())
    })?;
    let fresh = task_for(&cfg).map_err(|e| e.to_string())?;
    for ((name, a), (_, b)) in run.task.frozen_tensors().iter().zip(fresh.frozen_tensors()) {
        let same = a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same, || format!("frozen {name} changed"))?;
    }
    let init = GateMixerParams::init(&cfg.connector, cfg.seed).map_err(|e| e.to_string())?;
    ensure(flatten(&init) != flatten(&run.params), || "connector did not move".into())?;
    let again = run_stage1(&cfg).map_err(|e| e.to_string())?;
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure(bits(&r.loss_curve) == bits(&again.report.loss_curve), || "loss curve differs on rerun".into())?;
    ensure(bits(&flatten(&run.params)) == bits(&flatten(&again.params)), || "params differ on rerun".into())?;
    ensure(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    Ok(format!(
        "loss {:.4} -> {:.4} ({:.1}% reduction), frozen maps bit-identical, rerun bit-identical, {:.2}s",
        r.initial_loss,
        r.final_loss,
        100.0 * r.reduction(),
        took.as_secs_f64()
    ))
}

fn fixture(name: &str) -> PathBuf {
    root().join("fixtures").join(name)
}

fn easy_hard() -> Outcome {
    let bench = load_benchmark(&fixture("easy_hard_benchmark.jsonl")).map_err(|e| e.to_string())?;
    ensure(bench.instances.len() == 4, || format!("{} instances", bench.instances.len()))?;
    let backend = MockBackend::from_file(&fixture("easy_hard_mock.json")).map_err(|e| e.to_string())?;
    let acc = |strategy| {
        run_eval(&backend, &bench.instances, &EvalConfig { strategy, ..EvalConfig::default() }, None)
            .map(|r| r.accuracy)
            .map_err(|e| e.to_string())
    };
    let (d, c, s) = (acc(Strategy::Direct)?, acc(Strategy::Cot)?, acc(Strategy::Sv)?);
    ensure((d, c, s) == (0.5, 0.5, 1.0), || format!("direct {d} cot {c} sv {s}"))?;
    Ok(format!("direct {d} cot {c} sv {s}"))
}

fn alpha_sweep_criterion() -> Outcome {
    let grid = AlphaGrid::default();
    let points = grid.points().map_err(|e| e.to_string())?;
    ensure(points.len() == 11, || format!("{} grid points", points.len()))?;
    let bench = load_benchmark(&fixture("alpha_optimum_benchmark.jsonl")).map_err(|e| e.to_string())?;
    let backend = MockBackend::from_file(&fixture("alpha_optimum_mock.json")).map_err(|e| e.to_string())?;
    let report = alpha_sweep(&backend, &bench.instances, &grid, &EvalConfig::default(), None).map_err(|e| e.to_string())?;
    ensure(report.points.len() == 11, || format!("{} sweep points", report.points.len()))?;
    ensure(report.best_alpha == 0.7, || format!("argmax at {}", report.best_alpha))?;
    Ok(format!("11 points, argmax alpha {} (accuracy {:.4})", report.best_alpha, report.best_accuracy))
}

/// Literal fragments of a `{slot}` template, in order.
fn literal_fragments(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push(&rest[..open]);
        let close = rest[open..].find('}').map(|c| open + c + 1).unwrap_or(rest.len());
        rest = &rest[close..];
    }
    out.push(rest);
    out.into_iter().filter(|f| !f.trim().is_empty()).collect()
}

fn contains_in_order(text: &str, fragments: &[&str]) -> bool {
    let mut at = 0;
    for f in fragments {
        match text[at..].find(f) {
            Some(i) => at += i + f.len(),
            None => return false,
        }
    }
    true
}

fn curation() -> Outcome {
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let mut checked = 0usize;
    for &raw in &grid {
        for &rw in &grid {
            for manual in [true, false] {
                let rec = CurationRecord {
                    id: "g".into(),
                    image_ref: "img".into(),
                    question: "q?".into(),
                    options: vec![],
                    raw_cot: "raw".into(),
                    rewritten_cot: manual.then(|| "rewritten".into()),
                    raw_score: Some(raw),
                    rewritten_score: manual.then_some(rw),
                    source_kind: if manual { SourceKind::Manual } else { SourceKind::AiGenerated },
                    split: None,
                    image_description: None,
                };
                let (want_src, want_score) = if manual && rw >= raw {
                    (CotSource::Rewritten, rw)
                } else {
                    (CotSource::Raw, raw)
                };
                let got = select_and_filter(&rec, 0.6).map_err(|e| e.to_string())?;
                match got {
                    Some(k) => ensure(want_score >= 0.6 && k.chosen == want_src && k.overall_score == want_score, || {
                        format!("raw {raw} rw {rw} manual {manual}: kept {:?}", k.chosen)
                    })?,
                    None => ensure(want_score < 0.6, || format!("raw {raw} rw {rw} manual {manual}: dropped"))?,
                }
                checked += 1;
            }
        }
    }

    let (records, rejected) = load_records(&fixture("curation_records.jsonl")).map_err(|e| e.to_string())?;
    let judge = ScriptedTextModel::load(&fixture("judge_script.json")).map_err(|e| e.to_string())?;
    let out = run_pipeline(&records, &judge, &CurationConfig::default()).map_err(|e| e.to_string())?;
    let kept: Vec<&str> = out.instances.iter().map(|i| i.id.as_str()).collect();
    ensure(kept == ["m-keep", "m-tie", "ai-edge"], || format!("kept {kept:?}"))?;
    ensure(rejected.len() == 1, || format!("rejected {rejected:?}"))?;
    let tie = &out.instances[1];
    ensure(tie.chosen == CotSource::Rewritten, || "tie did not go to the rewritten CoT".into())?;

    let golden = root().join("crates/core/tests/golden");
    let read = |n: &str| fs::read_to_string(golden.join(n)).map_err(|e| format!("{n}: {e}"));
    let rec: CurationRecord = serde_json::from_str(read("record.json")?.trim()).map_err(|e| e.to_string())?;
    let rewrite = build_rewrite_prompt(&rec).map_err(|e| e.to_string())?;
    let score = build_score_prompt(&rec, &rec.raw_cot).map_err(|e| e.to_string())?;
    let (g_rewrite, g_score) = (read("rewrite_prompt.txt")?, read("score_prompt.txt")?);
    ensure(rewrite == g_rewrite, || "rewrite prompt differs from golden file".into())?;
    ensure(score == g_score, || "score prompt differs from golden file".into())?;
    ensure(contains_in_order(&g_rewrite, &literal_fragments(REWRITE_TEMPLATE)), || {
        "rewrite golden lacks the template text".into()
    })?;
    ensure(contains_in_order(&g_score, &literal_fragments(SCORE_TEMPLATE)), || {
        "score golden lacks the template text".into()
    })?;
    Ok(format!(
        "{checked} score cells match; fixture kept {kept:?}; both prompts byte-match golden files"
    ))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let key = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(key, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn cli_determinism() -> Outcome {
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("gradcheck", vec!["gradcheck", "--seed", "0", "--seeds", "2"]),
        ("train-align", vec!["train-align", "--seed", "0"]),
        (
            "verify",
            vec![
                "verify", "--backend", "mock:fixtures/easy_hard_mock.json", "--image", "img/hard-1.png",
                "--question", "What is shown?", "--option", "A=one", "--option", "B=two",
            ],
        ),
        (
            "eval",
            vec![
                "eval", "--backend", "mock:fixtures/easy_hard_mock.json", "--benchmark",
                "fixtures/easy_hard_benchmark.jsonl", "--strategy", "sv",
            ],
        ),
        (
            "eval-direct",
            vec![
                "eval", "--backend", "mock:fixtures/easy_hard_mock.json", "--benchmark",
                "fixtures/easy_hard_benchmark.jsonl", "--strategy", "direct", "--workers", "3",
            ],
        ),
        (
            "eval-cot",
            vec![
                "eval", "--backend", "mock:fixtures/easy_hard_mock.json", "--benchmark",
                "fixtures/easy_hard_benchmark.jsonl", "--strategy", "cot",
            ],
        ),
        (
            "sweep",
            vec![
                "sweep", "--backend", "mock:fixtures/alpha_optimum_mock.json", "--benchmark",
                "fixtures/alpha_optimum_benchmark.jsonl",
            ],
        ),
        (
            "curate",
            vec!["curate", "--judge", "mock:fixtures/judge_script.json", "--input", "fixtures/curation_records.jsonl"],
        ),
    ];
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = 0usize;
    for (name, args) in &runs {
        let mut snaps = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("{name}-{rep}"));
            let status = Command::new(env!("CARGO_BIN_EXE_mixverify"))
                .args(args)
                .arg("--out")
                .arg(&out)
                .current_dir(root())
                .output()
                .map_err(|e| e.to_string())?;
            ensure(status.status.success(), || {
                format!("{name} failed: {}", String::from_utf8_lossy(&status.stderr))
            })?;
            snaps.push(snapshot(&out));
        }
        ensure(!snaps[0].is_empty(), || format!("{name} wrote nothing"))?;
        ensure(snaps[0] == snaps[1], || {
            let differing: Vec<&String> = snaps[0]
                .iter()
                .filter(|(k, v)| snaps[1].get(*k) != Some(*v))
                .map(|(k, _)| k)
                .collect();
            format!("{name}: differing artifacts {differing:?}")
        })?;
        files += snaps[0].len();
    }
    Ok(format!("{} invocations x2, {files} artifacts byte-identical", runs.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient fidelity", gradient_fidelity),
        ("gate invariants", gate_invariants),
        ("contrastive loss oracle", creg_oracle),
        ("confidence oracle", confidence_oracle),
        ("self-verification equivalence", verify_equivalence),
        ("alignment toy training", stage1_training),
        ("easy/hard mock scenario", easy_hard),
        ("alpha sweep", alpha_sweep_criterion),
        ("curation", curation),
        ("CLI determinism", cli_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let label = format!("criterion {} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        match check() {
            Ok(detail) => println!("{label} ... PASS ({detail})"),
            Err(why) => {
                failed += 1;
                println!("{label} ... FAIL ({why})");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
