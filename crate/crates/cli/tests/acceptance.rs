//! One pass/fail line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach the output.

use std::collections::HashSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use lakejoin_core::autodiff::Mat;
use lakejoin_core::eval::{precision_at_k, recall_at_k, synth_lake, SynthSpec};
use lakejoin_core::search::{run_query, SearchConfig};
use lakejoin_core::verify::{
    direction_config, direction_experiment, gradient_campaign, greedy_campaign, hin_campaign, growth_campaign,
    ratio_campaign, reduction_campaign,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20240601;

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    blocking: bool,
    detail: String,
}

fn within(start: Instant, limit: Duration) -> bool {
    start.elapsed() < limit
}

fn greedy_and_degeneracy() -> (Line, Line) {
    let start = Instant::now();
    let g = greedy_campaign(500, SEED);
    let fast = within(start, Duration::from_secs(30));
    (
        Line {
            id: 1,
            name: "greedy step gain and attachment-tree guarantee",
            passed: g.gain_violations == 0 && g.tree_violations == 0 && fast,
            blocking: true,
            detail: format!(
                "{} graphs, {} steps, {} + {} violations, worst slacks {:.2e} / {:.2e}, {:.2}s",
                g.instances, g.steps, g.gain_violations, g.tree_violations, g.worst_gain_slack, g.worst_tree_slack, g.seconds
            ),
        },
        Line {
            id: 5,
            name: "lambda = 0 equals top-K by relevance",
            passed: g.lambda_zero_mismatches == 0,
            blocking: true,
            detail: format!("{} mismatches over {} graphs", g.lambda_zero_mismatches, g.instances),
        },
    )
}

fn spanning_tree_growth() -> Line {
    let start = Instant::now();
    let l = growth_campaign(1000, SEED + 1);
    Line {
        id: 2,
        name: "spanning tree growth lower bound",
        passed: l.violations == 0 && within(start, Duration::from_secs(10)),
        blocking: true,
        detail: format!("{} samples, {} violations, worst slack {:.2e}, {:.2}s", l.samples, l.violations, l.worst_slack, l.seconds),
    }
}

fn knapsack_reduction() -> Line {
    let start = Instant::now();
    let r = reduction_campaign(100, SEED + 2, 20_000_000);
    Line {
        id: 3,
        name: "knapsack reduction optimum equals DP optimum",
        passed: r.mismatches == 0 && within(start, Duration::from_secs(60)),
        blocking: true,
        detail: format!(
            "{} instances, {} mismatches, largest graph {} candidates, {:.2}s",
            r.instances, r.mismatches, r.largest_graph, r.seconds
        ),
    }
}

fn greedy_ratio() -> Line {
    let q = ratio_campaign(200, SEED + 3);
    if q.below_band > 0 {
        eprintln!("review: {} instances below 60% of the brute-force objective", q.below_band);
    }
    Line {
        id: 4,
        name: "greedy vs brute force (mean >= 90%, band 60%)",
        passed: q.mean_ratio >= 0.9,
        blocking: true,
        detail: format!(
            "{} instances, mean {:.4}, min {:.4}, {} below band (logged), {:.2}s",
            q.instances, q.mean_ratio, q.min_ratio, q.below_band, q.seconds
        ),
    }
}

fn hin_invariants() -> Line {
    let start = Instant::now();
    let h = hin_campaign(30, SEED + 4);
    Line {
        id: 6,
        name: "HIN norm, equivariance, locality, separation",
        passed: h.max_norm_deviation <= 1e-6
            && h.max_permutation_error <= 1e-6
            && h.max_locality_leak < 1e-9
            && h.separation_gap_without_pe == 0.0
            && h.separation_gap_with_pe > 1e-6
            && within(start, Duration::from_secs(60)),
        blocking: true,
        detail: format!(
            "norm {:.1e}, perm {:.1e}, leak {:.1e}, gap without/with PE {:.1e} / {:.1e}, {:.2}s",
            h.max_norm_deviation,
            h.max_permutation_error,
            h.max_locality_leak,
            h.separation_gap_without_pe,
            h.separation_gap_with_pe,
            h.seconds
        ),
    }
}

fn gradient_gate() -> Line {
    let start = Instant::now();
    let f = gradient_campaign(0..10, 1e-5);
    Line {
        id: 7,
        name: "finite-difference gradient gate",
        passed: f.max_rel_error < 1e-3 && within(start, Duration::from_secs(120)),
        blocking: true,
        detail: format!(
            "{} seeds, max rel error {:.3e} at {} (seed {}), {} entries, {:.2}s",
            f.seeds, f.max_rel_error, f.worst_param, f.worst_seed, f.checked, f.seconds
        ),
    }
}

fn direction() -> Line {
    let start = Instant::now();
    let cfg = direction_config();
    let result = direction_experiment(&SynthSpec::default(), &cfg, &[0, 1, 2, 3, 4]);
    match result {
        Ok(d) => Line {
            id: 8,
            name: "synthetic direction test (full >= no_cr >= no_hin)",
            passed: d.ordered() && d.mean_p5_full >= 0.8 && d.columns >= 60 && within(start, Duration::from_secs(900)),
            blocking: true,
            detail: format!(
                "{} columns, d = {}, P@15 {:.4} / {:.4} / {:.4}, P@5(full) {:.4}, {:.1}s",
                d.columns, cfg.hin.dim, d.mean_p15_full, d.mean_p15_no_cr, d.mean_p15_no_hin, d.mean_p5_full, d.seconds
            ),
        },
        Err(e) => Line {
            id: 8,
            name: "synthetic direction test (full >= no_cr >= no_hin)",
            passed: false,
            blocking: true,
            detail: format!("error: {e}"),
        },
    }
}

fn metric_fixtures() -> Line {
    let set = |v: &[usize]| v.iter().copied().collect::<HashSet<usize>>();
    let ranked: Vec<usize> = (0..15).collect();
    // (retrieved, truth, K, P@K, R@K)
    type Fixture = (Vec<usize>, HashSet<usize>, usize, f64, Option<f64>);
    let cases: Vec<Fixture> = vec![
        (ranked.clone(), set(&[0, 4, 9, 20, 21, 22]), 15, 0.2, Some(0.5)),
        (ranked.clone(), set(&[0, 1, 2, 3, 4]), 5, 1.0, Some(1.0)),
        (ranked.clone(), set(&[100, 101]), 15, 0.0, Some(0.0)),
        (ranked.clone(), set(&[]), 15, 0.0, None),
        (vec![3, 1, 2], set(&[1, 2, 3, 4]), 5, 0.6, Some(0.75)),
        (vec![7, 8, 9, 10], set(&[10]), 2, 0.0, Some(0.0)),
        (vec![7, 8, 9, 10], set(&[10]), 4, 0.25, Some(1.0)),
        ((0..25).collect(), set(&[24, 30, 31, 32]), 25, 0.04, Some(0.25)),
        (vec![], set(&[1]), 5, 0.0, Some(0.0)),
        (ranked, set(&[1, 3, 5, 7, 9, 11, 13, 40]), 10, 0.5, Some(0.625)),
    ];
    let mut wrong = Vec::new();
    for (i, (r, t, k, p, rec)) in cases.iter().enumerate() {
        let (gp, gr) = (precision_at_k(r, t, *k), recall_at_k(r, t, *k));
        if gp != *p || gr != *rec {
            wrong.push(format!("case {i}: P {gp} R {gr:?}"));
        }
    }
    Line {
        id: 9,
        name: "P@K and R@K on hand-computed fixtures",
        passed: wrong.is_empty(),
        blocking: true,
        detail: if wrong.is_empty() {
            format!("{} fixtures exact", cases.len())
        } else {
            wrong.join("; ")
        },
    }
}

fn lakejoin(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lakejoin"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

/// `synth`, `train`, `embed` and `query` into `out`; returns every output.
fn pipeline_run(lake: &Path, out: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let (l, o) = (lake.to_str().unwrap(), out.to_str().unwrap());
    lakejoin(&["train", l, "--out", o, "--seed", "3"])?;
    let stdout = lakejoin(&["query", l, "--out", o, "--seed", "3", "--table", "customer_00", "--column", "customer_id", "--k", "15"])?;
    lakejoin(&["embed", l, "--out", o, "--seed", "3"])?;
    let stored = lakejoin(&["query", l, "--out", o, "--seed", "3", "--table", "customer_00", "--column", "customer_id", "--k", "15"])?;
    let mut files = vec![("query (checkpoint)".to_string(), stdout), ("query (store)".to_string(), stored)];
    for f in ["model.ckpt", "loss.csv", "embeddings.bin", "config.toml"] {
        files.push((f.to_string(), std::fs::read(out.join(f)).map_err(|e| e.to_string())?));
    }
    Ok(files)
}

fn determinism() -> Line {
    let run = || -> Result<String, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let lake = dir.path().join("lake");
        lakejoin(&["synth", "--out", lake.to_str().unwrap()])?;
        let a = pipeline_run(&lake, &dir.path().join("a"))?;
        let b = pipeline_run(&lake, &dir.path().join("b"))?;
        let rows = a[0].1.iter().filter(|&&c| c == b'\n').count();
        if rows != 16 {
            return Err(format!("query printed {rows} lines, expected header + 15"));
        }
        let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
        if !differing.is_empty() {
            return Err(format!("differs: {differing:?}"));
        }
        Ok(format!("{} outputs byte-identical across reruns", a.len()))
    };
    let r = run();
    Line {
        id: 10,
        name: "train + query reruns are byte-identical",
        passed: r.is_ok(),
        blocking: true,
        detail: r.unwrap_or_else(|e| e),
    }
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Mat {
    let mut m = Mat::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    m
}

fn median_query_time(n: usize, queries: usize) -> Duration {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + n as u64);
    let emb = unit_rows(&mut rng, n, 64);
    let table_of: Vec<usize> = (0..n).map(|i| i / 5).collect();
    let cfg = SearchConfig {
        b: 50,
        ..SearchConfig::default()
    };
    let _ = run_query(0, &emb, &table_of, &cfg);
    let mut times: Vec<Duration> = (0..queries)
        .map(|i| {
            let t = Instant::now();
            std::hint::black_box(run_query(i * 7 % n, &emb, &table_of, &cfg).expect("query runs"));
            t.elapsed()
        })
        .collect();
    times.sort();
    times[times.len() / 2]
}

fn complexity_smoke() -> Line {
    let (n1, n2) = (20_000, 40_000);
    let t1 = median_query_time(n1, 41);
    let t2 = median_query_time(n2, 41);
    let ratio = t2.as_secs_f64() / t1.as_secs_f64();
    Line {
        id: 11,
        name: "query latency growth at 2N (informational)",
        passed: ratio <= 2.5,
        blocking: false,
        detail: format!(
            "B = 50, d = 64, median {:.3} ms at N = {n1}, {:.3} ms at N = {n2}, ratio {ratio:.2}",
            t1.as_secs_f64() * 1e3,
            t2.as_secs_f64() * 1e3
        ),
    }
}

fn main() {
    // Synthetic lakes must build before anything heavier runs.
    synth_lake(&SynthSpec::default()).expect("default synthetic spec is valid");
    let (c1, c5) = greedy_and_degeneracy();
    let mut lines = vec![
        c1,
        spanning_tree_growth(),
        knapsack_reduction(),
        greedy_ratio(),
        c5,
        hin_invariants(),
        gradient_gate(),
        direction(),
        metric_fixtures(),
        determinism(),
        complexity_smoke(),
    ];
    lines.sort_by_key(|l| l.id);
    println!();
    for l in &lines {
        let status = match (l.passed, l.blocking) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "WARN",
        };
        println!("criterion {:>2} {status} {}: {}", l.id, l.name, l.detail);
    }
    let failed = lines.iter().filter(|l| l.blocking && !l.passed).count();
    println!("\nacceptance: {} of {} blocking criteria passed", lines.iter().filter(|l| l.blocking && l.passed).count(), lines.iter().filter(|l| l.blocking).count());
    if failed > 0 {
        std::process::exit(1);
    }
}
