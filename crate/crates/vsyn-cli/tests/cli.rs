//! End-to-end tests of the `vsyn` binary: exit codes, stdout schemas, and
//! the committed golden transcript of the default-seed pipeline.
//!
//! Every invocation runs inside its own temporary directory with relative
//! `--out` prefixes, so summaries never contain machine-specific paths. To
//! regenerate the golden transcript after an intentional behavior change,
//! run the suite once with `VSYN_BLESS=1` and commit the rewritten file.

use std::path::Path;
use std::process::Command;

use tempfile::TempDir;
use vsyn_core::fusion::{write_confidence_map, write_depth_map, ConfidenceMap, DepthMap};

const BIN: &str = env!("CARGO_BIN_EXE_vsyn");

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run_in(dir: &Path, args: &[&str]) -> Outcome {
    let out = Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary should spawn");
    Outcome {
        code: out.status.code().expect("no exit code"),
        stdout: String::from_utf8(out.stdout).expect("stdout not utf-8"),
        stderr: String::from_utf8(out.stderr).expect("stderr not utf-8"),
    }
}

fn json_line(out: &Outcome) -> serde_json::Value {
    serde_json::from_str(out.stdout.trim()).unwrap_or_else(|e| {
        panic!("stdout is not a JSON line: {e}\nstdout: {:?}", out.stdout);
    })
}

#[test]
fn unknown_flags_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["--definitely-not-a-flag"]);
    assert_eq!(out.code, 1, "stderr: {}", out.stderr);
    assert!(
        out.stderr.starts_with("ERROR(usage):"),
        "stderr: {}",
        out.stderr
    );
}

#[test]
fn bad_flag_values_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("g.txt"), "VERTEX 0 0 0 0 0\n").unwrap();
    let out = run_in(
        dir.path(),
        &["filter-cycles", "g.txt", "--threshold-deg", "0"],
    );
    assert_eq!(out.code, 1, "stderr: {}", out.stderr);
    assert!(out.stderr.starts_with("ERROR(usage):"));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["init-poses", "no-such-graph.txt"]);
    assert_eq!(out.code, 2, "stderr: {}", out.stderr);
    assert!(out.stderr.starts_with("ERROR(io):"), "stderr: {}", out.stderr);
}

#[test]
fn malformed_graph_is_a_format_error() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("bad.txt"), "VERTEX one two\n").unwrap();
    let out = run_in(dir.path(), &["init-poses", "bad.txt"]);
    assert_eq!(out.code, 2, "stderr: {}", out.stderr);
    assert!(
        out.stderr.starts_with("ERROR(format):"),
        "stderr: {}",
        out.stderr
    );
}

#[test]
fn flat_depth_defeats_the_affine_fit() {
    // a constant monocular map leaves scale and shift indistinguishable, so
    // the fit must fail with a numerical error rather than a bogus answer
    let dir = TempDir::new().unwrap();
    let mut mono = DepthMap::new(8, 8);
    let mut mvs = DepthMap::new(8, 8);
    let conf = ConfidenceMap::uniform(8, 8, 1.0).unwrap();
    for y in 0..8 {
        for x in 0..8 {
            mono.set(x, y, 1.0);
            mvs.set(x, y, 2.0 + 0.1 * x as f64);
        }
    }
    std::fs::write(dir.path().join("mono.dfmp"), write_depth_map(&mono)).unwrap();
    std::fs::write(dir.path().join("mvs.dfmp"), write_depth_map(&mvs)).unwrap();
    std::fs::write(dir.path().join("conf.dfmp"), write_confidence_map(&conf)).unwrap();
    let out = run_in(
        dir.path(),
        &["align-scale", "mono.dfmp", "mvs.dfmp", "conf.dfmp"],
    );
    assert_eq!(out.code, 3, "stderr: {}", out.stderr);
    assert!(
        out.stderr.starts_with("ERROR(numerical):"),
        "stderr: {}",
        out.stderr
    );
}

#[test]
fn eval_pose_on_identical_graphs_prints_plain_zeros() {
    let dir = TempDir::new().unwrap();
    let gen = run_in(dir.path(), &["gen-graph", "--out", "g"]);
    assert_eq!(gen.code, 0, "stderr: {}", gen.stderr);
    let out = run_in(dir.path(), &["eval-pose", "g.truth.txt", "g.truth.txt"]);
    assert_eq!(out.code, 0, "stderr: {}", out.stderr);
    assert_eq!(
        out.stdout.trim(),
        r#"{"mean_deg":0,"median_deg":0,"max_deg":0}"#
    );
}

#[test]
fn noise_free_average_converges_to_zero_objective() {
    let dir = TempDir::new().unwrap();
    std::fs::write(
        dir.path().join("clean.cfg"),
        "edge_noise_sigma = 0\noutlier_fraction = 0\n",
    )
    .unwrap();
    let gen = run_in(
        dir.path(),
        &["--config", "clean.cfg", "gen-graph", "--out", "g"],
    );
    assert_eq!(gen.code, 0, "stderr: {}", gen.stderr);
    let init = run_in(dir.path(), &["init-poses", "g.graph.txt", "--out", "init"]);
    assert_eq!(init.code, 0, "stderr: {}", init.stderr);
    let avg = run_in(dir.path(), &["average", "init.graph.txt", "--out", "avg"]);
    assert_eq!(avg.code, 0, "stderr: {}", avg.stderr);
    let v = json_line(&avg);
    assert_eq!(v["converged"], serde_json::Value::Bool(true));
    let objective = v["objective"].as_f64().expect("objective");
    assert!(objective < 1e-10, "objective {objective}");
}

#[test]
fn seed_flag_overrides_the_preset() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run_in(dir.path(), &["gen-graph", "--out", "a"]).code, 0);
    assert_eq!(run_in(dir.path(), &["gen-graph", "--out", "b"]).code, 0);
    assert_eq!(
        run_in(dir.path(), &["--seed", "7", "gen-graph", "--out", "c"]).code,
        0
    );
    let a = std::fs::read(dir.path().join("a.graph.txt")).unwrap();
    let b = std::fs::read(dir.path().join("b.graph.txt")).unwrap();
    let c = std::fs::read(dir.path().join("c.graph.txt")).unwrap();
    assert_eq!(a, b, "same seed must reproduce the same graph");
    assert_ne!(a, c, "a different seed must change the graph");
}

#[test]
fn help_lists_the_fusion_defaults() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["fuse-depth", "--help"]);
    assert_eq!(out.code, 0);
    assert!(out.stdout.contains("0.05"), "help: {}", out.stdout);
    assert!(out.stdout.contains("0.66"), "help: {}", out.stdout);
}

#[test]
fn depth_chain_recovers_the_scene() {
    // gen-depth -> align-scale -> fuse-depth -> eval-depth on the default
    // scene; loose thresholds, the tight ones live in the library tests
    let dir = TempDir::new().unwrap();
    let gen = run_in(dir.path(), &["gen-depth", "--out", "d"]);
    assert_eq!(gen.code, 0, "stderr: {}", gen.stderr);
    let fit = run_in(
        dir.path(),
        &[
            "align-scale",
            "d.mono.dfmp",
            "d.mvs.dfmp",
            "d.mvs-conf.dfmp",
        ],
    );
    assert_eq!(fit.code, 0, "stderr: {}", fit.stderr);
    let v = json_line(&fit);
    let scale = v["scale"].as_f64().unwrap();
    assert!((scale - 3.7).abs() < 0.2, "scale {scale}");
    let fuse = run_in(
        dir.path(),
        &[
            "fuse-depth",
            "d.mvs.dfmp",
            "d.mono.dfmp",
            "d.mono-conf.dfmp",
            "--out",
            "f",
        ],
    );
    assert_eq!(fuse.code, 0, "stderr: {}", fuse.stderr);
    let eval = run_in(dir.path(), &["eval-depth", "f.fused.dfmp", "d.truth.dfmp"]);
    assert_eq!(eval.code, 0, "stderr: {}", eval.stderr);
    let e = json_line(&eval);
    let rmse = e["rmse"].as_f64().unwrap();
    assert!(rmse.is_finite() && rmse < 0.5, "rmse {rmse}");
}

#[test]
fn pipeline_matches_the_committed_golden_transcript() {
    let dir = TempDir::new().unwrap();
    let stages: &[&[&str]] = &[
        &["gen-graph", "--out", "pipe"],
        &["init-poses", "pipe.graph.txt", "--out", "init"],
        &["filter-cycles", "init.graph.txt", "--out", "filt"],
        &["average", "filt.graph.txt", "--out", "avg"],
        &["refine-mpnn", "avg.graph.txt", "--out", "ref"],
        &["eval-pose", "ref.graph.txt", "pipe.truth.txt"],
    ];
    let mut transcript = String::new();
    for args in stages {
        let out = run_in(dir.path(), args);
        assert_eq!(out.code, 0, "stage {:?} stderr: {}", args, out.stderr);
        transcript.push_str(out.stdout.trim_end());
        transcript.push('\n');
    }
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/pipeline.jsonl");
    if std::env::var_os("VSYN_BLESS").is_some() {
        std::fs::write(&golden_path, &transcript).unwrap();
        return;
    }
    let golden = std::fs::read_to_string(&golden_path).expect("golden transcript missing");
    assert_eq!(
        transcript, golden,
        "pipeline output drifted from the committed transcript"
    );
}
