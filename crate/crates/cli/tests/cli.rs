use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deus_core::toy_llama::random_model;
use deus_core::{write_archive, Matrix2D, ModelConfig, TensorArchive};

fn deus(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deus"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

/// Temp dir holding `base.deus` (seed 1, default config) and `t.txt` (64 tokens).
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&deus(&["gen", "-o", "base.deus", "--seed", "1"], dir.path())), 0);
    assert_eq!(code(&deus(&["tokens", "-o", "t.txt", "--seed", "2", "--len", "64"], dir.path())), 0);
    dir
}

fn line<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .trim()
}

#[test]
fn gen_is_byte_identical_for_same_seed() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a.deus", "b.deus"] {
        assert_eq!(code(&deus(&["gen", "-o", out, "--seed", "7"], dir.path())), 0);
    }
    assert_eq!(code(&deus(&["gen", "-o", "c.deus", "--seed", "8"], dir.path())), 0);
    let read = |n: &str| fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.deus"), read("b.deus"));
    assert_ne!(read("a.deus"), read("c.deus"));
}

#[test]
fn gen_rejects_bad_head_geometry_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let o = deus(&["gen", "-o", "x.deus", "--hidden", "64", "--heads", "4", "--head-dim", "8"], dir.path());
    assert_eq!(code(&o), 64);
    assert!(stderr(&o).contains("head_dim"), "{}", stderr(&o));
    assert!(!dir.path().join("x.deus").exists());
}

#[test]
fn opt_deus_expansion_preserves_function() {
    let dir = workspace();
    let p = dir.path();
    let o = deus(
        &["expand", "base.deus", "-o", "big.deus", "--method", "opt-deus", "--strategy", "top", "--ratio", "0.5", "--eps", "0.06"],
        p,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("8 -> 12 layers"));

    let v = deus(&["verify-fp", "base.deus", "big.deus", "--tokens", "t.txt", "--tol", "1e-6"], p);
    assert_eq!(code(&v), 0, "{}", stdout(&v));
    let out = stdout(&v);
    assert_eq!(line(&out, "ppl_base:"), line(&out, "ppl_expanded:"));
    assert!(line(&out, "max_abs_logit_diff:").parse::<f64>().unwrap() <= 1e-6);

    let a = deus(&["ppl", "base.deus", "--tokens", "t.txt"], p);
    let b = deus(&["ppl", "big.deus", "--tokens", "t.txt"], p);
    assert_eq!(stdout(&a), stdout(&b));
    let printed = stdout(&a);
    let (_, decimals) = printed.trim().split_once('.').unwrap();
    assert_eq!(decimals.len(), 4);
}

#[test]
fn plan_sidecar_and_freeze_mask() {
    let dir = workspace();
    let p = dir.path();
    let o = deus(&["expand", "base.deus", "-o", "big.deus", "--trace"], p);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let plan: serde_json::Value = serde_json::from_slice(&fs::read(p.join("big.deus.plan.json")).unwrap()).unwrap();
    assert_eq!(plan["method"], "opt-deus");
    assert_eq!(plan["strategy"], "top");
    assert_eq!(plan["insert_after"], serde_json::json!([4, 5, 6, 7]));
    assert_eq!(plan["trainable"], serde_json::json!([5, 7, 9, 11]));
    assert_eq!(plan["ot"]["epsilon"], 0.06);
    assert_eq!(plan["ot"]["max_iter"], 2000);
    assert_eq!(plan["fusions"].as_array().unwrap().len(), 4);

    let mask: serde_json::Value = serde_json::from_slice(&fs::read(p.join("big.deus.freeze.json")).unwrap()).unwrap();
    assert_eq!(
        mask,
        serde_json::json!({
            "trainable": [5, 7, 9, 11],
            "frozen": [1, 2, 3, 4, 6, 8, 10, 12],
            "convention": "1-based-expanded"
        })
    );
}

#[test]
fn avg_deus_fails_verification() {
    let dir = workspace();
    let p = dir.path();
    assert_eq!(code(&deus(&["expand", "base.deus", "-o", "avg.deus", "--method", "avg-deus"], p)), 0);
    let v = deus(&["verify-fp", "base.deus", "avg.deus", "--tokens", "t.txt"], p);
    assert_eq!(code(&v), 1);
    assert!(line(&stdout(&v), "max_abs_logit_diff:").parse::<f64>().unwrap() > 1e-6);
}

#[test]
fn verify_against_itself_is_exact() {
    let dir = workspace();
    let v = deus(&["verify-fp", "base.deus", "base.deus", "--tokens", "t.txt"], dir.path());
    assert_eq!(code(&v), 0);
    assert_eq!(line(&stdout(&v), "max_abs_logit_diff:"), "0.000000e0");
}

#[test]
fn baselines_and_stub() {
    let dir = workspace();
    let p = dir.path();
    let s = deus(&["expand", "base.deus", "-o", "s.deus", "--method", "solar", "--m", "6"], p);
    assert_eq!(code(&s), 0, "{}", stderr(&s));
    assert!(stdout(&s).contains("8 -> 12 layers"));
    let l = deus(&["expand", "base.deus", "-o", "l.deus", "--method", "llama-pro", "--g", "4", "--m", "2"], p);
    assert_eq!(code(&l), 0, "{}", stderr(&l));
    assert_eq!(code(&deus(&["verify-fp", "base.deus", "l.deus", "--tokens", "t.txt"], p)), 0);

    let lesa = deus(&["expand", "base.deus", "-o", "x.deus", "--method", "lesa"], p);
    assert_eq!(code(&lesa), 3);
    assert!(stderr(&lesa).contains("not implemented"));
    assert!(!p.join("x.deus").exists());
}

#[test]
fn exit_codes() {
    let dir = workspace();
    let p = dir.path();
    // Usage errors.
    assert_eq!(code(&deus(&["expand", "base.deus", "-o", "x.deus", "--method", "solar"], p)), 64);
    assert_eq!(code(&deus(&["expand", "base.deus", "-o", "x.deus", "--method", "solar", "--m", "6", "--strategy", "top"], p)), 64);
    assert_eq!(code(&deus(&["expand", "base.deus", "-o", "x.deus", "--eps", "0"], p)), 64);
    assert_eq!(code(&deus(&["expand", "base.deus", "-o", "x.deus", "--bogus"], p)), 64);
    assert_eq!(code(&deus(&["frobnicate"], p)), 64);
    assert_eq!(code(&deus(&["--help"], p)), 0);
    // Validation happens before reading the base archive.
    assert_eq!(code(&deus(&["expand", "missing.deus", "-o", "x.deus", "--method", "solar"], p)), 64);
    // Format errors.
    fs::write(p.join("junk.deus"), b"not an archive").unwrap();
    assert_eq!(code(&deus(&["inspect", "junk.deus"], p)), 2);
    assert_eq!(code(&deus(&["inspect", "missing.deus"], p)), 2);
    fs::write(p.join("bad.txt"), "1\nfoo\n").unwrap();
    assert_eq!(code(&deus(&["ppl", "base.deus", "--tokens", "bad.txt"], p)), 2);
    fs::write(p.join("big.txt"), "1\n999\n").unwrap();
    assert_eq!(code(&deus(&["ppl", "base.deus", "--tokens", "big.txt"], p)), 2);
    // Plan errors.
    assert_eq!(code(&deus(&["expand", "base.deus", "-o", "x.deus", "--method", "llama-pro", "--g", "3", "--m", "2"], p)), 3);
    assert_eq!(code(&deus(&["expand", "base.deus", "-o", "x.deus", "--ratio", "0.9"], p)), 3);
    // Solver errors.
    assert_eq!(code(&deus(&["expand", "base.deus", "-o", "x.deus", "--raw-eps", "--eps", "5e-324"], p)), 4);
    assert!(!p.join("x.deus").exists());
}

#[test]
fn short_token_file_is_a_usage_error() {
    let dir = workspace();
    let p = dir.path();
    fs::write(p.join("one.txt"), "5\n").unwrap();
    fs::write(p.join("none.txt"), "\n").unwrap();
    assert_eq!(code(&deus(&["ppl", "base.deus", "--tokens", "one.txt"], p)), 64);
    assert_eq!(code(&deus(&["ppl", "base.deus", "--tokens", "none.txt"], p)), 64);
}

fn uniform_archive(path: &PathBuf) {
    let cfg = ModelConfig {
        n_layers: 2,
        hidden: 64,
        n_heads: 4,
        n_kv_heads: 4,
        head_dim: 16,
        d_ff: 172,
        vocab: 256,
        rope_theta: 10000.0,
        rms_eps: 1e-5,
    };
    let base = random_model(&cfg, 3).unwrap();
    let zeros = Matrix2D::zeros(cfg.vocab, cfg.hidden);
    let archive = TensorArchive::from_parts(
        cfg,
        &zeros,
        &base.layers().unwrap(),
        &base.final_norm().unwrap(),
        &zeros,
    )
    .unwrap();
    write_archive(path, &archive).unwrap();
}

#[test]
fn uniform_model_perplexity_is_vocab() {
    let dir = workspace();
    uniform_archive(&dir.path().join("u.deus"));
    let o = deus(&["ppl", "u.deus", "--tokens", "t.txt"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "256.0000");
}

#[test]
fn inspect_flags_zeroed_layers() {
    let dir = workspace();
    let p = dir.path();
    assert_eq!(code(&deus(&["expand", "base.deus", "-o", "big.deus"], p)), 0);
    let big = stdout(&deus(&["inspect", "big.deus"], p));
    let flagged: Vec<&str> = big.lines().filter(|l| l.ends_with("O=0, Down=0")).collect();
    assert_eq!(flagged.len(), 4);
    for i in [5, 7, 9, 11] {
        assert!(big.contains(&format!("layer {i:>3}: O=0, Down=0")), "{big}");
    }
    assert!(big.contains("layers: 12"));

    let base = stdout(&deus(&["inspect", "base.deus"], p));
    assert!(!base.contains("O=0"));
    assert!(base.contains("config: n_layers=8 hidden=64 n_heads=4"));
    assert_eq!(base, stdout(&deus(&["inspect", "base.deus"], p)));
    assert!(base.contains("layers.8.mlp.down"));
}

#[test]
fn expand_is_byte_identical_across_runs() {
    let dir = workspace();
    let p = dir.path();
    for out in ["a.deus", "b.deus"] {
        assert_eq!(code(&deus(&["expand", "base.deus", "-o", out, "--strategy", "tb"], p)), 0);
    }
    let read = |n: &str| fs::read(p.join(n)).unwrap();
    assert_eq!(read("a.deus"), read("b.deus"));
    assert_eq!(read("a.deus.plan.json"), read("b.deus.plan.json"));
}
