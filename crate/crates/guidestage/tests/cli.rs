//! End-to-end runs of the `guidestage` binary: exit codes, outputs and
//! determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use guidestage::cli::WeightsFile;
use guidestage::fixtures;
use guidestage::formats::{decode_tensor, encode_pgm, encode_tensor};
use guidestage::manifest::RunManifest;
use guidestage_core::geometry::Mask;
use guidestage_core::Tensor;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_guidestage"));
    c.env_remove("GUIDESTAGE_SEED");
    c
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(c: &mut Command) -> Output {
    c.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn compile_cmd(out: &Path) -> Command {
    let mut c = bin();
    c.arg("compile-guidance")
        .arg("--human")
        .arg(fixture("human.json"))
        .arg("--product-mask")
        .arg(fixture("product_mask.pgm"))
        .arg("--caption")
        .arg(fixture("caption.txt"))
        .arg("--pool")
        .arg(fixture("pool.json"))
        .arg("--out")
        .arg(out);
    c
}

/// A short training config so these tests stay fast.
fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("config.json");
    let body = format!(r#"{{"steps": 3, "clip_frames": 3, "eval_scenes": 1, "sample_steps": 2, "seed": 11{extra}}}"#);
    std::fs::write(&p, body).unwrap();
    p
}

fn train_cmd(config: &Path, steps: Option<usize>, out: &Path) -> Command {
    let mut c = bin();
    c.arg("train-toy").arg("--config").arg(config).arg("--out").arg(out);
    if let Some(s) = steps {
        c.arg("--steps").arg(s.to_string());
    }
    c
}

fn sample_cmd(weights: &Path, guidance: &Path, out: &Path, clips: usize, cfg: Option<f64>) -> Command {
    let mut c = bin();
    c.arg("sample")
        .arg("--weights")
        .arg(weights)
        .arg("--guidance")
        .arg(guidance)
        .arg("--clips")
        .arg(clips.to_string())
        .arg("--out")
        .arg(out);
    if let Some(s) = cfg {
        c.arg("--cfg-scale").arg(s.to_string());
    }
    c
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn compile_fixtures_writes_plan_frames_and_guidance() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&mut compile_cmd(tmp.path()));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let g = decode_tensor(&std::fs::read(tmp.path().join("guidance.gstens")).unwrap()).unwrap();
    assert_eq!(g.shape(), &[8, 4, 64, 64]);
    for k in 0..8 {
        assert!(tmp.path().join(format!("frames/frame_{k:03}.ppm")).is_file());
    }
    let m = manifest(tmp.path());
    assert_eq!(m.inputs.len(), 4);
    assert!(m.outputs.contains_key("plan.json"));
}

#[test]
fn missing_pool_is_a_parse_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = compile_cmd(tmp.path());
    let args: Vec<_> = c.get_args().map(|a| a.to_owned()).collect();
    let mut c2 = bin();
    for a in &args {
        if a.to_str().is_some_and(|s| s.ends_with("pool.json")) {
            c2.arg(tmp.path().join("nope.json"));
        } else {
            c2.arg(a);
        }
    }
    c = c2;
    let o = run(&mut c);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());
}

#[test]
fn sixty_cm_product_has_no_template() {
    let tmp = tempfile::tempdir().unwrap();
    let cap = tmp.path().join("caption.txt");
    std::fs::write(&cap, fixtures::caption_text(60.0)).unwrap();
    let out = tmp.path().join("out");
    let mut c = bin();
    c.args(["compile-guidance", "--human"])
        .arg(fixture("human.json"))
        .arg("--product-mask")
        .arg(fixture("product_mask.pgm"))
        .arg("--caption")
        .arg(&cap)
        .arg("--pool")
        .arg(fixture("pool.json"))
        .arg("--out")
        .arg(&out);
    let o = run(&mut c);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists(), "failed runs leave no output directory");
}

#[test]
fn empty_mask_is_degenerate() {
    let tmp = tempfile::tempdir().unwrap();
    let pgm = tmp.path().join("mask.pgm");
    std::fs::write(&pgm, encode_pgm(&Mask::new(16, 16, vec![false; 256]).unwrap())).unwrap();
    let mut c = bin();
    c.args(["compile-guidance", "--human"])
        .arg(fixture("human.json"))
        .arg("--product-mask")
        .arg(&pgm)
        .arg("--caption")
        .arg(fixture("caption.txt"))
        .arg("--pool")
        .arg(fixture("pool.json"))
        .arg("--out")
        .arg(tmp.path().join("out"));
    assert_eq!(code(&run(&mut c)), 4);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&run(bin().args(["compile-guidance", "--human", "x"]))), 2);
    assert_eq!(code(&run(bin().arg("frobnicate"))), 2);
}

#[test]
fn exploding_training_exits_5() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), r#", "learning_rate": 1e300"#);
    let o = run(&mut train_cmd(&cfg, Some(5), &tmp.path().join("out")));
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn zero_steps_writes_initial_weights_and_empty_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let out = tmp.path().join("out");
    assert_eq!(code(&run(&mut train_cmd(&cfg, Some(0), &out))), 0);
    assert_eq!(std::fs::read_to_string(out.join("loss.csv")).unwrap(), "step,loss\n");
    let wf: WeightsFile = serde_json::from_slice(&std::fs::read(out.join("weights.json")).unwrap()).unwrap();
    let init = guidestage_core::model::ToyDitWeights::init(&wf.config.model.into(), 11).unwrap();
    assert_eq!(wf.to_core().unwrap(), init);
}

#[test]
fn seed_variable_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert_eq!(code(&run(&mut train_cmd(&cfg, None, &a))), 0);
    assert_eq!(code(&run(train_cmd(&cfg, None, &b).env("GUIDESTAGE_SEED", "11"))), 0);
    assert_eq!(code(&run(train_cmd(&cfg, None, &c).env("GUIDESTAGE_SEED", "12"))), 0);
    let loss = |d: &Path| std::fs::read(d.join("loss.csv")).unwrap();
    assert_eq!(loss(&a), loss(&b));
    assert_ne!(loss(&a), loss(&c));
    assert_eq!(manifest(&c).seeds["seed"], 12);
    assert_eq!(code(&run(train_cmd(&cfg, None, &c).env("GUIDESTAGE_SEED", "x"))), 2);
}

struct Trained {
    _tmp: tempfile::TempDir,
    weights: PathBuf,
    guidance: PathBuf,
    root: PathBuf,
}

fn trained() -> Trained {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let cfg = small_config(&root, "");
    let weights = root.join("w");
    let guidance = root.join("g");
    assert_eq!(code(&run(&mut train_cmd(&cfg, None, &weights))), 0);
    assert_eq!(code(&run(&mut compile_cmd(&guidance))), 0);
    Trained {
        _tmp: tmp,
        weights,
        guidance,
        root,
    }
}

fn read_clip(dir: &Path, k: usize) -> Tensor {
    decode_tensor(&std::fs::read(dir.join(format!("clip_{k:02}.gstens"))).unwrap()).unwrap()
}

#[test]
fn chained_clip_files_share_boundaries() {
    let t = trained();
    let out = t.root.join("s");
    let o = run(&mut sample_cmd(&t.weights, &t.guidance, &out, 2, None));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (a, b) = (read_clip(&out, 0), read_clip(&out, 1));
    let n = a.shape()[0];
    let last = a.slice_outer(n - 1, n).unwrap();
    let first = b.slice_outer(0, 1).unwrap();
    assert!(last.data().iter().zip(first.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(out.join("previews/clip_01_frame_002.ppm").is_file());
    assert_eq!(manifest(&out).args["cfg_scale"], serde_json::json!(2.5));
}

#[test]
fn cfg_scale_selects_the_branch() {
    let t = trained();
    let (one, zero) = (t.root.join("one"), t.root.join("zero"));
    assert_eq!(code(&run(&mut sample_cmd(&t.weights, &t.guidance, &one, 1, Some(1.0)))), 0);
    assert_eq!(code(&run(&mut sample_cmd(&t.weights, &t.guidance, &zero, 1, Some(0.0)))), 0);
    assert!(read_clip(&one, 0).max_abs_diff(&read_clip(&zero, 0)) > 1e-6);
}

#[test]
fn unresamplable_guidance_is_a_shape_error() {
    let t = trained();
    let g = t.root.join("bad");
    std::fs::create_dir_all(&g).unwrap();
    std::fs::write(g.join("guidance.gstens"), encode_tensor(&Tensor::zeros(&[2, 4, 60, 60]))).unwrap();
    let o = run(&mut sample_cmd(&t.weights, &g, &t.root.join("s"), 1, None));
    assert_eq!(code(&o), 6, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn selfcheck_passes_and_catches_an_inverted_object_mask() {
    let ok = run(bin().arg("selfcheck"));
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = run(bin().args(["selfcheck", "--inject-fault", "invert-object-mask"]));
    assert_eq!(code(&bad), 1);
    let table = String::from_utf8_lossy(&bad.stdout);
    assert!(table.contains("FAIL  object attention = dense oracle"), "{table}");
    assert!(String::from_utf8_lossy(&bad.stderr).contains("object attention"));
}
