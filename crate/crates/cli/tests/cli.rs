use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ctfvem::wav::{self, Encoding};
use ctfvem::{prior, simulate, stft, StftConfig, Waveform};

fn ctfvem(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctfvem")).args(args).current_dir(dir).output().unwrap()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = ctfvem(args, dir);
    assert!(out.status.success(), "ctfvem {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn simulate_one(dir: &Path) {
    ok(&["--seed", "5", "simulate", "--out-dir", ".", "--rt60", "0.4", "--drr", "5", "--speech-secs", "1.5"], dir);
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum();
    let den: f64 = b.iter().map(|v| v * v).sum();
    (num / den).sqrt()
}

#[test]
fn zero_iterations_rejected() {
    let dir = tempfile::tempdir().unwrap();
    simulate_one(dir.path());
    let out = ctfvem(
        &["--iters", "0", "dereverb", "case000_reverberant.wav", "--oracle", "case000_reference.wav", "-o", "x.wav"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("max_iters"));
    assert!(!dir.path().join("x.wav").exists());
}

#[test]
fn prior_source_required_and_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    simulate_one(dir.path());
    let d = dir.path();
    assert!(!ctfvem(&["dereverb", "case000_reverberant.wav", "-o", "x.wav"], d).status.success());
    let both = ["dereverb", "case000_reverberant.wav", "--oracle", "a.wav", "--prior", "b.vpri", "-o", "x.wav"];
    assert!(!ctfvem(&both, d).status.success());
}

#[test]
fn mismatched_prior_file_rejected() {
    let dir = tempfile::tempdir().unwrap();
    simulate_one(dir.path());
    let d = dir.path();
    let mag = prior::Magnitudes::new(257, 7, vec![1.0; 257 * 7]).unwrap();
    prior::save_prior_file(d.join("bad.vpri"), &mag).unwrap();
    fs::write(d.join("junk.vpri"), b"not a prior").unwrap();
    for p in ["bad.vpri", "junk.vpri", "missing.vpri"] {
        let out = ctfvem(&["dereverb", "case000_reverberant.wav", "--prior", p, "-o", "x.wav"], d);
        assert!(!out.status.success(), "{p}");
        assert!(!d.join("x.wav").exists());
    }
}

#[test]
fn vpri_prior_runs() {
    let dir = tempfile::tempdir().unwrap();
    simulate_one(dir.path());
    let d = dir.path();
    let cfg = StftConfig::default();
    let observed = wav::read(d.join("case000_reverberant.wav")).unwrap();
    let reference = wav::read(d.join("case000_reference.wav")).unwrap();
    let obs = stft::forward_normalized(&observed, &cfg).unwrap();
    let aligned = reference.resized(cfg.synthesis_len(obs.n_frames())).scaled(1.0 / obs.scale());
    let mag = prior::Magnitudes::from_spectrogram(&stft::forward(&aligned, &cfg).unwrap());
    prior::save_prior_file(d.join("p.vpri"), &mag).unwrap();
    ok(&["--iters", "5", "dereverb", "case000_reverberant.wav", "--prior", "p.vpri", "-o", "y.wav"], d);
    let y = wav::read(d.join("y.wav")).unwrap();
    assert_eq!(y.len(), observed.len());
    assert!(y.samples().iter().all(|v| v.is_finite()));
}

#[test]
fn identity_channel_dereverb_returns_input() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let clean = simulate::pseudo_speech(1.5, 16_000, 11).unwrap().scaled(0.5);
    wav::write(d.join("clean.wav"), &clean, Encoding::Float32).unwrap();
    ok(
        &["--lambda", "0", "--iters", "20", "--skip-bands", "0", "dereverb", "clean.wav", "--oracle", "clean.wav", "-o", "out.wav"],
        d,
    );
    let out = wav::read(d.join("out.wav")).unwrap();
    let want: Vec<f64> = clean.samples().iter().map(|v| *v as f32 as f64).collect();
    let err = rel_l2(out.samples(), &want);
    assert!(err < 1e-3, "relative L2 {err}");
}

#[test]
fn dump_config_round_trips_to_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    simulate_one(dir.path());
    let d = dir.path();
    let run = ["dereverb", "case000_reverberant.wav", "--oracle", "case000_reference.wav"];
    let mut first = vec!["--iters", "7", "--lambda", "0.5", "--ctf-len", "12", "--dump-config", "c.txt"];
    first.extend(run);
    first.extend(["-o", "a.wav"]);
    ok(&first, d);
    let mut second = vec!["--config", "c.txt"];
    second.extend(run);
    second.extend(["-o", "b.wav"]);
    ok(&second, d);
    assert_eq!(fs::read(d.join("a.wav")).unwrap(), fs::read(d.join("b.wav")).unwrap());

    let text = fs::read_to_string(d.join("c.txt")).unwrap();
    assert!(text.contains("iters = 7") && text.contains("ctf_len = 12") && text.contains("lambda = 0.5"));
    let printed = ok(&["--config", "c.txt", "--dump-config", "-", "rt60", "case000_rir.wav"], d);
    assert!(printed.starts_with(&text));
}

#[test]
fn identify_rir_writes_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    simulate_one(dir.path());
    let d = dir.path();
    ok(
        &[
            "--iters", "20", "--manifest", "run.json", "identify-rir", "case000_reverberant.wav", "--oracle",
            "case000_reference.wav", "-o", "rir.wav", "--params", "p.csv", "--trace", "t.csv", "--id", "case000",
        ],
        d,
    );
    let params = fs::read_to_string(d.join("p.csv")).unwrap();
    assert!(params.starts_with("id,rt60,drr,pearson_r,fit_start,fit_end,drr_capped\ncase000,"));
    let trace = fs::read_to_string(d.join("t.csv")).unwrap();
    assert_eq!(trace.lines().filter(|l| l.contains(",sum,")).count(), 21);

    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("run.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "identify-rir");
    assert_eq!(m["config"]["iters"], "20");
    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 3);
    for o in outputs {
        assert!(d.join(o["path"].as_str().unwrap()).exists());
        assert_eq!(o["sha256"].as_str().unwrap().len(), 64);
    }
    let stages: Vec<&str> = m["stages"].as_array().unwrap().iter().map(|s| s["stage"].as_str().unwrap()).collect();
    assert_eq!(stages, ["analysis", "vem", "ctf_to_rir", "acoustics"]);
}

#[test]
fn identify_rir_default_is_300_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let out = ctfvem(
        &["--dump-config", "c.txt", "identify-rir", "missing.wav", "--oracle", "r.wav", "-o", "h.wav", "--params", "p.csv"],
        dir.path(),
    );
    assert!(!out.status.success());
    let text = fs::read_to_string(dir.path().join("c.txt")).unwrap();
    assert!(text.contains("iters = 300"));
}

#[test]
fn simulate_manifest_and_eval_of_perfect_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["--seed", "1", "simulate", "--out-dir", "sim", "--rt60", "0.3,0.8", "--drr", "-5,10", "--speech-secs", "1"], d);
    let mut r = csv::Reader::from_path(d.join("sim/manifest.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let mut est = csv::Writer::from_path(d.join("est.csv")).unwrap();
    est.write_record(["id", "rt60", "drr", "pearson_r", "fit_start", "fit_end", "drr_capped"]).unwrap();
    for row in &rows {
        for name in ["reverberant", "reference", "rir"] {
            assert!(d.join("sim").join(&row[col(name)]).exists());
        }
        let (target, truth): (f64, f64) = (row[col("rt60_target")].parse().unwrap(), row[col("rt60")].parse().unwrap());
        assert!((truth - target).abs() / target < 0.05);
        est.write_record([&row[col("id")], &row[col("rt60")], &row[col("drr")], "", "", "", "false"]).unwrap();
    }
    est.flush().unwrap();
    let report = ok(&["eval", "--truth", "sim/manifest.csv", "--estimates", "est.csv", "--report", "r.csv"], d);
    assert!(report.contains("scored 4 of 4"));
    assert!(report.contains("rt60: mae = 0.0000 s, rmse = 0.0000 s"), "{report}");
    assert!(report.contains("drr:  mae = 0.0000 dB, rmse = 0.0000 dB"), "{report}");
    assert_eq!(fs::read_to_string(d.join("r.csv")).unwrap().lines().count(), 5);

    // Drop one estimate: reported, and the exit status says so.
    let text = fs::read_to_string(d.join("est.csv")).unwrap();
    let fewer: Vec<&str> = text.lines().take(4).collect();
    fs::write(d.join("fewer.csv"), fewer.join("\n") + "\n").unwrap();
    let out = ctfvem(&["eval", "--truth", "sim/manifest.csv", "--estimates", "fewer.csv"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("case003: missing estimate"));
}

#[test]
fn simulate_is_deterministic_in_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = |out: &'static str, seed: &'static str| {
        ["--seed", seed, "simulate", "--out-dir", out, "--rt60", "0.5", "--drr", "0", "--speech-secs", "1"]
    };
    ok(&args("a", "4"), d);
    ok(&args("b", "4"), d);
    ok(&args("c", "5"), d);
    let read = |p: &str| fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/case000_reverberant.wav"), read("b/case000_reverberant.wav"));
    assert_eq!(read("a/manifest.csv"), read("b/manifest.csv"));
    assert_ne!(read("a/case000_reverberant.wav"), read("c/case000_reverberant.wav"));
}

#[test]
fn rt60_and_drr_commands() {
    let dir = tempfile::tempdir().unwrap();
    simulate_one(dir.path());
    let d = dir.path();
    let mut imp = vec![0.0; 2000];
    imp[10] = 1.0;
    wav::write(d.join("imp.wav"), &Waveform::new(imp, 16_000).unwrap(), Encoding::Float32).unwrap();

    let out = ok(&["rt60", "case000_rir.wav", "--csv", "rt.csv"], d);
    let rt: f64 = out.split("rt60 = ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!((rt - 0.4).abs() < 0.02, "{out}");
    assert!(out.contains("pearson_r") && out.contains("fit = "));

    let out = ctfvem(&["rt60", "case000_rir.wav", "imp.wav"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("imp.wav: insufficient decay range"));

    let out = ok(&["drr", "case000_rir.wav", "imp.wav", "--csv", "drr.csv"], d);
    assert!(out.contains("imp.wav: drr = 80.000 dB (capped)"), "{out}");
    let csv = fs::read_to_string(d.join("drr.csv")).unwrap();
    assert!(csv.starts_with("path,drr,direct_index,capped,error\n"));
}

#[test]
fn lsd_eval_of_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    simulate_one(dir.path());
    let out = ok(&["eval", "--enhanced", "case000_reference.wav", "--reference", "case000_reference.wav"], dir.path());
    assert_eq!(out.trim(), "lsd = 0.000 dB");
}

#[test]
fn identity_channel_rir_has_minimal_decay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let clean = simulate::pseudo_speech(2.0, 16_000, 12).unwrap().scaled(0.5);
    wav::write(d.join("clean.wav"), &clean, Encoding::Float32).unwrap();
    ok(
        &["--lambda", "0", "--iters", "30", "identify-rir", "clean.wav", "--oracle", "clean.wav", "-o", "h.wav", "--params", "p.csv"],
        d,
    );
    let mut r = csv::Reader::from_path(d.join("p.csv")).unwrap();
    let row = r.records().next().unwrap().unwrap();
    // Band-limited sweep deconvolution spreads the impulse slightly, so the
    // DRR is high but below the cap.
    let rt60: Option<f64> = row[1].parse().ok();
    let drr: f64 = row[2].parse().unwrap();
    assert!(rt60.is_none_or(|t| t < 0.1), "{rt60:?}");
    assert!(drr > 15.0, "{drr}");
}
