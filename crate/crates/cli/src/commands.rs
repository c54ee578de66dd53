use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use ctfvem::acoustics::{self, AcousticParams};
use ctfvem::config::PipelineConfig;
use ctfvem::eval::{self, RirParams};
use ctfvem::pipeline::{self, PriorSource};
use ctfvem::rir::PseudoMeasurement;
use ctfvem::simulate::{self, SynthRirSpec};
use ctfvem::wav::{self, Encoding};
use ctfvem::{prior, stft, vem, Error, Spectrogram, Waveform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::{values_digest, RunManifest};
use crate::PriorArgs;

fn read_wav(path: &Path) -> Result<Waveform> {
    wav::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    wav::write(path, wave, Encoding::Float32).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_prior(args: &PriorArgs, m: &mut RunManifest) -> Result<PriorSource> {
    match (&args.oracle, &args.prior) {
        (Some(path), None) => {
            let clean = read_wav(path)?;
            m.input(path)?;
            Ok(PriorSource::Oracle(clean))
        }
        (None, Some(path)) => {
            let mag = prior::load_prior_file(path).with_context(|| format!("loading prior {}", path.display()))?;
            m.input(path)?;
            Ok(PriorSource::Magnitudes(mag))
        }
        _ => bail!("exactly one of --oracle or --prior is required"),
    }
}

fn spec_digest(s: &Spectrogram) -> String {
    values_digest(s.data().iter().flat_map(|c| [c.re, c.im]))
}

fn vem_digest(o: &vem::VemOutput) -> String {
    let spec = o.spectrum.data().iter().flat_map(|c| [c.re, c.im]);
    let taps = o.filter.taps().iter().flat_map(|c| [c.re, c.im]);
    values_digest(spec.chain(taps).chain(o.noise.delta.iter().copied()))
}

fn prepare(
    cfg: &PipelineConfig,
    input: &Path,
    prior_args: &PriorArgs,
    m: &mut RunManifest,
) -> Result<(Waveform, pipeline::Prepared)> {
    let x = read_wav(input)?;
    m.input(input)?;
    let source = load_prior(prior_args, m)?;
    let prepared = m.stage(
        "analysis",
        || pipeline::prepare(&x, &source, cfg).context("preparing observation and prior"),
        |p| spec_digest(&p.observed),
    )?;
    Ok((x, prepared))
}

pub fn dereverb(
    cfg: &PipelineConfig,
    input: &Path,
    output: &Path,
    prior_args: &PriorArgs,
    trace: Option<&Path>,
    filter: Option<&Path>,
    manifest: Option<&Path>,
) -> Result<()> {
    let mut m = RunManifest::new("dereverb", cfg);
    let (x, p) = prepare(cfg, input, prior_args, &mut m)?;
    let out = m.stage("vem", || Ok(vem::run(&p.observed, &p.alpha, &cfg.vem)?), vem_digest)?;
    if out.singular_solves > 0 {
        log::warn!("{} singular M-step solves kept the previous filter", out.singular_solves);
    }
    let enhanced = m.stage(
        "synthesis",
        || Ok(stft::inverse(&out.spectrum)?.resized(x.len())),
        |w| values_digest(w.samples().iter().copied()),
    )?;
    write_wav(output, &enhanced)?;
    m.output(output)?;
    if let Some(path) = trace {
        out.trace.write_csv(create(path)?)?;
        m.output(path)?;
    }
    if let Some(path) = filter {
        out.filter.write_csv(create(path)?)?;
        m.output(path)?;
    }
    log::info!("wrote {} ({} samples)", output.display(), enhanced.len());
    m.finish(manifest)
}

/// One row of an identify-rir params CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsRow {
    pub id: String,
    /// Empty when the decay range is too short to fit.
    pub rt60: Option<f64>,
    pub drr: f64,
    pub pearson_r: Option<f64>,
    pub fit_start: Option<usize>,
    pub fit_end: Option<usize>,
    pub drr_capped: bool,
}

impl ParamsRow {
    fn new(id: String, p: &AcousticParams) -> Self {
        Self {
            id,
            rt60: p.rt60.as_ref().map(|r| r.rt60),
            drr: p.drr.drr_db,
            pearson_r: p.rt60.as_ref().map(|r| r.pearson_r),
            fit_start: p.rt60.as_ref().map(|r| r.fit_start),
            fit_end: p.rt60.as_ref().map(|r| r.fit_end),
            drr_capped: p.drr.capped,
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn identify_rir(
    cfg: &PipelineConfig,
    input: &Path,
    output: &Path,
    params: &Path,
    id: Option<&str>,
    prior_args: &PriorArgs,
    trace: Option<&Path>,
    manifest: Option<&Path>,
) -> Result<()> {
    let mut m = RunManifest::new("identify-rir", cfg);
    let (_, p) = prepare(cfg, input, prior_args, &mut m)?;
    let out = m.stage("vem", || Ok(vem::run(&p.observed, &p.alpha, &cfg.vem)?), vem_digest)?;
    let rir = m.stage(
        "ctf_to_rir",
        || Ok(PseudoMeasurement::new(p.observed.config(), &cfg.rir)?.rir(&out.filter)?),
        |r| values_digest(r.waveform.samples().iter().copied()),
    )?;
    let acoustic = m.stage(
        "acoustics",
        || acoustics::analyze(&rir.waveform, &cfg.rt60, &cfg.drr).context("estimating RT60/DRR"),
        |a| values_digest([a.rt60.as_ref().map_or(f64::NAN, |r| r.rt60), a.drr.drr_db]),
    )?;
    write_wav(output, &rir.waveform)?;
    m.output(output)?;
    let id = match id {
        Some(id) => id.to_string(),
        None => input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    let row = ParamsRow::new(id, &acoustic);
    let mut w = csv::Writer::from_writer(create(params)?);
    w.serialize(&row)?;
    w.flush()?;
    m.output(params)?;
    if let Some(path) = trace {
        out.trace.write_csv(create(path)?)?;
        m.output(path)?;
    }
    match row.rt60 {
        Some(t) => println!("{}: rt60 = {t:.3} s, drr = {:.2} dB", row.id, row.drr),
        None => println!("{}: rt60 = insufficient decay range, drr = {:.2} dB", row.id, row.drr),
    }
    m.finish(manifest)
}

#[derive(Debug, Serialize)]
struct Rt60Row {
    path: PathBuf,
    rt60: Option<f64>,
    pearson_r: Option<f64>,
    fit_start: Option<usize>,
    fit_end: Option<usize>,
    error: Option<String>,
}

pub fn rt60(cfg: &PipelineConfig, rirs: &[PathBuf], csv_out: Option<&Path>) -> Result<ExitCode> {
    let rows: Vec<Rt60Row> = rirs
        .par_iter()
        .map(|path| {
            let est = read_wav(path).and_then(|h| Ok(acoustics::estimate_rt60(&h, &cfg.rt60)?));
            match est {
                Ok(e) => Rt60Row {
                    path: path.clone(),
                    rt60: Some(e.rt60),
                    pearson_r: Some(e.pearson_r),
                    fit_start: Some(e.fit_start),
                    fit_end: Some(e.fit_end),
                    error: None,
                },
                Err(e) => Rt60Row {
                    path: path.clone(),
                    rt60: None,
                    pearson_r: None,
                    fit_start: None,
                    fit_end: None,
                    error: Some(format!("{e:#}")),
                },
            }
        })
        .collect();
    for r in &rows {
        match (&r.error, r.rt60, r.pearson_r, r.fit_start, r.fit_end) {
            (None, Some(t), Some(pr), Some(a), Some(b)) => {
                println!("{}: rt60 = {t:.4} s, pearson_r = {pr:.4}, fit = {a}..{b}", r.path.display())
            }
            (err, ..) => println!("{}: {}", r.path.display(), err.as_deref().unwrap_or("failed")),
        }
    }
    finish_rows(&rows, csv_out, rows.iter().any(|r| r.error.is_some()))
}

#[derive(Debug, Serialize)]
struct DrrRow {
    path: PathBuf,
    drr: Option<f64>,
    direct_index: Option<usize>,
    capped: Option<bool>,
    error: Option<String>,
}

pub fn drr(cfg: &PipelineConfig, rirs: &[PathBuf], csv_out: Option<&Path>) -> Result<ExitCode> {
    let rows: Vec<DrrRow> = rirs
        .par_iter()
        .map(|path| match read_wav(path).and_then(|h| Ok(acoustics::estimate_drr(&h, &cfg.drr)?)) {
            Ok(e) => DrrRow {
                path: path.clone(),
                drr: Some(e.drr_db),
                direct_index: Some(e.direct_index),
                capped: Some(e.capped),
                error: None,
            },
            Err(e) => DrrRow {
                path: path.clone(),
                drr: None,
                direct_index: None,
                capped: None,
                error: Some(format!("{e:#}")),
            },
        })
        .collect();
    for r in &rows {
        match (&r.error, r.drr, r.direct_index, r.capped) {
            (None, Some(d), Some(i), Some(c)) => {
                let cap = if c { " (capped)" } else { "" };
                println!("{}: drr = {d:.3} dB{cap}, direct_index = {i}", r.path.display())
            }
            (err, ..) => println!("{}: {}", r.path.display(), err.as_deref().unwrap_or("failed")),
        }
    }
    finish_rows(&rows, csv_out, rows.iter().any(|r| r.error.is_some()))
}

fn finish_rows<T: Serialize>(rows: &[T], csv_out: Option<&Path>, failed: bool) -> Result<ExitCode> {
    if let Some(path) = csv_out {
        let mut w = csv::Writer::from_writer(create(path)?);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Directory receiving the WAVs and manifest.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Target RT60 values in seconds.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [0.3, 0.5, 0.8, 1.0])]
    pub rt60: Vec<f64>,
    /// Target DRR values in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-5.0, 0.0, 5.0, 10.0])]
    pub drr: Vec<f64>,
    /// Mixture SNR in dB ("inf" for none).
    #[arg(long, default_value_t = 20.0)]
    pub snr: f64,
    #[arg(long, default_value_t = 3.0)]
    pub speech_secs: f64,
    #[arg(long, default_value_t = 1.2)]
    pub rir_secs: f64,
    /// Direct-path position in the RIR, in samples.
    #[arg(long, default_value_t = 0)]
    pub direct_delay: usize,
    /// Utterances per grid cell.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Noise WAV looped to length; white noise when absent.
    #[arg(long)]
    pub noise: Option<PathBuf>,
}

/// One row of a simulate manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseRow {
    pub id: String,
    pub reverberant: String,
    pub reference: String,
    pub rir: String,
    pub seed: u64,
    pub rt60_target: f64,
    pub drr_target: f64,
    pub snr_db: f64,
    /// Estimators applied to the true RIR.
    pub rt60: Option<f64>,
    pub drr: f64,
}

fn case_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn simulate(cfg: &PipelineConfig, args: &SimulateArgs, manifest: Option<&Path>) -> Result<()> {
    if args.rt60.is_empty() || args.drr.is_empty() || args.repeats == 0 {
        bail!("empty simulation grid");
    }
    let mut m = RunManifest::new("simulate", cfg);
    let noise = match &args.noise {
        Some(path) => {
            m.input(path)?;
            Some(read_wav(path)?)
        }
        None => None,
    };
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let fs_hz = wav::SAMPLE_RATE;
    let mut cells = Vec::new();
    for &rt60 in &args.rt60 {
        for &drr in &args.drr {
            for r in 0..args.repeats {
                cells.push((rt60, drr, r));
            }
        }
    }
    let rows: Vec<CaseRow> = cells
        .par_iter()
        .enumerate()
        .map(|(i, &(rt60, drr, _))| -> Result<CaseRow> {
            let seed = case_seed(cfg.seed, i);
            let spec = SynthRirSpec {
                rt60,
                drr_db: drr,
                direct_delay: args.direct_delay,
                length: (args.rir_secs * fs_hz as f64).round() as usize,
                sample_rate: fs_hz,
                seed,
            };
            let clean = simulate::pseudo_speech(args.speech_secs, fs_hz, seed)?;
            let h = simulate::synth_rir(&spec)?;
            let n = match &noise {
                Some(n) => n.clone(),
                None => simulate::white_noise(clean.len() + h.len(), fs_hz, seed ^ 0x9e37_79b9_7f4a_7c15)?,
            };
            let observed = simulate::mix(&clean, &h, &n, args.snr)?;
            let reference = simulate::direct_path_reference(&clean, &h, None)?;
            let truth = acoustics::analyze(&h, &cfg.rt60, &cfg.drr)?;
            let id = format!("case{i:03}");
            let names = [
                format!("{id}_reverberant.wav"),
                format!("{id}_reference.wav"),
                format!("{id}_rir.wav"),
            ];
            for (name, w) in names.iter().zip([&observed, &reference, &h]) {
                write_wav(&args.out_dir.join(name), w)?;
            }
            let [reverberant, reference, rir] = names;
            Ok(CaseRow {
                id,
                reverberant,
                reference,
                rir,
                seed,
                rt60_target: rt60,
                drr_target: drr,
                snr_db: args.snr,
                rt60: truth.rt60.map(|r| r.rt60),
                drr: truth.drr.drr_db,
            })
        })
        .collect::<Result<_>>()?;
    let manifest_csv = args.out_dir.join("manifest.csv");
    let mut w = csv::Writer::from_writer(create(&manifest_csv)?);
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    drop(w);
    for row in &rows {
        for name in [&row.reverberant, &row.reference, &row.rir] {
            m.output(&args.out_dir.join(name))?;
        }
    }
    m.output(&manifest_csv)?;
    println!("wrote {} cases to {}", rows.len(), args.out_dir.display());
    m.finish(manifest)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// manifest.csv written by simulate.
    #[arg(long, requires = "estimates")]
    pub truth: Option<PathBuf>,
    /// params CSVs written by identify-rir.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub estimates: Vec<PathBuf>,
    /// Per-item score CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Enhanced WAV scored by LSD against --reference.
    #[arg(long, requires = "reference")]
    pub enhanced: Option<PathBuf>,
    #[arg(long, requires = "enhanced")]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ScoreRow {
    id: String,
    rt60_true: Option<f64>,
    rt60_est: Option<f64>,
    rt60_error: Option<f64>,
    drr_true: Option<f64>,
    drr_est: Option<f64>,
    drr_error: Option<f64>,
    status: String,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize().collect::<std::result::Result<_, _>>().with_context(|| format!("parsing {}", path.display()))
}

pub fn eval(cfg: &PipelineConfig, args: &EvalArgs) -> Result<ExitCode> {
    let mut failed = false;
    if args.truth.is_none() && args.enhanced.is_none() {
        bail!("nothing to score: pass --truth/--estimates or --enhanced/--reference");
    }
    if let Some(truth_path) = &args.truth {
        failed |= eval_rir(truth_path, &args.estimates, args.report.as_deref())?;
    }
    if let (Some(enh), Some(reference)) = (&args.enhanced, &args.reference) {
        let stft_cfg = cfg.stft()?;
        let r = read_wav(reference)?;
        let e = read_wav(enh)?.resized(r.len());
        let rs = stft::forward_normalized(&r, &stft_cfg)?;
        let es = stft::forward_normalized(&e, &stft_cfg)?;
        let d = eval::lsd(&es, &rs, true)?;
        println!("lsd = {d:.3} dB");
        if !d.is_finite() {
            failed = true;
        }
    }
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

/// Scores estimates against truths by id; returns whether any item failed.
fn eval_rir(truth_path: &Path, estimate_paths: &[PathBuf], report: Option<&Path>) -> Result<bool> {
    let truths: Vec<CaseRow> = read_rows(truth_path)?;
    let mut estimates: BTreeMap<String, ParamsRow> = BTreeMap::new();
    for path in estimate_paths {
        for row in read_rows::<ParamsRow>(path)? {
            if estimates.insert(row.id.clone(), row).is_some() {
                bail!("duplicate estimate id in {}", path.display());
            }
        }
    }
    let mut rows = Vec::with_capacity(truths.len());
    let (mut est_ok, mut true_ok) = (Vec::new(), Vec::new());
    for t in &truths {
        let e = estimates.remove(&t.id);
        let status = match (&e, t.rt60) {
            (None, _) => "missing estimate",
            (_, None) => "truth has insufficient decay",
            (Some(e), _) if e.rt60.is_none() => "estimate has insufficient decay",
            (Some(e), _) if !(e.drr.is_finite() && e.rt60.is_some_and(f64::is_finite)) => "nonfinite estimate",
            _ => "ok",
        };
        let (rt60_est, drr_est) = (e.as_ref().and_then(|e| e.rt60), e.as_ref().map(|e| e.drr));
        let ok = status == "ok";
        if ok {
            est_ok.push(RirParams { rt60: rt60_est.unwrap(), drr: drr_est.unwrap() });
            true_ok.push(RirParams { rt60: t.rt60.unwrap(), drr: t.drr });
        }
        rows.push(ScoreRow {
            id: t.id.clone(),
            rt60_true: t.rt60,
            rt60_est,
            rt60_error: ok.then(|| rt60_est.unwrap() - t.rt60.unwrap()),
            drr_true: Some(t.drr),
            drr_est,
            drr_error: drr_est.map(|d| d - t.drr),
            status: status.to_string(),
        });
    }
    for id in estimates.keys() {
        log::warn!("estimate {id} has no truth row");
    }
    if let Some(path) = report {
        let mut w = csv::Writer::from_writer(create(path)?);
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    for r in rows.iter().filter(|r| r.status != "ok") {
        println!("{}: {}", r.id, r.status);
    }
    match eval::score_rir_batch(&est_ok, &true_ok) {
        Ok(s) => {
            println!("scored {} of {} items", est_ok.len(), truths.len());
            println!("rt60: mae = {:.4} s, rmse = {:.4} s", s.rt60.mae, s.rt60.rmse);
            println!("drr:  mae = {:.4} dB, rmse = {:.4} dB", s.drr.mae, s.drr.rmse);
        }
        Err(Error::EmptyBatch) => println!("scored 0 of {} items", truths.len()),
        Err(e) => return Err(e.into()),
    }
    Ok(est_ok.len() != truths.len())
}
