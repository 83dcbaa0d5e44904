//! The `multips` command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::classic::l2_normals;
use crate::dataio::{
    import_diligent, read_mask, read_normal_map, read_sample, write_normal_map, write_sample, MANIFEST_FILE,
};
use crate::evalkit::{benchmark_report, mean_angular_error, BenchmarkResults, AVERAGE_ROW};
use crate::geomgen::load_obj_file;
use crate::msnet::{
    infer, read_checkpoint, train, write_checkpoint, write_loss_trace, Architecture, NetConfig, NetWeights,
    PsSample, TrainParams,
};
use crate::render::{sample_seed, synthesize, MeshSource, SynthConfig, DEFAULT_LIGHT_COUNT, DEFAULT_RESOLUTION};

/// Half-extent of the box user meshes are fitted into before rendering.
const MESH_FIT: f64 = 0.9;

#[derive(Debug, Parser)]
#[command(name = "multips", version, about = "Calibrated photometric stereo toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render synthetic samples into DIR/sample_NNNN
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        /// Render this OBJ mesh instead of random blobs
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_LIGHT_COUNT)]
        lights: usize,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        res: usize,
    },
    /// Train the multi-scale network; writes CKPT and CKPT's .loss.csv
    Train {
        /// Sample directories, or directories containing sample directories
        #[arg(long, num_args = 1.., required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 3)]
        batch: usize,
        #[arg(long, default_value_t = 128)]
        patch: usize,
        #[arg(long, default_value_t = 32)]
        patches: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Feature width of the hidden convolutions
        #[arg(long, default_value_t = NetConfig::default().channels)]
        channels: usize,
        /// Train each patch on a random subset of this many lights
        #[arg(long)]
        lights_per_patch: Option<usize>,
    },
    /// Predict a full-resolution normal map with a trained checkpoint
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        r0: usize,
    },
    /// Least-squares Lambertian normals
    Baseline {
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean angular error of a prediction; --report adds it to a benchmark CSV
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Benchmark CSV to update (object = ground truth's directory, method = prediction's file stem)
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Convert a DiLiGenT-style object directory into a sample directory
    ImportDiligent {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses arguments, runs the command and maps failures to a one-line
/// diagnostic on standard error.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let text = e.render().to_string();
                eprintln!("{}", text.lines().next().unwrap_or("error: invalid arguments"));
                return ExitCode::from(2);
            }
            print!("{}", e.render());
            return ExitCode::SUCCESS;
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate {
            out,
            count,
            seed,
            mesh,
            lights,
            res,
        } => generate(&out, count, seed, mesh.as_deref(), lights, res),
        Command::Train {
            data,
            out,
            steps,
            lr,
            batch,
            patch,
            patches,
            seed,
            channels,
            lights_per_patch,
        } => {
            let hp = TrainParams {
                lr,
                batch,
                patches_per_sample: patches,
                patch,
                steps,
                seed,
                lights_per_patch,
            };
            train_cmd(&data, &out, &hp, channels)
        }
        Command::Infer { ckpt, sample, out, r0 } => infer_cmd(&ckpt, &sample, &out, r0),
        Command::Baseline { sample, out } => {
            let s = read_sample(&sample)?;
            let r = l2_normals(&s)?;
            write_normal_map(&out, &r.normals)?;
            let flagged = r.flagged.iter().filter(|&&f| f).count();
            eprintln!("baseline: {} masked pixels, {flagged} flagged", s.mask.iter().filter(|&&m| m).count());
            Ok(())
        }
        Command::Eval { pred, gt, mask, report } => eval_cmd(&pred, &gt, &mask, report.as_deref()),
        Command::ImportDiligent { input, out } => {
            let s = import_diligent(&input)?;
            write_sample(&out, &s, None)?;
            eprintln!("imported {} images of {}x{}", s.len(), s.width(), s.height());
            Ok(())
        }
    }
}

fn generate(out: &Path, count: usize, seed: u64, mesh: Option<&Path>, lights: usize, res: usize) -> Result<()> {
    if count == 0 {
        bail!("--count must be at least 1");
    }
    let mut cfg = SynthConfig {
        resolution: res,
        lights,
        ..SynthConfig::default()
    };
    if let Some(path) = mesh {
        let mut m = load_obj_file(path)?;
        m.fit_to_box(MESH_FIT)?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "mesh".into());
        cfg.mesh = MeshSource::Mesh { mesh: m, name };
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let digits = (count - 1).to_string().len().max(4);
    let job = |i: usize| -> Result<()> {
        let s = sample_seed(seed, i as u64);
        let synth = synthesize(s, &cfg).with_context(|| format!("sample {i}"))?;
        let dir = out.join(format!("sample_{i:0digits$}"));
        write_sample(&dir, &synth.sample, Some(synth.meta))?;
        eprintln!("wrote {} ({})", dir.display(), synth.category);
        Ok(())
    };
    #[cfg(feature = "parallel")]
    (0..count).into_par_iter().try_for_each(job)?;
    #[cfg(not(feature = "parallel"))]
    (0..count).try_for_each(job)?;
    Ok(())
}

/// Expands each path to itself if it is a sample directory, otherwise to its
/// sample subdirectories in name order.
fn sample_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.join(MANIFEST_FILE).is_file() {
            out.push(p.clone());
            continue;
        }
        let mut subs: Vec<PathBuf> = fs::read_dir(p)
            .with_context(|| format!("reading {}", p.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join(MANIFEST_FILE).is_file())
            .collect();
        if subs.is_empty() {
            bail!("{} holds no sample directories", p.display());
        }
        subs.sort();
        out.extend(subs);
    }
    Ok(out)
}

fn loss_trace_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".loss.csv");
    ckpt.with_file_name(name)
}

fn train_cmd(data: &[PathBuf], out: &Path, hp: &TrainParams, channels: usize) -> Result<()> {
    let dirs = sample_dirs(data)?;
    let samples: Vec<PsSample> = dirs
        .iter()
        .map(|d| read_sample(d).with_context(|| format!("loading {}", d.display())))
        .collect::<Result<_>>()?;
    let cfg = NetConfig {
        image_channels: samples[0].channels(),
        channels,
        ..NetConfig::default()
    };
    let mut weights = NetWeights::init(&cfg, hp.seed)?;
    eprintln!(
        "training on {} samples, {} parameters, {} steps",
        samples.len(),
        weights.num_parameters(),
        hp.steps
    );
    let every = (hp.steps / 20).max(1);
    let losses = train(&mut weights, &samples, &cfg, hp, |step, loss| {
        if (step + 1) % every == 0 || step + 1 == hp.steps {
            eprintln!("step {}/{}: loss {loss:.6}", step + 1, hp.steps);
        }
    })?;
    write_checkpoint(out, &weights)?;
    write_loss_trace(&loss_trace_path(out), &losses)?;
    Ok(())
}

fn infer_cmd(ckpt: &Path, sample: &Path, out: &Path, r0: usize) -> Result<()> {
    let weights = read_checkpoint(ckpt)?;
    let cfg = weights.config(Architecture::MultiScale, r0, NetConfig::default().slope)?;
    let s = read_sample(sample)?;
    if s.channels() != cfg.image_channels {
        bail!(
            "checkpoint expects {}-channel images, sample has {}",
            cfg.image_channels,
            s.channels()
        );
    }
    let (normals, stages) = infer(&weights, &s, &cfg)?;
    eprintln!("stages: 1 coarse + {} refine", stages - 1);
    write_normal_map(out, &normals)?;
    Ok(())
}

fn eval_cmd(pred: &Path, gt: &Path, mask: &Path, report: Option<&Path>) -> Result<()> {
    let (w, h, m) = read_mask(mask)?;
    let p = read_normal_map(pred, m.clone())?;
    let g = read_normal_map(gt, m)?;
    if (p.width(), p.height()) != (w, h) {
        bail!("prediction is {}x{}, mask is {w}x{h}", p.width(), p.height());
    }
    let mae = mean_angular_error(&p, &g)?;
    println!("{mae:.6}");
    if let Some(path) = report {
        let object = gt
            .canonicalize()
            .ok()
            .and_then(|c| c.parent().and_then(|d| d.file_name()).map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "object".into());
        let method = pred
            .file_stem()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "method".into());
        update_report(path, &object, &method, mae)?;
    }
    Ok(())
}

/// Merges one cell into the benchmark CSV at `path`. Once every object has
/// every method the averages and an aligned table (`.txt` alongside) are
/// written; until then only the rows are kept.
fn update_report(path: &Path, object: &str, method: &str, mae: f64) -> Result<()> {
    let mut rows: Vec<(String, String, f64)> = Vec::new();
    if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (i, line) in text.lines().enumerate().skip(1) {
            let parts: Vec<&str> = line.split(',').collect();
            let [o, m, v] = parts[..] else {
                bail!("{}: line {} is not object,method,mae_deg", path.display(), i + 1);
            };
            if o == AVERAGE_ROW {
                continue;
            }
            let v: f64 = v
                .parse()
                .with_context(|| format!("{}: line {}", path.display(), i + 1))?;
            rows.push((o.to_string(), m.to_string(), v));
        }
    }
    rows.retain(|(o, m, _)| !(o == object && m == method));
    rows.push((object.to_string(), method.to_string(), mae));

    let mut results = BenchmarkResults::new();
    for (o, m, v) in &rows {
        results.insert(o, m, *v);
    }
    let table_path = path.with_extension("txt");
    match benchmark_report(&results) {
        Ok(rep) => {
            crate::dataio::atomic_write(path, rep.csv.as_bytes())?;
            crate::dataio::atomic_write(&table_path, rep.table.as_bytes())?;
        }
        Err(e) => {
            rows.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
            let mut csv = String::from("object,method,mae_deg\n");
            for (o, m, v) in &rows {
                csv.push_str(&format!("{o},{m},{v:.6}\n"));
            }
            crate::dataio::atomic_write(path, csv.as_bytes())?;
            eprintln!("report incomplete, averages withheld: {e}");
        }
    }
    Ok(())
}
