use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use dirsep::doa::{design_doa_solver, direction_field, ArrayGeometry, DEFAULT_SPEED_OF_SOUND};
use dirsep::eval::{bss_eval_clips, DEFAULT_FILTER_LENGTH};
use dirsep::harness::{run_experiment, separate_directional, separate_supervised, Algorithm, ExperimentConfig, SeparationParams};
use dirsep::spectral::{stft_channels, AudioClip, StftConfig};
use dirsep::wav::{read_wav, write_wav, WavFormat};
use dirsep::{synthesize_mixture, Exec, MaskMode};
use serde::Deserialize;

use crate::{Cli, Command, ModelArgs};

/// Failure split by exit status.
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Values a `--config` file may carry. Unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    frame_size: Option<usize>,
    hop: Option<usize>,
    #[serde(alias = "S")]
    num_sources: Option<usize>,
    #[serde(alias = "Z")]
    num_atoms: Option<usize>,
    #[serde(alias = "D")]
    num_directions: Option<usize>,
    iterations: Option<usize>,
    seed: Option<u64>,
    mask_mode: Option<MaskMode>,
}

fn resolve(args: &ModelArgs, exec: Exec) -> Result<SeparationParams> {
    let file = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<ConfigFile>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => ConfigFile::default(),
    };
    let d = SeparationParams::default();
    let frame_size = args.frame_size.or(file.frame_size).unwrap_or(d.stft.frame_size);
    let hop = args.hop.or(file.hop).unwrap_or(d.stft.hop);
    let stft = StftConfig::new(frame_size, hop, d.stft.window).map_err(|e| usage(e.to_string()))?;
    let mask_mode = match &args.mask_mode {
        Some(m) => m.parse().map_err(|e: dirsep::Error| usage(e.to_string()))?,
        None => file.mask_mode.unwrap_or_default(),
    };
    let params = SeparationParams {
        num_sources: args.sources.or(file.num_sources).unwrap_or(d.num_sources),
        num_atoms: args.atoms.or(file.num_atoms).unwrap_or(d.num_atoms),
        num_directions: args.directions.or(file.num_directions).unwrap_or(d.num_directions),
        iterations: args.iters.or(file.iterations).unwrap_or(d.iterations),
        seed: args.seed.or(file.seed).unwrap_or(d.seed),
        stft,
        mask_mode,
        exec,
    };
    for (name, v) in [
        ("--S", params.num_sources),
        ("--Z", params.num_atoms),
        ("--D", params.num_directions),
        ("--iters", params.iterations),
    ] {
        if v == 0 {
            return Err(usage(format!("{name} must be positive")));
        }
    }
    Ok(params)
}

fn configure_threads(threads: Option<usize>) -> Result<Exec> {
    match threads {
        Some(0) => Err(usage("--threads must be at least 1")),
        Some(1) => Ok(Exec::Sequential),
        Some(n) => {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("starting thread pool")?;
            Ok(Exec::Parallel)
        }
        None => Ok(Exec::Parallel),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn write_clip(path: PathBuf, clip: &AudioClip) -> Result<()> {
    write_wav(&path, clip, WavFormat::Float32)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn geometry_for(mixture: &AudioClip, path: Option<&Path>) -> Result<ArrayGeometry> {
    match path {
        Some(p) => Ok(ArrayGeometry::from_json_file(p)?),
        None if mixture.num_channels() == 3 => {
            Ok(ArrayGeometry::one_sample_triangle(mixture.sample_rate(), DEFAULT_SPEED_OF_SOUND))
        }
        None => Err(usage(format!(
            "{}-channel mixture needs --geometry (the default array has 3 microphones)",
            mixture.num_channels()
        ))),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let exec = configure_threads(cli.threads)?;
    match cli.command {
        Command::Mix { first, second, out } => {
            let scene = synthesize_mixture(&read_wav(&first)?, &read_wav(&second)?)?;
            create_dir(&out)?;
            write_clip(out.join("mixture.wav"), &scene.mixture)?;
            for (i, r) in scene.ground_truth.iter().enumerate() {
                write_clip(out.join(format!("ref_{i}.wav")), r)?;
            }
            fs::write(out.join("geometry.json"), serde_json::to_string_pretty(&scene.geometry)?)?;
            Ok(())
        }
        Command::Doa { mixture, geometry, model, out } => {
            let params = resolve(&model, exec)?;
            let clip = read_wav(&mixture)?;
            let geometry = geometry_for(&clip, geometry.as_deref())?;
            if geometry.num_mics() != clip.num_channels() {
                return Err(usage(format!(
                    "geometry has {} microphones, mixture has {} channels",
                    geometry.num_mics(),
                    clip.num_channels()
                )));
            }
            let grids = stft_channels(&clip, &params.stft)?;
            let field = direction_field(&design_doa_solver(&geometry)?, &grids, params.num_directions)?;
            create_dir(&out)?;
            fs::write(out.join("directions.json"), field.to_json()?)?;
            fs::write(out.join("directions.csv"), field.to_csv())?;
            let mut counts = vec![0usize; field.num_directions()];
            field.indices().iter().for_each(|&d| counts[d] += 1);
            println!("{}", serde_json::to_string(&counts)?);
            Ok(())
        }
        Command::Separate { mixture, algo, train, geometry, model, out } => {
            let algo: Algorithm = algo.as_deref().unwrap_or("dntf").parse()?;
            let params = resolve(&model, exec)?;
            if algo == Algorithm::Supervised && train.len() != params.num_sources {
                return Err(usage(format!(
                    "--algo supervised needs --train with {} clips, got {}",
                    params.num_sources,
                    train.len()
                )));
            }
            let clip = read_wav(&mixture)?;
            let sep = if algo == Algorithm::Supervised {
                let training = train.iter().map(read_wav).collect::<dirsep::Result<Vec<_>>>()?;
                separate_supervised(&clip, &training, &params)?
            } else {
                let geometry = geometry_for(&clip, geometry.as_deref())?;
                separate_directional(&clip, &geometry, algo, &params)?
            };
            create_dir(&out)?;
            for (i, est) in sep.estimates.iter().enumerate() {
                write_clip(out.join(format!("source_{i}.wav")), est)?;
            }
            if let Some(json) = &sep.model_json {
                fs::write(out.join("model.json"), json)?;
            }
            let directions = sep.directions.clone().unwrap_or_default();
            fs::write(out.join("directions.json"), serde_json::to_string_pretty(&directions)?)?;
            sep.mask.write(out.join("mask.bin"), out.join("mask.json"))?;
            Ok(())
        }
        Command::Eval { refs, estimates, filter_length, out } => {
            let load = |ps: &[PathBuf]| ps.iter().map(read_wav).collect::<dirsep::Result<Vec<_>>>();
            let scores = bss_eval_clips(&load(&refs)?, &load(&estimates)?, filter_length.unwrap_or(DEFAULT_FILTER_LENGTH))?;
            let json = serde_json::to_string_pretty(&scores)?;
            match out {
                Some(p) => fs::write(p, json)?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Experiment { experiment, algorithms, filter_length, model, out } => {
            let mut cfg = ExperimentConfig::from_file(&experiment).map_err(|e| usage(e.to_string()))?;
            if let Some(names) = algorithms {
                cfg.algorithms = names.iter().map(|n| n.trim().parse()).collect::<dirsep::Result<_>>().map_err(|e| usage(e.to_string()))?;
            }
            apply_overrides(&mut cfg, &model)?;
            if let Some(v) = filter_length {
                cfg.filter_length = v;
            }
            cfg.parallel = exec == Exec::Parallel;
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            let report = run_experiment(&cfg)?;
            print!("{}", report.to_table());
            if let Some(out) = out {
                create_dir(&out)?;
                fs::write(out.join("report.json"), report.to_json()?)?;
                for r in &report.results {
                    for (i, est) in r.separation.estimates.iter().enumerate() {
                        write_clip(out.join(format!("{}_source_{i}.wav", r.algorithm)), est)?;
                    }
                }
            }
            Ok(())
        }
    }
}

/// Explicit flags win over the experiment config.
fn apply_overrides(cfg: &mut ExperimentConfig, m: &ModelArgs) -> Result<()> {
    if m.config.is_some() {
        return Err(usage("experiment takes its config as a positional argument"));
    }
    if let Some(v) = m.frame_size {
        cfg.stft.frame_size = v;
    }
    if let Some(v) = m.hop {
        cfg.stft.hop = v;
    }
    if let Some(v) = m.sources {
        cfg.num_sources = v;
    }
    if let Some(v) = m.atoms {
        cfg.num_atoms = v;
    }
    if let Some(v) = m.directions {
        cfg.num_directions = v;
    }
    if let Some(v) = m.iters {
        cfg.iterations = v;
    }
    if let Some(v) = m.seed {
        cfg.seed = v;
    }
    if let Some(v) = &m.mask_mode {
        cfg.mask_mode = v.parse().map_err(|e: dirsep::Error| usage(e.to_string()))?;
    }
    Ok(())
}
