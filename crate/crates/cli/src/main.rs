use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use specmatch::autodiff::{load_checkpoint, save_checkpoint, AdamState, FeatureNet};
use specmatch::cache::{load_cached_shape, preprocess_mesh, CacheStatus};
use specmatch::config::RunConfig;
use specmatch::descriptors::WksConfig;
use specmatch::evaluation::{default_thresholds, evaluate, read_pck_csv};
use specmatch::mesh::load_mesh;
use specmatch::pipeline::{
    initial_diffusion_time, match_pair, ordered_pairs, test_time_adapt, train_from, write_loss_csv, LossRecord, MatchConfig,
    MatchMode, Shape, ShapePair,
};
use specmatch::pointwise::HardCorrespondence;
use specmatch::Error;

mod plot;

#[derive(Parser)]
#[command(name = "specmatch", version, about = "Unsupervised spectral shape matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute and cache eigenpairs and WKS for each mesh.
    Preprocess {
        meshes: Vec<PathBuf>,
        /// Take meshes, cache directory, k and WKS settings from a run config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train the feature network on all ordered pairs of the configured meshes.
    Train { config: PathBuf },
    /// Write a correspondence from every source vertex to a target vertex.
    Match {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long, overrides_with = "no_tta")]
        tta: bool,
        #[arg(long)]
        no_tta: bool,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run test-time adaptation on one pair and save the adapted network.
    Adapt {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long, short)]
        out: PathBuf,
        /// Loss before each step and after the last, as CSV.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Geodesic error and PCK of a correspondence against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Target mesh the correspondences point into.
        #[arg(long)]
        mesh: PathBuf,
        /// Selects the default PCK threshold range.
        #[arg(long, default_value = "near_isometric")]
        mode: MatchMode,
        /// JSON report path; printed to standard output when absent.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        pck: Option<PathBuf>,
    },
    /// Render PCK CSV files as an SVG chart.
    PlotPck {
        #[arg(required = true)]
        curves: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PairArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Mesh whose vertices are matched.
    #[arg(long)]
    source: PathBuf,
    /// Mesh matched onto.
    #[arg(long)]
    target: PathBuf,
    /// Overrides the mode stored in the checkpoint.
    #[arg(long)]
    mode: Option<MatchMode>,
    /// Read spectral data from this cache instead of recomputing it.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::InvalidInput(_) => 2,
        _ => 1,
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Preprocess {
            meshes,
            config,
            cache_dir,
            k,
        } => preprocess(meshes, config, cache_dir, k),
        Command::Train { config } => cmd_train(&config),
        Command::Match { pair, no_tta, out, .. } => cmd_match(&pair, !no_tta, &out),
        Command::Adapt { pair, out, loss_csv } => cmd_adapt(&pair, &out, loss_csv.as_deref()),
        Command::Eval {
            pred,
            gt,
            mesh,
            mode,
            report,
            pck,
        } => cmd_eval(&pred, &gt, &mesh, mode, report.as_deref(), pck.as_deref()),
        Command::PlotPck { curves, out } => cmd_plot(&curves, &out),
    }
}

fn preprocess(meshes: Vec<PathBuf>, config: Option<PathBuf>, cache_dir: Option<PathBuf>, k: Option<usize>) -> Result<(), Error> {
    let run = match &config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let meshes = if meshes.is_empty() { run.data.meshes.clone() } else { meshes };
    if meshes.is_empty() {
        return Err(Error::InvalidInput("no meshes given".into()));
    }
    let dir = cache_dir.unwrap_or(run.data.cache_dir);
    let k = k.unwrap_or(run.matching.k);
    let wks: WksConfig = run.matching.wks;
    let mut failed = 0;
    for mesh in &meshes {
        match preprocess_mesh(mesh, &dir, k, &wks) {
            Ok((path, CacheStatus::Reused)) => info!("{}: up to date ({})", mesh.display(), path.display()),
            Ok((path, CacheStatus::Computed)) => info!("{}: wrote {}", mesh.display(), path.display()),
            Err(e) => {
                error!("{}: {e}", mesh.display());
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(Error::Cache(format!("{failed} of {} meshes failed", meshes.len())));
    }
    Ok(())
}

fn cmd_train(config: &Path) -> Result<(), Error> {
    let run = RunConfig::load(config)?;
    let cfg = &run.matching;
    if run.data.meshes.is_empty() {
        return Err(Error::InvalidInput(format!("{}: [data] meshes is empty", config.display())));
    }
    let shapes = run
        .data
        .meshes
        .iter()
        .map(|m| load_cached_shape::<f64>(m, &run.data.cache_dir, cfg.k, &cfg.wks))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs = ordered_pairs(shapes.len())
        .into_iter()
        .map(|(i, j)| ShapePair::new(&shapes[i], &shapes[j]))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&Shape<f64>> = shapes.iter().collect();
    let mut net = FeatureNet::new(cfg.net, initial_diffusion_time(&refs), cfg.seed)?;
    info!("training on {} pairs for {} epochs ({} parameters)", pairs.len(), cfg.epochs, net.num_parameters());
    let mut adam = AdamState::new(net.params());
    let log = train_from(&pairs, &mut net, &mut adam, cfg)?;
    if let Some(last) = log.last() {
        info!("final loss {:.6e}", last.values.total);
    }
    save_checkpoint(&run.output.checkpoint, &net, Some(&adam), &cfg.to_toml())?;
    write_csv(&run.output.loss_csv, &log)?;
    info!("wrote {} and {}", run.output.checkpoint.display(), run.output.loss_csv.display());
    Ok(())
}

fn write_csv(path: &Path, log: &[LossRecord]) -> Result<(), Error> {
    let mut w = BufWriter::new(File::create(path)?);
    write_loss_csv(&mut w, log)?;
    w.flush()?;
    Ok(())
}

struct Loaded {
    net: FeatureNet<f64>,
    optimizer: Option<AdamState<f64>>,
    cfg: MatchConfig,
    target: Shape<f64>,
    source: Shape<f64>,
}

fn load_pair(args: &PairArgs) -> Result<Loaded, Error> {
    let ckpt = load_checkpoint::<f64>(&args.checkpoint)?;
    let mut cfg = MatchConfig::from_toml(&ckpt.config_echo).map_err(|e| {
        Error::parse(Some(&args.checkpoint), format!("embedded configuration: {e}"))
    })?;
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    let load = |path: &Path| -> Result<Shape<f64>, Error> {
        match &args.cache_dir {
            Some(dir) => load_cached_shape(path, dir, cfg.k, &cfg.wks),
            None => Shape::prepare(load_mesh(path, None)?, cfg.k, &cfg.wks),
        }
    };
    let target = load(&args.target)?;
    let source = load(&args.source)?;
    Ok(Loaded {
        net: ckpt.net,
        optimizer: ckpt.optimizer,
        cfg,
        target,
        source,
    })
}

fn cmd_match(args: &PairArgs, adapt: bool, out: &Path) -> Result<(), Error> {
    let l = load_pair(args)?;
    let pair = ShapePair::new(&l.target, &l.source)?;
    if adapt && l.optimizer.is_none() {
        warn!("{} has no optimizer state; adaptation starts a fresh Adam state", args.checkpoint.display());
    }
    let corr = match_pair(&pair, &l.net, l.optimizer.as_ref(), &l.cfg, adapt)?;
    corr.save(out)?;
    info!("wrote {} ({} -> {}, mode {})", out.display(), l.source.name(), l.target.name(), l.cfg.mode);
    Ok(())
}

fn cmd_adapt(args: &PairArgs, out: &Path, loss_csv: Option<&Path>) -> Result<(), Error> {
    let l = load_pair(args)?;
    let pair = ShapePair::new(&l.target, &l.source)?;
    if l.cfg.tta_iters == 0 {
        warn!("tta_iters is 0; the network is saved unchanged");
    }
    if l.optimizer.is_none() {
        warn!("{} has no optimizer state; adaptation starts a fresh Adam state", args.checkpoint.display());
    }
    let (adapted, trajectory) = test_time_adapt(&pair, &l.net, l.optimizer.as_ref(), &l.cfg)?;
    save_checkpoint(out, &adapted, None, &l.cfg.to_toml())?;
    if let Some(path) = loss_csv {
        let label = pair.label();
        let log: Vec<LossRecord> = trajectory
            .into_iter()
            .enumerate()
            .map(|(epoch, values)| LossRecord {
                epoch,
                pair: label.clone(),
                values,
            })
            .collect();
        write_csv(path, &log)?;
    }
    info!("wrote {}", out.display());
    Ok(())
}

fn cmd_eval(pred: &Path, gt: &Path, mesh: &Path, mode: MatchMode, report: Option<&Path>, pck: Option<&Path>) -> Result<(), Error> {
    let pred = HardCorrespondence::load(pred)?;
    let gt = HardCorrespondence::load(gt)?;
    let mesh = load_mesh::<f64>(mesh, None)?;
    let result = evaluate(&pred, &gt, &mesh, &default_thresholds(mode))?;
    info!("mean geodesic error x100 {:.4}, auc {:.4}", result.mean_geo_error_x100, result.auc);
    match report {
        Some(path) => std::fs::write(path, result.to_json() + "\n")?,
        None => println!("{}", result.to_json()),
    }
    if let Some(path) = pck {
        result.save_pck_csv(path)?;
    }
    Ok(())
}

fn cmd_plot(curves: &[PathBuf], out: &Path) -> Result<(), Error> {
    let series = curves
        .iter()
        .map(|path| {
            let text = std::fs::read_to_string(path)?;
            let points = read_pck_csv(&text, Some(path))?;
            let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(plot::Series { label, points })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    std::fs::write(out, plot::render_svg(&series)?)?;
    info!("wrote {}", out.display());
    Ok(())
}
