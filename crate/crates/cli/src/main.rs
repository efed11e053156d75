//! `esikit` command-line tool.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use esikit::engine::{esi_griddata, esi_nongriddata, EstimationResult, SampleCube};
use esikit::io::{self, CubeSidecar, RegularGrid};
use esikit::search::{esi_hparams_search, idw_hparams_search, CvOptions, SearchResult, TableRow};
use esikit::{flatten_grid, idw_griddata, idw_nongriddata, synth, AggSelector, GridSpec, LocationSet, LossSelector};
use ndarray::ArrayView1;
use serde::Serialize;

use config::{Estimator, GridSource, LoadedConfig, SearchPlan};

#[derive(Debug, Parser)]
#[command(name = "esikit", version, about = "Ensemble spatial interpolation")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads.
    #[arg(long, global = true, env = "ESIKIT_THREADS")]
    threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the synthetic surface and write points, truth grid and grid spec.
    Synth {
        #[arg(long, default_value_t = 1000)]
        rows: usize,
    },
    /// Estimate at grid nodes or target locations.
    Estimate,
    /// Cross-validated hyperparameter search.
    Search,
    /// Precision of a stored sample cube.
    Precision {
        /// Cube file written by `estimate`; its sidecar sits next to it.
        #[arg(long)]
        cube: PathBuf,
        /// mse | mae | mse_cube | mae_cube | operr[:range]
        #[arg(long, default_value = "mse")]
        loss: String,
        /// Aggregation for the estimate; defaults to the stored one.
        #[arg(long)]
        agg: Option<String>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let loaded = cli.config.as_deref().map(LoadedConfig::load).transpose()?;
    let threads = cli.threads.or(loaded.as_ref().and_then(|l| l.config.threads));
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    let seed = cli.seed.or(loaded.as_ref().and_then(|l| l.config.seed)).unwrap_or(0);
    let out_dir = match (&cli.out, &loaded) {
        (Some(o), _) => o.clone(),
        (None, Some(l)) => match &l.config.output.dir {
            Some(d) => l.resolve(d),
            None => l.base.clone(),
        },
        (None, None) => PathBuf::from("."),
    };
    match cli.command {
        Command::Synth { rows } => cmd_synth(rows, seed, &out_dir),
        Command::Estimate => cmd_estimate(&require(loaded)?, seed, &out_dir),
        Command::Search => cmd_search(&require(loaded)?, seed, &out_dir),
        Command::Precision { cube, loss, agg } => cmd_precision(&cube, &loss, agg.as_deref(), cli.seed, &out_dir),
    }
}

fn require(loaded: Option<LoadedConfig>) -> Result<LoadedConfig> {
    loaded.context("this command needs --config <file>")
}

/// Files are only created once every output has been computed.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new() }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    fn write(self) -> Result<()> {
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        for (name, bytes) in self.files {
            let path = self.dir.join(&name);
            let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
            w.write_all(&bytes)?;
            w.flush()?;
            println!("wrote {}", path.display());
        }
        Ok(())
    }
}

fn cmd_synth(rows: usize, seed: u64, out: &Path) -> Result<()> {
    let data = synth::sample_points(rows, seed)?;
    let spec = RegularGrid { origin: vec![0.0, 0.0], step: vec![1.0 / 99.0, 1.0 / 199.0], count: vec![100, 200] };
    let grid = spec.to_grid()?;
    let truth = synth::truth_on_grid(&grid)?;
    let nodes = flatten_grid(&grid);

    let mut outputs = Outputs::new(out);
    let mut points = Vec::new();
    io::write_points(&mut points, &data)?;
    outputs.add("points.csv", points);
    let truth_data = esikit::ConditioningData::new(nodes, truth)?;
    let mut truth_csv = Vec::new();
    io::write_points(&mut truth_csv, &truth_data)?;
    outputs.add("truth.csv", truth_csv);
    outputs.add_json("grid.json", &spec)?;
    outputs.write()
}

enum Targets {
    Grid(GridSpec),
    Points(LocationSet),
}

fn load_targets(l: &LoadedConfig) -> Result<Targets> {
    match (&l.config.input.grid, &l.config.input.targets) {
        (Some(_), Some(_)) => bail!("give either `input.grid` or `input.targets`, not both"),
        (None, None) => bail!("`input.grid` or `input.targets` is required"),
        (Some(GridSource::File(p)), None) => {
            let p = l.resolve(p);
            Ok(Targets::Grid(io::read_grid_file(&p).with_context(|| format!("reading {}", p.display()))?))
        }
        (Some(GridSource::Inline(g)), None) => Ok(Targets::Grid(g.to_grid()?)),
        (None, Some(p)) => {
            let p = l.resolve(p);
            Ok(Targets::Points(io::read_locations_file(&p).with_context(|| format!("reading {}", p.display()))?))
        }
    }
}

fn load_points(l: &LoadedConfig) -> Result<esikit::ConditioningData> {
    let p = l.resolve(&l.config.input.points);
    io::read_points_file(&p).with_context(|| format!("reading {}", p.display()))
}

fn estimate_table(targets: &Targets, estimate: ArrayView1<'_, f64>, precision: Option<ArrayView1<'_, f64>>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    match targets {
        Targets::Grid(g) => io::write_estimates(&mut buf, &flatten_grid(g), estimate, precision)?,
        Targets::Points(t) => io::write_estimates(&mut buf, t, estimate, precision)?,
    }
    Ok(buf)
}

fn cube_sidecar(result: &EstimationResult) -> CubeSidecar {
    let cube = result.cube();
    CubeSidecar {
        n_targets: cube.n_targets(),
        m: cube.m(),
        grid_shape: result.grid().map(GridSpec::shape),
        grid: result.grid().cloned(),
        config: *result.config(),
        seed: result.config().seed,
    }
}

fn cmd_estimate(l: &LoadedConfig, seed: u64, out: &Path) -> Result<()> {
    let est = l.config.estimate.as_ref().context("configuration has no [estimate] section")?;
    let estimator = est.estimator(seed)?;
    let loss = est.loss()?;
    let data = load_points(l)?;
    let targets = load_targets(l)?;

    let mut outputs = Outputs::new(out);
    match estimator {
        Estimator::Esi(cfg) => {
            let mut result = match &targets {
                Targets::Grid(g) => esi_griddata(&data, g, &cfg)?,
                Targets::Points(t) => esi_nongriddata(&data, t, &cfg)?,
            };
            let precision = match loss {
                Some(sel) => {
                    let lf = sel.build()?;
                    if lf.is_cube() {
                        bail!("loss `{sel}` yields a cube; use the precision command");
                    }
                    Some(result.precision(&lf)?)
                }
                None => None,
            };
            let missing = result.estimate().iter().filter(|v| v.is_nan()).count();
            println!(
                "esi: {} targets, {} partitions, {} missing estimates, {} singular kriging cells",
                result.cube().n_targets(),
                result.cube().m(),
                missing,
                result.cube().singular_fallbacks()
            );
            outputs.add("estimate.csv", estimate_table(&targets, result.estimate(), precision.as_ref().map(|p| p.view()))?);
            if est.cube {
                let mut bytes = Vec::new();
                io::write_cube_bytes(&mut bytes, result.cube().view())?;
                outputs.add("cube.bin", bytes);
                outputs.add_json("cube.bin.json", &cube_sidecar(&result))?;
            }
        }
        Estimator::Baseline(p) => {
            let result = match &targets {
                Targets::Grid(g) => idw_griddata(&data, g, &p)?,
                Targets::Points(t) => idw_nongriddata(&data, t, &p)?,
            };
            let missing = result.estimate().iter().filter(|v| v.is_nan()).count();
            println!("idw-baseline: {} targets, {} without neighbours", result.estimate().len(), missing);
            outputs.add("estimate.csv", estimate_table(&targets, result.estimate().view(), None)?);
        }
    }
    outputs.write()
}

fn search_outputs<P: Clone + TableRow + Serialize>(result: &SearchResult<P>, outputs: &mut Outputs) -> Result<()> {
    let mut table = Vec::new();
    result.write_table(&mut table)?;
    outputs.add("search.csv", table);
    outputs.add_json("cv_report.json", &result.cv_error_report()?)?;
    let best = result.best_record()?;
    outputs.add_json("best.json", best)?;
    println!(
        "{} scenarios, {} folds; best index {} with cv error {}",
        result.records.len(),
        result.k,
        best.result_data_index,
        best.cv_error
    );
    Ok(())
}

fn cmd_search(l: &LoadedConfig, seed: u64, out: &Path) -> Result<()> {
    let cfg = l.config.search.as_ref().context("configuration has no [search] section")?;
    let plan = cfg.plan()?;
    let data = load_points(l)?;
    let opts = CvOptions { k: cfg.k, metric: cfg.metric, seed };
    let mut outputs = Outputs::new(out);
    match plan {
        SearchPlan::Esi(grid) => {
            let targets = match load_targets(l)? {
                Targets::Grid(g) => flatten_grid(&g),
                Targets::Points(t) => t,
            };
            search_outputs(&esi_hparams_search(&data, &targets, &grid, &opts)?, &mut outputs)?;
        }
        SearchPlan::Baseline(grid) => search_outputs(&idw_hparams_search(&data, &grid, &opts)?, &mut outputs)?,
    }
    outputs.write()
}

fn cmd_precision(cube_path: &Path, loss: &str, agg: Option<&str>, seed: Option<u64>, out: &Path) -> Result<()> {
    let loss: LossSelector = loss.parse()?;
    let (cube, sidecar) = io::read_cube(cube_path).with_context(|| format!("reading {}", cube_path.display()))?;
    let mut config = sidecar.config;
    if let Some(a) = agg {
        config.agg = a.parse::<AggSelector>()?;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let mut result = EstimationResult::from_cube(SampleCube::new(cube), config, sidecar.grid.clone())?;
    let lf = loss.build()?;
    let mut outputs = Outputs::new(out);
    if lf.is_cube() {
        let pc = result.precision_cube(&lf)?;
        let n = result.cube().n_targets();
        let flat = pc.into_shape_with_order((n, sidecar.m))?;
        let mut bytes = Vec::new();
        io::write_cube_bytes(&mut bytes, flat.view())?;
        outputs.add("precision_cube.bin", bytes);
        outputs.add_json("precision_cube.bin.json", &CubeSidecar { config, seed: config.seed, ..sidecar })?;
    } else {
        let p = result.precision(&lf)?;
        let mut buf = Vec::new();
        match result.grid() {
            Some(g) => io::write_estimates(&mut buf, &flatten_grid(g), result.estimate(), Some(p.view()))?,
            None => io::write_estimate_rows(&mut buf, result.estimate(), Some(p.view()))?,
        }
        outputs.add("precision.csv", buf);
    }
    outputs.write()
}
