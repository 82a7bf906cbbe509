//! `vk`: run plate experiments from the command line.
//!
//! Exit status is 0 when the run held every hard invariant, 1 when it finished but
//! some invariant failed, and 2 on error. `VK_THREADS` caps the worker pool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use vkplate::config::{ExperimentConfig, MaterialConfig, MaterialFile};
use vkplate::experiment::{parse_generators, run_experiment, RunReport};
use vkplate::energy::LoadField;
use vkplate::flow::{mm_run, FlowOptions, ToySpace};
use vkplate::io;
use vkplate::presets::ScalarExpr;
use vkplate::slope::local_slope;
use vkplate::thin::{gamma_ladder, Corrector, QuadratureSpec, TaperWidth};
use vkplate::{Result, VkError};

#[derive(Parser)]
#[command(name = "vk", version, about = "Viscoelastic von Karman plate experiments")]
struct Cli {
    /// Output root; each command writes CSV and JSON files here.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a TOML configuration.
    Run {
        config: PathBuf,
    },
    /// Thin-film energy and dissipation ladder for a generator, printed as CSV.
    Gamma {
        /// Strictly decreasing thicknesses, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.1, 0.05, 0.025])]
        h_list: Vec<f64>,
        /// `pure_bend(k)`, `u=<vector preset>;v=<scalar preset>`, or `csv:<snapshot>`.
        #[arg(long, default_value = "pure_bend(1)")]
        generator: String,
        /// Start point of the dissipation ladder, same syntax as `--generator`.
        #[arg(long, default_value = "zero")]
        pair: String,
        /// Skip the dissipation ladder.
        #[arg(long)]
        no_dissipation: bool,
        /// TOML file with a `[material]` section; defaults to the catalog material.
        #[arg(long)]
        material: Option<PathBuf>,
        /// Use the uncorrected ansatz (no tapered stretch corrector).
        #[arg(long)]
        no_corrector: bool,
        /// Initial quadrature cells per side.
        #[arg(long, default_value_t = QuadratureSpec::default().cells)]
        cells: usize,
    },
    /// Local slope of a snapshot state.
    Slope {
        snapshot: PathBuf,
        #[arg(long)]
        material: Option<PathBuf>,
    },
    /// Minimizing movements for x^2/2 on the real line.
    Toy {
        #[arg(long, default_value_t = 1.0)]
        x0: f64,
        #[arg(long, default_value_t = 1e-3)]
        tau: f64,
        #[arg(long, default_value_t = 1.0)]
        t_end: f64,
    },
}

fn material(path: Option<&Path>) -> Result<MaterialConfig> {
    match path {
        Some(p) => MaterialFile::load(p),
        None => Ok(MaterialConfig::default()),
    }
}

fn write_out(out: Option<&Path>, name: &str, text: &str) -> Result<()> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(name), text)?;
    }
    Ok(())
}

fn report(r: &RunReport) -> bool {
    for f in &r.files {
        println!("wrote {}", f.display());
    }
    println!("passed: {}", r.passed);
    r.passed
}

fn run(cli: Cli) -> Result<bool> {
    let out = cli.out.as_deref();
    match cli.cmd {
        Cmd::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let stem = config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
            let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("vk-out").join(stem));
            Ok(report(&run_experiment(&cfg, &dir)?))
        }
        Cmd::Gamma {
            h_list,
            generator,
            pair,
            no_dissipation,
            material: mpath,
            no_corrector,
            cells,
        } => {
            let m = material(mpath.as_deref())?;
            if m.cw2.is_some() || m.cd2.is_some() {
                return Err(VkError::config("material.cw2", "thin-plate ladders need 3D densities"));
            }
            let corrector = if no_corrector {
                Corrector::Zero
            } else {
                Corrector::TaperedStretch(TaperWidth::default())
            };
            let g = Arc::new(parse_generators(&generator, None, corrector)?);
            let p = if no_dissipation {
                None
            } else {
                Some(Arc::new(parse_generators(&pair, Some(g.domain), corrector)?))
            };
            let quad = QuadratureSpec {
                cells,
                ..QuadratureSpec::default()
            };
            let rows = gamma_ladder(&g, p.as_ref(), &m.spec()?, &h_list, &quad, &ScalarExpr::zero())?;
            let csv = io::ladder_csv(&rows);
            print!("{csv}");
            write_out(out, "ladder.csv", &csv)?;
            Ok(true)
        }
        Cmd::Slope { snapshot, material: mpath } => {
            let state = io::read_snapshot(&snapshot)?;
            let forms = material(mpath.as_deref())?.forms()?;
            let r = local_slope(&state, &forms, &LoadField::zero(&state.grid))?;
            let csv = format!(
                "slope,cg_iterations,cg_residual,duality_gap\n{:e},{},{:e},{:e}\n",
                r.slope,
                r.cg.iterations,
                r.cg.final_residual(),
                r.duality_gap
            );
            print!("{csv}");
            write_out(out, "slope.csv", &csv)?;
            Ok(true)
        }
        Cmd::Toy { x0, tau, t_end } => {
            let traj = mm_run(&ToySpace, tau, t_end, x0, &FlowOptions::default())?;
            let x = *traj.states.last().expect("nonempty");
            let exact = x0 * (-(traj.n_steps() as f64) * tau).exp();
            println!("x_final,exact,error\n{x:e},{exact:e},{:e}", (x - exact).abs());
            write_out(out, "run.csv", &io::run_csv(&traj))?;
            Ok(traj.is_complete())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("VK_THREADS") {
        match n.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("vk: cannot size the worker pool: {e}");
                }
            }
            _ => {
                eprintln!("vk: VK_THREADS must be a positive integer, got `{n}`");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("vk: {e}");
            ExitCode::from(2)
        }
    }
}
