use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use peridyn_core::config::{parse_config, RunConfig};
use peridyn_core::output::Status;
use peridyn_core::run::{constants, run};
use peridyn_core::Error;

/// Multiscale peridynamics: fine-scale, two-scale and homogenized solvers.
#[derive(Parser)]
#[command(name = "peridyn", version, about)]
#[command(after_help = "Environment:\n  PERIDYN_OUT_DIR  output directory when --out is not given (overrides output_dir)\n  PERIDYN_THREADS  worker threads (default: all cores)\n  RUST_LOG         log filter, e.g. info")]
struct Cli {
    /// Worker threads.
    #[arg(long, global = true, env = "PERIDYN_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve and write trajectories, the report and manifest.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long, env = "PERIDYN_OUT_DIR")]
        out: Option<PathBuf>,
        /// Replaces the configured mode.
        #[arg(long, value_parser = ["fine", "twoscale", "homog-coupled", "homog-memory", "convergence"])]
        mode: Option<String>,
    },
    /// Check a configuration and list every problem.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print θ_f, the operator bounds M_S, M_L and the matrix K.
    Constants {
        #[arg(long)]
        config: PathBuf,
    },
}

fn report(e: &Error) {
    match e {
        Error::Config(list) => {
            eprintln!("error: invalid configuration");
            for m in list {
                eprintln!("  {m}");
            }
        }
        other => eprintln!("error: {other}"),
    }
}

fn load(path: &Path, mode: Option<&str>) -> Result<RunConfig, ExitCode> {
    parse_config(path, mode).map_err(|e| {
        report(&e);
        ExitCode::from(2)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Validate { config } => load(&config, None).map(|c| {
            for v in c.microstructure.validate() {
                println!("{:?}: {}", v.severity, v.message);
            }
            println!("ok: {} mode, {}-D", c.mode, c.dim());
        }),
        Command::Constants { config } => load(&config, None).and_then(|c| match constants(&c) {
            Ok(k) => {
                println!("theta_f = {:.16e}", k.theta_f);
                println!("theta_m = {:.16e}", k.theta_m);
                println!("M_S     = {:.16e}", k.m_s);
                println!("M_L     = {:.16e}", k.m_l);
                println!("M       = {:.16e}", k.bounds.combined());
                match &k.k_matrix {
                    Some(m) => {
                        println!("K (h_x = {:.6e}) =", k.k_grid_spacing.unwrap_or(f64::NAN));
                        for row in m {
                            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
                            println!("  [{}]", cells.join(", "));
                        }
                    }
                    None => println!("K: no macro grid fixed by this configuration"),
                }
                Ok(())
            }
            Err(e) => {
                report(&e);
                Err(ExitCode::FAILURE)
            }
        }),
        Command::Run { config, out, mode } => load(&config, mode.as_deref()).and_then(|c| match run(&c, out.as_deref()) {
            Ok(o) => {
                for f in &o.files {
                    println!("{}", f.display());
                }
                if o.manifest.status == Status::Partial {
                    for (eps, msg) in &o.manifest.failures {
                        eprintln!("epsilon = {eps} failed: {msg}");
                    }
                    return Err(ExitCode::from(3));
                }
                Ok(())
            }
            Err(e) => {
                report(&e);
                Err(ExitCode::FAILURE)
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
