//! `vortsdf` command line. Every operation is a request to the HTTP
//! service: an embedded server on a loopback port unless `--server` names a
//! running one.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde::Serialize;
use vortsdf_client::{Client, ClientError};
use vortsdf_core::api::{ConfigText, CvtBenchRequest, EvalRequest, ReconstructRequest, SynthRequest};

#[derive(Parser)]
#[command(name = "vortsdf", version, about = "Surface reconstruction on adaptive centroidal Voronoi tessellations")]
struct Cli {
    /// Base URL of a running service; an embedded one is started otherwise.
    #[arg(long, global = true, env = "VORTSDF_SERVER")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct a surface from a calibrated scene directory.
    Reconstruct {
        #[arg(long)]
        scene: PathBuf,
        /// Flat `key = value` configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        levels: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write each level's tetrahedral mesh as tets_level_K.ply.
        #[arg(long)]
        dump_tets: bool,
    },
    /// Render a synthetic scene of an analytic shape.
    Synth {
        #[arg(long)]
        shape: String,
        #[arg(long, default_value_t = 20)]
        views: usize,
        #[arg(long, num_args = 2, value_names = ["W", "H"], default_values_t = [256, 256])]
        res: Vec<u32>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Chamfer accuracy and completeness of a mesh against ground truth, in mm.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        clip: f64,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time the CVT optimizer; prints the loss curve as CSV.
    CvtBench {
        #[arg(long)]
        sites: usize,
        #[arg(long, default_value_t = 300)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the HTTP service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure { code: e.exit_code() as u8, message: e.to_string() }
    }
}

fn input_error(message: String) -> Failure {
    Failure { code: 2, message }
}

fn absolute(p: &Path) -> Result<PathBuf, Failure> {
    std::path::absolute(p).map_err(|e| input_error(format!("{}: {e}", p.display())))
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("response types serialize"));
}

async fn connect(server: Option<String>) -> Result<Client, Failure> {
    match server {
        Some(url) => Ok(Client::new(url)),
        None => {
            let (addr, _) = vortsdf_server::spawn(([127, 0, 0, 1], 0).into())
                .await
                .map_err(|e| Failure { code: 1, message: format!("cannot start embedded server: {e}") })?;
            Ok(Client::new(format!("http://{addr}")))
        }
    }
}

async fn run(cli: Cli) -> Result<(), Failure> {
    if let Command::Serve { addr } = cli.command {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Failure { code: 1, message: format!("cannot bind {addr}: {e}") })?;
        eprintln!("listening on http://{}", listener.local_addr().map_err(|e| Failure { code: 1, message: e.to_string() })?);
        return vortsdf_server::serve(listener).await.map_err(|e| Failure { code: 1, message: e.to_string() });
    }
    let client = connect(cli.server).await?;
    match cli.command {
        Command::Reconstruct { scene, config, out, levels, seed, dump_tets } => {
            let config = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
                    Some(ConfigText { name: path.display().to_string(), text })
                }
                None => None,
            };
            let req = ReconstructRequest { scene: absolute(&scene)?, out: absolute(&out)?, config, levels, seed, dump_tets };
            let status = client
                .reconstruct(&req, Duration::from_millis(500), |s| {
                    if let Some(p) = s.progress {
                        eprintln!("level {} iteration {} loss {:.6}", p.level, p.iteration, p.loss);
                    }
                })
                .await?;
            print_json(&status.levels);
        }
        Command::Synth { shape, views, res, out, seed } => {
            let req = SynthRequest { shape, views, width: res[0], height: res[1], seed, out: absolute(&out)? };
            print_json(&client.synth(&req).await?);
        }
        Command::Eval { pred, gt, clip, samples, seed } => {
            let req = EvalRequest { pred: absolute(&pred)?, gt: absolute(&gt)?, clip, samples, seed };
            print_json(&client.eval(&req).await?);
        }
        Command::CvtBench { sites, iters, seed } => {
            let report = client.cvt_bench(&CvtBenchRequest { sites, iters, seed }).await?;
            print!("{}", report.to_csv());
            eprintln!("{} sites, {} iterations, {:.3} s on {} threads", report.sites, iters, report.total_s, report.threads);
        }
        Command::Serve { .. } => unreachable!(),
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
