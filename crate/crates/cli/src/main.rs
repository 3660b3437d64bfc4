use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use cohortflow_cli::commands::{self, BacktestArgs, FitArgs, GenerateArgs, ProjectArgs};
use cohortflow_cli::error::CliError;
use cohortflow_cli::server::{router, AppState};

#[derive(Debug, Parser)]
#[command(name = "cohortflow", version, about = "Estimate, project and backtest enrollment transition models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate students through a model and write snapshot CSV
    Generate(GenerateArgs),
    /// Estimate a transition model from snapshot CSV
    Fit(FitArgs),
    /// Project headcounts forward, optionally under a scenario
    Project(ProjectArgs),
    /// Fit on early terms and score projections against later ones
    Backtest(BacktestArgs),
    /// Serve the model and projection API over HTTP
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, env = "COHORTFLOW_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Directory of static UI assets served at /
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Fit(a) => commands::fit_cmd(a),
        Command::Project(a) => commands::project_cmd(a),
        Command::Backtest(a) => commands::backtest_cmd(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let model = commands::load_model(&args.model)?;
    let state = Arc::new(AppState::new(model)?);
    let app = router(state, args.static_dir.clone());
    let addr = format!("{}:{}", args.host, args.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|source| CliError::Bind { addr: addr.clone(), source })?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
