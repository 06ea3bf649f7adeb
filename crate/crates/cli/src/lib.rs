//! Command-line front end: configuration, training and evaluation runs,
//! verification suites, and structural exports.

pub mod commands;
pub mod config;
pub mod export;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "boltzgate",
    version,
    about = "Boltzmann-gated attention classifier for DNA sequences"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Train a classifier; writes checkpoints, metrics, and the resolved config
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint on a dataset (accuracy and loss)
    Eval(commands::EvalArgs),
    /// Finite-difference check of the end-to-end gradients on a tiny model
    Gradcheck(commands::GradcheckArgs),
    /// Run the exact-enumeration verification suite
    #[command(name = "oracle-verify")]
    OracleVerify(commands::OracleVerifyArgs),
    /// Export learned structure (latent usage, couplings, hyperedges) as CSV
    Inspect(commands::InspectArgs),
    /// Generate the synthetic regulatory-code dataset as TSV
    Synth(commands::SynthArgs),
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Train(a) => commands::cmd_train(a),
        Cmd::Eval(a) => commands::cmd_eval(a),
        Cmd::Gradcheck(a) => commands::cmd_gradcheck(a),
        Cmd::OracleVerify(a) => commands::cmd_oracle_verify(a),
        Cmd::Inspect(a) => commands::cmd_inspect(a),
        Cmd::Synth(a) => commands::cmd_synth(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
