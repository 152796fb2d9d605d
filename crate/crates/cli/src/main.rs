mod args;
mod commands;
mod defaults;
mod manifest;

use clap::Parser;

use args::{Cli, Command};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let d = defaults::load();
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a, &d),
        Command::Diff(a) => commands::diff(a),
        Command::TrainRm(a) => commands::train_rm_cmd(a, &d),
        Command::TrainPpo(a) => commands::train_ppo_cmd(a, &d),
        Command::Eval(a) => commands::eval(a, &d),
        Command::Report(a) => commands::report(a, &d),
    };
    if let Err(e) = result {
        eprintln!("grainrl {}: {e}", cli.command.name());
        std::process::exit(e.exit_code());
    }
}
