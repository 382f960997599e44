use clap::Parser;
use ssb_cli::cli::{Cli, Command};
use ssb_cli::{commands, exit_code_for, init_threads, EXIT_OK, EXIT_USAGE, EXIT_VERIFY_FAILED};

fn real_main() -> i32 {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("ssb: {e}");
        return EXIT_USAGE;
    }
    let outcome = match &cli.command {
        Command::GenData(args) => commands::gen_data::run(args).map(|_| true),
        Command::Train(args) => commands::train::run(args).map(|_| true),
        Command::Sample(args) => commands::sample::run(args).map(|_| true),
        Command::Evaluate(args) => commands::evaluate::run(args).map(|_| true),
        Command::Verify(args) => commands::verify::run(args),
    };
    match outcome {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_VERIFY_FAILED,
        Err(e) => {
            eprintln!("ssb: {e}");
            exit_code_for(&e)
        }
    }
}

fn main() {
    std::process::exit(real_main());
}
