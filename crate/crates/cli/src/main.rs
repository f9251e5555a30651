use clap::Parser;

fn main() {
    let cli = pegrad_cli::commands::Cli::parse();
    std::process::exit(pegrad_cli::commands::dispatch(cli));
}
