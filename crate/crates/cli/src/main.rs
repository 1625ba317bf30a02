use clap::Parser;

fn main() {
    let cli = bandit_lab::Cli::parse();
    std::process::exit(bandit_lab::run(cli));
}
