use clap::Parser;

fn main() {
    let cli = neuronml::cli::Cli::parse();
    std::process::exit(neuronml::cli::run(cli));
}
