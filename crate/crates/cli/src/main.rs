use clap::Parser;

fn main() {
    let cli = gensep_cli::Cli::parse();
    if let Err(e) = gensep_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
