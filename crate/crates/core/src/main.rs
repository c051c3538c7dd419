use clap::Parser;

fn main() {
    let cli = anchorsv::cli::Cli::parse();
    if let Err(e) = anchorsv::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(anchorsv::cli::exit_code(&e));
    }
}
