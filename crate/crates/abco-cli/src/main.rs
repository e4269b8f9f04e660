use clap::Parser;

fn main() {
    let cli = abco_cli::args::Cli::parse();
    let mut stdout = std::io::stdout();
    if let Err(e) = abco_cli::run(cli, &mut stdout) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
