use clap::Parser;

fn main() {
    let cli = bmpursuit_cli::Cli::parse();
    if let Err(e) = bmpursuit_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
