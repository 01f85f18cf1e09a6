use clap::Parser;
use qtmtt_cli::{run, Cli};

fn main() {
  let cli = Cli::parse();
  if let Err(e) = run(&cli, &mut std::io::stderr()) {
    eprintln!("error: {e}");
    std::process::exit(e.exit_code());
  }
}
