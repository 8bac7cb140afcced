use clap::Parser;
use mmdfit_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            for note in &out.stderr {
                eprintln!("{note}");
            }
            print!("{}", out.stdout);
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
