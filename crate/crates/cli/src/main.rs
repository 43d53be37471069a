use clap::Parser;
use loggas_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(report) => {
            for f in &report.failures {
                eprintln!("FAIL {f}");
            }
            for p in &report.written {
                println!("{}", p.display());
            }
            report.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
