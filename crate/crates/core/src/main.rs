mod cli;

use clap::Parser;

fn main() {
    let args = cli::Cli::parse();
    if let Some(n) = std::env::var("MPI_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let code = match cli::run(args) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            cli::exit_code(&err)
        }
    };
    std::process::exit(code);
}
