use clap::Parser;

fn main() {
    let cli = cpkit::cli::Cli::parse();
    match cpkit::cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
