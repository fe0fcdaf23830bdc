use clap::Parser;

fn main() {
    let cli = riarag_cli::Cli::parse();
    match riarag_cli::run(cli) {
        Ok(text) => println!("{text}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
