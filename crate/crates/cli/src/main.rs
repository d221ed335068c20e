use clap::Parser;
use crowding_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => println!("{}", out.dir.display()),
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
