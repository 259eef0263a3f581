use clap::Parser;

fn main() {
    let args = hopf_heat::cli::Args::parse();
    std::process::exit(hopf_heat::cli::main_with_args(args));
}
