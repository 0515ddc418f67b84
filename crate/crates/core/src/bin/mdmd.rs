fn main() {
    let outcome = mdmd::cli::run(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(outcome.exit_code);
}
