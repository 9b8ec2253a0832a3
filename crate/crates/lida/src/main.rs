fn main() {
    if let Err(err) = lida::cli::run() {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
