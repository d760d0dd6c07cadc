fn main() {
    let code = mmndb::cli::run_cli(std::env::args_os());
    std::process::exit(code);
}
