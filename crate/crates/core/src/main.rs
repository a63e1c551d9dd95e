fn main() {
    std::process::exit(dentvqa::cli::run(std::env::args_os()));
}
