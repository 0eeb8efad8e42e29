fn main() {
    std::process::exit(ple_linewidth::cli::run(std::env::args_os()));
}
