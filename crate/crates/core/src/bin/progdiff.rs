fn main() {
    std::process::exit(progdiff::cli::run());
}
