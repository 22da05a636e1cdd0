fn main() {
    std::process::exit(ren_fdi::cli::run(std::env::args_os()));
}
