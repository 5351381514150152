fn main() {
    std::process::exit(attnscope::cli::run(std::env::args_os()));
}
