fn main() {
    std::process::exit(mxj_cli::run(std::env::args_os()));
}
