fn main() {
    std::process::exit(isp_core::cli::run(std::env::args_os()));
}
