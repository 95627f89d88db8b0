fn main() {
    std::process::exit(hopf_mfi::cli::run(std::env::args_os()));
}
