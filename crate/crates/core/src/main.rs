fn main() {
    std::process::exit(retina_fusion::cli::run(std::env::args_os()));
}
