fn main() {
    std::process::exit(monorpn::cli::run_from_env());
}
