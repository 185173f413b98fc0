fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AUTOFIELD_LOG", "warn")).init();
    std::process::exit(autofield::cli::main_with_args(std::env::args_os()));
}
