fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("INKWELL_LOG", "warn")).init();
    std::process::exit(inkwell::cli::main_with_args(std::env::args_os()));
}
