fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    clbf_cli::init_threads();
    let mut stdout = std::io::stdout().lock();
    let code = clbf_cli::cli_main(std::env::args_os(), &mut stdout);
    std::process::exit(code);
}
