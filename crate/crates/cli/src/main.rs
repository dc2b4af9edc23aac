fn main() {
    std::process::exit(ordgam_cli::run(std::env::args_os()));
}
