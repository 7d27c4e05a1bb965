fn main() {
    std::process::exit(sensor_cli::run(std::env::args_os()));
}
