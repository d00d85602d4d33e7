fn main() {
    std::process::exit(traffic_density::cli::dispatch(std::env::args_os()));
}
