fn main() {
    std::process::exit(spatial_occupancy::cli::main_with_args(std::env::args_os()));
}
