fn main() {
    std::process::exit(lidar_mos::cli::main_with_args(std::env::args_os()));
}
