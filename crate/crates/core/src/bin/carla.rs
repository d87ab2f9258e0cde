fn main() {
    std::process::exit(carla::cli::main_with(std::env::args_os()));
}
