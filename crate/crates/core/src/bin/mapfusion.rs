fn main() {
    std::process::exit(mapfusion::cli::main());
}
