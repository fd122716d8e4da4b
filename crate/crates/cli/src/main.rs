fn main() {
    std::process::exit(snv_cli::app::main());
}
