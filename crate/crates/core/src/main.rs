fn main() {
    std::process::exit(slneumann::cli::main_entry());
}
