fn main() {
    std::process::exit(gaussrdp::cli::main_entry());
}
