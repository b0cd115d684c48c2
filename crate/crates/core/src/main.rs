fn main() {
    std::process::exit(reslstm::cli::run());
}
