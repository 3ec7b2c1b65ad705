fn main() {
    std::process::exit(dstkit::cli::run())
}
