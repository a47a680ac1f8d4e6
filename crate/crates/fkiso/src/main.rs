fn main() {
    if let Err(e) = fkiso::cli::main() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
