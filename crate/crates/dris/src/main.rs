fn main() { std::process::exit(dris::cli::main()) }
