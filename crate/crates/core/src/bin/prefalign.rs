fn main() {
    let mut stdout = std::io::stdout();
    std::process::exit(prefalign::cli::main_with(std::env::args_os(), &mut stdout));
}
