fn main() {
    std::process::exit(linerdyn::cli_io::cli(std::env::args_os()));
}
