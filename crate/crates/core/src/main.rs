fn main() {
    let code = gridmf::cli_main(std::env::args_os());
    std::process::exit(code);
}
