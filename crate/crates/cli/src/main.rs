fn main() {
    std::process::exit(bughunt::main_with_args(std::env::args_os()));
}
