fn main() {
    std::process::exit(dag_grow::cli::main_with_args(std::env::args_os()));
}
