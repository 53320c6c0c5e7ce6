fn main() {
    std::process::exit(fewshot_graph::cli::run_args(std::env::args_os()));
}
