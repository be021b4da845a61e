fn main() {
    std::process::exit(stablesde_cli::dispatch(std::env::args_os()));
}
