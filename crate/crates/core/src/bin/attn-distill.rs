fn main() {
    std::process::exit(attn_distill::cli::run(std::env::args_os()));
}
