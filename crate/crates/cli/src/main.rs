fn main() {
    bldclass_cli::tune_allocator();
    std::process::exit(bldclass_cli::main_with_args(std::env::args_os()));
}
