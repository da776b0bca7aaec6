fn main() {
	std::process::exit(tierqos::cli::main_with_args(std::env::args_os()));
}
