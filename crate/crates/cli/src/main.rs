fn main() {
    std::process::exit(agentfarm_cli::main_with(std::env::args_os()));
}
