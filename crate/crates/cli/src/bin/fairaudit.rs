fn main() -> std::process::ExitCode {
    fairaudit_cli::main_entry()
}
