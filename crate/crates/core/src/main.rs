fn main() -> std::process::ExitCode {
    pat_recon::cli::run(std::env::args_os())
}
