fn main() {
    if let Err(e) = steer_cli::run() {
        // One machine-parsable line: error chain joined with "; ".
        let msg = format!("{e:#}").replace('\n', "; ");
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}
