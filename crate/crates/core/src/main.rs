use clap::Parser;

use h2iid::cli::{run_and_emit, RunConfig, EXIT_ERROR};

fn main() {
    // clap exits with 2 on usage errors, which is reserved for verdicts here.
    let cfg = match RunConfig::try_parse() {
        Ok(cfg) => cfg,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    std::process::exit(run_and_emit(&cfg));
}
