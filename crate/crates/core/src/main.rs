use std::io::{self, Write};

use clap::Parser;

use boxavg::cli::{run, Cli, Outcome, EXIT_CONFIG, EXIT_OK};

fn summary(out: &mut impl Write, outcome: &Outcome) -> io::Result<()> {
    let r = &outcome.report;
    writeln!(out, "seed = {}", r.seed)?;
    writeln!(out, "{}", serde_json::to_string(&r.config).expect("config serializes"))?;
    for c in &r.checks {
        let mark = if c.passed { "ok  " } else { "FAIL" };
        if c.detail.is_empty() {
            writeln!(out, "{mark} {}", c.name)?;
        } else {
            writeln!(out, "{mark} {} ({})", c.name, c.detail)?;
        }
    }
    for f in &outcome.files {
        writeln!(out, "wrote {}", f.display())?;
    }
    out.flush()
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(outcome) => {
            // a closed stdout (e.g. `| head`) must not change the exit code
            let _ = summary(&mut io::stdout().lock(), &outcome);
            std::process::exit(outcome.exit_code());
        }
        Err(e) => {
            eprintln!("boxavg: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
