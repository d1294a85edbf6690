use std::process::ExitCode;

fn main() -> ExitCode {
    // SIMPLICITS_THREADS caps worker parallelism; outputs do not depend on
    // the thread count.
    if let Ok(threads) = std::env::var("SIMPLICITS_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        } else {
            eprintln!("warning: ignoring non-numeric SIMPLICITS_THREADS={threads:?}");
        }
    }
    ExitCode::from(simplicits::cli::run(std::env::args()) as u8)
}
