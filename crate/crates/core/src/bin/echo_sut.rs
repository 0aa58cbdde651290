//! Minimal external SUT for the subprocess bridge: answers every query with
//! the reference digests, optionally after a delay.

use std::io;
use std::time::Duration;

use clap::Parser;

use loadgen::digest::{reference_digest, wrong_digest};
use loadgen::harness::bridge::serve;

#[derive(Parser)]
#[command(name = "loadgen-echo-sut", version, about = "Reference SUT for the loadgen bridge protocol")]
struct Args {
    /// Delay before each response, in microseconds.
    #[arg(long, default_value_t = 0)]
    delay_us: u64,
    /// Answer with wrong digests instead.
    #[arg(long)]
    wrong: bool,
}

fn main() -> io::Result<()> {
    let args = Args::parse();
    let delay = Duration::from_micros(args.delay_us);
    serve(io::stdin().lock(), io::stdout().lock(), |_, indices| {
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        indices
            .iter()
            .map(|&i| if args.wrong { wrong_digest(i) } else { reference_digest(i) })
            .collect()
    })
}
