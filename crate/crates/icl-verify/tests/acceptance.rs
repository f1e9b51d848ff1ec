use std::process::ExitCode;
use std::time::Instant;

use icl_core::Result;
use icl_verify::*;

fn report(v: &Verdict, secs: f64) {
    for line in &v.lines {
        println!("    {line}");
    }
    println!("{} ({secs:.1}s)", v.status_line());
}

fn timed(f: impl FnOnce() -> Result<Verdict>) -> (Result<Verdict>, f64) {
    let t0 = Instant::now();
    let v = f();
    (v, t0.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    let mut failed = Vec::new();
    let mut settle = |id: usize, outcome: (Result<Verdict>, f64)| match outcome {
        (Ok(v), secs) => {
            report(&v, secs);
            if !v.pass {
                failed.push(id);
            }
        }
        (Err(e), _) => {
            println!("FAIL criterion {id}: error {e}");
            failed.push(id);
        }
    };
    let t0 = Instant::now();
    match iid_sweep() {
        Ok(points) => {
            let secs = t0.elapsed().as_secs_f64();
            settle(1, (Ok(criterion_1(&points)), secs));
            settle(2, (Ok(criterion_2(&points)), 0.0));
        }
        Err(e) => {
            settle(1, (Err(e.clone()), 0.0));
            settle(2, (Err(e), 0.0));
        }
    }
    settle(3, timed(criterion_3));
    settle(4, timed(criterion_4));
    settle(5, timed(criterion_5));
    settle(6, timed(criterion_6));
    settle(7, timed(criterion_7));
    settle(8, timed(criterion_8));
    settle(9, timed(criterion_9));
    settle(10, timed(criterion_10));
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
