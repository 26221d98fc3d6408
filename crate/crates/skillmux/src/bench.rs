//! Wall-clock timing of the online query path.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use skillmux_core::latency::{DriveMode, LatencyReport};

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

/// Runs `warmup` untimed queries (cycling through `queries`), then times each
/// query one at a time. Failures are counted and excluded from percentiles.
pub fn time_queries<F, E>(queries: &[String], warmup: usize, mut run: F) -> LatencyReport
where
    F: FnMut(&str) -> Result<(), E>,
    E: std::fmt::Display,
{
    if !queries.is_empty() {
        for i in 0..warmup {
            let _ = run(&queries[i % queries.len()]);
        }
    }
    let mut latencies = Vec::with_capacity(queries.len());
    let mut failures = Vec::new();
    let phase = Instant::now();
    for q in queries {
        let t = Instant::now();
        match run(q) {
            Ok(()) => latencies.push(ms(t)),
            Err(e) => failures.push(e.to_string()),
        }
    }
    LatencyReport::from_samples(latencies, ms(phase), warmup, failures, DriveMode::Sequential, 1)
}

/// Drives `concurrency` queries in flight until every query has run once.
pub fn throughput<F, E>(queries: &[String], warmup: usize, concurrency: usize, run: F) -> LatencyReport
where
    F: Fn(&str) -> Result<(), E> + Sync,
    E: std::fmt::Display,
{
    if !queries.is_empty() {
        for i in 0..warmup {
            let _ = run(&queries[i % queries.len()]);
        }
    }
    let workers = concurrency.max(1);
    let next = AtomicUsize::new(0);
    let latencies = Mutex::new(Vec::with_capacity(queries.len()));
    let failures = Mutex::new(Vec::new());
    let phase = Instant::now();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(q) = queries.get(i) else { break };
                let t = Instant::now();
                let r = run(q);
                let elapsed = ms(t);
                match r {
                    Ok(()) => latencies.lock().expect("unpoisoned").push(elapsed),
                    Err(e) => failures.lock().expect("unpoisoned").push(e.to_string()),
                }
            });
        }
    });
    let wall = ms(phase);
    LatencyReport::from_samples(
        latencies.into_inner().expect("workers joined"),
        wall,
        warmup,
        failures.into_inner().expect("workers joined"),
        DriveMode::Concurrent,
        workers,
    )
}
