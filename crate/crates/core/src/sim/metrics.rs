//! Run metrics with fixed-width simulated-time buckets.

use std::io::Write;

use serde::{Deserialize, Serialize};

/// Counters over an interval of simulated time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsWindow {
    pub start: f64,
    pub end: f64,
    pub iterations: u64,
    pub attempts: u64,
    pub successes: u64,
    pub early_exits: u64,
}

impl MetricsWindow {
    pub fn elapsed(&self) -> f64 {
        self.end - self.start
    }

    pub fn mpph(&self) -> f64 {
        if self.elapsed() > 0.0 {
            self.successes as f64 * 3600.0 / self.elapsed()
        } else {
            0.0
        }
    }

    /// Undefined without attempts.
    pub fn sr(&self) -> Option<f64> {
        (self.attempts > 0).then(|| self.successes as f64 / self.attempts as f64)
    }

    pub fn eer(&self) -> Option<f64> {
        (self.iterations > 0).then(|| self.early_exits as f64 / self.iterations as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub iterations: u64,
    pub attempts: u64,
    pub successes: u64,
    pub early_exits: u64,
    /// simulated seconds
    pub elapsed: f64,
    pub mpph: f64,
    pub sr: Option<f64>,
    pub eer: Option<f64>,
    pub bucket_seconds: f64,
    pub buckets: Vec<MetricsWindow>,
}

/// What one iteration contributed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationTally {
    pub start: f64,
    pub end: f64,
    pub early_exit: bool,
    /// outcome of the motion executed during this iteration
    pub attempt: Option<bool>,
}

/// Accumulates iterations; each lands in the bucket containing its start.
#[derive(Clone, Debug)]
pub struct MetricsRecorder {
    bucket_seconds: f64,
    total: MetricsWindow,
    buckets: Vec<MetricsWindow>,
}

impl MetricsRecorder {
    pub fn new(bucket_seconds: f64) -> Self {
        MetricsRecorder { bucket_seconds: bucket_seconds.max(1e-9), total: MetricsWindow::default(), buckets: Vec::new() }
    }

    pub fn record(&mut self, t: IterationTally) {
        let b = (t.start / self.bucket_seconds).floor() as usize;
        while self.buckets.len() <= b {
            let i = self.buckets.len() as f64;
            self.buckets.push(MetricsWindow { start: i * self.bucket_seconds, end: i * self.bucket_seconds, ..Default::default() });
        }
        for w in [&mut self.total, &mut self.buckets[b]] {
            w.iterations += 1;
            w.early_exits += t.early_exit as u64;
            if let Some(ok) = t.attempt {
                w.attempts += 1;
                w.successes += ok as u64;
            }
            w.end = w.end.max(t.end);
        }
    }

    pub fn finish(mut self) -> RunMetrics {
        // a bucket covers its nominal span unless the run stopped inside it
        let n = self.buckets.len();
        for (i, w) in self.buckets.iter_mut().enumerate() {
            w.end = if i + 1 < n { (i + 1) as f64 * self.bucket_seconds } else { w.end.max(w.start) };
        }
        let t = &self.total;
        RunMetrics {
            iterations: t.iterations,
            attempts: t.attempts,
            successes: t.successes,
            early_exits: t.early_exits,
            elapsed: t.end,
            mpph: MetricsWindow { start: 0.0, ..t.clone() }.mpph(),
            sr: t.sr(),
            eer: t.eer(),
            bucket_seconds: self.bucket_seconds,
            buckets: self.buckets,
        }
    }
}

#[derive(Serialize)]
struct CsvRow {
    bucket: String,
    start_s: f64,
    end_s: f64,
    iterations: u64,
    attempts: u64,
    successes: u64,
    early_exits: u64,
    mpph: f64,
    sr: Option<f64>,
    eer: Option<f64>,
}

impl CsvRow {
    fn new(bucket: String, w: &MetricsWindow) -> Self {
        CsvRow {
            bucket,
            start_s: w.start,
            end_s: w.end,
            iterations: w.iterations,
            attempts: w.attempts,
            successes: w.successes,
            early_exits: w.early_exits,
            mpph: w.mpph(),
            sr: w.sr(),
            eer: w.eer(),
        }
    }
}

impl RunMetrics {
    pub fn total_window(&self) -> MetricsWindow {
        MetricsWindow {
            start: 0.0,
            end: self.elapsed,
            iterations: self.iterations,
            attempts: self.attempts,
            successes: self.successes,
            early_exits: self.early_exits,
        }
    }

    /// One row per bucket, then a `total` row. Undefined rates are empty cells.
    pub fn write_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (i, b) in self.buckets.iter().enumerate() {
            w.serialize(CsvRow::new(i.to_string(), b))?;
        }
        w.serialize(CsvRow::new("total".into(), &self.total_window()))?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_and_buckets() {
        let mut r = MetricsRecorder::new(300.0);
        r.record(IterationTally { start: 0.0, end: 100.0, early_exit: true, attempt: None });
        r.record(IterationTally { start: 100.0, end: 310.0, early_exit: false, attempt: Some(true) });
        r.record(IterationTally { start: 310.0, end: 400.0, early_exit: false, attempt: Some(false) });
        let m = r.finish();
        assert_eq!((m.iterations, m.attempts, m.successes, m.early_exits), (3, 2, 1, 1));
        assert_eq!(m.sr, Some(0.5));
        assert!((m.mpph - 9.0).abs() < 1e-12);
        assert_eq!(m.buckets.len(), 2);
        assert_eq!(m.buckets[0].end, 300.0);
        assert_eq!(m.buckets[1].end, 400.0);
        assert_eq!(m.buckets[0].sr(), Some(1.0));
    }

    #[test]
    fn empty_run_has_undefined_rates() {
        let m = MetricsRecorder::new(300.0).finish();
        assert_eq!(m.sr, None);
        assert_eq!(m.eer, None);
        assert_eq!(m.mpph, 0.0);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().last().unwrap().starts_with("total,0.0,0.0,0,0,0,0,0.0,,"));
    }
}
