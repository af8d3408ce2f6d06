//! Evaluation metrics computed from run results: outflow, travel times,
//! forced stops per segment and instance, and drop-off locations.
//!
//! Only taxis that entered after the warmup contribute to the per-taxi
//! families. Every aggregate here merges commutatively, so per-run reports
//! can be combined in any order.

use serde::{Deserialize, Serialize};

use crate::engine::{RunResult, TaxiRecord};
use crate::error::{domain, Result};

/// Exits per hour among `exit_times` falling in `(start, end]`.
pub fn compute_outflow(exit_times: &[f64], start: f64, end: f64) -> Result<f64> {
    if !(end > start) {
        return Err(domain(format!("empty outflow window ({start}, {end}]")));
    }
    let n = exit_times.iter().filter(|&&t| t > start && t <= end).count();
    Ok(n as f64 * 3600.0 / (end - start))
}

/// Outflow of one run over its post-warmup period.
pub fn run_outflow(run: &RunResult) -> f64 {
    compute_outflow(&run.exit_times(), run.warmup, run.horizon).unwrap_or(0.0)
}

fn counted(run: &RunResult) -> impl Iterator<Item = &TaxiRecord> {
    let warmup = run.warmup;
    run.taxis
        .iter()
        .filter(move |t| t.entry_time.is_some_and(|e| e > warmup))
}

/// Fixed-width histogram anchored at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0) {
            return Err(domain("histogram bin width must be positive"));
        }
        Ok(Self {
            bin_width,
            counts: Vec::new(),
        })
    }

    pub fn add(&mut self, x: f64) {
        let i = (x.max(0.0) / self.bin_width).floor() as usize;
        if i >= self.counts.len() {
            self.counts.resize(i + 1, 0);
        }
        self.counts[i] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &Histogram) {
        if other.counts.len() > self.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// `(bin center, density)` pairs; densities integrate to one.
    pub fn density(&self) -> Vec<(f64, f64)> {
        let total = self.total() as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let d = if total > 0.0 { c as f64 / (total * self.bin_width) } else { 0.0 };
                ((i as f64 + 0.5) * self.bin_width, d)
            })
            .collect()
    }
}

/// Count, sum and histogram of a per-taxi quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub count: u64,
    pub sum: f64,
    pub histogram: Histogram,
}

impl SampleStats {
    pub fn new(bin_width: f64) -> Result<Self> {
        Ok(Self {
            count: 0,
            sum: 0.0,
            histogram: Histogram::new(bin_width)?,
        })
    }

    pub fn add(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.histogram.add(x);
    }

    /// `None` when empty.
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    pub fn merge(&mut self, other: &SampleStats) {
        self.count += other.count;
        self.sum += other.sum;
        self.histogram.merge(&other.histogram);
    }
}

/// Exit time minus lane entry time of post-warmup taxis that exited.
pub fn travel_time_stats(run: &RunResult, bin_width: f64) -> Result<SampleStats> {
    let mut s = SampleStats::new(bin_width)?;
    for t in counted(run) {
        if let Some(tt) = t.travel_time() {
            s.add(tt);
        }
    }
    Ok(s)
}

/// Locations of in-lane discharges of post-warmup taxis.
pub fn dropoff_location_stats(run: &RunResult, bin_width: f64) -> Result<SampleStats> {
    let mut s = SampleStats::new(bin_width)?;
    for t in counted(run) {
        if let Some(d) = &t.dropoff {
            s.add(d.position);
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StopCell {
    pub count: u64,
    pub wait_sum: f64,
}

impl StopCell {
    fn add(&mut self, wait: f64) {
        self.count += 1;
        self.wait_sum += wait;
    }

    pub fn mean_wait(&self) -> Option<f64> {
        (self.count > 0).then(|| self.wait_sum / self.count as f64)
    }

    fn merge(&mut self, o: &StopCell) {
        self.count += o.count;
        self.wait_sum += o.wait_sum;
    }
}

/// Forced stops by lane segment for first instances, pooled for later ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcedStopTable {
    /// Segment edges `[0, b1, ..., L]`.
    pub edges: Vec<f64>,
    pub first_instance: Vec<StopCell>,
    pub later_instances: StopCell,
    /// Stops with instance 5 or higher (counted in `later_instances`).
    pub beyond_fourth: u64,
}

impl ForcedStopTable {
    pub fn new(edges: &[f64]) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(domain("partition edges must be increasing with at least one segment"));
        }
        Ok(Self {
            edges: edges.to_vec(),
            first_instance: vec![StopCell::default(); edges.len() - 1],
            later_instances: StopCell::default(),
            beyond_fourth: 0,
        })
    }

    /// Segment of a position; the last segment is closed on the right and
    /// positions past the edges clamp to the end segments.
    pub fn segment_of(&self, x: f64) -> usize {
        let inner = &self.edges[1..self.edges.len() - 1];
        inner.partition_point(|&b| b <= x)
    }

    pub fn add(&mut self, position: f64, instance: u32, wait: f64) {
        if instance <= 1 {
            let s = self.segment_of(position);
            self.first_instance[s].add(wait);
        } else {
            self.later_instances.add(wait);
            if instance >= 5 {
                self.beyond_fourth += 1;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.first_instance.iter().map(|c| c.count).sum::<u64>() + self.later_instances.count
    }

    pub fn merge(&mut self, other: &ForcedStopTable) -> Result<()> {
        if self.edges != other.edges {
            return Err(domain("cannot merge forced-stop tables over different partitions"));
        }
        for (a, b) in self.first_instance.iter_mut().zip(&other.first_instance) {
            a.merge(b);
        }
        self.later_instances.merge(&other.later_instances);
        self.beyond_fourth += other.beyond_fourth;
        Ok(())
    }
}

pub fn forced_stop_table<'a>(
    runs: impl IntoIterator<Item = &'a RunResult>,
    edges: &[f64],
) -> Result<ForcedStopTable> {
    let mut table = ForcedStopTable::new(edges)?;
    for run in runs {
        for t in counted(run) {
            for s in &t.stops {
                table.add(s.position, s.instance, s.wait);
            }
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsOptions {
    pub travel_time_bin: f64,
    pub location_bin: f64,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            travel_time_bin: 5.0,
            location_bin: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub runs: u64,
    /// Sum over runs of each run's outflow (taxis/h).
    pub outflow_sum: f64,
    pub exits: u64,
    pub travel_time: SampleStats,
    pub dropoff_location: SampleStats,
    pub forced_stops: ForcedStopTable,
}

impl MetricsReport {
    pub fn from_run(run: &RunResult, edges: &[f64], opts: MetricsOptions) -> Result<Self> {
        Ok(Self {
            runs: 1,
            outflow_sum: run_outflow(run),
            exits: run
                .exit_times()
                .iter()
                .filter(|&&t| t > run.warmup && t <= run.horizon)
                .count() as u64,
            travel_time: travel_time_stats(run, opts.travel_time_bin)?,
            dropoff_location: dropoff_location_stats(run, opts.location_bin)?,
            forced_stops: forced_stop_table([run], edges)?,
        })
    }

    /// Mean outflow across the merged runs.
    pub fn outflow(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            self.outflow_sum / self.runs as f64
        }
    }

    pub fn merge(&mut self, other: &MetricsReport) -> Result<()> {
        self.runs += other.runs;
        self.outflow_sum += other.outflow_sum;
        self.exits += other.exits;
        self.travel_time.merge(&other.travel_time);
        self.dropoff_location.merge(&other.dropoff_location);
        self.forced_stops.merge(&other.forced_stops)
    }

    /// Tab-separated summary, one metric per row.
    pub fn summary_tsv(&self) -> String {
        let f = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.3}"));
        let mut out = String::from("metric\tvalue\n");
        out += &format!("runs\t{}\n", self.runs);
        out += &format!("outflow_taxis_per_h\t{:.3}\n", self.outflow());
        out += &format!("travel_time_mean_s\t{}\n", f(self.travel_time.mean()));
        out += &format!("travel_time_count\t{}\n", self.travel_time.count);
        out += &format!("dropoff_location_mean_m\t{}\n", f(self.dropoff_location.mean()));
        out += &format!("dropoff_count\t{}\n", self.dropoff_location.count);
        out += &format!("forced_stops_total\t{}\n", self.forced_stops.total());
        out += "travel_time_origin\tlane_entry\n";
        out
    }

    pub fn forced_stops_tsv(&self) -> String {
        let t = &self.forced_stops;
        let f = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.3}"));
        let mut out = String::from("class\tfrom_m\tto_m\tcount\tmean_wait_s\n");
        for (i, c) in t.first_instance.iter().enumerate() {
            out += &format!(
                "first_segment_{}\t{}\t{}\t{}\t{}\n",
                i + 1,
                t.edges[i],
                t.edges[i + 1],
                c.count,
                f(c.mean_wait())
            );
        }
        out += &format!(
            "later\t{}\t{}\t{}\t{}\n",
            t.edges[0],
            t.edges[t.edges.len() - 1],
            t.later_instances.count,
            f(t.later_instances.mean_wait())
        );
        if t.beyond_fourth > 0 {
            out += &format!("# {} stops beyond the fourth instance\n", t.beyond_fourth);
        }
        out
    }
}

/// `(x, density)` rows as tab-separated text.
pub fn density_tsv(h: &Histogram, x_name: &str) -> String {
    let mut out = format!("{x_name}\tdensity\n");
    for (x, d) in h.density() {
        out += &format!("{x}\t{d:.6}\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{DropoffRecord, StopEpisode};

    #[test]
    fn outflow_arithmetic() {
        let exits: Vec<f64> = (1..=10).map(|i| i as f64 * 10.0).collect();
        assert_eq!(compute_outflow(&exits, 0.0, 100.0).unwrap(), 360.0);
        assert_eq!(compute_outflow(&[], 0.0, 100.0).unwrap(), 0.0);
        assert!(compute_outflow(&exits, 5.0, 5.0).is_err());
    }

    fn taxi(id: u64, entry: f64, exit: f64) -> TaxiRecord {
        TaxiRecord {
            id,
            arrival_time: entry,
            entry_time: Some(entry),
            exit_time: Some(exit),
            has_request: true,
            desired_location: 120.0,
            is_lead: false,
            batch: None,
            dropoff: None,
            stops: Vec::new(),
        }
    }

    fn run(taxis: Vec<TaxiRecord>) -> RunResult {
        RunResult {
            seed: 0,
            warmup: 0.0,
            horizon: 1000.0,
            dt: 0.1,
            taxis,
            events: Vec::new(),
            releases: Vec::new(),
            queue_nonempty_time: 0.0,
            max_queue: 0,
        }
    }

    #[test]
    fn travel_time_and_histogram_mass() {
        let r = run(vec![taxi(0, 1.0, 121.0), taxi(1, 2.0, 99.0)]);
        let s = travel_time_stats(&r, 5.0).unwrap();
        assert_eq!(s.mean(), Some(108.5));
        assert_eq!(s.histogram.total(), 2);
        let mass: f64 = s.histogram.density().iter().map(|(_, d)| d * 5.0).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn warmup_taxis_are_excluded() {
        let mut r = run(vec![taxi(0, 10.0, 100.0), taxi(1, 700.0, 800.0)]);
        r.warmup = 600.0;
        assert_eq!(travel_time_stats(&r, 5.0).unwrap().mean(), Some(100.0));
    }

    #[test]
    fn dropoff_locations() {
        let mut a = taxi(0, 1.0, 50.0);
        let mut b = taxi(1, 2.0, 60.0);
        for (t, x) in [(&mut a, 60.0), (&mut b, 100.0)] {
            t.dropoff = Some(DropoffRecord {
                position: x,
                door_open: 3.0,
                door_close: Some(4.0),
                at_forced_stop: false,
                mandated: false,
            });
        }
        let s = dropoff_location_stats(&run(vec![a, b]), 10.0).unwrap();
        assert_eq!(s.mean(), Some(80.0));
        let empty = dropoff_location_stats(&run(vec![]), 10.0).unwrap();
        assert_eq!(empty.mean(), None);
    }

    fn stop(position: f64, instance: u32, wait: f64) -> StopEpisode {
        StopEpisode {
            start: 10.0,
            end: 10.0 + wait,
            position,
            instance,
            segment: 0,
            wait,
            discharged: false,
        }
    }

    #[test]
    fn forced_stop_buckets() {
        let mut t = taxi(0, 1.0, 300.0);
        t.stops = vec![stop(30.0, 1, 17.0), stop(100.0, 2, 5.0), stop(150.0, 5, 1.0)];
        let mut u = taxi(1, 1.0, 300.0);
        u.stops = vec![stop(91.0, 1, 3.0), stop(240.0, 1, 2.0)];
        let edges = [0.0, 54.5, 91.0, 119.5, 240.0];
        let table = forced_stop_table([&run(vec![t, u])], &edges).unwrap();
        assert_eq!(table.first_instance[0].count, 1);
        assert_eq!(table.first_instance[0].mean_wait(), Some(17.0));
        assert_eq!(table.first_instance[2].count, 1);
        assert_eq!(table.first_instance[3].count, 1);
        assert_eq!(table.later_instances.count, 2);
        assert_eq!(table.beyond_fourth, 1);
        assert_eq!(table.total(), 5);
    }

    #[test]
    fn merge_is_order_independent() {
        let edges = [0.0, 120.0, 240.0];
        let mut a = taxi(0, 1.0, 100.0);
        a.stops = vec![stop(30.0, 1, 4.0)];
        let ra = run(vec![a]);
        let rb = run(vec![taxi(1, 3.0, 250.0), taxi(2, 5.0, 140.0)]);
        let opts = MetricsOptions::default();
        let ma = MetricsReport::from_run(&ra, &edges, opts).unwrap();
        let mb = MetricsReport::from_run(&rb, &edges, opts).unwrap();
        let mut ab = ma.clone();
        ab.merge(&mb).unwrap();
        let mut ba = mb.clone();
        ba.merge(&ma).unwrap();
        assert_eq!(ab.travel_time.count, ba.travel_time.count);
        assert_eq!(ab.travel_time.histogram, ba.travel_time.histogram);
        assert_eq!(ab.forced_stops, ba.forced_stops);
        assert_eq!(ab.runs, 2);
    }
}
