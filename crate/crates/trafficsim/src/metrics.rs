//! Realism and infraction evaluation: reconstruction errors against expert
//! logs (FDE / ATE / CTE), distributional similarity via Jensen-Shannon
//! divergence over feature histograms, infraction rates over
//! learner-controlled agents, and bootstrap confidence intervals.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{obb_overlap, offroad_check, Polyline, Vec2};
use crate::lane_graph::LaneGraph;
use crate::scenario::oracle::lead_vehicle;
use crate::scenario::ExpertTrajectory;
use crate::simulator::{ActionSource, Trajectory};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("horizon tick {0} beyond trajectory length {1}")]
    HorizonBeyondTrajectory(usize, usize),
    #[error("ground-truth path for agent {0} is degenerate")]
    DegenerateGtPath(usize),
    #[error("histograms have mismatched binning")]
    MismatchedBins,
    #[error("no samples for histogram feature")]
    EmptySamples,
    #[error("bootstrap needs at least 2 snippets")]
    SingleSnippet,
    #[error("trajectory sets have mismatched agents")]
    AgentMismatch,
}

/// Default reconstruction horizon in seconds.
pub const FDE_HORIZON_S: f64 = 5.0;

fn horizon_tick(dt: f64, horizon_s: f64) -> usize {
    (horizon_s / dt).round() as usize
}

/// Final displacement error at the horizon, one value per agent.
pub fn fde(
    sim: &Trajectory,
    gt: &ExpertTrajectory,
    horizon_s: f64,
) -> Result<Vec<f64>, MetricsError> {
    let h = horizon_tick(sim.dt, horizon_s);
    if h >= sim.states.len() {
        return Err(MetricsError::HorizonBeyondTrajectory(h, sim.states.len()));
    }
    if h >= gt.states.len() {
        return Err(MetricsError::HorizonBeyondTrajectory(h, gt.states.len()));
    }
    if sim.agent_count() != gt.states[0].len() {
        return Err(MetricsError::AgentMismatch);
    }
    Ok((0..sim.agent_count())
        .map(|i| sim.states[h][i].position().dist(gt.states[h][i].position()))
        .collect())
}

/// Along-track and cross-track error of the simulated horizon position
/// projected onto the ground-truth path, per agent.
pub fn ate_cte(
    sim: &Trajectory,
    gt: &ExpertTrajectory,
    horizon_s: f64,
) -> Result<Vec<(f64, f64)>, MetricsError> {
    let h = horizon_tick(sim.dt, horizon_s);
    if h >= sim.states.len() {
        return Err(MetricsError::HorizonBeyondTrajectory(h, sim.states.len()));
    }
    if h >= gt.states.len() {
        return Err(MetricsError::HorizonBeyondTrajectory(h, gt.states.len()));
    }
    let mut out = Vec::with_capacity(sim.agent_count());
    for i in 0..sim.agent_count() {
        let gt_points: Vec<Vec2> = gt.states.iter().map(|row| row[i].position()).collect();
        let distinct = gt_points
            .iter()
            .any(|p| p.dist(gt_points[0]) > 1e-9);
        if !distinct {
            return Err(MetricsError::DegenerateGtPath(i));
        }
        let path = Polyline::new(gt_points.clone()).map_err(|_| MetricsError::DegenerateGtPath(i))?;
        // Arclength of the GT position at the horizon tick along its own path.
        let mut gt_arc = 0.0;
        for w in gt_points[..=h].windows(2) {
            gt_arc += w[0].dist(w[1]);
        }
        let proj = path.project(sim.states[h][i].position());
        out.push(((gt_arc - proj.arclength).abs(), proj.lateral.abs()));
    }
    Ok(out)
}

/// Uniform-bin histogram with edge clamping for out-of-range samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        assert!(bins >= 1 && hi > lo);
        Histogram {
            lo,
            hi,
            counts: vec![0; bins],
        }
    }

    pub fn add(&mut self, x: f64) {
        let bins = self.counts.len();
        let t = (x - self.lo) / (self.hi - self.lo) * bins as f64;
        let idx = (t.floor() as i64).clamp(0, bins as i64 - 1) as usize;
        self.counts[idx] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Normalized mass vector; sums to 1 whenever any sample exists.
    pub fn mass(&self) -> Vec<f64> {
        let total = self.total();
        if total == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect()
    }

    pub fn merge(&mut self, other: &Histogram) {
        assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn bin_edges(&self) -> Vec<(f64, f64)> {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (0..self.counts.len())
            .map(|i| (self.lo + i as f64 * w, self.lo + (i + 1) as f64 * w))
            .collect()
    }
}

/// Jensen-Shannon divergence in nats between two normalized histograms
/// with identical binning. Bounded by `ln 2`; zero iff the masses match.
pub fn jsd(p: &Histogram, q: &Histogram) -> Result<f64, MetricsError> {
    if p.counts.len() != q.counts.len() || p.lo != q.lo || p.hi != q.hi {
        return Err(MetricsError::MismatchedBins);
    }
    if p.total() == 0 || q.total() == 0 {
        return Err(MetricsError::EmptySamples);
    }
    let (pm, qm) = (p.mass(), q.mass());
    let mut total = 0.0;
    for (a, b) in pm.iter().zip(&qm) {
        let m = 0.5 * (a + b);
        if *a > 0.0 {
            total += 0.5 * a * (a / m).ln();
        }
        if *b > 0.0 {
            total += 0.5 * b * (b / m).ln();
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistFeature {
    Acceleration,
    Speed,
    LateralDeviation,
    LeadDistance,
}

impl HistFeature {
    pub const ALL: [HistFeature; 4] = [
        HistFeature::Acceleration,
        HistFeature::Speed,
        HistFeature::LateralDeviation,
        HistFeature::LeadDistance,
    ];

    pub fn label(self) -> &'static str {
        match self {
            HistFeature::Acceleration => "acceleration",
            HistFeature::Speed => "speed",
            HistFeature::LateralDeviation => "lateral_deviation",
            HistFeature::LeadDistance => "lead_distance",
        }
    }

    /// Default binning per feature.
    pub fn default_histogram(self) -> Histogram {
        match self {
            HistFeature::Acceleration => Histogram::new(-6.0, 6.0, 24),
            HistFeature::Speed => Histogram::new(0.0, 40.0, 40),
            HistFeature::LateralDeviation => Histogram::new(-3.0, 3.0, 24),
            HistFeature::LeadDistance => Histogram::new(0.0, 100.0, 25),
        }
    }
}

/// Accumulate one trajectory's samples into a histogram. Hero agents are
/// excluded; lead distance only samples when a lead exists on the agent's
/// lane within the search horizon.
pub fn accumulate_feature(
    hist: &mut Histogram,
    traj: &Trajectory,
    map: &LaneGraph,
    feature: HistFeature,
) {
    let n = traj.agent_count();
    match feature {
        HistFeature::Acceleration => {
            for row in &traj.actions {
                for i in 0..n {
                    if !traj.hero[i] {
                        hist.add(row[i].accel);
                    }
                }
            }
        }
        HistFeature::Speed => {
            for row in &traj.states {
                for i in 0..n {
                    if !traj.hero[i] {
                        hist.add(row[i].v);
                    }
                }
            }
        }
        HistFeature::LateralDeviation => {
            for row in &traj.states {
                for (i, s) in row.iter().enumerate() {
                    if traj.hero[i] {
                        continue;
                    }
                    if let Some((_, proj)) = map.assign_lane(s.position(), s.theta) {
                        hist.add(proj.lateral);
                    }
                }
            }
        }
        HistFeature::LeadDistance => {
            for row in &traj.states {
                let pairs: Vec<_> = row.iter().map(|s| (*s, true)).collect();
                for i in 0..n {
                    if traj.hero[i] {
                        continue;
                    }
                    if let Some((gap, _)) = lead_vehicle(&pairs, i, map) {
                        hist.add(gap);
                    }
                }
            }
        }
    }
}

/// Histogram of one feature over a set of trajectories.
pub fn feature_histogram(
    trajs: &[(&Trajectory, &LaneGraph)],
    feature: HistFeature,
) -> Result<Histogram, MetricsError> {
    let mut hist = feature.default_histogram();
    for (traj, map) in trajs {
        accumulate_feature(&mut hist, traj, map, feature);
    }
    if hist.total() == 0 {
        return Err(MetricsError::EmptySamples);
    }
    Ok(hist)
}

/// Per-agent infraction kinds recomputed from recorded states, so parsed
/// logs evaluate identically to in-memory rollouts.
pub fn infraction_kinds(traj: &Trajectory, map: &LaneGraph) -> Vec<(bool, bool)> {
    let n = traj.agent_count();
    let mut out = vec![(false, false); n];
    for row in traj.states.iter().skip(1) {
        let boxes: Vec<_> = row.iter().map(|s| s.bounding_box()).collect();
        for i in 0..n {
            if offroad_check(&boxes[i], &map.road_polygon) {
                out[i].1 = true;
            }
            for j in i + 1..n {
                if obb_overlap(&boxes[i], &boxes[j]) {
                    out[i].0 = true;
                    out[j].0 = true;
                }
            }
        }
    }
    out
}

/// Collision and off-road percentages over learner-controlled agents;
/// hero agents are excluded from numerator and denominator.
pub fn infraction_rate(trajs: &[(&Trajectory, &LaneGraph)]) -> (f64, f64) {
    let (mut col, mut off, mut total) = (0usize, 0usize, 0usize);
    for (traj, map) in trajs {
        let kinds = infraction_kinds(traj, map);
        for (i, (c, o)) in kinds.iter().enumerate() {
            if traj.source[i] == ActionSource::Hero {
                continue;
            }
            total += 1;
            if *c {
                col += 1;
            }
            if *o {
                off += 1;
            }
        }
    }
    if total == 0 {
        (0.0, 0.0)
    } else {
        (
            100.0 * col as f64 / total as f64,
            100.0 * off as f64 / total as f64,
        )
    }
}

/// Percentile-bootstrap interval for an arbitrary statistic of snippet
/// indices. Returns `(point, lo, hi)`; deterministic given the generator.
pub fn bootstrap_stat<F: Fn(&[usize]) -> f64>(
    n_snippets: usize,
    stat: F,
    n_resamples: usize,
    rng: &mut ChaCha8Rng,
    level: f64,
) -> Result<(f64, f64, f64), MetricsError> {
    if n_snippets < 2 {
        return Err(MetricsError::SingleSnippet);
    }
    let all: Vec<usize> = (0..n_snippets).collect();
    let point = stat(&all);
    let mut stats = Vec::with_capacity(n_resamples);
    let mut resample = vec![0usize; n_snippets];
    for _ in 0..n_resamples {
        for r in resample.iter_mut() {
            *r = rng.gen_range(0..n_snippets);
        }
        stats.push(stat(&resample));
    }
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| {
        let idx = (p * (stats.len() - 1) as f64).round() as usize;
        stats[idx]
    };
    let tail = 0.5 * (1.0 - level);
    Ok((point, q(tail), q(1.0 - tail)))
}

/// Bootstrap CI of a mean over per-snippet values: `(mean, half-width)`.
pub fn bootstrap_ci(
    values: &[f64],
    n_resamples: usize,
    rng: &mut ChaCha8Rng,
    level: f64,
) -> Result<(f64, f64), MetricsError> {
    let vals = values.to_vec();
    let (point, lo, hi) = bootstrap_stat(
        values.len(),
        |idx| idx.iter().map(|&i| vals[i]).sum::<f64>() / idx.len() as f64,
        n_resamples,
        rng,
        level,
    )?;
    Ok((point, 0.5 * (hi - lo)))
}

/// One line of a metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricLine {
    pub name: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub lines: Vec<MetricLine>,
}

impl MetricReport {
    pub fn push(&mut self, name: &str, mean: f64, ci_low: f64, ci_high: f64) {
        self.lines.push(MetricLine {
            name: name.into(),
            mean,
            ci_low,
            ci_high,
        });
    }

    pub fn get(&self, name: &str) -> Option<&MetricLine> {
        self.lines.iter().find(|l| l.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("metric\tmean\tci_low\tci_high\n");
        for l in &self.lines {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                l.name, l.mean, l.ci_low, l.ci_high
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Option<MetricReport> {
        let mut lines = text.lines();
        lines.next()?;
        let mut report = MetricReport::default();
        for l in lines {
            if l.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = l.split('\t').collect();
            if cols.len() != 4 {
                return None;
            }
            report.push(
                cols[0],
                cols[1].parse().ok()?,
                cols[2].parse().ok()?,
                cols[3].parse().ok()?,
            );
        }
        Some(report)
    }
}

impl Trajectory {
    /// View an expert log as a trajectory (oracle-tagged, zero rewards) so
    /// histogram and infraction code can consume it.
    pub fn from_expert(expert: &ExpertTrajectory) -> Trajectory {
        let n = expert.states[0].len();
        Trajectory {
            dt: expert.dt,
            hero: vec![false; n],
            source: vec![ActionSource::Oracle; n],
            states: expert.states.clone(),
            actions: expert.actions.clone(),
            rewards: vec![vec![0.0; n]; expert.actions.len()],
            log_probs: vec![vec![0.0; n]; expert.actions.len()],
            features: None,
            termination_tick: None,
            first_infraction: vec![None; n],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{AgentAction, AgentKinematicState};
    use crate::seeds::stream_rng;

    fn state(x: f64, y: f64, v: f64) -> AgentKinematicState {
        AgentKinematicState {
            x,
            y,
            theta: 0.0,
            v,
            wheelbase: 2.8,
            box_length: 4.8,
            box_width: 2.0,
        }
    }

    fn straight_expert(n_ticks: usize, v: f64) -> ExpertTrajectory {
        let states = (0..=n_ticks)
            .map(|t| vec![state(t as f64 * v * 0.5, 0.0, v)])
            .collect();
        let actions = (0..n_ticks).map(|_| vec![AgentAction::ZERO]).collect();
        ExpertTrajectory {
            dt: 0.5,
            states,
            actions,
        }
    }

    fn traj_from_expert_offset(e: &ExpertTrajectory, dy: f64, lag_ticks: usize) -> Trajectory {
        let mut t = Trajectory::from_expert(e);
        for (i, row) in t.states.iter_mut().enumerate() {
            for s in row.iter_mut() {
                s.y += dy;
                let src = i.saturating_sub(lag_ticks);
                s.x = e.states[src][0].x;
            }
        }
        t
    }

    #[test]
    fn fde_cases() {
        let gt = straight_expert(12, 10.0);
        let same = Trajectory::from_expert(&gt);
        assert_eq!(fde(&same, &gt, 5.0).unwrap()[0], 0.0);

        let offset = traj_from_expert_offset(&gt, 2.0, 0);
        assert!((fde(&offset, &gt, 5.0).unwrap()[0] - 2.0).abs() < 1e-12);

        // One-tick lag at 10 m/s and dt 0.5: 5 m displacement.
        let lag = traj_from_expert_offset(&gt, 0.0, 1);
        assert!((fde(&lag, &gt, 5.0).unwrap()[0] - 5.0).abs() < 1e-12);

        assert_eq!(
            fde(&same, &gt, 50.0).unwrap_err(),
            MetricsError::HorizonBeyondTrajectory(100, 13)
        );
    }

    #[test]
    fn ate_cte_decomposition() {
        let gt = straight_expert(12, 10.0);
        let same = Trajectory::from_expert(&gt);
        let (ate, cte) = ate_cte(&same, &gt, 5.0).unwrap()[0];
        assert!(ate.abs() < 1e-12 && cte.abs() < 1e-12);

        let offset = traj_from_expert_offset(&gt, 0.5, 0);
        let (ate, cte) = ate_cte(&offset, &gt, 5.0).unwrap()[0];
        assert!(ate.abs() < 1e-12);
        assert!((cte - 0.5).abs() < 1e-12);

        let lag = traj_from_expert_offset(&gt, 0.0, 1);
        let (ate, cte) = ate_cte(&lag, &gt, 5.0).unwrap()[0];
        assert!((ate - 5.0).abs() < 1e-12);
        assert!(cte.abs() < 1e-12);
    }

    #[test]
    fn degenerate_gt_path_rejected() {
        let mut gt = straight_expert(12, 10.0);
        for row in gt.states.iter_mut() {
            row[0] = state(1.0, 0.0, 0.0);
        }
        let sim = Trajectory::from_expert(&gt);
        assert_eq!(
            ate_cte(&sim, &gt, 5.0).unwrap_err(),
            MetricsError::DegenerateGtPath(0)
        );
    }

    #[test]
    fn jsd_cases() {
        let mut p = Histogram::new(0.0, 2.0, 2);
        let mut q = Histogram::new(0.0, 2.0, 2);
        // p = (1, 0), q = (0.5, 0.5)
        p.add(0.5);
        p.add(0.5);
        q.add(0.5);
        q.add(1.5);
        let d = jsd(&p, &q).unwrap();
        assert!((d - 0.2157616).abs() < 1e-4);

        assert_eq!(jsd(&p, &p).unwrap(), 0.0);

        let mut a = Histogram::new(0.0, 2.0, 2);
        let mut b = Histogram::new(0.0, 2.0, 2);
        a.add(0.5);
        b.add(1.5);
        let d = jsd(&a, &b).unwrap();
        assert!((d - std::f64::consts::LN_2).abs() < 1e-12);

        let other = Histogram::new(0.0, 3.0, 2);
        assert_eq!(jsd(&p, &other).unwrap_err(), MetricsError::MismatchedBins);
    }

    #[test]
    fn jsd_symmetric_and_bounded_on_random_histograms() {
        let mut rng = stream_rng(3, "jsd", 0);
        for _ in 0..200 {
            let mut p = Histogram::new(0.0, 1.0, 10);
            let mut q = Histogram::new(0.0, 1.0, 10);
            for _ in 0..50 {
                p.add(rng.gen_range(0.0..1.0));
                q.add(rng.gen_range(0.0..1.0));
            }
            let a = jsd(&p, &q).unwrap();
            let b = jsd(&q, &p).unwrap();
            assert!((a - b).abs() < 1e-12);
            assert!((0.0..=std::f64::consts::LN_2 + 1e-12).contains(&a));
        }
    }

    #[test]
    fn histogram_clamps_out_of_range() {
        let mut h = Histogram::new(0.0, 10.0, 5);
        h.add(-3.0);
        h.add(11.0);
        h.add(5.0);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[4], 1);
        assert_eq!(h.counts[2], 1);
        let mass_sum: f64 = h.mass().iter().sum();
        assert!((mass_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_deterministic_and_degenerate() {
        let vals = vec![2.0; 16];
        let mut rng = stream_rng(1, "boot", 0);
        let (mean, hw) = bootstrap_ci(&vals, 500, &mut rng, 0.95).unwrap();
        assert_eq!(mean, 2.0);
        assert_eq!(hw, 0.0);

        let vals: Vec<f64> = (0..40).map(|i| i as f64 % 7.0).collect();
        let mut r1 = stream_rng(2, "boot", 0);
        let mut r2 = stream_rng(2, "boot", 0);
        let a = bootstrap_ci(&vals, 500, &mut r1, 0.95).unwrap();
        let b = bootstrap_ci(&vals, 500, &mut r2, 0.95).unwrap();
        assert_eq!(a, b);

        let mut rng = stream_rng(3, "boot", 0);
        assert_eq!(
            bootstrap_ci(&[1.0], 100, &mut rng, 0.95).unwrap_err(),
            MetricsError::SingleSnippet
        );
    }

    #[test]
    fn bootstrap_binomial_width() {
        // 500 zeros and 500 ones: CI covers 0.5, half-width within 3x the
        // binomial standard error.
        let mut vals = vec![0.0; 500];
        vals.extend(vec![1.0; 500]);
        let mut rng = stream_rng(4, "boot", 0);
        let (point, lo, hi) = bootstrap_stat(
            vals.len(),
            |idx| idx.iter().map(|&i| vals[i]).sum::<f64>() / idx.len() as f64,
            1000,
            &mut rng,
            0.95,
        )
        .unwrap();
        assert_eq!(point, 0.5);
        assert!(lo <= 0.5 && 0.5 <= hi);
        let se = 0.5 / (1000.0f64).sqrt();
        assert!(0.5 * (hi - lo) <= 3.0 * se, "half width {}", 0.5 * (hi - lo));
    }

    #[test]
    fn report_text_round_trip() {
        let mut r = MetricReport::default();
        r.push("fde", 1.25, 1.0, 1.5);
        r.push("collision_pct", 10.0, 5.0, 15.0);
        let text = r.to_text();
        let back = MetricReport::from_text(&text).unwrap();
        assert_eq!(r, back);
    }
}
