//! Recorded rollouts and their columnar log format.
//!
//! Log schema: one CSV row per `(tick, agent)` with columns
//! `tick, agent_id, x, y, theta, v, accel, steer, reward, alive, source_tag`.
//! The final tick's row carries the terminal state with empty action and
//! reward cells. Floats print in shortest round-trip form, so replaying a
//! parsed log is exact.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{AgentAction, AgentKinematicState};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed trajectory log at line {0}: {1}")]
    Malformed(usize, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    Hero,
    Learner,
    Oracle,
}

impl ActionSource {
    pub fn tag(self) -> &'static str {
        match self {
            ActionSource::Hero => "hero",
            ActionSource::Learner => "learner",
            ActionSource::Oracle => "oracle",
        }
    }

    fn from_tag(s: &str) -> Option<Self> {
        match s {
            "hero" => Some(ActionSource::Hero),
            "learner" => Some(ActionSource::Learner),
            "oracle" => Some(ActionSource::Oracle),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfractionKind {
    Collision,
    Offroad,
}

/// A recorded rollout of `T` transitions over `T + 1` joint states.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub hero: Vec<bool>,
    pub source: Vec<ActionSource>,
    /// `ticks() + 1` entries.
    pub states: Vec<Vec<AgentKinematicState>>,
    pub actions: Vec<Vec<AgentAction>>,
    pub rewards: Vec<Vec<f64>>,
    /// Log-probability of each recorded learner action under the behavior
    /// policy; zero for scripted agents.
    pub log_probs: Vec<Vec<f64>>,
    /// Feature vectors recorded at decision time (when requested).
    pub features: Option<Vec<Vec<Vec<f64>>>>,
    /// State index at which the scenario ended early, if it did.
    pub termination_tick: Option<usize>,
    /// First infraction per agent: `(state index, kind)`.
    pub first_infraction: Vec<Option<(usize, InfractionKind)>>,
}

impl Trajectory {
    pub fn ticks(&self) -> usize {
        self.actions.len()
    }

    pub fn agent_count(&self) -> usize {
        self.hero.len()
    }

    /// Per-agent discounted return of the recorded rewards.
    pub fn discounted_return(&self, agent: usize, gamma: f64) -> f64 {
        self.rewards
            .iter()
            .enumerate()
            .map(|(t, r)| gamma.powi(t as i32) * r[agent])
            .sum()
    }

    pub fn agent_positions(&self, agent: usize) -> Vec<crate::geometry::Vec2> {
        self.states.iter().map(|s| s[agent].position()).collect()
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Write the columnar trajectory log.
pub fn write_trajectory_log<W: Write>(w: &mut W, traj: &Trajectory) -> Result<(), LogError> {
    writeln!(
        w,
        "tick,agent_id,x,y,theta,v,accel,steer,reward,alive,source_tag"
    )?;
    let t_states = traj.states.len();
    for t in 0..t_states {
        for (i, s) in traj.states[t].iter().enumerate() {
            let (accel, steer, reward) = if t < traj.actions.len() {
                (
                    fmt_f64(traj.actions[t][i].accel),
                    fmt_f64(traj.actions[t][i].steer),
                    fmt_f64(traj.rewards[t][i]),
                )
            } else {
                (String::new(), String::new(), String::new())
            };
            let alive = match traj.first_infraction[i] {
                Some((tick, _)) => t < tick,
                None => true,
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                t,
                i,
                fmt_f64(s.x),
                fmt_f64(s.y),
                fmt_f64(s.theta),
                fmt_f64(s.v),
                accel,
                steer,
                reward,
                alive,
                traj.source[i].tag()
            )?;
        }
    }
    Ok(())
}

/// Parse a trajectory log written by [`write_trajectory_log`]. Wheelbase
/// and box extents are not logged; the provided prototypes fill them in.
pub fn read_trajectory_log<R: BufRead>(
    r: &mut R,
    dt: f64,
    prototype: &AgentKinematicState,
) -> Result<Trajectory, LogError> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| LogError::Malformed(0, "empty file".into()))??;
    if header != "tick,agent_id,x,y,theta,v,accel,steer,reward,alive,source_tag" {
        return Err(LogError::Malformed(1, "unexpected header".into()));
    }
    let mut states: Vec<Vec<AgentKinematicState>> = Vec::new();
    let mut actions: Vec<Vec<AgentAction>> = Vec::new();
    let mut rewards: Vec<Vec<f64>> = Vec::new();
    let mut source: Vec<ActionSource> = Vec::new();
    let mut alive_rows: Vec<Vec<bool>> = Vec::new();
    for (ln, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 11 {
            return Err(LogError::Malformed(ln + 2, "wrong column count".into()));
        }
        let bad = |m: &str| LogError::Malformed(ln + 2, m.into());
        let tick: usize = cols[0].parse().map_err(|_| bad("tick"))?;
        let agent: usize = cols[1].parse().map_err(|_| bad("agent_id"))?;
        let f = |s: &str, m: &str| -> Result<f64, LogError> {
            s.parse::<f64>().map_err(|_| bad(m))
        };
        while states.len() <= tick {
            states.push(Vec::new());
            alive_rows.push(Vec::new());
        }
        if states[tick].len() != agent {
            return Err(bad("agent rows out of order"));
        }
        states[tick].push(AgentKinematicState {
            x: f(cols[2], "x")?,
            y: f(cols[3], "y")?,
            theta: f(cols[4], "theta")?,
            v: f(cols[5], "v")?,
            ..*prototype
        });
        alive_rows[tick].push(cols[9] == "true");
        if !cols[6].is_empty() {
            while actions.len() <= tick {
                actions.push(Vec::new());
                rewards.push(Vec::new());
            }
            actions[tick].push(AgentAction {
                accel: f(cols[6], "accel")?,
                steer: f(cols[7], "steer")?,
            });
            rewards[tick].push(f(cols[8], "reward")?);
        }
        if tick == 0 {
            source.push(ActionSource::from_tag(cols[10]).ok_or_else(|| bad("source_tag"))?);
        }
    }
    let n = source.len();
    let hero = source.iter().map(|s| *s == ActionSource::Hero).collect();
    // Recover first-infraction ticks from the alive column transitions.
    let mut first_infraction = vec![None; n];
    for (t, row) in alive_rows.iter().enumerate() {
        for (i, &alive) in row.iter().enumerate() {
            if !alive && first_infraction[i].is_none() {
                // The kind is not encoded in the log; collisions and
                // off-road both appear as "not alive" here.
                first_infraction[i] = Some((t, InfractionKind::Collision));
            }
        }
    }
    Ok(Trajectory {
        dt,
        hero,
        source,
        log_probs: actions.iter().map(|a| vec![0.0; a.len()]).collect(),
        states,
        actions,
        rewards,
        features: None,
        termination_tick: None,
        first_infraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_traj() -> Trajectory {
        let s = |x: f64, v: f64| AgentKinematicState {
            x,
            y: 0.123456789012345,
            theta: 0.1,
            v,
            wheelbase: 2.8,
            box_length: 4.8,
            box_width: 2.0,
        };
        Trajectory {
            dt: 0.5,
            hero: vec![false, true],
            source: vec![ActionSource::Learner, ActionSource::Hero],
            states: vec![
                vec![s(0.0, 10.0), s(20.0, 8.0)],
                vec![s(5.0, 10.1), s(24.0, 8.0)],
            ],
            actions: vec![vec![
                AgentAction {
                    accel: 0.2,
                    steer: -0.01,
                },
                AgentAction {
                    accel: 0.0,
                    steer: 0.0,
                },
            ]],
            rewards: vec![vec![0.0, -1.0]],
            log_probs: vec![vec![-1.5, 0.0]],
            features: None,
            termination_tick: Some(1),
            first_infraction: vec![None, Some((1, InfractionKind::Collision))],
        }
    }

    #[test]
    fn log_round_trip_is_exact() {
        let traj = tiny_traj();
        let mut buf = Vec::new();
        write_trajectory_log(&mut buf, &traj).unwrap();
        let proto = traj.states[0][0];
        let parsed = read_trajectory_log(&mut buf.as_slice(), 0.5, &proto).unwrap();
        assert_eq!(parsed.states.len(), traj.states.len());
        for (a, b) in parsed.states.iter().zip(&traj.states) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.x, y.x);
                assert_eq!(x.y, y.y);
                assert_eq!(x.theta, y.theta);
                assert_eq!(x.v, y.v);
            }
        }
        assert_eq!(parsed.actions, traj.actions);
        assert_eq!(parsed.rewards, traj.rewards);
        assert_eq!(parsed.source, traj.source);
        assert_eq!(parsed.first_infraction[1].map(|(t, _)| t), Some(1));
    }

    #[test]
    fn discounted_return_hand_case() {
        let mut traj = tiny_traj();
        traj.rewards = vec![vec![0.0, 0.0]];
        assert_eq!(traj.discounted_return(0, 0.79), 0.0);
        traj.rewards = vec![vec![-1.0, 0.0]];
        assert_eq!(traj.discounted_return(0, 0.79), -1.0);
    }
}
