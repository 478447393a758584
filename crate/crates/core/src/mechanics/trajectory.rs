//! Staggered states, contact signals and trajectories.

use std::fmt::Write as _;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{CoreError, Result};

/// Positions at `t_n` and velocities at `t_{n+1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredState {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub n: usize,
}

impl StaggeredState {
    pub fn new(q: Vec<f64>, qdot: Vec<f64>, n: usize) -> Self {
        debug_assert_eq!(q.len(), qdot.len());
        Self { q, qdot, n }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qdot).all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.q.iter().chain(&self.qdot).fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `[Q; Qdot]` as one vector.
    pub fn concat(&self) -> Vec<f64> {
        self.q.iter().chain(&self.qdot).copied().collect()
    }
}

/// One binary contact flag per body. Serialised as 0/1 integers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContactSignal(pub Vec<bool>);

impl ContactSignal {
    pub fn none(k: usize) -> Self {
        Self(vec![false; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn any(&self) -> bool {
        self.0.iter().any(|&c| c)
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect()
    }
}

impl Serialize for ContactSignal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|&c| u8::from(c)))
    }
}

impl<'de> Deserialize<'de> for ContactSignal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<u8>::deserialize(d)?;
        raw.iter()
            .map(|&c| match c {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!(
                    "contact flag must be 0 or 1, got {other}"
                ))),
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(ContactSignal)
    }
}

/// A sequence of states with one contact signal per state.
///
/// `contacts[i]` reports whether an impulse acted when `states[i]` was
/// produced; the first entry of a freshly generated trajectory is all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<StaggeredState>,
    pub contacts: Vec<ContactSignal>,
    pub h: f64,
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryDoc {
    start: usize,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "Qdot")]
    qdot: Vec<Vec<f64>>,
    c: Vec<ContactSignal>,
}

impl Serialize for Trajectory {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TrajectoryDoc {
            start: self.states.first().map_or(0, |st| st.n),
            q: self.states.iter().map(|st| st.q.clone()).collect(),
            qdot: self.states.iter().map(|st| st.qdot.clone()).collect(),
            c: self.contacts.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Trajectory {
    /// `h`, `sigma` and `seed` live on the enclosing dataset and are
    /// filled in by it.
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = TrajectoryDoc::deserialize(d)?;
        if doc.q.len() != doc.qdot.len() || doc.q.len() != doc.c.len() {
            return Err(serde::de::Error::custom("Q, Qdot and c must have equal length"));
        }
        let states = doc
            .q
            .into_iter()
            .zip(doc.qdot)
            .enumerate()
            .map(|(i, (q, qdot))| StaggeredState::new(q, qdot, doc.start + i))
            .collect();
        Ok(Trajectory {
            states,
            contacts: doc.c,
            h: 0.0,
            sigma: 0.0,
            seed: 0,
        })
    }
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.contacts.len() {
            return Err(CoreError::Length(format!(
                "{} states but {} contact signals",
                self.states.len(),
                self.contacts.len()
            )));
        }
        Ok(())
    }

    /// `len` consecutive states starting at index `start`.
    pub fn window(&self, start: usize, len: usize) -> Trajectory {
        Trajectory {
            states: self.states[start..start + len].to_vec(),
            contacts: self.contacts[start..start + len].to_vec(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Trajectory {
        Trajectory {
            states: Vec::new(),
            contacts: Vec::new(),
            h: self.h,
            sigma: self.sigma,
            seed: self.seed,
        }
    }

    pub fn contact_events(&self) -> usize {
        self.contacts.iter().filter(|c| c.any()).count()
    }

    /// Columns `t, q_1..q_D, v_1..v_D, c_1..c_K`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(first) = self.states.first() {
            out.push_str(&csv_header(first.q.len(), self.contacts[0].len()));
        }
        self.append_csv_rows(&mut out);
        out
    }

    pub(crate) fn append_csv_rows(&self, out: &mut String) {
        for (st, c) in self.states.iter().zip(&self.contacts) {
            let _ = write!(out, "{}", st.n as f64 * self.h);
            for x in st.q.iter().chain(&st.qdot) {
                let _ = write!(out, ",{x}");
            }
            for &f in &c.0 {
                let _ = write!(out, ",{}", u8::from(f));
            }
            out.push('\n');
        }
    }
}

pub(crate) fn csv_header(d: usize, k: usize) -> String {
    let mut h = String::from("t");
    for i in 1..=d {
        let _ = write!(h, ",q_{i}");
    }
    for i in 1..=d {
        let _ = write!(h, ",v_{i}");
    }
    for i in 1..=k {
        let _ = write!(h, ",c_{i}");
    }
    h.push('\n');
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        Trajectory {
            states: vec![
                StaggeredState::new(vec![1.0, 2.0], vec![0.5, -0.5], 3),
                StaggeredState::new(vec![1.5, 1.5], vec![-0.5, 0.5], 4),
            ],
            contacts: vec![ContactSignal::none(2), ContactSignal(vec![true, true])],
            h: 0.02,
            sigma: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn contact_signal_is_integer_encoded() {
        let c = ContactSignal(vec![true, false]);
        assert_eq!(serde_json::to_string(&c).unwrap(), "[1,0]");
        let back: ContactSignal = serde_json::from_str("[0,1]").unwrap();
        assert_eq!(back.0, vec![false, true]);
        assert!(serde_json::from_str::<ContactSignal>("[2]").is_err());
    }

    #[test]
    fn json_round_trip_keeps_indices() {
        let t = sample();
        let text = serde_json::to_string(&t).unwrap();
        assert!(text.contains("\"Q\":[[1.0,2.0],[1.5,1.5]]"));
        let mut back: Trajectory = serde_json::from_str(&text).unwrap();
        back.h = 0.02;
        assert_eq!(back, t);
    }

    #[test]
    fn csv_layout() {
        let csv = sample().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,q_1,q_2,v_1,v_2,c_1,c_2");
        assert_eq!(lines[2], "0.08,1.5,1.5,-0.5,0.5,1,1");
    }
}
