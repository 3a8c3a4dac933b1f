//! Portable export of solver results: a JSON container of named-axis arrays
//! and a delimited-text convergence log.

use std::io::{Read, Write};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::IterationLog;
use crate::error::{Error, Result};
use crate::model::SocialState;

/// Row-major array with named axes. Numbers are written with round-trip
/// precision; −∞ (the value of an infeasible bid) is written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub axes: Vec<String>,
    pub shape: Vec<usize>,
    #[serde(with = "nullable")]
    pub data: Vec<f64>,
}

mod nullable {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(data: &[f64], s: S) -> Result<S::Ok, S::Error> {
        if let Some(bad) = data.iter().find(|v| v.is_nan() || **v == f64::INFINITY) {
            return Err(serde::ser::Error::custom(format!("cannot export {bad}")));
        }
        data.iter()
            .map(|v| v.is_finite().then_some(*v))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<Option<f64>>::deserialize(d)?;
        Ok(raw.into_iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect())
    }
}

impl NamedArray {
    pub fn from_array<D: ndarray::Dimension>(
        name: &str,
        axes: &[&str],
        array: &ndarray::Array<f64, D>,
    ) -> Self {
        assert_eq!(axes.len(), array.ndim(), "one name per axis");
        Self {
            name: name.to_owned(),
            axes: axes.iter().map(|a| (*a).to_owned()).collect(),
            shape: array.shape().to_vec(),
            data: array.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<ArrayD<f64>> {
        ArrayD::from_shape_vec(IxDyn(&self.shape), self.data.clone()).map_err(|e| {
            Error::Validation(format!("array `{}` has inconsistent shape: {e}", self.name))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFile {
    pub arrays: Vec<NamedArray>,
}

impl StateFile {
    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }
}

const POLICY_AXES: [&str; 4] = ["type", "urgency", "karma", "bid"];
const DIST_AXES: [&str; 3] = ["type", "urgency", "karma"];

/// Writes π and d, plus V and Q when given.
pub fn write_state<W: Write>(
    out: W,
    state: &SocialState,
    value: Option<&ndarray::Array3<f64>>,
    q: Option<&ndarray::Array4<f64>>,
) -> Result<()> {
    let mut arrays = vec![
        NamedArray::from_array("policy", &POLICY_AXES, &state.policy),
        NamedArray::from_array("distribution", &DIST_AXES, &state.distribution),
    ];
    if let Some(v) = value {
        arrays.push(NamedArray::from_array("value", &DIST_AXES, v));
    }
    if let Some(q) = q {
        arrays.push(NamedArray::from_array("q", &POLICY_AXES, q));
    }
    serde_json::to_writer(out, &StateFile { arrays })?;
    Ok(())
}

/// Reads back the social state written by [`write_state`].
pub fn read_state<R: Read>(input: R) -> Result<(SocialState, StateFile)> {
    let file: StateFile = serde_json::from_reader(input)?;
    let fetch = |name: &str, ndim: usize| -> Result<ArrayD<f64>> {
        let arr = file
            .get(name)
            .ok_or_else(|| Error::Validation(format!("state file lacks `{name}`")))?;
        if arr.shape.len() != ndim || arr.axes.len() != ndim {
            return Err(Error::Validation(format!(
                "`{name}` must have {ndim} axes"
            )));
        }
        arr.to_array()
    };
    let policy = fetch("policy", 4)?
        .into_dimensionality()
        .map_err(|e| Error::Validation(e.to_string()))?;
    let distribution = fetch("distribution", 3)?
        .into_dimensionality()
        .map_err(|e| Error::Validation(e.to_string()))?;
    Ok((SocialState::new(policy, distribution)?, file))
}

/// Convergence log as comma-separated text with a header row.
pub fn write_convergence_log<W: Write>(mut out: W, log: &[IterationLog]) -> Result<()> {
    writeln!(
        out,
        "iteration,residual,karma_len,action_len,mean_karma,value_sweeps"
    )?;
    for l in log {
        writeln!(
            out,
            "{},{:e},{},{},{},{}",
            l.iteration, l.residual, l.karma_len, l.action_len, l.mean_karma, l.value_sweeps
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_initial_distribution, build_initial_policy, DistributionInit, PolicyInit};

    #[test]
    fn round_trip_is_bit_exact() {
        let mut pi = build_initial_policy(PolicyInit::Even, 1, 2, 7, 4).unwrap();
        pi[[0, 1, 6, 0]] = 0.1 + 0.2;
        pi[[0, 1, 6, 1]] = 1.0 - (0.1 + 0.2) - 0.5;
        pi[[0, 1, 6, 2]] = 0.5;
        pi[[0, 1, 6, 3]] = 0.0;
        let d = build_initial_distribution(
            &[1.0],
            &[1.0 / 3.0, 2.0 / 3.0],
            3,
            DistributionInit::UniformBand { half_width: 2 },
            6,
        )
        .unwrap();
        let state = SocialState::new(pi, d).unwrap();
        let v = ndarray::Array3::from_shape_fn((1, 2, 7), |(_, u, k)| -std::f64::consts::PI * (u + k) as f64);
        let mut buf = Vec::new();
        let mut q = ndarray::Array4::from_elem((1, 2, 7, 4), -1.5);
        q[[0, 0, 0, 3]] = f64::NEG_INFINITY;
        write_state(&mut buf, &state, Some(&v), Some(&q)).unwrap();
        let (back, file) = read_state(buf.as_slice()).unwrap();
        let q_back = file.get("q").unwrap().to_array().unwrap();
        assert_eq!(q_back[[0, 0, 0, 3]], f64::NEG_INFINITY);
        assert_eq!(q_back[[0, 1, 2, 1]], -1.5);
        assert_eq!(back, state);
        let v_back = file.get("value").unwrap().to_array().unwrap();
        assert!(v_back.iter().zip(v.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(file.get("policy").unwrap().axes, POLICY_AXES);
    }

    #[test]
    fn log_has_header_and_rows() {
        let log = vec![IterationLog {
            iteration: 1,
            residual: 0.5,
            karma_len: 25,
            action_len: 7,
            mean_karma: 6.0,
            value_sweeps: 12,
        }];
        let mut buf = Vec::new();
        write_convergence_log(&mut buf, &log).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("iteration,"));
        assert_eq!(lines[1], "1,5e-1,25,7,6,12");
    }
}
