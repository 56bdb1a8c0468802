//! Versioned CSV logs.
//!
//! Each file starts with a `#schema=agelab.<kind>.v1` comment. Floats use
//! Rust's shortest round-trip formatting, so equal values always print the
//! same bytes.

use std::io::Write;
use std::path::Path;

use crate::resilience::RegretLog;
use crate::tabular::SweepRow;
use crate::trainer::TrainLog;
use crate::{Error, Result};

pub fn schema_line(kind: &str) -> String {
    format!("#schema=agelab.{kind}.v1")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes a schema comment, a header and string rows.
pub fn write_table(path: &Path, kind: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "{}", schema_line(kind)).expect("writing to memory");
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn episode_rows(log: &TrainLog) -> Vec<Vec<String>> {
    log.episodes
        .iter()
        .map(|e| {
            vec![
                e.episode.to_string(),
                e.end_step.to_string(),
                e.reward.to_string(),
                opt(e.ma100),
                e.attacked_steps.to_string(),
                e.perturbed_fraction.to_string(),
                opt(e.pre_attack_remaining),
            ]
        })
        .collect()
}

pub const EPISODE_HEADER: [&str; 7] = [
    "episode",
    "end_step",
    "reward",
    "ma100",
    "attacked_steps",
    "perturbed_fraction",
    "pre_attack_remaining",
];

pub fn write_episodes(path: &Path, log: &TrainLog) -> Result<()> {
    write_table(path, "episodes", &EPISODE_HEADER, &episode_rows(log))
}

pub fn write_steps(path: &Path, log: &TrainLog) -> Result<()> {
    let rows: Vec<Vec<String>> = log
        .steps
        .iter()
        .map(|s| {
            vec![
                s.step.to_string(),
                s.episode.to_string(),
                s.episode_reward.to_string(),
                s.epsilon.to_string(),
                opt(s.loss),
                u8::from(s.attacked).to_string(),
            ]
        })
        .collect();
    write_table(
        path,
        "steps",
        &["step", "episode", "episode_reward", "epsilon", "loss", "attacked"],
        &rows,
    )
}

pub fn write_regret(path: &Path, log: &RegretLog) -> Result<()> {
    let rows: Vec<Vec<String>> = log
        .rows
        .iter()
        .map(|r| {
            vec![
                r.episode.to_string(),
                r.victim_reward.to_string(),
                r.regret.to_string(),
                r.perturbations.to_string(),
                r.ma100_regret.to_string(),
                r.ma100_perturbations.to_string(),
            ]
        })
        .collect();
    write_table(
        path,
        "regret",
        &[
            "episode",
            "victim_reward",
            "regret",
            "perturbations",
            "ma100_regret",
            "ma100_perturbations",
        ],
        &rows,
    )
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.p_attack.to_string(),
                r.seed.to_string(),
                r.mode.to_string(),
                u8::from(r.converged).to_string(),
                opt(r.episodes_to_converge),
            ]
        })
        .collect();
    write_table(
        path,
        "sweep",
        &["p_attack", "seed", "mode", "converged", "episodes_to_converge"],
        &rows,
    )
}

/// A parsed CSV log: header names and string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let body: String = text
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| format!("{l}\n"))
            .collect();
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { header, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Numeric column; empty or unparsable cells become `None`.
    pub fn column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let i = self.column_index(name)?;
        Ok(self
            .rows
            .iter()
            .map(|r| r.get(i).and_then(|c| c.parse().ok()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_table(
            &path,
            "demo",
            &["a", "b"],
            &[vec!["1".into(), "0.5".into()], vec!["2".into(), "".into()]],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("#schema=agelab.demo.v1\n"));
        let t = Table::read(&path).unwrap();
        assert_eq!(t.header, vec!["a", "b"]);
        assert_eq!(t.column("b").unwrap(), vec![Some(0.5), None]);
        assert!(matches!(t.column("c"), Err(Error::MissingColumn(_))));
    }
}
