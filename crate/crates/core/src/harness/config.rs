//! Experiment configuration files.
//!
//! Sections in square brackets holding `key = value` lines (TOML syntax).
//! Every key is checked; all problems are collected and reported together.
//!
//! ```toml
//! [experiment]
//! id = "attack-train:p=0.2,0.4"
//! seeds = [1, 2, 3]
//!
//! [trainer]
//! batch_size = 64
//! ```

use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::attacks::{AttackMode, AttackSpec};
use crate::exploration::StrategyKind;
use crate::resilience::AdversaryConfig;
use crate::tabular::{LearningRate, TabularConfig};
use crate::trainer::{AttackStart, TrainerConfig};
use crate::{Error, Result};

/// The built-in experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum Experiment {
    Nominal(StrategyKind),
    /// Attack probabilities, each branched from the same converged run.
    AttackTrain(Vec<f64>),
    /// Adversary benchmark against a victim trained with this strategy.
    Resilience(StrategyKind),
    TabularSweep,
}

fn victim_strategy(name: &str) -> Option<StrategyKind> {
    match name {
        "epsgreedy" | "eps_greedy" => Some(StrategyKind::EpsGreedy),
        "age" => Some(StrategyKind::Age),
        "paramnoise" | "param_noise" => Some(StrategyKind::ParamNoise),
        "boltzmann" => Some(StrategyKind::Boltzmann),
        _ => None,
    }
}

fn strategy_slug(s: StrategyKind) -> &'static str {
    match s {
        StrategyKind::EpsGreedy => "epsgreedy",
        StrategyKind::Age => "age",
        StrategyKind::ParamNoise => "paramnoise",
        StrategyKind::Boltzmann => "boltzmann",
    }
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(id: &str) -> Result<Self> {
        let unknown = || Error::UnknownExperiment(id.to_string());
        if let Some(rest) = id.strip_prefix("nominal-") {
            return victim_strategy(rest).map(Experiment::Nominal).ok_or_else(unknown);
        }
        if let Some(rest) = id.strip_prefix("attack-train:p=") {
            let ps: Vec<f64> = rest
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| unknown())?;
            if ps.is_empty() || ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(unknown());
            }
            return Ok(Experiment::AttackTrain(ps));
        }
        if let Some(rest) = id.strip_prefix("resilience:") {
            return victim_strategy(rest).map(Experiment::Resilience).ok_or_else(unknown);
        }
        if id == "tabular-sweep" {
            return Ok(Experiment::TabularSweep);
        }
        Err(unknown())
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Experiment::Nominal(s) => write!(f, "nominal-{}", strategy_slug(*s)),
            Experiment::AttackTrain(ps) => {
                let ps: Vec<String> = ps.iter().map(f64::to_string).collect();
                write!(f, "attack-train:p={}", ps.join(","))
            }
            Experiment::Resilience(s) => write!(f, "resilience:{}", strategy_slug(*s)),
            Experiment::TabularSweep => f.write_str("tabular-sweep"),
        }
    }
}

/// Which experiment regenerates each figure.
pub const FIGURE_EXPERIMENTS: [(&str, &str); 5] = [
    ("fig1", "attack-train:p=0.2,0.4"),
    ("fig2", "attack-train:p=0.8,1.0"),
    ("fig3", "nominal-age"),
    ("fig4", "resilience:epsgreedy"),
    ("fig5", "resilience:age"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub tabular: TabularConfig,
    pub mdps: Vec<String>,
    pub p_values: Vec<f64>,
    pub modes: Vec<AttackMode>,
    pub gamma: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            tabular: TabularConfig::default(),
            mdps: vec!["chain".into(), "gridworld".into()],
            p_values: (0..=10).map(|i| f64::from(i) / 10.0).collect(),
            modes: vec![AttackMode::StateNeutral],
            gamma: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub id: String,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub trainer: TrainerConfig,
    pub attack: AttackSpec,
    pub adversary: AdversaryConfig,
    pub sweep: SweepConfig,
    /// Greedy evaluation episodes for trained policies.
    pub eval_episodes: usize,
    /// The text the configuration was parsed from.
    pub source: String,
}

/// Reads typed values out of one section, recording problems as it goes.
struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
    errors: &'a mut Vec<String>,
    seen: Vec<&'static str>,
}

impl<'a> Section<'a> {
    fn get(&mut self, key: &'static str) -> Option<&'a Value> {
        self.seen.push(key);
        self.table.and_then(|t| t.get(key))
    }

    fn error(&mut self, key: &str, msg: impl std::fmt::Display) {
        self.errors.push(format!("[{}] {key}: {msg}", self.name));
    }

    fn float(&mut self, key: &'static str, target: &mut f64) {
        match self.get(key) {
            None => {}
            Some(Value::Float(f)) => *target = *f,
            Some(Value::Integer(i)) => *target = *i as f64,
            Some(v) => self.error(key, format!("expected a number, got {}", v.type_str())),
        }
    }

    fn int<T: TryFrom<i64>>(&mut self, key: &'static str, target: &mut T) {
        match self.get(key) {
            None => {}
            Some(Value::Integer(i)) => match T::try_from(*i) {
                Ok(v) => *target = v,
                Err(_) => self.error(key, format!("{i} is out of range")),
            },
            Some(v) => self.error(key, format!("expected an integer, got {}", v.type_str())),
        }
    }

    fn boolean(&mut self, key: &'static str, target: &mut bool) {
        match self.get(key) {
            None => {}
            Some(Value::Boolean(b)) => *target = *b,
            Some(v) => self.error(key, format!("expected a boolean, got {}", v.type_str())),
        }
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &'static str, target: &mut T)
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => {}
            Some(Value::String(s)) => match s.parse() {
                Ok(v) => *target = v,
                Err(e) => self.error(key, e),
            },
            Some(v) => self.error(key, format!("expected a string, got {}", v.type_str())),
        }
    }

    fn array<T>(&mut self, key: &'static str, mut item: impl FnMut(&Value) -> Option<T>) -> Option<Vec<T>> {
        match self.get(key) {
            None => None,
            Some(Value::Array(values)) => {
                let out: Option<Vec<T>> = values.iter().map(&mut item).collect();
                if out.is_none() {
                    self.error(key, "array has an element of the wrong type");
                }
                out
            }
            Some(v) => {
                self.error(key, format!("expected an array, got {}", v.type_str()));
                None
            }
        }
    }

    fn finish(self) {
        if let Some(t) = self.table {
            for key in t.keys() {
                if !self.seen.contains(&key.as_str()) {
                    self.errors.push(format!("[{}] unknown key `{key}`", self.name));
                }
            }
        }
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn parse_learning_rate(s: &str) -> std::result::Result<LearningRate, String> {
    if s == "visit" {
        return Ok(LearningRate::VisitDecay);
    }
    if let Some(w) = s.strip_prefix("poly:") {
        return w
            .parse()
            .map(LearningRate::Polynomial)
            .map_err(|_| format!("bad exponent in `{s}`"));
    }
    s.parse()
        .map(LearningRate::Constant)
        .map_err(|_| format!("`{s}` is not a number, `visit` or `poly:<omega>`"))
}

const SECTIONS: [&str; 5] = ["experiment", "trainer", "attack", "adversary", "tabular"];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let root: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
        let mut errors = Vec::new();
        for (key, value) in &root {
            if !SECTIONS.contains(&key.as_str()) {
                errors.push(format!("unknown section `{key}`"));
            } else if !value.is_table() {
                errors.push(format!("`{key}` must be a section"));
            }
        }
        let table = |name: &str| root.get(name).and_then(Value::as_table);

        let mut id = String::new();
        let mut seeds = vec![0];
        let mut output_dir = None;
        let mut eval_episodes = 100usize;
        {
            let mut sec = Section {
                name: "experiment",
                table: table("experiment"),
                errors: &mut errors,
                seen: vec![],
            };
            if sec.table.is_none() {
                sec.errors.push("missing [experiment] section".into());
            }
            match sec.get("id") {
                Some(Value::String(s)) => id = s.clone(),
                Some(_) => sec.error("id", "expected a string"),
                None if sec.table.is_some() => sec.error("id", "is required"),
                None => {}
            }
            if let Some(s) = sec.array("seeds", |v| v.as_integer().and_then(|i| u64::try_from(i).ok())) {
                if s.is_empty() {
                    sec.error("seeds", "must not be empty");
                }
                seeds = s;
            }
            match sec.get("output_dir") {
                Some(Value::String(s)) => output_dir = Some(PathBuf::from(s)),
                Some(_) => sec.error("output_dir", "expected a string"),
                None => {}
            }
            sec.int("eval_episodes", &mut eval_episodes);
            sec.finish();
        }
        let experiment = match id.parse::<Experiment>() {
            Ok(e) => Some(e),
            Err(e) => {
                if !id.is_empty() {
                    errors.push(e.to_string());
                }
                None
            }
        };

        let mut trainer = TrainerConfig::default();
        if let Some(Experiment::Nominal(s) | Experiment::Resilience(s)) = &experiment {
            trainer.strategy = *s;
        }
        {
            let mut sec = Section {
                name: "trainer",
                table: table("trainer"),
                errors: &mut errors,
                seen: vec![],
            };
            let t = &mut trainer;
            sec.int("total_timesteps", &mut t.total_timesteps);
            sec.float("gamma", &mut t.gamma);
            sec.float("learning_rate", &mut t.learning_rate);
            sec.int("buffer_size", &mut t.buffer_size);
            sec.int("first_learning_step", &mut t.first_learning_step);
            sec.int("target_update_freq", &mut t.target_update_freq);
            sec.int("batch_size", &mut t.batch_size);
            sec.int("train_freq", &mut t.train_freq);
            if let Some(h) = sec.array("hidden_layers", |v| v.as_integer().and_then(|i| usize::try_from(i).ok())) {
                t.hidden_layers = h;
            }
            sec.parsed("activation", &mut t.activation);
            sec.parsed("sampler", &mut t.sampler);
            sec.float("prioritized_alpha", &mut t.prioritized_alpha);
            sec.float("prioritized_beta0", &mut t.prioritized_beta0);
            sec.parsed("strategy", &mut t.strategy);
            sec.float("initial_epsilon", &mut t.initial_epsilon);
            sec.float("final_epsilon", &mut t.final_epsilon);
            sec.float("exploration_fraction", &mut t.exploration_fraction);
            let mut temperature = f64::NAN;
            sec.float("temperature", &mut temperature);
            if !temperature.is_nan() {
                t.temperature = Some(temperature);
            }
            sec.float("param_noise_sigma", &mut t.param_noise_sigma);
            sec.int("param_noise_adapt_interval", &mut t.param_noise_adapt_interval);
            let mut clip = t.grad_clip.unwrap_or(0.0);
            sec.float("grad_clip", &mut clip);
            t.grad_clip = (clip > 0.0).then_some(clip);
            if let AttackStart::AfterConvergence { mut threshold, mut window } = t.attack_start {
                sec.float("convergence_threshold", &mut threshold);
                sec.int("convergence_window", &mut window);
                t.attack_start = AttackStart::AfterConvergence { threshold, window };
            }
            sec.int("post_attack_steps", &mut t.post_attack_steps);
            sec.boolean("record_steps", &mut t.record_steps);
            sec.finish();
        }

        let mut attack = AttackSpec::default();
        {
            let mut sec = Section {
                name: "attack",
                table: table("attack"),
                errors: &mut errors,
                seen: vec![],
            };
            sec.parsed("mode", &mut attack.mode);
            sec.float("step_size", &mut attack.step_size);
            sec.int("max_iterations", &mut attack.max_iterations);
            sec.float("max_linf_radius", &mut attack.max_linf_radius);
            sec.boolean("oracle_fallback", &mut attack.oracle_fallback);
            sec.finish();
        }

        let mut adversary = AdversaryConfig::default();
        {
            let mut sec = Section {
                name: "adversary",
                table: table("adversary"),
                errors: &mut errors,
                seen: vec![],
            };
            let a = &mut adversary;
            sec.int("total_timesteps", &mut a.trainer.total_timesteps);
            sec.int("batch_size", &mut a.trainer.batch_size);
            sec.parsed("strategy", &mut a.trainer.strategy);
            sec.float("c_adv", &mut a.c_adv);
            sec.boolean("observe_victim_q", &mut a.observe_victim_q);
            sec.int("quasi_stable_window", &mut a.quasi_stable_window);
            sec.float("quasi_stable_tolerance", &mut a.quasi_stable_tolerance);
            sec.finish();
        }

        let mut sweep = SweepConfig::default();
        {
            let mut sec = Section {
                name: "tabular",
                table: table("tabular"),
                errors: &mut errors,
                seen: vec![],
            };
            let t = &mut sweep.tabular;
            sec.int("episodes", &mut t.episodes);
            match sec.get("learning_rate") {
                None => {}
                Some(Value::String(s)) => match parse_learning_rate(s) {
                    Ok(lr) => t.learning_rate = lr,
                    Err(e) => sec.error("learning_rate", e),
                },
                Some(v) => match as_f64(v) {
                    Some(f) => t.learning_rate = LearningRate::Constant(f),
                    None => sec.error("learning_rate", "expected a number or string"),
                },
            }
            sec.float("exploration_epsilon", &mut t.exploration_epsilon);
            sec.int("buffer_capacity", &mut t.buffer_capacity);
            sec.int("replays_per_step", &mut t.replays_per_step);
            sec.int("max_episode_steps", &mut t.max_episode_steps);
            sec.float("tail_fraction", &mut t.tail_fraction);
            sec.float("gamma", &mut sweep.gamma);
            if let Some(m) = sec.array("mdps", |v| v.as_str().map(str::to_string)) {
                for name in &m {
                    if name != "chain" && name != "gridworld" {
                        sec.error("mdps", format!("unknown MDP `{name}`"));
                    }
                }
                sweep.mdps = m;
            }
            if let Some(p) = sec.array("p_values", as_f64) {
                sweep.p_values = p;
            }
            if let Some(m) = sec.array("modes", |v| v.as_str().and_then(|s| s.parse().ok())) {
                sweep.modes = m;
            }
            sec.finish();
        }

        if let Err(Error::Config(errs)) = trainer.validate() {
            errors.extend(errs.into_iter().map(|e| format!("[trainer] {e}")));
        }
        if let Err(e) = attack.validate() {
            errors.push(format!("[attack] {e}"));
        }
        if let Err(Error::Config(errs)) = adversary.trainer.validate() {
            errors.extend(errs.into_iter().map(|e| format!("[adversary] {e}")));
        }
        if sweep.p_values.iter().any(|p| !(0.0..=1.0).contains(p)) {
            errors.push("[tabular] p_values must lie in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&sweep.tabular.tail_fraction) || sweep.tabular.episodes == 0 {
            errors.push("[tabular] need episodes > 0 and tail_fraction in [0, 1)".into());
        }
        if eval_episodes == 0 {
            errors.push("[experiment] eval_episodes must be positive".into());
        }

        match experiment {
            Some(experiment) if errors.is_empty() => Ok(Self {
                experiment,
                id,
                seeds,
                output_dir,
                trainer,
                attack,
                adversary,
                sweep,
                eval_episodes,
                source: text.to_string(),
            }),
            _ => Err(Error::Config(errors)),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Directory name derived from the experiment id.
    pub fn slug(&self) -> String {
        self.id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Sampler;

    #[test]
    fn experiment_names_round_trip() {
        for id in [
            "nominal-epsgreedy",
            "nominal-age",
            "nominal-paramnoise",
            "attack-train:p=0.2,0.4",
            "attack-train:p=1",
            "resilience:epsgreedy",
            "resilience:age",
            "tabular-sweep",
        ] {
            let e: Experiment = id.parse().unwrap();
            assert_eq!(e.to_string(), id);
        }
        for bad in ["nominal-x", "attack-train:p=2", "attack-train:p=", "foo"] {
            assert!(matches!(bad.parse::<Experiment>(), Err(Error::UnknownExperiment(_))));
        }
    }

    #[test]
    fn figures_map_to_distinct_experiments() {
        let mut ids: Vec<&str> = FIGURE_EXPERIMENTS.iter().map(|f| f.1).collect();
        ids.iter().for_each(|id| assert!(id.parse::<Experiment>().is_ok()));
        ids.dedup();
        assert_eq!(ids.len(), 5);
    }

    #[test]
    fn minimal_config() {
        let c = ExperimentConfig::parse("[experiment]\nid = \"nominal-age\"\nseeds = [3, 4]\n").unwrap();
        assert_eq!(c.experiment, Experiment::Nominal(StrategyKind::Age));
        assert_eq!(c.trainer.strategy, StrategyKind::Age);
        assert_eq!(c.seeds, vec![3, 4]);
        assert_eq!(c.trainer.total_timesteps, 100_000);
    }

    #[test]
    fn overrides_apply() {
        let text = r#"
[experiment]
id = "tabular-sweep"
[trainer]
batch_size = 64
hidden_layers = [32]
sampler = "uniform"
[tabular]
learning_rate = "poly:0.8"
p_values = [0, 0.5]
modes = ["targeted"]
"#;
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.trainer.batch_size, 64);
        assert_eq!(c.trainer.hidden_layers, vec![32]);
        assert_eq!(c.trainer.sampler, Sampler::Uniform);
        assert_eq!(c.sweep.tabular.learning_rate, LearningRate::Polynomial(0.8));
        assert_eq!(c.sweep.p_values, vec![0.0, 0.5]);
        assert_eq!(c.sweep.modes, vec![AttackMode::Targeted]);
    }

    #[test]
    fn all_errors_are_listed() {
        let text = r#"
[experiment]
id = "nominal-bogus"
colour = "red"
[trainer]
gamma = "high"
batch_size = -1
[extra]
x = 1
"#;
        match ExperimentConfig::parse(text) {
            Err(Error::Config(errs)) => {
                let joined = errs.join("\n");
                assert!(joined.contains("unknown section `extra`"), "{joined}");
                assert!(joined.contains("unknown key `colour`"), "{joined}");
                assert!(joined.contains("gamma"), "{joined}");
                assert!(joined.contains("batch_size"), "{joined}");
                assert!(joined.contains("nominal-bogus"), "{joined}");
            }
            other => panic!("{other:?}"),
        }
    }
}
