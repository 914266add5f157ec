//! Flat `key = value` configuration with dotted keys, e.g. `solver.gamma = 100`.
//! Lines starting with `#` are comments. Later assignments override earlier
//! ones, which is how command-line `--set` overrides are applied.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::bilevel::{BilevelConfig, GradMode, StepRule};
use crate::error::{Error, Result};
use crate::grid::Boundary;
use crate::io::noise::NoiseSpec;
use crate::regularizer::HuberParams;
use crate::ssn::{Damping, Linearization, SolverConfig, StateModel};

pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "model",
    "model.gamma_l1",
    "solver.gamma",
    "solver.variant",
    "solver.g_cap",
    "solver.epsilon",
    "solver.tol",
    "solver.max_iter",
    "solver.damping",
    "solver.max_backtracks",
    "solver.boundary",
    "solver.linearization",
    "solver.u_floor",
    "bilevel.beta",
    "bilevel.alpha",
    "bilevel.grad_mode",
    "bilevel.step",
    "bilevel.max_halvings",
    "bilevel.tol_grad",
    "bilevel.tol_cost",
    "bilevel.max_iter",
    "bilevel.lambda0",
    "noise",
    "input.clean",
    "input.noisy",
    "input.phantom",
    "input.size",
    "output.dir",
    "output.depth",
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Config::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            c.assign(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies one `key=value` assignment.
    pub fn assign(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.entries
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("{key} = {v:?}: {e}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Sorted `key=value` lines without `output.dir`; the hashed form of the
    /// configuration. Runs that differ only in where they write share a hash.
    pub fn canonical(&self) -> String {
        self.entries
            .iter()
            .filter(|(k, _)| k.as_str() != "output.dir")
            .fold(String::new(), |mut s, (k, v)| {
                let _ = writeln!(s, "{k}={v}");
                s
            })
    }

    /// Hex SHA-256 of [`Config::canonical`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .fold(String::new(), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_or("seed", 0)
    }

    pub fn model(&self) -> Result<StateModel> {
        let gamma_l1 = match self.get::<f64>("model.gamma_l1")? {
            Some(g) => g,
            None => self.get_or("solver.gamma", SolverConfig::default().huber.gamma)?,
        };
        match self.get_str("model").unwrap_or("gaussian") {
            "gaussian" => Ok(StateModel::Gaussian),
            "gauss_poisson" | "gauss-poisson" => Ok(StateModel::GaussPoisson),
            "impulse" => Ok(StateModel::Impulse { gamma_l1 }),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }

    pub fn solver(&self) -> Result<SolverConfig> {
        let d = SolverConfig::default();
        let gamma = self.get_or("solver.gamma", d.huber.gamma)?;
        let huber = match self.get_str("solver.variant").unwrap_or("max") {
            "max" => HuberParams::max_form(gamma),
            "c1" => HuberParams::c1_form(gamma, self.get_or("solver.g_cap", 1.0)?),
            other => return Err(Error::Config(format!("unknown Huber variant {other:?}"))),
        };
        let damping = match self.get_str("solver.damping").unwrap_or("halving") {
            "none" => Damping::None,
            "halving" => Damping::Halving {
                max_backtracks: self.get_or("solver.max_backtracks", 10)?,
            },
            other => return Err(Error::Config(format!("unknown damping {other:?}"))),
        };
        let boundary = match self.get_str("solver.boundary").unwrap_or("dirichlet") {
            "dirichlet" => Boundary::Dirichlet,
            "neumann" => Boundary::Neumann,
            other => return Err(Error::Config(format!("unknown boundary {other:?}"))),
        };
        let linearization = match self.get_str("solver.linearization").unwrap_or("modified") {
            "modified" => Linearization::Modified,
            "plain" => Linearization::Plain,
            other => return Err(Error::Config(format!("unknown linearization {other:?}"))),
        };
        let cfg = SolverConfig {
            epsilon: self.get_or("solver.epsilon", d.epsilon)?,
            huber,
            tol_ssn: self.get_or("solver.tol", d.tol_ssn)?,
            max_ssn: self.get_or("solver.max_iter", d.max_ssn)?,
            damping,
            boundary,
            linearization,
            u_floor: self.get_or("solver.u_floor", d.u_floor)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bilevel(&self) -> Result<BilevelConfig> {
        let d = BilevelConfig::default();
        let grad_mode = match self.get_str("bilevel.grad_mode").unwrap_or("forward_fd") {
            "forward_fd" => GradMode::ForwardFd,
            "central_fd" => GradMode::CentralFd,
            "adjoint" => GradMode::Adjoint,
            other => return Err(Error::Config(format!("unknown gradient mode {other:?}"))),
        };
        let step_rule = match self.get_str("bilevel.step").unwrap_or("fixed") {
            "fixed" => StepRule::Fixed,
            "backtracking" => StepRule::Backtracking {
                max_halvings: self.get_or("bilevel.max_halvings", 10)?,
            },
            other => return Err(Error::Config(format!("unknown step rule {other:?}"))),
        };
        let lambda0 = self
            .get_str("bilevel.lambda0")
            .map(parse_list)
            .transpose()?;
        let cfg = BilevelConfig {
            beta: self.get_or("bilevel.beta", d.beta)?,
            alpha: self.get_or("bilevel.alpha", d.alpha)?,
            grad_mode,
            step_rule,
            tol_grad: self.get_or("bilevel.tol_grad", d.tol_grad)?,
            tol_cost: self.get_or("bilevel.tol_cost", d.tol_cost)?,
            max_iter: self.get_or("bilevel.max_iter", d.max_iter)?,
            lambda0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn noise(&self) -> Result<Option<NoiseSpec>> {
        self.get_str("noise").map(str::parse).transpose()
    }
}

/// Comma-separated floats.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("{t:?} in list {s:?}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut c =
            Config::parse("# demo\nsolver.gamma = 50\nseed=3\n\nsolver.gamma=80\n").unwrap();
        assert_eq!(c.get::<f64>("solver.gamma").unwrap(), Some(80.0));
        c.assign("seed = 9").unwrap();
        assert_eq!(c.seed().unwrap(), 9);
        assert_eq!(c.solver().unwrap().huber.gamma, 80.0);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Config::parse("solver.gama=3").is_err());
        assert!(Config::parse("solver.gamma").is_err());
        let c = Config::parse("solver.gamma=abc").unwrap();
        assert!(c.solver().is_err());
        let c = Config::parse("solver.variant=cubic").unwrap();
        assert!(c.solver().is_err());
    }

    #[test]
    fn hash_ignores_order_and_whitespace() {
        let a = Config::parse("seed=1\nsolver.gamma=50").unwrap();
        let b = Config::parse("solver.gamma = 50\nseed = 1\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let c = Config::parse("seed=2\nsolver.gamma=50").unwrap();
        assert_ne!(a.hash(), c.hash());
        let mut d = a.clone();
        d.set("output.dir", "elsewhere").unwrap();
        assert_eq!(a.hash(), d.hash());
    }

    #[test]
    fn builds_typed_configs() {
        let c = Config::parse(
            "model=impulse\nsolver.gamma=50\nsolver.variant=c1\nbilevel.grad_mode=adjoint\nbilevel.lambda0=3,4\nnoise=salt_pepper:0.1",
        )
        .unwrap();
        assert_eq!(c.model().unwrap(), StateModel::Impulse { gamma_l1: 50.0 });
        assert_eq!(c.solver().unwrap().huber, HuberParams::c1_form(50.0, 1.0));
        let b = c.bilevel().unwrap();
        assert_eq!(b.grad_mode, GradMode::Adjoint);
        assert_eq!(b.lambda0, Some(vec![3.0, 4.0]));
        assert_eq!(
            c.noise().unwrap(),
            Some(NoiseSpec::SaltPepper { density: 0.1 })
        );
    }
}
