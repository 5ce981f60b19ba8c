//! Hyperparameters and solver tolerances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{GroupWeightScheme, LevelCounting, Orientation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Box bound on the dual variables.
    pub c: f64,
    /// Mean/variance trade-off inside each group.
    pub mu: f64,
    pub p: f64,
    pub q: f64,
    /// Duality-gap target of the certificate.
    pub eps: f64,
    /// Node weights `d_v`.
    pub weights: GroupWeightScheme,
    pub orientation: Orientation,
    /// Maximal KKT violation accepted by SMO.
    pub smo_tol: f64,
    pub smo_max_iter: usize,
    /// Relative gap at which the kernel-weight/SMO alternation stops.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Relative improvement of the best objective over `mirror_patience` iterations.
    pub mirror_tol: f64,
    pub mirror_patience: usize,
    pub mirror_max_iter: usize,
    pub gamma_floor: f64,
    /// Bytes available for explicit Gram storage.
    pub memory_budget: usize,
    pub max_active: usize,
    pub max_rounds: usize,
    /// Add only the `k` largest violators per round.
    pub top_k: Option<usize>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            c: 1.0,
            mu: 0.1,
            p: 1.5,
            q: 1.5,
            eps: 1e-3,
            weights: GroupWeightScheme::power(1.5),
            orientation: Orientation::Normal,
            smo_tol: 1e-5,
            smo_max_iter: 10_000_000,
            inner_tol: 1e-6,
            inner_max_iter: 500,
            mirror_tol: 1e-4,
            mirror_patience: 10,
            mirror_max_iter: 200,
            gamma_floor: 1e-9,
            memory_budget: 1 << 30,
            max_active: 512,
            max_rounds: 64,
            top_k: None,
        }
    }
}

impl Hyperparams {
    /// `p / (2 (p - 1))`.
    pub fn p_bar(&self) -> f64 {
        self.p / (2.0 * (self.p - 1.0))
    }

    /// `q / (2 (q - 1))`.
    pub fn q_bar(&self) -> f64 {
        self.q / (2.0 * (self.q - 1.0))
    }

    /// Conjugate exponent of `q_bar`; infinite at `q = 2`.
    pub fn q_hat(&self) -> f64 {
        let qb = self.q_bar();
        qb / (qb - 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        if !(self.p > 1.0 && self.p <= 2.0) {
            return bad("p must lie in (1, 2]".into());
        }
        if !(self.q > 1.0 && self.q <= 2.0) {
            return bad("q must lie in (1, 2]".into());
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return bad(format!("C must be nonnegative, got {}", self.c));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        self.weights.validate()?;
        if !(self.gamma_floor > 0.0 && self.gamma_floor <= 1e-6) {
            return bad(format!("gamma floor must lie in (0, 1e-6], got {}", self.gamma_floor));
        }
        for (name, v) in [("smo_tol", self.smo_tol), ("inner_tol", self.inner_tol), ("mirror_tol", self.mirror_tol)] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.max_active == 0 || self.max_rounds == 0 || self.inner_max_iter == 0 || self.mirror_max_iter == 0 {
            return bad("iteration caps must be positive".into());
        }
        if self.top_k == Some(0) {
            return bad("top_k must be positive".into());
        }
        Ok(())
    }

    /// A copy with inner tolerances scaled by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        Hyperparams { smo_tol: self.smo_tol * factor, inner_tol: self.inner_tol * factor, ..self.clone() }
    }

    /// Sets one parameter from its `key=value` spelling (the CLI flag names).
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.trim().parse().map_err(|_| Error::InvalidParam(format!("cannot parse {key}={value}")))
        }
        match key {
            "C" | "c" => self.c = num(key, value)?,
            "mu" => self.mu = num(key, value)?,
            "p" => self.p = num(key, value)?,
            "q" => self.q = num(key, value)?,
            "a" => self.weights.base = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "orientation" => self.orientation = value.trim().parse()?,
            "weight-counting" => {
                self.weights.counting = match value.trim() {
                    "cardinality" => LevelCounting::Cardinality,
                    v => match v.strip_prefix("complement:") {
                        Some(t) => LevelCounting::Complement(num(key, t)?),
                        None => return Err(Error::InvalidParam(format!("unknown weight counting {v:?}"))),
                    },
                }
            }
            "smo-tol" => self.smo_tol = num(key, value)?,
            "smo-max-iter" => self.smo_max_iter = num(key, value)?,
            "inner-tol" => self.inner_tol = num(key, value)?,
            "inner-max-iter" => self.inner_max_iter = num(key, value)?,
            "mirror-tol" => self.mirror_tol = num(key, value)?,
            "mirror-patience" => self.mirror_patience = num(key, value)?,
            "mirror-max-iter" => self.mirror_max_iter = num(key, value)?,
            "gamma-floor" => self.gamma_floor = num(key, value)?,
            "memory-budget" => self.memory_budget = num(key, value)?,
            "max-active" => self.max_active = num(key, value)?,
            "max-rounds" => self.max_rounds = num(key, value)?,
            "top-k" => self.top_k = if value.trim() == "none" { None } else { Some(num(key, value)?) },
            _ => return Err(Error::InvalidParam(format!("unknown parameter {key:?}"))),
        }
        Ok(())
    }

    /// Every parameter as `(key, value)`, in a fixed order; inverse of [`Hyperparams::set_key`].
    ///
    /// Per-level weight overrides are not representable and are dropped.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let counting = match self.weights.counting {
            LevelCounting::Cardinality => "cardinality".to_string(),
            LevelCounting::Complement(t) => format!("complement:{t}"),
        };
        vec![
            ("C", self.c.to_string()),
            ("mu", self.mu.to_string()),
            ("p", self.p.to_string()),
            ("q", self.q.to_string()),
            ("a", self.weights.base.to_string()),
            ("eps", self.eps.to_string()),
            ("orientation", self.orientation.to_string()),
            ("weight-counting", counting),
            ("smo-tol", self.smo_tol.to_string()),
            ("smo-max-iter", self.smo_max_iter.to_string()),
            ("inner-tol", self.inner_tol.to_string()),
            ("inner-max-iter", self.inner_max_iter.to_string()),
            ("mirror-tol", self.mirror_tol.to_string()),
            ("mirror-patience", self.mirror_patience.to_string()),
            ("mirror-max-iter", self.mirror_max_iter.to_string()),
            ("gamma-floor", self.gamma_floor.to_string()),
            ("memory-budget", self.memory_budget.to_string()),
            ("max-active", self.max_active.to_string()),
            ("max-rounds", self.max_rounds.to_string()),
            ("top-k", self.top_k.map_or("none".to_string(), |k| k.to_string())),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_exponents() {
        let h = Hyperparams::default();
        assert!((h.p_bar() - 1.5).abs() < 1e-15);
        assert!((h.q_bar() - 1.5).abs() < 1e-15);
        assert!((h.q_hat() - 3.0).abs() < 1e-12);
        let h = Hyperparams { p: 2.0, q: 2.0, ..h };
        assert_eq!((h.p_bar(), h.q_bar()), (1.0, 1.0));
        assert!(h.q_hat().is_infinite());
    }

    #[test]
    fn validation_messages() {
        let err = Hyperparams { p: 2.5, ..Default::default() }.validate().unwrap_err();
        assert!(err.to_string().contains("p must lie in (1, 2]"));
        assert!(Hyperparams { q: 1.0, ..Default::default() }.validate().is_err());
        assert!(Hyperparams { mu: 0.0, ..Default::default() }.validate().is_err());
        assert!(Hyperparams { gamma_floor: 1e-3, ..Default::default() }.validate().is_err());
        assert!(Hyperparams::default().validate().is_ok());
    }

    #[test]
    fn pairs_round_trip() {
        let h = Hyperparams {
            c: 0.3,
            orientation: Orientation::Inverted,
            weights: GroupWeightScheme { counting: LevelCounting::Complement(4), ..GroupWeightScheme::power(2.0) },
            top_k: Some(3),
            ..Default::default()
        };
        let mut back = Hyperparams::default();
        for (k, v) in h.to_pairs() {
            back.set_key(k, &v).unwrap();
        }
        assert_eq!(back, h);
        assert!(back.set_key("nope", "1").is_err());
        assert!(back.set_key("C", "x").is_err());
    }
}
