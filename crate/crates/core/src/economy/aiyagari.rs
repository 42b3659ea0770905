use serde::{Deserialize, Serialize};

use super::{AggregateIndicators, AggregationSettings, BudgetSet, Economy, IncomeChain, MeanFieldBox, MeanFieldTerm};
use crate::error::{Error, Result};
use crate::mdp::HouseholdState;

/// Calibration of the Aiyagari economy. Every field is a key of the flat
/// config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AiyagariConfig {
    /// Capital share `α` of the Cobb-Douglas technology.
    pub capital_share: f64,
    pub depreciation: f64,
    pub discount: f64,
    pub capital_max: f64,
    /// Labor supplied at each income level.
    pub labor: Vec<f64>,
    /// Income transition matrix, rows `P[w' | w]`.
    pub chain: Vec<Vec<f64>>,
    /// Entropy regularization `ζ`.
    pub zeta: f64,
    pub wage_min: f64,
    pub wage_max: f64,
    pub rent_min: f64,
    pub rent_max: f64,
    /// Spending the household must keep; shrinks the savings interval.
    pub consumption_floor: f64,
    /// Lower clamp on aggregate capital before pricing.
    pub capital_floor: f64,
    /// Lower clamp on aggregate labor before pricing.
    pub labor_floor: f64,
    pub population: usize,
    pub horizon: usize,
    pub burn_in: usize,
}

impl Default for AiyagariConfig {
    fn default() -> Self {
        Self {
            capital_share: 0.36,
            depreciation: 0.08,
            discount: 0.95,
            capital_max: 20.0,
            labor: vec![0.0, 1.0],
            chain: vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            zeta: 1.0,
            wage_min: 0.05,
            wage_max: 5.0,
            rent_min: 0.01,
            rent_max: 1.0,
            consumption_floor: 0.0,
            capital_floor: 1e-3,
            labor_floor: 1e-3,
            population: 10_000,
            horizon: 200,
            burn_in: 100,
        }
    }
}

impl AiyagariConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.capital_share > 0.0 && self.capital_share < 1.0) {
            return fail(format!("capital_share must lie in (0,1), got {}", self.capital_share));
        }
        if !(0.0..1.0).contains(&self.depreciation) {
            return fail(format!("depreciation must lie in [0,1), got {}", self.depreciation));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return fail(format!("discount must lie in (0,1), got {}", self.discount));
        }
        if !(self.capital_max > 0.0) {
            return fail(format!("capital_max must be > 0, got {}", self.capital_max));
        }
        if !(self.zeta > 0.0) {
            return fail(format!("zeta must be > 0, got {}", self.zeta));
        }
        if self.labor.is_empty() || self.labor.iter().any(|n| !(*n >= 0.0)) {
            return fail("labor must list one nonnegative value per income level".into());
        }
        if self.chain.len() != self.labor.len() {
            return fail(format!("chain has {} rows for {} income levels", self.chain.len(), self.labor.len()));
        }
        IncomeChain::new(self.chain.clone())?;
        if !(self.wage_min < self.wage_max) || !(self.rent_min < self.rent_max) {
            return fail("mean-field box bounds must satisfy min < max".into());
        }
        if self.wage_min < 0.0 || self.rent_min < 0.0 {
            return fail("mean-field box must be nonnegative".into());
        }
        if !(self.consumption_floor >= 0.0) {
            return fail("consumption_floor must be >= 0".into());
        }
        if !(self.capital_floor > 0.0 && self.labor_floor > 0.0) {
            return fail("capital_floor and labor_floor must be > 0".into());
        }
        if self.population == 0 || self.horizon <= self.burn_in {
            return fail("need population >= 1 and horizon > burn_in".into());
        }
        Ok(())
    }
}

/// The Aiyagari economy: log utility of spending, budget
/// `χ = (1 + ς - δ) b + ω n - a`, Cobb-Douglas firm `F(K, N) = K^α N^{1-α}`.
#[derive(Debug, Clone)]
pub struct Aiyagari {
    cfg: AiyagariConfig,
    chain: IncomeChain,
    log_norm: f64,
}

impl Aiyagari {
    pub fn new(cfg: AiyagariConfig) -> Result<Self> {
        cfg.validate()?;
        let chain = IncomeChain::new(cfg.chain.clone())?;
        let n_max = cfg.labor.iter().copied().fold(0.0, f64::max);
        let chi_max = (1.0 + cfg.rent_max - cfg.depreciation) * cfg.capital_max + cfg.wage_max * n_max;
        Ok(Self { log_norm: chi_max.ln_1p(), cfg, chain })
    }

    pub fn config(&self) -> &AiyagariConfig {
        &self.cfg
    }

    /// Largest spending reachable inside the box, the reward normalizer.
    pub fn max_spending(&self) -> f64 {
        self.log_norm.exp_m1()
    }

    /// `F(K, N) = K^α N^{1-α}`.
    pub fn output(&self, capital: f64, labor: f64) -> f64 {
        let alpha = self.cfg.capital_share;
        capital.powf(alpha) * labor.powf(1.0 - alpha)
    }

    /// Marginal products `(∂F/∂N, ∂F/∂K)` as `(wage, rent)`, no floors or clamping.
    pub fn marginal_products(&self, capital: f64, labor: f64) -> MeanFieldTerm {
        let alpha = self.cfg.capital_share;
        let ratio = capital / labor;
        MeanFieldTerm::new((1.0 - alpha) * ratio.powf(alpha), alpha * ratio.powf(alpha - 1.0))
    }
}

impl Economy for Aiyagari {
    fn levels(&self) -> usize {
        self.cfg.labor.len()
    }

    fn labor(&self, level: usize) -> f64 {
        self.cfg.labor[level]
    }

    fn capital_max(&self) -> f64 {
        self.cfg.capital_max
    }

    fn chain(&self) -> &IncomeChain {
        &self.chain
    }

    fn discount(&self) -> f64 {
        self.cfg.discount
    }

    fn regularization(&self) -> f64 {
        self.cfg.zeta
    }

    fn mean_field_box(&self) -> MeanFieldBox {
        MeanFieldBox { wage: (self.cfg.wage_min, self.cfg.wage_max), rent: (self.cfg.rent_min, self.cfg.rent_max) }
    }

    fn aggregation(&self) -> AggregationSettings {
        AggregationSettings { population: self.cfg.population, horizon: self.cfg.horizon, burn_in: self.cfg.burn_in }
    }

    fn budget(&self, z: &MeanFieldTerm) -> BudgetSet {
        BudgetSet {
            gross_return: 1.0 + z.rent - self.cfg.depreciation,
            wage: z.wage,
            labor: self.cfg.labor.clone(),
            capital_max: self.cfg.capital_max,
            consumption_floor: self.cfg.consumption_floor,
        }
    }

    /// `log(1 + χ) / log(1 + χ_max)` with the whole residual budget spent.
    #[inline]
    fn reward_unchecked(&self, z: &MeanFieldTerm, s: &HouseholdState, a: f64) -> f64 {
        let resources = (1.0 + z.rent - self.cfg.depreciation) * s.capital + z.wage * self.cfg.labor[s.level];
        let chi = (resources - a).max(0.0);
        (chi.ln_1p() / self.log_norm).clamp(0.0, 1.0)
    }

    fn reward_lipschitz(&self) -> f64 {
        // |∂r/∂b| + |∂r/∂a| at χ = 0, the steepest point of log(1 + χ)
        ((1.0 + self.cfg.rent_max - self.cfg.depreciation).abs() + 1.0) / self.log_norm
    }

    fn firm_prices(&self, xi: &AggregateIndicators) -> MeanFieldTerm {
        self.marginal_products(xi.capital.max(self.cfg.capital_floor), xi.labor.max(self.cfg.labor_floor))
    }
}
