use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::templates::{
    HighestBid, IidUrgency, NoOverflow, NoRedistribution, PayBidToPeer, PayBidToSociety,
    ThresholdAuction, UniformOverflow,
};
use super::{
    AgentType, GameSpec, Karma, KarmaTransitionModel, OutcomeModel, OverflowRule, PaymentRule,
    RedistributionRule, LOSE, NUM_OUTCOMES, WIN,
};
use crate::error::{Error, Result};

/// A template chosen by name plus its parameter map, e.g.
/// `{ template = "iid_geometric", p = 0.6 }`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSpec {
    pub template: String,
    pub params: BTreeMap<String, toml::Value>,
}

impl TemplateSpec {
    pub fn named(template: &str) -> Self {
        Self {
            template: template.to_owned(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<toml::Value>) -> Self {
        self.params.insert(key.to_owned(), value.into());
        self
    }
}

impl<'de> Deserialize<'de> for TemplateSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let mut params = BTreeMap::<String, toml::Value>::deserialize(deserializer)?;
        let template = match params.remove("template") {
            Some(toml::Value::String(s)) => s,
            Some(_) => return Err(serde::de::Error::custom("`template` must be a string")),
            None => return Err(serde::de::Error::missing_field("template")),
        };
        Ok(Self { template, params })
    }
}

impl Serialize for TemplateSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut all = self.params.clone();
        all.insert("template".into(), toml::Value::String(self.template.clone()));
        all.serialize(serializer)
    }
}

/// Parameter reader that rejects keys the template does not understand.
struct Params<'a> {
    template: &'a str,
    section: &'a str,
    params: BTreeMap<String, toml::Value>,
}

impl<'a> Params<'a> {
    fn new(section: &'a str, spec: &'a TemplateSpec) -> Self {
        Self {
            template: &spec.template,
            section,
            params: spec.params.clone(),
        }
    }

    fn err(&self, msg: String) -> Error {
        Error::Config(format!("{}.{}: {msg}", self.section, self.template))
    }

    fn float(&mut self, key: &str) -> Result<Option<f64>> {
        match self.params.remove(key) {
            None => Ok(None),
            Some(toml::Value::Float(f)) => Ok(Some(f)),
            Some(toml::Value::Integer(i)) => Ok(Some(i as f64)),
            Some(_) => Err(self.err(format!("parameter `{key}` must be a number"))),
        }
    }

    fn uint(&mut self, key: &str) -> Result<Option<u32>> {
        match self.params.remove(key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) if i >= 0 => Ok(Some(i as u32)),
            Some(_) => Err(self.err(format!(
                "parameter `{key}` must be a non-negative integer"
            ))),
        }
    }

    fn floats(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.params.remove(key) {
            None => Ok(None),
            Some(toml::Value::Array(items)) => items
                .into_iter()
                .map(|v| match v {
                    toml::Value::Float(f) => Ok(f),
                    toml::Value::Integer(i) => Ok(i as f64),
                    _ => Err(self.err(format!("parameter `{key}` must hold numbers"))),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(self.err(format!("parameter `{key}` must be an array"))),
        }
    }

    fn require<T>(&self, key: &str, value: Option<T>) -> Result<T> {
        value.ok_or_else(|| self.err(format!("missing parameter `{key}`")))
    }

    fn finish(self) -> Result<()> {
        match self.params.keys().next() {
            Some(key) => Err(self.err(format!("unknown parameter `{key}`"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeConfig {
    #[serde(default = "default_type_name")]
    pub name: String,
    pub discount: f64,
    #[serde(default = "one")]
    pub share: f64,
}

fn default_type_name() -> String {
    "default".into()
}

fn one() -> f64 {
    1.0
}

fn two() -> usize {
    2
}

/// C[u, o] given as one column per outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub lose: Vec<f64>,
    #[serde(default)]
    pub win: Vec<f64>,
}

/// Human-editable form of [`GameSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    pub num_agents: usize,
    #[serde(default = "two")]
    pub participants: usize,
    pub initial_avg_karma: Karma,
    pub types: Vec<TypeConfig>,
    /// Labels of the urgency levels, in index order.
    pub urgency_levels: Vec<f64>,
    pub cost: CostConfig,
    pub urgency: TemplateSpec,
    pub outcome: TemplateSpec,
    pub payment: TemplateSpec,
    #[serde(default = "default_overflow")]
    pub overflow: TemplateSpec,
    #[serde(default = "default_redistribution")]
    pub redistribution: TemplateSpec,
}

fn default_overflow() -> TemplateSpec {
    TemplateSpec::named("uniform")
}

fn default_redistribution() -> TemplateSpec {
    TemplateSpec::named("none")
}

impl GameConfig {
    pub fn build(&self) -> Result<GameSpec> {
        let levels = self.urgency_levels.len();
        if self.cost.lose.len() != levels {
            return Err(Error::Config(format!(
                "cost.lose has {} entries but there are {levels} urgency levels",
                self.cost.lose.len()
            )));
        }
        let win = if self.cost.win.is_empty() {
            vec![0.0; levels]
        } else if self.cost.win.len() == levels {
            self.cost.win.clone()
        } else {
            return Err(Error::Config(format!(
                "cost.win has {} entries but there are {levels} urgency levels",
                self.cost.win.len()
            )));
        };
        let mut cost = Array2::zeros((levels, NUM_OUTCOMES));
        for u in 0..levels {
            cost[[u, LOSE as usize]] = self.cost.lose[u];
            cost[[u, WIN as usize]] = win[u];
        }

        let urgency_model = Arc::new(urgency_template(&self.urgency, levels)?);
        let outcome_model = outcome_template(&self.outcome, self.participants)?;
        let (karma_model, payment_rule) = payment_template(&self.payment)?;
        if karma_model.name() == "pay_to_peer" && outcome_model.name() != "highest_bid" {
            return Err(Error::Config(
                "payment.pay_to_peer needs an outcome that always has a winner (highest_bid)"
                    .into(),
            ));
        }
        let spec = GameSpec {
            num_agents: self.num_agents,
            participants: self.participants,
            types: self
                .types
                .iter()
                .map(|t| AgentType {
                    name: t.name.clone(),
                    discount: t.discount,
                    share: t.share,
                })
                .collect(),
            urgencies: self.urgency_levels.clone(),
            initial_avg_karma: self.initial_avg_karma,
            cost,
            outcome_model,
            karma_model,
            urgency_model,
            payment_rule,
            overflow: overflow_template(&self.overflow)?,
            redistribution: redistribution_template(&self.redistribution)?,
        };
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }
}

fn outcome_template(spec: &TemplateSpec, participants: usize) -> Result<Arc<dyn OutcomeModel>> {
    let mut p = Params::new("outcome", spec);
    let model: Arc<dyn OutcomeModel> = match spec.template.as_str() {
        "highest_bid" => Arc::new(HighestBid::new(participants)),
        "threshold_auction" => {
            let threshold = p.uint("threshold")?;
            let threshold = p.require("threshold", threshold)?;
            Arc::new(ThresholdAuction::new(threshold, participants))
        }
        other => {
            return Err(Error::Config(format!(
                "outcome: unknown template `{other}` (expected highest_bid or threshold_auction)"
            )))
        }
    };
    p.finish()?;
    Ok(model)
}

type PaymentPair = (Arc<dyn KarmaTransitionModel>, Arc<dyn PaymentRule>);

fn payment_template(spec: &TemplateSpec) -> Result<PaymentPair> {
    let p = Params::new("payment", spec);
    let pair: PaymentPair = match spec.template.as_str() {
        "pay_to_peer" => (Arc::new(PayBidToPeer), Arc::new(PayBidToPeer)),
        "pay_to_society" => (Arc::new(PayBidToSociety), Arc::new(PayBidToSociety)),
        other => {
            return Err(Error::Config(format!(
                "payment: unknown template `{other}` (expected pay_to_peer or pay_to_society)"
            )))
        }
    };
    p.finish()?;
    Ok(pair)
}

fn urgency_template(spec: &TemplateSpec, levels: usize) -> Result<IidUrgency> {
    let mut p = Params::new("urgency", spec);
    let model = match spec.template.as_str() {
        "iid" => {
            let weights = p.floats("weights")?;
            let weights = p.require("weights", weights)?;
            if weights.len() != levels {
                return Err(p.err(format!(
                    "{} weights for {levels} urgency levels",
                    weights.len()
                )));
            }
            IidUrgency::new(weights).map_err(|e| p.err(e.to_string()))?
        }
        "iid_geometric" => {
            let prob = p.float("p")?;
            let prob = p.require("p", prob)?;
            IidUrgency::geometric(prob, levels).map_err(|e| p.err(e.to_string()))?
        }
        other => {
            return Err(Error::Config(format!(
                "urgency: unknown template `{other}` (expected iid or iid_geometric)"
            )))
        }
    };
    p.finish()?;
    Ok(model)
}

fn overflow_template(spec: &TemplateSpec) -> Result<Arc<dyn OverflowRule>> {
    let p = Params::new("overflow", spec);
    let rule: Arc<dyn OverflowRule> = match spec.template.as_str() {
        "uniform" => Arc::new(UniformOverflow),
        "none" => Arc::new(NoOverflow),
        other => {
            return Err(Error::Config(format!(
                "overflow: unknown template `{other}` (expected uniform or none)"
            )))
        }
    };
    p.finish()?;
    Ok(rule)
}

fn redistribution_template(spec: &TemplateSpec) -> Result<Arc<dyn RedistributionRule>> {
    let p = Params::new("redistribution", spec);
    let rule: Arc<dyn RedistributionRule> = match spec.template.as_str() {
        "none" => Arc::new(NoRedistribution),
        other => {
            return Err(Error::Config(format!(
                "redistribution: unknown template `{other}` (expected none)"
            )))
        }
    };
    p.finish()?;
    Ok(rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"
        num_agents = 200
        initial_avg_karma = 6
        types = [{ discount = 0.8 }]
        urgency_levels = [0, 1]
        cost = { lose = [0.0, 3.0] }
        urgency = { template = "iid", weights = [0.5, 0.5] }
        outcome = { template = "highest_bid" }
        payment = { template = "pay_to_peer" }
    "#;

    #[test]
    fn parses_fixture() {
        let cfg: GameConfig = toml::from_str(FIXTURE).unwrap();
        let spec = cfg.build().unwrap();
        assert_eq!(spec.participants, 2);
        assert_eq!(spec.cost[[1, LOSE as usize]], 3.0);
        assert_eq!(spec.cost[[1, WIN as usize]], 0.0);
        assert_eq!(spec.discount(0), 0.8);
        assert_eq!(spec.overflow.name(), "uniform");
    }

    #[test]
    fn unknown_key_is_named() {
        let bad = FIXTURE.replace("num_agents", "num_agnets");
        let err = toml::from_str::<GameConfig>(&bad).unwrap_err().to_string();
        assert!(err.contains("num_agnets"), "{err}");
    }

    #[test]
    fn unknown_template_parameter_is_named() {
        let bad = FIXTURE.replace(
            r#"{ template = "highest_bid" }"#,
            r#"{ template = "highest_bid", treshold = 3 }"#,
        );
        let cfg: GameConfig = toml::from_str(&bad).unwrap();
        let err = cfg.build().unwrap_err().to_string();
        assert!(err.contains("treshold"), "{err}");
    }

    #[test]
    fn geometric_urgency_and_threshold() {
        let cfg = r#"
            num_agents = 1000
            initial_avg_karma = 10
            types = [{ discount = 0.9 }]
            urgency_levels = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
            cost = { lose = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10] }
            urgency = { template = "iid_geometric", p = 0.6 }
            outcome = { template = "threshold_auction", threshold = 5 }
            payment = { template = "pay_to_society" }
            overflow = { template = "uniform" }
        "#;
        let spec = toml::from_str::<GameConfig>(cfg).unwrap().build().unwrap();
        assert_eq!(spec.outcome_model.name(), "threshold_auction");
        let w0 = spec.urgency_model.prob(0, 0, 3, WIN);
        assert!((w0 - 0.6 / (1.0 - 0.4f64.powi(10))).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_discount() {
        let bad = FIXTURE.replace("discount = 0.8", "discount = 1.0");
        let cfg: GameConfig = toml::from_str(&bad).unwrap();
        assert!(matches!(cfg.build(), Err(Error::Config(_))));
    }
}
