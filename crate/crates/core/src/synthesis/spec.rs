use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SynthesisError;
use crate::event::{FaultType, Visibility};
use crate::model::State;

const DEFAULT_SPEC: &str = include_str!("../../specs/default.toml");
const MINIMAL_SPEC: &str = include_str!("../../specs/minimal.toml");
const EARLY_WARNING_SPEC: &str = include_str!("../../specs/early-warning.toml");

/// Names of the specs shipped with the crate.
pub const BUNDLED_SPECS: [&str; 3] = ["default", "minimal", "early-warning"];

/// A multi-partner collaboration to simulate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollaborationSpec {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Bounds of the uniformly drawn step duration.
    #[serde(default = "default_step_minutes")]
    pub step_minutes: [u32; 2],
    pub partners: Vec<PartnerSpec>,
    #[serde(default)]
    pub interactions: Vec<InteractionSpec>,
    /// Execution order of every task and interaction.
    pub flow: Vec<String>,
    #[serde(default)]
    pub loops: Vec<LoopSpec>,
    #[serde(default)]
    pub context: Vec<ContextSpec>,
    #[serde(default)]
    pub faults: Vec<Manifestation>,
}

fn default_step_minutes() -> [u32; 2] {
    [5, 30]
}

fn one() -> f64 {
    1.0
}

fn one_u32() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartnerSpec {
    pub id: String,
    #[serde(default)]
    pub private: Vec<String>,
    #[serde(default)]
    pub public: Vec<String>,
}

/// A message exchange between two partners. Both sides record an event with
/// the interaction's name and identical payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionSpec {
    pub name: String,
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub payload: Vec<FieldSpec>,
}

/// After `from`, jump back to `to` with `probability`, at most `max` times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSpec {
    pub from: String,
    pub to: String,
    pub probability: f64,
    #[serde(default = "one_u32")]
    pub max: u32,
}

/// An external data source emitting context events after certain steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextSpec {
    pub name: String,
    pub partner: String,
    /// Steps after which the source may fire. Empty for sources that only
    /// appear through fault injection.
    #[serde(default)]
    pub attach: Vec<String>,
    #[serde(default = "one")]
    pub probability: f64,
    #[serde(default)]
    pub public: bool,
    #[serde(default)]
    pub fields: Vec<FieldSpec>,
}

impl ContextSpec {
    pub fn visibility(&self) -> Visibility {
        if self.public {
            Visibility::Public
        } else {
            Visibility::Private
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub key: String,
    #[serde(flatten)]
    pub dist: Distribution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum Distribution {
    Normal {
        mean: f64,
        sd: f64,
    },
    /// Uniform on `[low, high]`; `high_from` caps `high` by an earlier
    /// field of the same instance.
    Uniform {
        low: f64,
        high: f64,
        #[serde(default)]
        high_from: Option<String>,
    },
    Choice {
        values: Vec<String>,
    },
    /// Repeats the value of an earlier field, keeping partners consistent.
    Copy {
        from: String,
    },
}

/// One fixed fault → error → failure combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Manifestation {
    /// After `at`, the run takes the `detour` steps and then fails.
    Step {
        at: String,
        detour: Vec<String>,
        #[serde(default)]
        public: bool,
    },
    /// An `alarm` context event fires after `at`; the run fails
    /// `failure_after` intrinsic events later.
    Event { at: String, alarm: String, failure_after: usize },
    /// The `field` of the `context` reading taken after `at` is shifted to
    /// mean + 6σ; the run fails `failure_after` intrinsic events later.
    Data { at: String, context: String, field: String, failure_after: usize },
}

impl Manifestation {
    pub fn fault_type(&self) -> FaultType {
        match self {
            Manifestation::Step { .. } => FaultType::StepIndicated,
            Manifestation::Event { .. } => FaultType::EventIndicated,
            Manifestation::Data { .. } => FaultType::DataIndicated,
        }
    }

    pub fn at(&self) -> &str {
        match self {
            Manifestation::Step { at, .. } | Manifestation::Event { at, .. } | Manifestation::Data { at, .. } => at,
        }
    }
}

/// Who performs a task, and who sees it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaskRole {
    Step { partner: String, visibility: Visibility },
    Interaction { from: String, to: String },
}

impl CollaborationSpec {
    pub fn parse(text: &str) -> Result<Self, SynthesisError> {
        let spec: CollaborationSpec = toml::from_str(text).map_err(|e| SynthesisError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn bundled(name: &str) -> Option<Self> {
        let text = match name {
            "default" => DEFAULT_SPEC,
            "minimal" => MINIMAL_SPEC,
            "early-warning" => EARLY_WARNING_SPEC,
            _ => return None,
        };
        Some(Self::parse(text).expect("bundled specs are valid"))
    }

    /// A bundled spec by name, otherwise a TOML file path.
    pub fn load(name_or_path: &str) -> Result<Self, SynthesisError> {
        if let Some(spec) = Self::bundled(name_or_path) {
            return Ok(spec);
        }
        let text = std::fs::read_to_string(Path::new(name_or_path))
            .map_err(|e| SynthesisError::InvalidSpec(format!("{name_or_path}: {e}")))?;
        Self::parse(&text)
    }

    /// Every task and interaction with its role.
    pub fn roles(&self) -> BTreeMap<String, TaskRole> {
        let mut roles = BTreeMap::new();
        for p in &self.partners {
            for (names, visibility) in [(&p.private, Visibility::Private), (&p.public, Visibility::Public)] {
                for n in names {
                    roles.insert(n.clone(), TaskRole::Step { partner: p.id.clone(), visibility });
                }
            }
        }
        for i in &self.interactions {
            roles.insert(i.name.clone(), TaskRole::Interaction { from: i.from.clone(), to: i.to.clone() });
        }
        roles
    }

    /// Partner that owns a task: the performer, or the sender of an interaction.
    pub fn owner(&self, task: &str) -> Option<String> {
        self.roles().get(task).map(|r| match r {
            TaskRole::Step { partner, .. } => partner.clone(),
            TaskRole::Interaction { from, .. } => from.clone(),
        })
    }

    pub fn context_source(&self, name: &str) -> Option<&ContextSpec> {
        self.context.iter().find(|c| c.name == name)
    }

    pub fn task_count(&self) -> usize {
        self.flow.len()
    }

    pub fn interaction_count(&self) -> usize {
        self.interactions.len()
    }

    /// The directly-follows relation of fault-free runs.
    pub fn ground_truth_edges(&self) -> BTreeSet<(State, State)> {
        let roles = self.roles();
        let mut edges = BTreeSet::new();
        for pair in self.flow.windows(2) {
            edges.insert((State::step(&pair[0]), State::step(&pair[1])));
        }
        for name in &self.flow {
            if matches!(roles.get(name), Some(TaskRole::Interaction { .. })) {
                edges.insert((State::step(name), State::step(name)));
            }
        }
        for l in &self.loops {
            edges.insert((State::step(&l.from), State::step(&l.to)));
        }
        edges
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        let invalid = |m: String| Err(SynthesisError::InvalidSpec(m));
        if self.step_minutes[0] == 0 || self.step_minutes[0] > self.step_minutes[1] {
            return invalid("step_minutes must be an increasing pair of positive values".into());
        }
        let partner_ids: BTreeSet<&str> = self.partners.iter().map(|p| p.id.as_str()).collect();
        if partner_ids.len() != self.partners.len() {
            return invalid("duplicate partner id".into());
        }
        let mut tasks = BTreeSet::new();
        let declared = self
            .partners
            .iter()
            .flat_map(|p| p.private.iter().chain(&p.public))
            .chain(self.interactions.iter().map(|i| &i.name));
        for name in declared {
            if !tasks.insert(name.as_str()) {
                return invalid(format!("task {name:?} declared twice"));
            }
        }
        for i in &self.interactions {
            if i.from == i.to || !partner_ids.contains(i.from.as_str()) || !partner_ids.contains(i.to.as_str()) {
                return invalid(format!("interaction {:?} must connect two distinct known partners", i.name));
            }
        }
        let mut in_flow = BTreeSet::new();
        for name in &self.flow {
            if !tasks.contains(name.as_str()) {
                return invalid(format!("flow references undeclared task {name:?}"));
            }
            if !in_flow.insert(name.as_str()) {
                return invalid(format!("task {name:?} appears twice in the flow"));
            }
        }
        if self.flow.is_empty() {
            return Err(SynthesisError::DisconnectedSpec("the flow is empty".into()));
        }
        if let Some(orphan) = tasks.difference(&in_flow).next() {
            return Err(SynthesisError::DisconnectedSpec(format!("task {orphan:?} is not reachable from the flow")));
        }
        let position = |n: &str| self.flow.iter().position(|f| f == n);
        for l in &self.loops {
            match (position(&l.from), position(&l.to)) {
                (Some(f), Some(t)) if t <= f => {}
                _ => return invalid(format!("loop {} -> {} must jump backwards within the flow", l.from, l.to)),
            }
            if !(0.0..1.0).contains(&l.probability) {
                return invalid(format!("loop {} -> {} probability must lie in [0, 1)", l.from, l.to));
            }
        }
        let mut context_names = BTreeSet::new();
        for c in &self.context {
            if !context_names.insert(c.name.as_str()) || tasks.contains(c.name.as_str()) {
                return invalid(format!("context source {:?} clashes with another name", c.name));
            }
            if !partner_ids.contains(c.partner.as_str()) {
                return invalid(format!("context source {:?} has unknown partner {:?}", c.name, c.partner));
            }
            if let Some(step) = c.attach.iter().find(|s| !tasks.contains(s.as_str())) {
                return invalid(format!("context source {:?} attaches to unknown step {step:?}", c.name));
            }
            if !(0.0..=1.0).contains(&c.probability) {
                return invalid(format!("context source {:?} probability must lie in [0, 1]", c.name));
            }
        }
        for f in self.interactions.iter().flat_map(|i| &i.payload).chain(self.context.iter().flat_map(|c| &c.fields)) {
            f.dist.validate(&f.key)?;
        }
        // Copies and caps may only refer to interaction fields defined earlier in the flow.
        let mut defined: BTreeSet<&str> = BTreeSet::new();
        for name in &self.flow {
            for f in self.interactions.iter().filter(|i| i.name == *name).flat_map(|i| &i.payload) {
                let reference = match &f.dist {
                    Distribution::Copy { from } => Some(from),
                    Distribution::Uniform { high_from, .. } => high_from.as_ref(),
                    _ => None,
                };
                if let Some(r) = reference.filter(|r| !defined.contains(r.as_str())) {
                    return invalid(format!("field {:?} refers to {r:?} before it is defined", f.key));
                }
                defined.insert(&f.key);
            }
        }
        for f in self.context.iter().flat_map(|c| &c.fields) {
            if matches!(&f.dist, Distribution::Copy { .. } | Distribution::Uniform { high_from: Some(_), .. }) {
                return invalid(format!("context field {:?} cannot refer to other fields", f.key));
            }
        }
        for m in &self.faults {
            if !tasks.contains(m.at()) {
                return invalid(format!("fault plan references unknown step {:?}", m.at()));
            }
            match m {
                Manifestation::Step { detour, .. } => {
                    if detour.is_empty() {
                        return invalid(format!("step fault at {:?} needs a detour", m.at()));
                    }
                    if let Some(d) =
                        detour.iter().find(|d| tasks.contains(d.as_str()) || context_names.contains(d.as_str()))
                    {
                        return invalid(format!("detour step {d:?} must be fault-only"));
                    }
                }
                Manifestation::Event { alarm, failure_after, .. } => {
                    if self.context_source(alarm).is_none() {
                        return invalid(format!("unknown alarm source {alarm:?}"));
                    }
                    if *failure_after == 0 {
                        return invalid("failure_after must be at least 1".into());
                    }
                }
                Manifestation::Data { at, context, field, failure_after } => {
                    let Some(source) = self.context_source(context) else {
                        return invalid(format!("unknown context source {context:?}"));
                    };
                    if !source.attach.contains(at) || source.probability < 1.0 {
                        return invalid(format!("data fault needs {context:?} to fire after {at:?} every time"));
                    }
                    if !source.fields.iter().any(|f| f.key == *field && matches!(f.dist, Distribution::Normal { .. })) {
                        return invalid(format!("data fault needs a normal field {field:?} on {context:?}"));
                    }
                    if *failure_after == 0 {
                        return invalid("failure_after must be at least 1".into());
                    }
                }
            }
        }
        Ok(())
    }
}

impl Distribution {
    fn validate(&self, key: &str) -> Result<(), SynthesisError> {
        let ok = match self {
            Distribution::Normal { mean, sd } => mean.is_finite() && *sd > 0.0 && sd.is_finite(),
            Distribution::Uniform { low, high, .. } => low.is_finite() && high.is_finite() && low <= high,
            Distribution::Choice { values } => !values.is_empty(),
            Distribution::Copy { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(SynthesisError::InvalidSpec(format!("invalid distribution for field {key:?}")))
        }
    }
}
