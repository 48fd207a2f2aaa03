//! Hyperparameter declarations, assignments and their vector encoding.
//!
//! A [`HyperSpace`] is an ordered list of named declarations. A declaration
//! may be conditional on an earlier one taking a specific value; it is
//! *active* only when its parent is active and holds that value. An
//! [`Assignment`] binds every active name and nothing else.

use std::fmt;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpaceError {
    #[error("duplicate hyperparameter `{0}`")]
    Duplicate(String),
    #[error("hyperparameter `{name}`: {reason}")]
    InvalidDomain { name: String, reason: String },
    #[error("hyperparameter `{name}` is conditioned on unknown `{parent}`")]
    UnknownParent { name: String, parent: String },
    #[error("assignment: {0}")]
    InvalidAssignment(String),
    #[error("hyperparameter `{0}` is missing from the assignment")]
    Missing(String),
    #[error("hyperparameter `{name}` has type {found}, expected {expected}")]
    WrongType {
        name: String,
        expected: &'static str,
        found: String,
    },
}

/// One concrete hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HpValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl HpValue {
    fn type_name(&self) -> &'static str {
        match self {
            Self::Bool(_) => "bool",
            Self::Int(_) => "int",
            Self::Float(_) => "float",
            Self::Str(_) => "string",
        }
    }
}

impl fmt::Display for HpValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bool(b) => write!(f, "{b}"),
            Self::Int(i) => write!(f, "{i}"),
            // `{:?}` round-trips exactly and always carries a decimal point.
            Self::Float(x) => write!(f, "{x:?}"),
            Self::Str(s) => f.write_str(s),
        }
    }
}

impl From<bool> for HpValue {
    fn from(v: bool) -> Self {
        Self::Bool(v)
    }
}

impl From<i64> for HpValue {
    fn from(v: i64) -> Self {
        Self::Int(v)
    }
}

impl From<f64> for HpValue {
    fn from(v: f64) -> Self {
        Self::Float(v)
    }
}

impl From<&str> for HpValue {
    fn from(v: &str) -> Self {
        Self::Str(v.to_string())
    }
}

/// Domain of a hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HpKind {
    Choice(Vec<HpValue>),
    IntRange {
        lo: i64,
        hi: i64,
        #[serde(default = "one")]
        step: i64,
    },
    FloatRange {
        lo: f64,
        hi: f64,
        #[serde(default)]
        log: bool,
    },
    Bool,
    Fixed(HpValue),
}

fn one() -> i64 {
    1
}

impl HpKind {
    pub fn choice<V: Into<HpValue>>(values: impl IntoIterator<Item = V>) -> Self {
        Self::Choice(values.into_iter().map(Into::into).collect())
    }

    pub fn fixed(value: impl Into<HpValue>) -> Self {
        Self::Fixed(value.into())
    }

    fn validate(&self, name: &str) -> Result<(), SpaceError> {
        let bad = |reason: &str| {
            Err(SpaceError::InvalidDomain {
                name: name.to_string(),
                reason: reason.to_string(),
            })
        };
        match self {
            Self::Choice(v) if v.is_empty() => bad("empty choice"),
            Self::IntRange { lo, hi, step } if lo > hi || *step <= 0 => {
                bad("int range needs lo <= hi and step > 0")
            }
            Self::FloatRange { lo, hi, log } => {
                if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                    bad("float range needs finite lo <= hi")
                } else if *log && *lo <= 0.0 {
                    bad("log-scaled range must be positive")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn int_count(lo: i64, hi: i64, step: i64) -> i64 {
        (hi - lo) / step + 1
    }

    /// Number of slots this domain occupies in the encoded vector.
    pub fn encoded_width(&self) -> usize {
        match self {
            Self::Choice(v) if v.len() > 1 => v.len(),
            Self::IntRange { lo, hi, step } if Self::int_count(*lo, *hi, *step) > 1 => 1,
            Self::FloatRange { lo, hi, .. } if hi > lo => 1,
            Self::Bool => 1,
            _ => 0,
        }
    }

    /// Whether more than one value can be drawn.
    pub fn is_searchable(&self) -> bool {
        self.encoded_width() > 0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> HpValue {
        match self {
            Self::Choice(v) => v[rng.gen_range(0..v.len())].clone(),
            Self::IntRange { lo, hi, step } => {
                let k = rng.gen_range(0..Self::int_count(*lo, *hi, *step));
                HpValue::Int(lo + k * step)
            }
            Self::FloatRange { lo, hi, log } => {
                let u: f64 = rng.gen();
                let x = if *log {
                    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + u * (hi - lo)
                };
                HpValue::Float(x.clamp(*lo, *hi))
            }
            Self::Bool => HpValue::Bool(rng.gen_bool(0.5)),
            Self::Fixed(v) => v.clone(),
        }
    }

    pub fn contains(&self, value: &HpValue) -> bool {
        match (self, value) {
            (Self::Choice(v), x) => v.contains(x),
            (Self::IntRange { lo, hi, step }, HpValue::Int(x)) => {
                x >= lo && x <= hi && (x - lo) % step == 0
            }
            (Self::FloatRange { lo, hi, .. }, HpValue::Float(x)) => x >= lo && x <= hi,
            (Self::Bool, HpValue::Bool(_)) => true,
            (Self::Fixed(v), x) => v == x,
            _ => false,
        }
    }

    fn encode(&self, value: &HpValue, out: &mut Vec<f64>) {
        match (self, value) {
            (Self::Choice(v), x) if v.len() > 1 => {
                out.extend(v.iter().map(|c| if c == x { 1.0 } else { 0.0 }))
            }
            (Self::IntRange { lo, hi, step }, HpValue::Int(x))
                if Self::int_count(*lo, *hi, *step) > 1 =>
            {
                out.push((x - lo) as f64 / (hi - lo) as f64)
            }
            (Self::FloatRange { lo, hi, log }, HpValue::Float(x)) if hi > lo => out.push(if *log {
                (x.ln() - lo.ln()) / (hi.ln() - lo.ln())
            } else {
                (x - lo) / (hi - lo)
            }),
            (Self::Bool, HpValue::Bool(b)) => out.push(if *b { 1.0 } else { 0.0 }),
            _ => {}
        }
    }
}

/// Activation condition: the parent must be active and equal to `value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub parent: String,
    pub value: HpValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParamDecl {
    pub name: String,
    pub kind: HpKind,
    pub condition: Option<Condition>,
}

impl HyperParamDecl {
    pub fn new(name: impl Into<String>, kind: HpKind) -> Self {
        Self {
            name: name.into(),
            kind,
            condition: None,
        }
    }

    pub fn when(mut self, parent: impl Into<String>, value: impl Into<HpValue>) -> Self {
        self.condition = Some(Condition {
            parent: parent.into(),
            value: value.into(),
        });
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HpHandle(usize);

impl HpHandle {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered set of hyperparameter declarations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HyperSpace {
    decls: IndexMap<String, HyperParamDecl>,
}

impl HyperSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, decl: HyperParamDecl) -> Result<HpHandle, SpaceError> {
        if self.decls.contains_key(&decl.name) {
            return Err(SpaceError::Duplicate(decl.name));
        }
        decl.kind.validate(&decl.name)?;
        if let Some(c) = &decl.condition {
            if !self.decls.contains_key(&c.parent) {
                return Err(SpaceError::UnknownParent {
                    name: decl.name,
                    parent: c.parent.clone(),
                });
            }
        }
        let (idx, _) = self.decls.insert_full(decl.name.clone(), decl);
        Ok(HpHandle(idx))
    }

    pub fn get(&self, name: &str) -> Option<&HyperParamDecl> {
        self.decls.get(name)
    }

    pub fn decl(&self, handle: HpHandle) -> &HyperParamDecl {
        &self.decls[handle.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &HyperParamDecl> {
        self.decls.values()
    }

    pub fn len(&self) -> usize {
        self.decls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decls.is_empty()
    }

    /// Total width of [`HyperSpace::vectorize`] output.
    pub fn encoded_dims(&self) -> usize {
        self.decls.values().map(|d| d.kind.encoded_width()).sum()
    }

    /// Whether `decl` is active given the values bound so far.
    pub fn is_active(&self, decl: &HyperParamDecl, partial: &Assignment) -> bool {
        match &decl.condition {
            None => true,
            Some(c) => partial.get(&c.parent) == Some(&c.value),
        }
    }

    /// Draws every active hyperparameter independently, resolving conditions
    /// in declaration order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Assignment {
        self.resample(&Assignment::default(), |_| true, rng)
    }

    /// Rebuilds an assignment from `base`: active names selected by
    /// `redraw`, or absent from `base`, are sampled afresh; the rest keep
    /// their base value. Names that became inactive are dropped.
    pub fn resample<R: Rng + ?Sized>(
        &self,
        base: &Assignment,
        mut redraw: impl FnMut(&str) -> bool,
        rng: &mut R,
    ) -> Assignment {
        let mut out = Assignment::default();
        for decl in self.decls.values() {
            if !self.is_active(decl, &out) {
                continue;
            }
            let value = match base.get(&decl.name) {
                Some(v) if !redraw(&decl.name) && decl.kind.contains(v) => v.clone(),
                _ => decl.kind.sample(rng),
            };
            out.values.insert(decl.name.clone(), value);
        }
        out
    }

    /// Checks that `a` binds exactly the active names with in-domain values.
    pub fn validate(&self, a: &Assignment) -> Result<(), SpaceError> {
        let mut seen = 0;
        for decl in self.decls.values() {
            let active = self.is_active(decl, a);
            match (active, a.get(&decl.name)) {
                (true, None) => return Err(SpaceError::Missing(decl.name.clone())),
                (false, Some(_)) => {
                    return Err(SpaceError::InvalidAssignment(format!(
                        "`{}` is bound but inactive",
                        decl.name
                    )))
                }
                (true, Some(v)) => {
                    if !decl.kind.contains(v) {
                        return Err(SpaceError::InvalidAssignment(format!(
                            "`{}` = {v} is outside its domain",
                            decl.name
                        )));
                    }
                    seen += 1;
                }
                (false, None) => {}
            }
        }
        if seen != a.len() {
            return Err(SpaceError::InvalidAssignment(
                "assignment binds undeclared names".to_string(),
            ));
        }
        Ok(())
    }

    /// Fixed-width real encoding for the surrogate model.
    ///
    /// Choices are one-hot, ranges are min-max scaled (in log space when
    /// log-scaled), booleans are 0/1, and every slot of an inactive
    /// hyperparameter is 0.5. Fixed values occupy no slots.
    pub fn vectorize(&self, a: &Assignment) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.encoded_dims());
        for decl in self.decls.values() {
            let width = decl.kind.encoded_width();
            if width == 0 {
                continue;
            }
            match a.get(&decl.name) {
                Some(v) => {
                    let before = out.len();
                    decl.kind.encode(v, &mut out);
                    // Type-mismatched values never pass validation; keep
                    // the width constant regardless.
                    out.resize(before + width, 0.5);
                }
                None => out.extend(std::iter::repeat_n(0.5, width)),
            }
        }
        out
    }
}

/// Binding of active hyperparameter names to values, in declaration order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    values: IndexMap<String, HpValue>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<HpValue>) -> Self {
        self.values.insert(name.into(), value.into());
        self
    }

    pub fn set(&mut self, name: impl Into<String>, value: impl Into<HpValue>) {
        self.values.insert(name.into(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<&HpValue> {
        self.values.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &HpValue)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    fn typed<T>(
        &self,
        name: &str,
        expected: &'static str,
        f: impl Fn(&HpValue) -> Option<T>,
    ) -> Result<T, SpaceError> {
        let v = self
            .get(name)
            .ok_or_else(|| SpaceError::Missing(name.to_string()))?;
        f(v).ok_or_else(|| SpaceError::WrongType {
            name: name.to_string(),
            expected,
            found: v.type_name().to_string(),
        })
    }

    pub fn int(&self, name: &str) -> Result<i64, SpaceError> {
        self.typed(name, "int", |v| match v {
            HpValue::Int(i) => Some(*i),
            _ => None,
        })
    }

    pub fn float(&self, name: &str) -> Result<f64, SpaceError> {
        self.typed(name, "float", |v| match v {
            HpValue::Float(x) => Some(*x),
            HpValue::Int(i) => Some(*i as f64),
            _ => None,
        })
    }

    pub fn str(&self, name: &str) -> Result<&str, SpaceError> {
        let v = self
            .get(name)
            .ok_or_else(|| SpaceError::Missing(name.to_string()))?;
        match v {
            HpValue::Str(s) => Ok(s),
            other => Err(SpaceError::WrongType {
                name: name.to_string(),
                expected: "string",
                found: other.type_name().to_string(),
            }),
        }
    }

    pub fn bool(&self, name: &str) -> Result<bool, SpaceError> {
        self.typed(name, "bool", |v| match v {
            HpValue::Bool(b) => Some(*b),
            _ => None,
        })
    }

    /// Canonical `name=value` text, sorted by name and joined with `;`.
    pub fn canonical_key(&self) -> String {
        let mut pairs: Vec<(&String, &HpValue)> = self.values.iter().collect();
        pairs.sort_by(|a, b| a.0.cmp(b.0));
        pairs
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Stable 64-bit hash of [`Assignment::canonical_key`].
    pub fn fingerprint(&self) -> u64 {
        crate::hash::fnv1a(self.canonical_key().as_bytes())
    }
}
