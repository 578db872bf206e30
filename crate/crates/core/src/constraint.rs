//! Structured parameter constraints exchanged with the analysis agents.
//!
//! A constraint describes what a parameter must look like, not a concrete
//! type: its kind, an optional type name, nested fields for containers and
//! objects, required custom methods and required magic methods.

use core::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::diag::Diagnostic;
use crate::prelude::*;
use crate::project::{FunctionRef, InvocationChain};
use crate::python::{is_dunder, FunctionDef};
use crate::text::extract_json_object;

/// Maximum nesting of [`FieldSpec`]s, counting the parameter itself as 1.
pub const MAX_DEPTH: usize = 8;

const STAGE: &str = "constraint";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Primitive,
    Object,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Primitive => "primitive",
            Kind::Object => "object",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Error-seeking: constraints likely to expose a type error.
    Trigger,
    /// Non-error-seeking: constraints under which the method runs normally.
    Normal,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Trigger => "trigger",
            Mode::Normal => "normal",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FieldSpec {
    pub name: String,
    pub constraint: ParamConstraint,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParamConstraint {
    pub kind: Kind,
    pub type_name: Option<String>,
    pub fields: Vec<FieldSpec>,
    pub custom_methods: Vec<String>,
    pub magic_methods: Vec<String>,
}

impl ParamConstraint {
    pub fn primitive(type_name: &str) -> Self {
        ParamConstraint {
            kind: Kind::Primitive,
            type_name: Some(type_name.to_string()),
            fields: Vec::new(),
            custom_methods: Vec::new(),
            magic_methods: Vec::new(),
        }
    }

    pub fn object(type_name: Option<&str>) -> Self {
        ParamConstraint {
            kind: Kind::Object,
            type_name: type_name.map(str::to_string),
            fields: Vec::new(),
            custom_methods: Vec::new(),
            magic_methods: Vec::new(),
        }
    }

    pub fn with_magic(mut self, names: &[&str]) -> Self {
        self.magic_methods.extend(names.iter().map(|s| s.to_string()));
        self.normalized()
    }

    pub fn with_methods(mut self, names: &[&str]) -> Self {
        self.custom_methods.extend(names.iter().map(|s| s.to_string()));
        self.normalized()
    }

    pub fn with_field(mut self, name: &str, c: ParamConstraint) -> Self {
        self.fields.retain(|f| f.name != name);
        self.fields.push(FieldSpec { name: name.to_string(), constraint: c });
        self.normalized()
    }

    /// Depth of the deepest nested field, 1 for a leaf.
    pub fn depth(&self) -> usize {
        1 + self.fields.iter().map(|f| f.constraint.depth()).max().unwrap_or(0)
    }

    /// Canonical ordering: fields by name (last duplicate wins), method
    /// lists sorted and deduplicated.
    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    fn normalize(&mut self) {
        let mut by_name: BTreeMap<String, ParamConstraint> = BTreeMap::new();
        for f in core::mem::take(&mut self.fields) {
            by_name.insert(f.name, f.constraint.normalized());
        }
        self.fields = by_name.into_iter().map(|(name, constraint)| FieldSpec { name, constraint }).collect();
        for list in [&mut self.custom_methods, &mut self.magic_methods] {
            list.sort();
            list.dedup();
        }
    }

    /// Canonical JSON value (normalizes a copy first).
    pub fn to_value(&self) -> Value {
        self.clone().normalized().raw_value()
    }

    fn raw_value(&self) -> Value {
        // keys inserted in sorted order so output is canonical with or
        // without serde_json's preserve_order feature
        let mut m = Map::new();
        if !self.custom_methods.is_empty() {
            m.insert("custom_methods".into(), strings(&self.custom_methods));
        }
        if !self.fields.is_empty() {
            let mut fields = Map::new();
            for f in &self.fields {
                fields.insert(f.name.clone(), f.constraint.raw_value());
            }
            m.insert("fields".into(), Value::Object(fields));
        }
        m.insert("kind".into(), Value::String(self.kind.as_str().into()));
        if !self.magic_methods.is_empty() {
            m.insert("magic_methods".into(), strings(&self.magic_methods));
        }
        if let Some(t) = &self.type_name {
            m.insert("type_name".into(), Value::String(t.clone()));
        }
        Value::Object(m)
    }

    /// Strict-enough reading of one constraint value. Unknown keys and
    /// over-deep nesting become warnings.
    pub fn from_value(v: &Value, path: &str, diags: &mut Vec<Diagnostic>) -> Result<Self, ConstraintError> {
        read_constraint(v, path, 1, diags)
    }

    /// Schema violations of this constraint, prefixed with `path`.
    pub fn schema_errors(&self, path: &str) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_errors(path, &mut out);
        out
    }

    fn collect_errors(&self, path: &str, out: &mut Vec<String>) {
        if self.kind == Kind::Primitive && !self.fields.is_empty() {
            out.push(format!("{path}: primitive constraint cannot have fields"));
        }
        if self.kind == Kind::Primitive && !self.custom_methods.is_empty() {
            out.push(format!("{path}: primitive constraint cannot have custom_methods"));
        }
        for m in &self.magic_methods {
            if !is_dunder(m) || !m[2..m.len() - 2].chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                out.push(format!("{path}: `{m}` is not a magic method name"));
            }
        }
        for f in &self.fields {
            if f.name.is_empty() {
                out.push(format!("{path}: field with empty name"));
            }
            f.constraint.collect_errors(&format!("{path}.{}", f.name), out);
        }
    }

    fn unknown_magic(&self, path: &str, out: &mut Vec<Diagnostic>) {
        for m in &self.magic_methods {
            if is_dunder(m) && !is_known_magic_method(m) {
                out.push(Diagnostic::warning(STAGE, format!("{path}: unknown magic method `{m}`")));
            }
        }
        for f in &self.fields {
            f.constraint.unknown_magic(&format!("{path}.{}", f.name), out);
        }
    }
}

impl Serialize for ParamConstraint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParamConstraint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        let mut diags = Vec::new();
        let c = ParamConstraint::from_value(&v, "$", &mut diags).map_err(D::Error::custom)?;
        let errors = c.schema_errors("$");
        if errors.is_empty() {
            Ok(c)
        } else {
            Err(D::Error::custom(errors.join("; ")))
        }
    }
}

fn strings(list: &[String]) -> Value {
    Value::Array(list.iter().cloned().map(Value::String).collect())
}

const PRIMITIVE_NAMES: &[&str] = &["int", "float", "complex", "str", "bytes", "bool", "None", "NoneType"];

fn read_constraint(v: &Value, path: &str, depth: usize, diags: &mut Vec<Diagnostic>) -> Result<ParamConstraint, ConstraintError> {
    let obj = match v {
        // "int" shorthand
        Value::String(t) => {
            let kind = if PRIMITIVE_NAMES.contains(&t.as_str()) { Kind::Primitive } else { Kind::Object };
            let mut c = ParamConstraint::object(Some(t));
            c.kind = kind;
            return Ok(c);
        }
        Value::Object(o) => o,
        other => return Err(ConstraintError::Malformed(format!("{path}: expected an object, found {}", type_of(other)))),
    };
    let mut type_name = None;
    let mut kind = None;
    let mut fields = Vec::new();
    let mut custom_methods = Vec::new();
    let mut magic_methods = Vec::new();
    for (key, val) in obj {
        match key.as_str() {
            "kind" => {
                let s = val.as_str().ok_or_else(|| ConstraintError::Malformed(format!("{path}.kind: expected a string")))?;
                kind = Some(match s.to_ascii_lowercase().as_str() {
                    "primitive" => Kind::Primitive,
                    "object" => Kind::Object,
                    _ => return Err(ConstraintError::Invalid(vec![format!("{path}.kind: unknown kind `{s}`")])),
                });
            }
            "type_name" | "type" => match val {
                Value::Null => {}
                Value::String(s) if s.trim().is_empty() => {}
                Value::String(s) => type_name = Some(s.trim().to_string()),
                _ => return Err(ConstraintError::Malformed(format!("{path}.{key}: expected a string"))),
            },
            "custom_methods" => custom_methods = read_names(val, &format!("{path}.{key}"))?,
            "magic_methods" => magic_methods = read_names(val, &format!("{path}.{key}"))?,
            "fields" => {
                if depth >= MAX_DEPTH {
                    diags.push(Diagnostic::warning(STAGE, format!("{path}.fields: nesting deeper than {MAX_DEPTH} dropped")));
                    continue;
                }
                fields = read_fields(val, &format!("{path}.fields"), depth, diags)?;
            }
            _ => diags.push(Diagnostic::warning(STAGE, format!("{path}: ignored unknown key `{key}`"))),
        }
    }
    let kind = kind.unwrap_or_else(|| {
        let primitive = fields.is_empty()
            && custom_methods.is_empty()
            && magic_methods.is_empty()
            && type_name.as_deref().is_some_and(|t| PRIMITIVE_NAMES.contains(&t));
        if primitive {
            Kind::Primitive
        } else {
            Kind::Object
        }
    });
    Ok(ParamConstraint { kind, type_name, fields, custom_methods, magic_methods }.normalized())
}

fn read_fields(v: &Value, path: &str, depth: usize, diags: &mut Vec<Diagnostic>) -> Result<Vec<FieldSpec>, ConstraintError> {
    let mut out = Vec::new();
    match v {
        Value::Null => {}
        Value::Object(o) => {
            for (name, c) in o {
                let constraint = read_constraint(c, &format!("{path}.{name}"), depth + 1, diags)?;
                out.push(FieldSpec { name: name.clone(), constraint });
            }
        }
        // [{"name": "x", "constraint": {...}}] or [{"name": "x", "kind": ...}]
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                let o = item
                    .as_object()
                    .ok_or_else(|| ConstraintError::Malformed(format!("{path}[{i}]: expected an object")))?;
                let name = o
                    .get("name")
                    .and_then(Value::as_str)
                    .ok_or_else(|| ConstraintError::Malformed(format!("{path}[{i}]: field without a name")))?;
                let inner = match o.get("constraint") {
                    Some(c) => c.clone(),
                    None => {
                        let mut rest = o.clone();
                        rest.remove("name");
                        Value::Object(rest)
                    }
                };
                let constraint = read_constraint(&inner, &format!("{path}.{name}"), depth + 1, diags)?;
                out.push(FieldSpec { name: name.to_string(), constraint });
            }
        }
        other => return Err(ConstraintError::Malformed(format!("{path}: expected an object or list, found {}", type_of(other)))),
    }
    Ok(out)
}

fn read_names(v: &Value, path: &str) -> Result<Vec<String>, ConstraintError> {
    match v {
        Value::Null => Ok(Vec::new()),
        Value::String(s) => Ok(vec![clean_method(s)]),
        Value::Array(items) => items
            .iter()
            .map(|i| {
                i.as_str()
                    .map(clean_method)
                    .ok_or_else(|| ConstraintError::Malformed(format!("{path}: expected a list of strings")))
            })
            .collect(),
        other => Err(ConstraintError::Malformed(format!("{path}: expected a list, found {}", type_of(other)))),
    }
}

/// `__bool__()` and `x.__bool__` both name `__bool__`.
fn clean_method(s: &str) -> String {
    let s = s.trim();
    let s = s.strip_suffix("()").unwrap_or(s);
    s.rsplit('.').next().unwrap_or(s).to_string()
}

fn type_of(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "a list",
        Value::Object(_) => "an object",
    }
}

/// Constraints for one function of the chain under one mode (`P_i`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodConstraint {
    pub function: FunctionRef,
    pub params: BTreeMap<String, ParamConstraint>,
    pub mode: Mode,
    #[serde(default)]
    pub rationale: String,
}

impl MethodConstraint {
    pub fn empty(function: FunctionRef, mode: Mode) -> Self {
        MethodConstraint { function, params: BTreeMap::new(), mode, rationale: String::new() }
    }

    /// The params map alone, as shown to agents.
    pub fn params_value(&self) -> Value {
        let mut m = Map::new();
        for (k, v) in &self.params {
            m.insert(k.clone(), v.to_value());
        }
        Value::Object(m)
    }

    pub fn params_json(&self) -> String {
        serde_json::to_string_pretty(&self.params_value()).expect("values serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConstraintError {
    /// The text holds no usable JSON; callers re-prompt once.
    #[error("malformed constraint JSON: {0}")]
    Malformed(String),
    /// JSON was read but violates the schema.
    #[error("invalid constraint: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("constraint names parameters not declared by {function}: {}", offenders.join(", "))]
    UnknownParams { function: String, offenders: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed {
    pub constraint: MethodConstraint,
    pub diagnostics: Vec<Diagnostic>,
}

const WRAPPER_KEYS: &[&str] = &["function", "mode", "params", "rationale", "schema_version"];

/// Reads agent output (possibly fenced, possibly wrapped in prose) into a
/// [`MethodConstraint`] for `target`.
///
/// The JSON is either the params map itself or the serialized form
/// `{"function", "mode", "params", "rationale"}`. Prose around the JSON
/// becomes the rationale when the JSON carries none.
pub fn parse_constraint(text: &str, target: &FunctionRef, mode: Mode) -> Result<Parsed, ConstraintError> {
    let (json, prose) =
        extract_json_object(text).ok_or_else(|| ConstraintError::Malformed("no JSON object found".into()))?;
    let value: Value = serde_json::from_str(json).map_err(|e| ConstraintError::Malformed(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| ConstraintError::Malformed("top level is not an object".into()))?;
    let mut diagnostics = Vec::new();
    let wrapped = obj.get("params").is_some_and(Value::is_object) && obj.keys().all(|k| WRAPPER_KEYS.contains(&k.as_str()));
    let (params_obj, mut rationale) = if wrapped {
        if let Some(m) = obj.get("mode").and_then(Value::as_str) {
            if m != mode.as_str() {
                diagnostics.push(Diagnostic::warning(STAGE, format!("agent reported mode `{m}`, expected `{mode}`")));
            }
        }
        let r = obj.get("rationale").and_then(Value::as_str).unwrap_or("").to_string();
        (obj["params"].as_object().expect("checked above"), r)
    } else {
        (obj, String::new())
    };
    if rationale.is_empty() {
        rationale = prose.trim().to_string();
    }
    let mut params = BTreeMap::new();
    for (name, v) in params_obj {
        let c = ParamConstraint::from_value(v, name, &mut diagnostics)?;
        params.insert(name.clone(), c);
    }
    let constraint = MethodConstraint { function: target.clone(), params, mode, rationale };
    let errors: Vec<String> = constraint.params.iter().flat_map(|(n, c)| c.schema_errors(n)).collect();
    if !errors.is_empty() {
        return Err(ConstraintError::Invalid(errors));
    }
    for (n, c) in &constraint.params {
        c.unknown_magic(n, &mut diagnostics);
    }
    Ok(Parsed { constraint, diagnostics })
}

/// [`parse_constraint`] followed by [`validate_against_signature`]; an
/// undeclared parameter is an error.
pub fn parse_for_signature(text: &str, target: &FunctionRef, mode: Mode, def: &FunctionDef) -> Result<Parsed, ConstraintError> {
    let parsed = parse_constraint(text, target, mode)?;
    let offenders = undeclared_params(&parsed.constraint, def);
    if !offenders.is_empty() {
        return Err(ConstraintError::UnknownParams { function: target.id(), offenders });
    }
    Ok(parsed)
}

/// Canonical JSON: sorted keys, normalized lists, no insignificant whitespace.
pub fn serialize_constraint(c: &MethodConstraint) -> String {
    let mut m = Map::new();
    m.insert("function".into(), Value::String(c.function.id()));
    m.insert("mode".into(), Value::String(c.mode.as_str().into()));
    m.insert("params".into(), c.params_value());
    m.insert("rationale".into(), Value::String(c.rationale.clone()));
    serde_json::to_string(&Value::Object(m)).expect("values serialize")
}

pub const MAGIC_METHOD_VOCABULARY_VERSION: u32 = 1;

const MAGIC_METHODS: &[&str] = &[
    // object lifecycle and representation
    "__new__", "__init__", "__del__", "__repr__", "__str__", "__format__", "__bytes__", "__hash__", "__sizeof__",
    "__reduce__", "__reduce_ex__", "__getstate__", "__setstate__", "__copy__", "__deepcopy__",
    // comparison
    "__lt__", "__le__", "__eq__", "__ne__", "__gt__", "__ge__",
    // conversion
    "__bool__", "__int__", "__float__", "__complex__", "__index__", "__round__", "__trunc__", "__floor__", "__ceil__",
    "__fspath__",
    // attribute access
    "__getattr__", "__getattribute__", "__setattr__", "__delattr__", "__dir__", "__get__", "__set__", "__delete__",
    "__set_name__",
    // callables and classes
    "__call__", "__init_subclass__", "__class_getitem__", "__instancecheck__", "__subclasscheck__", "__mro_entries__",
    // containers
    "__len__", "__length_hint__", "__getitem__", "__setitem__", "__delitem__", "__missing__", "__contains__",
    "__reversed__",
    // iteration
    "__iter__", "__next__", "__aiter__", "__anext__", "__await__",
    // context managers
    "__enter__", "__exit__", "__aenter__", "__aexit__",
    // arithmetic
    "__add__", "__sub__", "__mul__", "__matmul__", "__truediv__", "__floordiv__", "__mod__", "__divmod__", "__pow__",
    "__lshift__", "__rshift__", "__and__", "__xor__", "__or__",
    "__radd__", "__rsub__", "__rmul__", "__rmatmul__", "__rtruediv__", "__rfloordiv__", "__rmod__", "__rdivmod__",
    "__rpow__", "__rlshift__", "__rrshift__", "__rand__", "__rxor__", "__ror__",
    "__iadd__", "__isub__", "__imul__", "__imatmul__", "__itruediv__", "__ifloordiv__", "__imod__", "__ipow__",
    "__ilshift__", "__irshift__", "__iand__", "__ixor__", "__ior__",
    "__neg__", "__pos__", "__abs__", "__invert__",
    // buffers
    "__buffer__", "__release_buffer__",
    // numpy-style protocols common in data libraries
    "__array__", "__array_ufunc__", "__array_function__",
];

/// The recognized magic-method names (comparison, arithmetic, container,
/// iteration, conversion and related protocols).
pub fn magic_method_vocabulary() -> BTreeSet<&'static str> {
    MAGIC_METHODS.iter().copied().collect()
}

pub fn is_known_magic_method(name: &str) -> bool {
    MAGIC_METHODS.contains(&name)
}

fn undeclared_params(c: &MethodConstraint, def: &FunctionDef) -> Vec<String> {
    let receiver = def.receiver();
    let declared: BTreeSet<&str> =
        def.params.iter().map(|p| p.name.as_str()).filter(|n| Some(*n) != receiver).collect();
    c.params.keys().filter(|k| !declared.contains(k.as_str())).cloned().collect()
}

/// One error diagnostic per constrained parameter that the function does
/// not declare. The receiver (`self`/`cls` by position) is not a valid
/// target.
pub fn validate_against_signature(c: &MethodConstraint, def: &FunctionDef) -> Vec<Diagnostic> {
    undeclared_params(c, def)
        .into_iter()
        .map(|p| Diagnostic::error(STAGE, format!("`{p}` is not a parameter of {}", c.function.qualified_name)))
        .collect()
}

/// The two constraint sequences of a chain, each ordered focal-first
/// (`⟨P_n, …, P_1⟩`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConstraints {
    pub chain: InvocationChain,
    pub trigger_seq: Vec<MethodConstraint>,
    pub normal_seq: Vec<MethodConstraint>,
}

impl ChainConstraints {
    /// Checks length, function order and mode of both sequences. An empty
    /// sequence stands for a failed pass and is accepted.
    pub fn check_alignment(&self) -> Result<(), String> {
        for (seq, mode) in [(&self.trigger_seq, Mode::Trigger), (&self.normal_seq, Mode::Normal)] {
            if seq.is_empty() {
                continue;
            }
            if seq.len() != self.chain.len() {
                return Err(format!("{mode} sequence has {} elements for a chain of {}", seq.len(), self.chain.len()));
            }
            for (i, (c, f)) in seq.iter().zip(self.chain.steps.iter().rev()).enumerate() {
                if &c.function != f {
                    return Err(format!("{mode}[{i}] constrains {} but the chain has {}", c.function, f));
                }
                if c.mode != mode {
                    return Err(format!("{mode}[{i}] has mode {}", c.mode));
                }
            }
        }
        Ok(())
    }

    /// The entry-method constraint `P_1` of a sequence.
    pub fn entry_constraint(&self, mode: Mode) -> Option<&MethodConstraint> {
        match mode {
            Mode::Trigger => self.trigger_seq.last(),
            Mode::Normal => self.normal_seq.last(),
        }
    }

    pub fn seq(&self, mode: Mode) -> &[MethodConstraint] {
        match mode {
            Mode::Trigger => &self.trigger_seq,
            Mode::Normal => &self.normal_seq,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::python::analyze;

    fn validate_key() -> (FunctionRef, FunctionDef) {
        let info = analyze("class _LocIndexer:\n    def _validate_key(self, key, axis):\n        pass\n").unwrap();
        let def = info.functions[0].clone();
        (FunctionRef::new("pkg/indexing.py", &def), def)
    }

    #[test]
    fn bool_requirement_example() {
        let (f, def) = validate_key();
        let p = parse_for_signature(r#"{"key": {"kind":"object","magic_methods":["__bool__"]}}"#, &f, Mode::Trigger, &def)
            .unwrap();
        assert_eq!(p.constraint.params.len(), 1);
        assert_eq!(p.constraint.params["key"].magic_methods, ["__bool__"]);
        assert!(p.diagnostics.is_empty());
    }

    #[test]
    fn empty_object_is_vacuous() {
        let (f, _) = validate_key();
        assert!(parse_constraint("{}", &f, Mode::Normal).unwrap().constraint.params.is_empty());
    }

    #[test]
    fn undeclared_param_is_rejected() {
        let (f, def) = validate_key();
        let err = parse_for_signature(r#"{"zzz": {"kind":"object"}}"#, &f, Mode::Trigger, &def).unwrap_err();
        assert_eq!(err, ConstraintError::UnknownParams { function: f.id(), offenders: vec!["zzz".into()] });
    }

    #[test]
    fn receiver_cannot_be_constrained() {
        let (f, def) = validate_key();
        let c = parse_constraint(r#"{"self": {"kind":"object"}}"#, &f, Mode::Trigger).unwrap().constraint;
        assert_eq!(validate_against_signature(&c, &def).len(), 1);
    }

    #[test]
    fn signature_examples() {
        let (f, def) = validate_key();
        let ok = parse_constraint(r#"{"key": "int"}"#, &f, Mode::Normal).unwrap().constraint;
        assert!(validate_against_signature(&ok, &def).is_empty());
        let bad = parse_constraint(r#"{"bogus": "int"}"#, &f, Mode::Normal).unwrap().constraint;
        assert_eq!(validate_against_signature(&bad, &def).len(), 1);
        assert!(validate_against_signature(&MethodConstraint::empty(f, Mode::Normal), &def).is_empty());
    }

    #[test]
    fn fenced_with_prose_and_unknown_keys() {
        let (f, _) = validate_key();
        let text = "The key must be truthy.\n```json\n{\"key\": {\"kind\": \"object\", \"nullable\": true, \"magic_methods\": [\"__bool__()\"]}}\n```\n";
        let p = parse_constraint(text, &f, Mode::Trigger).unwrap();
        assert_eq!(p.constraint.rationale, "The key must be truthy.");
        assert_eq!(p.constraint.params["key"].magic_methods, ["__bool__"]);
        assert_eq!(p.diagnostics.len(), 1);
        assert!(p.diagnostics[0].message.contains("nullable"));
    }

    #[test]
    fn malformed_and_invalid() {
        let (f, _) = validate_key();
        assert!(matches!(parse_constraint("no json here", &f, Mode::Trigger), Err(ConstraintError::Malformed(_))));
        assert!(matches!(parse_constraint("{\"key\": [1]}", &f, Mode::Trigger), Err(ConstraintError::Malformed(_))));
        let prim = r#"{"key": {"kind": "primitive", "custom_methods": ["strip"]}}"#;
        assert!(matches!(parse_constraint(prim, &f, Mode::Trigger), Err(ConstraintError::Invalid(_))));
        let magic = r#"{"key": {"kind": "object", "magic_methods": ["getitem"]}}"#;
        assert!(matches!(parse_constraint(magic, &f, Mode::Trigger), Err(ConstraintError::Invalid(_))));
    }

    #[test]
    fn unknown_magic_is_a_warning() {
        let (f, _) = validate_key();
        let p = parse_constraint(r#"{"key": {"magic_methods": ["__frobnicate__"]}}"#, &f, Mode::Trigger).unwrap();
        assert_eq!(p.diagnostics.len(), 1);
    }

    #[test]
    fn vocabulary() {
        let v = magic_method_vocabulary();
        assert!(v.contains("__getitem__"));
        assert!(v.contains("__iter__"));
        assert!(v.contains("__bool__"));
        assert!(!v.contains("getitem"));
        assert!(v.iter().all(|m| is_dunder(m)));
    }

    #[test]
    fn canonical_bytes_ignore_construction_order() {
        let (f, _) = validate_key();
        let a = ParamConstraint::object(Some("dict")).with_field("b", ParamConstraint::primitive("int")).with_field(
            "a",
            ParamConstraint::primitive("str"),
        );
        let b = ParamConstraint::object(Some("dict")).with_field("a", ParamConstraint::primitive("str")).with_field(
            "b",
            ParamConstraint::primitive("int"),
        );
        let mut ca = MethodConstraint::empty(f.clone(), Mode::Trigger);
        ca.params.insert("key".into(), a.with_magic(&["__len__", "__getitem__"]));
        let mut cb = MethodConstraint::empty(f.clone(), Mode::Trigger);
        cb.params.insert("key".into(), b.with_magic(&["__getitem__", "__len__", "__len__"]));
        assert_eq!(serialize_constraint(&ca), serialize_constraint(&cb));
        let back = parse_constraint(&serialize_constraint(&ca), &f, Mode::Trigger).unwrap().constraint;
        assert_eq!(back, ca);
    }

    #[test]
    fn nested_list_of_dict_round_trips() {
        let (f, _) = validate_key();
        let leaf = ParamConstraint::primitive("int");
        let dict = ParamConstraint::object(Some("dict")).with_field("value", leaf).with_magic(&["__getitem__"]);
        let list = ParamConstraint::object(Some("list")).with_field("item", dict).with_magic(&["__iter__"]);
        assert_eq!(list.depth(), 3);
        let mut c = MethodConstraint::empty(f.clone(), Mode::Normal);
        c.params.insert("key".into(), list);
        c.rationale = "rows".into();
        let back = parse_constraint(&serialize_constraint(&c), &f, Mode::Normal).unwrap().constraint;
        assert_eq!(back, c);
    }

    #[test]
    fn depth_is_capped() {
        let (f, _) = validate_key();
        let mut json = String::from("{\"kind\":\"object\"}");
        for _ in 0..10 {
            json = format!("{{\"kind\":\"object\",\"fields\":{{\"x\":{json}}}}}");
        }
        let p = parse_constraint(&format!("{{\"key\":{json}}}"), &f, Mode::Trigger).unwrap();
        assert_eq!(p.constraint.params["key"].depth(), MAX_DEPTH);
        assert!(p.diagnostics.iter().any(|d| d.message.contains("nesting")));
    }

    #[test]
    fn field_list_form() {
        let (f, _) = validate_key();
        let p = parse_constraint(
            r#"{"key": {"kind":"object","fields":[{"name":"a","kind":"primitive","type_name":"int"},{"name":"b","constraint":"str"}]}}"#,
            &f,
            Mode::Trigger,
        )
        .unwrap();
        let names: Vec<_> = p.constraint.params["key"].fields.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
    }
}
