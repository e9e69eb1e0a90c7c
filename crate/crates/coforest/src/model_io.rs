//! Model files: canonical JSON with sorted keys and floats written to 17
//! significant digits, so that save, load and save again is byte-identical.
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "members": [{"tree": <node>, "weight": <float>}, ...],
//!   "metadata": {...}
//! }
//! <node> = {"class": <int>}
//!        | {"feature": <int>, "left": <node>, "right": <node>, "threshold": <float>}
//! ```

use std::fmt::Write as _;
use std::path::Path;

use coforest_core::ensemble::{CompositionMethod, Forest, ForestMetadata};
use coforest_core::{DecisionTree, MetricKind, ScalingRecord, TreeNode};
use serde_json::{Map, Number, Value};

use crate::error::{AppError, Result};

pub const FORMAT_VERSION: u64 = 1;

/// A forest plus everything needed to apply it to raw data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub forest: Forest,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub label_name: String,
    /// Maps raw feature values into the unit cube the trees were grown in.
    pub scaling: Option<ScalingRecord>,
}

impl ModelFile {
    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }
}

fn float(v: f64) -> Value {
    Value::Number(Number::from_f64(v).expect("model values are finite"))
}

fn object(entries: impl IntoIterator<Item = (&'static str, Value)>) -> Value {
    Value::Object(entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect::<Map<_, _>>())
}

pub fn node_to_value(node: &TreeNode) -> Value {
    match node {
        TreeNode::Leaf { class } => object([("class", Value::from(*class))]),
        TreeNode::Split { feature, threshold, left, right } => object([
            ("feature", Value::from(*feature)),
            ("left", node_to_value(left)),
            ("right", node_to_value(right)),
            ("threshold", float(*threshold)),
        ]),
    }
}

pub fn tree_to_value(tree: &DecisionTree) -> Value {
    node_to_value(&tree.root)
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, ctx: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| AppError::Format(format!("{ctx}: missing `{key}`")))
}

fn as_index(v: &Value, ctx: &str) -> Result<usize> {
    v.as_u64().map(|n| n as usize).ok_or_else(|| AppError::Format(format!("{ctx}: expected a nonnegative integer")))
}

fn as_float(v: &Value, ctx: &str) -> Result<f64> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| AppError::Format(format!("{ctx}: expected a finite number")))
}

fn as_str<'a>(v: &'a Value, ctx: &str) -> Result<&'a str> {
    v.as_str().ok_or_else(|| AppError::Format(format!("{ctx}: expected a string")))
}

fn as_array<'a>(v: &'a Value, ctx: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| AppError::Format(format!("{ctx}: expected an array")))
}

pub fn node_from_value(v: &Value) -> Result<TreeNode> {
    let obj = v.as_object().ok_or_else(|| AppError::Format("tree node: expected an object".into()))?;
    if let Some(class) = obj.get("class") {
        if obj.len() != 1 {
            return Err(AppError::Format("leaf node: only `class` is allowed".into()));
        }
        return Ok(TreeNode::leaf(as_index(class, "leaf class")?));
    }
    if obj.len() != 4 {
        return Err(AppError::Format("split node: expected feature, threshold, left and right".into()));
    }
    Ok(TreeNode::split(
        as_index(field(obj, "feature", "split node")?, "split feature")?,
        as_float(field(obj, "threshold", "split node")?, "split threshold")?,
        node_from_value(field(obj, "left", "split node")?)?,
        node_from_value(field(obj, "right", "split node")?)?,
    ))
}

pub fn tree_from_value(v: &Value) -> Result<DecisionTree> {
    Ok(DecisionTree { root: node_from_value(v)? })
}

pub fn model_to_value(model: &ModelFile) -> Value {
    let forest = &model.forest;
    let members: Vec<Value> = forest
        .support()
        .map(|(tree, w)| object([("tree", tree_to_value(tree)), ("weight", float(*w))]))
        .collect();
    let strings = |v: &[String]| Value::Array(v.iter().cloned().map(Value::String).collect());
    let scaling = match &model.scaling {
        Some(s) => object([
            ("max", Value::Array(s.ranges.iter().map(|r| float(r.1)).collect())),
            ("min", Value::Array(s.ranges.iter().map(|r| float(r.0)).collect())),
        ]),
        None => Value::Null,
    };
    let meta = &forest.metadata;
    object([
        ("format_version", Value::from(FORMAT_VERSION)),
        ("members", Value::Array(members)),
        (
            "metadata",
            object([
                ("class_names", strings(&model.class_names)),
                ("composition", Value::String(meta.composition.as_str().into())),
                ("dataset", Value::String(meta.dataset.clone())),
                ("epsilon", float(meta.epsilon)),
                ("feature_names", strings(&model.feature_names)),
                ("label", Value::String(model.label_name.clone())),
                ("metric", Value::String(meta.metric.as_str().into())),
                ("num_classes", Value::from(forest.num_classes())),
                ("num_features", Value::from(model.num_features())),
                ("scaling", scaling),
            ]),
        ),
    ])
}

pub fn model_from_value(v: &Value) -> Result<ModelFile> {
    let top = v.as_object().ok_or_else(|| AppError::Format("model: expected an object".into()))?;
    let version = as_index(field(top, "format_version", "model")?, "format_version")? as u64;
    if version != FORMAT_VERSION {
        return Err(AppError::Format(format!("unsupported model format_version {version}")));
    }
    let meta = field(top, "metadata", "model")?
        .as_object()
        .ok_or_else(|| AppError::Format("metadata: expected an object".into()))?;
    let strings = |key: &str| -> Result<Vec<String>> {
        as_array(field(meta, key, "metadata")?, key)?.iter().map(|s| as_str(s, key).map(str::to_string)).collect()
    };
    let feature_names = strings("feature_names")?;
    let class_names = strings("class_names")?;
    let num_classes = as_index(field(meta, "num_classes", "metadata")?, "num_classes")?;
    let num_features = as_index(field(meta, "num_features", "metadata")?, "num_features")?;
    if num_classes != class_names.len() || num_features != feature_names.len() {
        return Err(AppError::Format("metadata: class or feature counts disagree with their name lists".into()));
    }
    let scaling = match field(meta, "scaling", "metadata")? {
        Value::Null => None,
        Value::Object(s) => {
            let lo = as_array(field(s, "min", "scaling")?, "scaling.min")?;
            let hi = as_array(field(s, "max", "scaling")?, "scaling.max")?;
            if lo.len() != num_features || hi.len() != num_features {
                return Err(AppError::Format("scaling: one range per feature expected".into()));
            }
            let ranges = lo
                .iter()
                .zip(hi)
                .map(|(a, b)| Ok((as_float(a, "scaling.min")?, as_float(b, "scaling.max")?)))
                .collect::<Result<Vec<_>>>()?;
            Some(ScalingRecord { ranges })
        }
        _ => return Err(AppError::Format("scaling: expected an object or null".into())),
    };
    let metadata = ForestMetadata {
        dataset: as_str(field(meta, "dataset", "metadata")?, "dataset")?.to_string(),
        metric: as_str(field(meta, "metric", "metadata")?, "metric")?.parse::<MetricKind>()?,
        epsilon: as_float(field(meta, "epsilon", "metadata")?, "epsilon")?,
        composition: as_str(field(meta, "composition", "metadata")?, "composition")?.parse::<CompositionMethod>()?,
    };
    let members = as_array(field(top, "members", "model")?, "members")?
        .iter()
        .map(|m| {
            let m = m.as_object().ok_or_else(|| AppError::Format("member: expected an object".into()))?;
            let tree = tree_from_value(field(m, "tree", "member")?)?;
            tree.validate(num_features, num_classes, usize::MAX)?;
            Ok((tree, as_float(field(m, "weight", "member")?, "weight")?))
        })
        .collect::<Result<Vec<_>>>()?;
    let forest = Forest::new(members, num_classes, metadata)?;
    Ok(ModelFile { forest, feature_names, class_names, label_name: as_str(field(meta, "label", "metadata")?, "label")?.into(), scaling })
}

/// Canonical text: two-space indentation, keys in sorted order, integers
/// verbatim, other numbers in `d.dddddddddddddddde±x` form.
pub fn to_canonical_string(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v, 0);
    out.push('\n');
    out
}

fn write_value(out: &mut String, v: &Value, depth: usize) {
    let indent = |out: &mut String, d: usize| out.extend(std::iter::repeat_n("  ", d));
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => write!(out, "{u}").unwrap(),
            (None, Some(i)) => write!(out, "{i}").unwrap(),
            _ => write!(out, "{:.16e}", n.as_f64().expect("finite")).unwrap(),
        },
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                indent(out, depth + 1);
                write_value(out, item, depth + 1);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            indent(out, depth);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                indent(out, depth + 1);
                out.push_str(&serde_json::to_string(k).expect("strings serialize"));
                out.push_str(": ");
                write_value(out, &map[k.as_str()], depth + 1);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            indent(out, depth);
            out.push('}');
        }
    }
}

pub fn model_to_string(model: &ModelFile) -> String {
    to_canonical_string(&model_to_value(model))
}

pub fn model_from_str(text: &str) -> Result<ModelFile> {
    let v: Value = serde_json::from_str(text).map_err(|e| AppError::Format(format!("model: {e}")))?;
    model_from_value(&v)
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<()> {
    crate::error::write(path, model_to_string(model))
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    model_from_str(&crate::error::read_to_string(path)?)
        .map_err(|e| AppError::Format(format!("{}: {e}", path.display())))
}

/// External trees for injection: a single tree node, an array of nodes, or
/// a model file whose members are taken.
pub fn load_trees(path: &Path) -> Result<Vec<DecisionTree>> {
    let text = crate::error::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text).map_err(|e| AppError::Format(format!("{}: {e}", path.display())))?;
    match &v {
        Value::Array(items) => items.iter().map(tree_from_value).collect(),
        Value::Object(obj) if obj.contains_key("members") => {
            Ok(model_from_value(&v)?.forest.members().iter().map(|m| m.0.clone()).collect())
        }
        _ => Ok(vec![tree_from_value(&v)?]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_model() -> ModelFile {
        let tree = DecisionTree {
            root: TreeNode::split(1, 0.1 + 0.2, TreeNode::leaf(0), TreeNode::split(0, 1.0 / 3.0, TreeNode::leaf(1), TreeNode::leaf(0))),
        };
        let metadata = ForestMetadata {
            dataset: "demo \"quoted\"".into(),
            metric: MetricKind::MaxRegret,
            epsilon: 0.05,
            composition: CompositionMethod::Nash,
        };
        let forest = Forest::new(
            vec![(tree, 2.0 / 3.0), (DecisionTree::leaf(1), 1.0 / 3.0), (DecisionTree::leaf(0), 0.0)],
            2,
            metadata,
        )
        .unwrap();
        ModelFile {
            forest,
            feature_names: vec!["a".into(), "b".into()],
            class_names: vec!["no".into(), "yes".into()],
            label_name: "y".into(),
            scaling: Some(ScalingRecord { ranges: vec![(-1.5, 2.0), (0.0, 1e-3)] }),
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let first = model_to_string(&sample_model());
        let loaded = model_from_str(&first).unwrap();
        let second = model_to_string(&loaded);
        assert_eq!(first, second);
        // zero-weight members are dropped on save
        assert_eq!(loaded.forest.members().len(), 2);
        assert_eq!(loaded.forest.members()[0], sample_model().forest.members()[0]);
        assert_eq!(loaded.scaling, sample_model().scaling);
    }

    #[test]
    fn canonical_layout() {
        let text = model_to_string(&sample_model());
        let keys: Vec<usize> =
            ["\"format_version\"", "\"members\"", "\"metadata\""].iter().map(|k| text.find(k).unwrap()).collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        assert!(text.contains("\"threshold\": 3.0000000000000004e-1"), "{text}");
        assert!(text.contains("\"format_version\": 1,"));
        assert!(text.ends_with("}\n"));
    }

    #[test]
    fn tree_format() {
        let v: Value = serde_json::from_str(r#"{"feature": 0, "threshold": 0.5, "left": {"class": 1}, "right": {"class": 0}}"#).unwrap();
        assert_eq!(tree_from_value(&v).unwrap(), DecisionTree::stump(0, 0.5, 1, 0));
        assert_eq!(tree_to_value(&DecisionTree::stump(0, 0.5, 1, 0)), v);
        for bad in [r#"{"class": -1}"#, r#"{"class": 0, "feature": 1}"#, r#"{"feature": 0, "threshold": 0.5, "left": {"class": 1}}"#, "[1]"] {
            let v: Value = serde_json::from_str(bad).unwrap();
            assert!(tree_from_value(&v).is_err(), "{bad}");
        }
    }

    #[test]
    fn rejects_bad_models() {
        let text = model_to_string(&sample_model());
        assert!(model_from_str(&text.replace("\"format_version\": 1", "\"format_version\": 9")).is_err());
        assert!(model_from_str(&text.replace("\"num_classes\": 2", "\"num_classes\": 3")).is_err());
        assert!(model_from_str("{").is_err());
    }

    #[test]
    fn injection_file_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let single = dir.path().join("one.json");
        std::fs::write(&single, r#"{"class": 1}"#).unwrap();
        assert_eq!(load_trees(&single).unwrap(), vec![DecisionTree::leaf(1)]);
        let many = dir.path().join("many.json");
        std::fs::write(&many, r#"[{"class": 1}, {"class": 0}]"#).unwrap();
        assert_eq!(load_trees(&many).unwrap().len(), 2);
        let model = dir.path().join("model.json");
        save_model(&model, &sample_model()).unwrap();
        assert_eq!(load_trees(&model).unwrap().len(), 2);
    }
}
