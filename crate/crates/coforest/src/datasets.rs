//! Small datasets compiled into the binary, addressed as `bundled:<name>`.

use std::path::Path;

use crate::csv_io::{load_csv_with_classes, read_csv, LabelColumn, LabeledData};
use crate::error::{AppError, Result};

pub const PREFIX: &str = "bundled:";

#[derive(Debug, Clone, Copy)]
pub struct Bundled {
    pub name: &'static str,
    pub csv: &'static str,
    pub label: &'static str,
    /// Perturbation radius used for this dataset in the bench presets.
    pub epsilon: f64,
}

pub const BUNDLED: &[Bundled] = &[
    Bundled { name: "diagonal", csv: include_str!("../data/diagonal.csv"), label: "side", epsilon: 0.05 },
    Bundled { name: "moons", csv: include_str!("../data/moons.csv"), label: "moon", epsilon: 0.05 },
    Bundled { name: "iris", csv: include_str!("../data/iris.csv"), label: "species", epsilon: 0.05 },
];

pub fn bundled(name: &str) -> Option<&'static Bundled> {
    BUNDLED.iter().find(|b| b.name == name)
}

/// Loads `spec`, either `bundled:<name>` or a CSV path. A bundled dataset
/// uses its own label column when `label` is `None`.
pub fn load(spec: &str, label: Option<&LabelColumn>, classes: Option<&[String]>) -> Result<LabeledData> {
    match spec.strip_prefix(PREFIX) {
        Some(name) => {
            let b = bundled(name).ok_or_else(|| {
                let known: Vec<&str> = BUNDLED.iter().map(|b| b.name).collect();
                AppError::Usage(format!("unknown bundled dataset `{name}` (known: {})", known.join(", ")))
            })?;
            let default = LabelColumn::Name(b.label.to_string());
            read_csv(b.csv.as_bytes(), spec, b.name, label.unwrap_or(&default), classes)
        }
        None => load_csv_with_classes(Path::new(spec), label.unwrap_or(&LabelColumn::default()), classes),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_sets_load() {
        let d = load("bundled:diagonal", None, None).unwrap();
        assert_eq!((d.dataset.len(), d.dataset.num_features(), d.dataset.num_classes), (200, 2, 2));
        let m = load("bundled:moons", None, None).unwrap();
        assert_eq!((m.dataset.len(), m.dataset.num_classes), (200, 2));
        let i = load("bundled:iris", None, None).unwrap();
        assert_eq!((i.dataset.len(), i.dataset.num_features(), i.dataset.num_classes), (150, 4, 3));
        assert_eq!(i.class_names, vec!["setosa", "versicolor", "virginica"]);
        assert!(matches!(load("bundled:nope", None, None), Err(AppError::Usage(_))));
    }

    #[test]
    fn diagonal_has_margin() {
        let d = load("bundled:diagonal", None, None).unwrap().dataset;
        for (x, &y) in d.instances.iter_rows().zip(&d.labels) {
            let s = x[0] + x[1] - 1.0;
            assert!(s.abs() >= 0.15 - 1e-9);
            // the first row lies below the diagonal, so class 0 is the lower side
            assert_eq!(y == 0, s < 0.0);
        }
    }
}
