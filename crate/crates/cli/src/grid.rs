//! Expansion of a config file into the list of configurations it describes.
//!
//! Any array-valued field is a grid dimension. `capacity` is special: an
//! array of integers is a per-hospital vector, an array of arrays (or of
//! integers mixed with arrays) is a dimension.

use serde_json::{Map, Value};

use interview_match::market::{ConfigError, MarketConfig};

use crate::CliError;

fn is_dimension(key: &str, value: &Value) -> bool {
    match value {
        Value::Array(items) if key == "capacity" => items.iter().any(|v| v.is_array()),
        Value::Array(_) => true,
        _ => false,
    }
}

/// Cartesian product of the array-valued fields, in key order.
fn expand_object(obj: &Map<String, Value>) -> Vec<Map<String, Value>> {
    let mut out = vec![Map::new()];
    for (key, value) in obj {
        let choices: Vec<Value> = if is_dimension(key, value) {
            value.as_array().expect("checked").clone()
        } else {
            vec![value.clone()]
        };
        out = out
            .into_iter()
            .flat_map(|partial| {
                choices.iter().map(move |c| {
                    let mut m = partial.clone();
                    m.insert(key.clone(), c.clone());
                    m
                })
            })
            .collect();
    }
    out
}

/// Fills `n_hospitals` from the capacity when omitted.
fn derive_hospitals(obj: &mut Map<String, Value>) -> Result<(), CliError> {
    if obj.contains_key("n_hospitals") {
        return Ok(());
    }
    let n = match obj.get("capacity") {
        Some(Value::Array(v)) => v.len() as u64,
        Some(Value::Number(c)) => {
            let doctors = obj.get("n_doctors").and_then(Value::as_u64).ok_or(ConfigError::NonPositive("n_doctors"))?;
            let c = c.as_u64().filter(|&c| c > 0).ok_or(ConfigError::NonPositive("capacity"))?;
            (doctors / c).max(1)
        }
        _ => return Err(CliError::Grid("capacity is required when n_hospitals is omitted".into())),
    };
    obj.insert("n_hospitals".into(), Value::from(n));
    Ok(())
}

/// Parses a config text: one object, or an array of objects, each possibly a grid.
pub fn expand(text: &str) -> Result<Vec<MarketConfig>, CliError> {
    let root: Value = serde_json::from_str(text).map_err(ConfigError::from)?;
    let objects = match root {
        Value::Object(o) => vec![o],
        Value::Array(items) => items
            .into_iter()
            .map(|v| match v {
                Value::Object(o) => Ok(o),
                _ => Err(CliError::Grid("config array entries must be objects".into())),
            })
            .collect::<Result<_, _>>()?,
        _ => return Err(CliError::Grid("config must be an object or an array of objects".into())),
    };
    let mut configs = Vec::new();
    for obj in &objects {
        for mut point in expand_object(obj) {
            derive_hospitals(&mut point)?;
            configs.push(MarketConfig::from_json_str(&Value::Object(point).to_string())?);
        }
    }
    if configs.is_empty() {
        return Err(CliError::Grid("config expands to no scenarios".into()));
    }
    Ok(configs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use interview_match::market::{Capacity, Setting};

    #[test]
    fn scalar_fields_give_one_config() {
        let c = expand(r#"{"n_doctors": 100, "capacity": 5, "k": 5}"#).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].n_hospitals, 20);
    }

    #[test]
    fn arrays_cross() {
        let c = expand(r#"{"n_doctors": 100, "capacity": 5, "k": [5, 12], "setting": ["Residency", "SchoolChoice"]}"#)
            .unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.iter().filter(|x| x.setting == Setting::SchoolChoice).count(), 2);
        assert_eq!(c.iter().filter(|x| x.k == 12).count(), 2);
    }

    #[test]
    fn flat_capacity_array_is_per_hospital() {
        let c = expand(r#"{"n_doctors": 6, "capacity": [1, 5], "k": 2}"#).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].capacity, Capacity::PerHospital(vec![1, 5]));
        assert_eq!(c[0].n_hospitals, 2);
    }

    #[test]
    fn nested_capacity_array_is_a_dimension() {
        let c = expand(r#"{"n_doctors": 100, "capacity": [1, [5, 5, 5]], "n_hospitals": 3, "k": 2}"#).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].capacity, Capacity::Uniform(1));
        assert_eq!(c[1].capacity, Capacity::PerHospital(vec![5, 5, 5]));
        let bad = expand(r#"{"n_doctors": 100, "capacity": [[1], [5]], "n_hospitals": 3, "k": 2}"#);
        assert!(matches!(bad, Err(CliError::Config(ConfigError::CapacityLength { .. }))));
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(matches!(expand(r#"{"n_doctors": 10, "capacity": 1, "k": 2, "bogus": 1}"#), Err(CliError::Config(_))));
    }
}
