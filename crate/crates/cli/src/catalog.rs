//! Task catalog with parameter schemas.

use serde::Serialize;
use serde_json::{json, Value};

#[derive(Clone, Debug, Serialize)]
pub struct Param {
    pub name: &'static str,
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub required: bool,
    pub default: Value,
    pub description: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct Task {
    pub name: &'static str,
    pub description: &'static str,
    pub params: Vec<Param>,
}

fn p(name: &'static str, kind: &'static str, default: Value, description: &'static str) -> Param {
    Param { name, kind, required: false, default, description }
}

pub fn tasks() -> Vec<Task> {
    vec![
        Task {
            name: "stationary",
            description: "Stationary measures, partition functions and well masses along the ladder",
            params: vec![
                p("well_radius", "integer", Value::Null, "well radius override (default floor(N^(1/(2(kappa-1)))))"),
                p("write_measures", "boolean", json!(true), "write the full stationary measure for each N"),
            ],
        },
        Task {
            name: "reduced-chain",
            description: "Limiting chain on sites: rates R(x, y), Gamma(alpha) and I_alpha",
            params: vec![p("convention", "string", json!("series"), "series (1 + zeta(alpha)) or shifted (1 + zeta(alpha + 1))")],
        },
        Task {
            name: "jump-rates",
            description: "Mean jump rates between wells with their accelerated values",
            params: vec![p("well_radius", "integer", Value::Null, "well radius override")],
        },
        Task {
            name: "resolvent",
            description: "Accelerated resolvent equation on wells against the reduced chain",
            params: vec![
                p("lambda", "number", json!(1.0), "resolvent parameter"),
                p("g", "array", Value::Null, "right-hand side on sites (default indicator of site 0)"),
                p("max_deviation", "number", Value::Null, "fail when the deviation at the top of the ladder exceeds this"),
            ],
        },
        Task {
            name: "gamma-expansion",
            description: "Rate functions of recovery sequences on all five time scales",
            params: vec![
                p("targets", "array", Value::Null, "target measures: uniform_vertices, vertex, vertex_mix, face, point"),
                p("lambda", "number", json!(10.0), "resolvent parameter of the tilted construction"),
                p("bump_exponent", "number", json!(0.75), "bump radius exponent for interior points"),
                p("grid_divisions", "integer", json!(400), "quadrature divisions for face energies"),
                p("tolerance", "number", json!(0.1), "relative tolerance for finite targets"),
            ],
        },
        Task {
            name: "condensation-time",
            description: "Monte Carlo condensation times from the most balanced configuration",
            params: vec![
                p("trials", "integer", json!(400), "trajectories per ladder point"),
                p("expected", "array", Value::Null, "accepted exponent interval [lo, hi]"),
            ],
        },
        Task {
            name: "transition-time",
            description: "Monte Carlo transition times between wells",
            params: vec![
                p("trials", "integer", json!(400), "trajectories per ladder point"),
                p("from", "integer", json!(0), "site of the initial condensate"),
                p("expected", "array", Value::Null, "accepted exponent interval [lo, hi]"),
                p("rate_tolerance", "number", Value::Null, "accepted relative gap of the rescaled rate at the ladder top"),
            ],
        },
        Task {
            name: "zrp-trajectory",
            description: "One trajectory of the particle system at the top of the ladder",
            params: vec![
                p("start", "array", Value::Null, "initial configuration (default most balanced)"),
                p("horizon", "number", json!(1000.0), "time horizon in process units"),
                p("event_cap", "integer", json!(10_000_000), "maximal number of jumps"),
                p("thin", "integer", json!(1), "keep every thin-th state"),
            ],
        },
        Task {
            name: "diffusion",
            description: "One Euler-Maruyama path of the limiting diffusion",
            params: vec![
                p("start", "array", Value::Null, "initial point on the simplex (default barycentre)"),
                p("horizon", "number", json!(0.1), "time horizon"),
                p("dt", "number", json!(1e-5), "time step, at most 1e-4 times the horizon"),
                p("thin", "integer", json!(100), "keep every thin-th state"),
            ],
        },
        Task {
            name: "d0",
            description: "Marginals of the rescaled particle system against the limiting diffusion",
            params: vec![
                p("start", "array", Value::Null, "initial point on the simplex (default barycentre)"),
                p("horizon", "number", json!(0.05), "comparison time"),
                p("paths", "integer", json!(20000), "paths per engine"),
                p("dt", "number", json!(5e-6), "diffusion time step"),
                p("max_discrepancy", "number", Value::Null, "fail when the mean discrepancy at the top of the ladder exceeds this"),
            ],
        },
        Task { name: "selftest", description: "Quick invariant suite", params: vec![] },
    ]
}

pub fn find(name: &str) -> Option<Task> {
    tasks().into_iter().find(|t| t.name == name)
}

pub fn catalog_json() -> Value {
    json!({ "schema_version": crate::scenario::SCHEMA_VERSION, "tasks": tasks() })
}

fn type_matches(kind: &str, v: &Value) -> bool {
    match kind {
        "number" => v.is_number(),
        "integer" => v.is_u64(),
        "boolean" => v.is_boolean(),
        "string" => v.is_string(),
        "array" => v.is_array(),
        "object" => v.is_object(),
        _ => false,
    }
}

/// Checks `params` against a task schema: known keys, required keys present,
/// JSON types as declared. `null` counts as absent.
pub fn validate_params(task: Task, params: &Value) -> Result<(), String> {
    let obj = params.as_object().ok_or("params must be an object")?;
    for (k, v) in obj {
        let Some(spec) = task.params.iter().find(|p| p.name == k) else {
            return Err(format!("task {} has no parameter {k}", task.name));
        };
        if !v.is_null() && !type_matches(spec.kind, v) {
            return Err(format!("parameter {k} of task {} must be of type {}", task.name, spec.kind));
        }
    }
    for spec in task.params.iter().filter(|p| p.required) {
        if obj.get(spec.name).is_none_or(Value::is_null) {
            return Err(format!("task {} requires parameter {}", task.name, spec.name));
        }
    }
    Ok(())
}

/// Validates against the emitted catalog JSON rather than the in-memory one.
pub fn validate_against_catalog(catalog: &Value, task: &str, params: &Value) -> Result<(), String> {
    let tasks = catalog["tasks"].as_array().ok_or("catalog without tasks")?;
    let t = tasks.iter().find(|t| t["name"] == task).ok_or_else(|| format!("unknown task {task}"))?;
    let obj = params.as_object().ok_or("params must be an object")?;
    let specs = t["params"].as_array().ok_or("task without params")?;
    for (k, v) in obj {
        let spec = specs.iter().find(|s| s["name"] == k.as_str()).ok_or_else(|| format!("unknown parameter {k}"))?;
        if !v.is_null() && !type_matches(spec["type"].as_str().unwrap_or(""), v) {
            return Err(format!("parameter {k} has the wrong type"));
        }
    }
    for s in specs.iter().filter(|s| s["required"] == true) {
        if obj.get(s["name"].as_str().unwrap_or("")).is_none_or(Value::is_null) {
            return Err(format!("missing parameter {}", s["name"]));
        }
    }
    Ok(())
}
