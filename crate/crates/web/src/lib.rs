//! Browser bindings. Every export returns a JSON string; the plain
//! functions behind them are ordinary Rust and are tested on the host.

use std::collections::BTreeMap;

use serde_json::{json, Value};
use stiffkit::analysis::{analyze, check_discrete, AnalysisOptions};
use stiffkit::conditioning::ConditioningReport;
use stiffkit::integrate::{Mesh, Method};
use stiffkit::suite::{builtin, load_case, CASES};
use wasm_bindgen::prelude::*;

fn report_json(r: &ConditioningReport) -> Value {
    json!({
        "kappa": r.kappa,
        "gamma": r.gamma,
        "sigma": r.sigma,
        "eta_star": r.eta_star,
        "transient_time": r.transient_time,
        "stiff": r.flags.stiff,
        "ill_conditioned": r.flags.ill_conditioned,
    })
}

fn parse_method(name: &str) -> stiffkit::Result<Method> {
    match name {
        "explicit-euler" => Ok(Method::ExplicitEuler),
        "implicit-euler" => Ok(Method::ImplicitEuler),
        "trapezoidal" => Ok(Method::Trapezoidal),
        _ => Err(stiffkit::Error::domain(format!("unknown method '{name}'"))),
    }
}

/// `y' = lambda y` on `[0, T]`.
pub fn scalar(re: f64, im: f64, t_end: f64) -> stiffkit::Result<Value> {
    let params: BTreeMap<String, f64> = [("lambda".into(), re), ("lambda_im".into(), im), ("T".into(), t_end)].into();
    let a = analyze(&builtin("scalar", &params)?, &AnalysisOptions::default())?;
    Ok(report_json(&a.report))
}

/// A benchmark case at one value of its sweep parameter.
pub fn case(name: &str, value: f64) -> stiffkit::Result<Value> {
    let c = load_case(name)?;
    let p = if c.sweep_param.is_empty() { c.problem.clone() } else { c.at(value)? };
    let a = analyze(&p, &AnalysisOptions::default())?;
    let mut out = report_json(&a.report);
    out["param"] = json!(c.sweep_param);
    out["description"] = json!(c.description);
    Ok(out)
}

/// Discrete against continuous parameters of a fixed-step method on a
/// uniform mesh for `y' = lambda y`.
pub fn discrete(lambda: f64, t_end: f64, method: &str, n: usize) -> stiffkit::Result<Value> {
    let params: BTreeMap<String, f64> = [("lambda".into(), lambda), ("T".into(), t_end)].into();
    let p = builtin("scalar", &params)?;
    let c = check_discrete(&p, parse_method(method)?, &Mesh::uniform(t_end, n)?, 2.0, &AnalysisOptions::default())?;
    Ok(json!({
        "continuous": report_json(&c.continuous),
        "kappa_d": c.discrete.kappa,
        "gamma_d": c.discrete.gamma,
        "sigma_d": c.discrete.sigma,
        "wr1": c.verdict.wr1,
        "wr2": c.verdict.wr2,
        "pass": c.verdict.pass(),
    }))
}

fn export(v: stiffkit::Result<Value>) -> Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = analyzeScalar)]
pub fn analyze_scalar(re: f64, im: f64, t_end: f64) -> Result<String, JsError> {
    export(scalar(re, im, t_end))
}

#[wasm_bindgen(js_name = analyzeCase)]
pub fn analyze_case(name: &str, value: f64) -> Result<String, JsError> {
    export(case(name, value))
}

#[wasm_bindgen(js_name = checkDiscrete)]
pub fn check_discrete_scalar(lambda: f64, t_end: f64, method: &str, n: usize) -> Result<String, JsError> {
    export(discrete(lambda, t_end, method, n))
}

/// Cases cheap enough to analyze on the page, with their default grids.
#[wasm_bindgen(js_name = listCases)]
pub fn list_cases() -> String {
    let cases: Vec<Value> = CASES
        .iter()
        .filter_map(|n| load_case(n).ok())
        .filter(|c| !c.sweep_param.is_empty())
        .map(|c| json!({ "name": c.name, "param": c.sweep_param, "grid": c.grid, "description": c.description }))
        .collect();
    Value::from(cases).to_string()
}
