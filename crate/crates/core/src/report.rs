//! The record every construction driver emits.

use serde::{Deserialize, Serialize};

use crate::approx::Diagnostics;
use crate::check::{all_pass, Check};
use crate::trigpoly::TrigPoly;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapClass {
    One,
    A,
    Other,
}

/// One emitted frequency with its certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub n: usize,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<i64>,
    /// `λ_n / λ_{n-1}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    /// `1 + ε_{n-1}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_class: Option<GapClass>,
    /// Which step or block produced the frequency.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub name: String,
    pub step: usize,
    #[serde(with = "float")]
    pub p: f64,
    #[serde(with = "float")]
    pub value: f64,
    #[serde(with = "float")]
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub poly: String,
    pub freq: f64,
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedDiagnostics {
    pub name: String,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstructionReport {
    pub kind: String,
    pub lambdas: Vec<LambdaRow>,
    pub residuals: Vec<ResidualRow>,
    pub coefficients: Vec<CoefficientRow>,
    pub checks: Vec<Check>,
    pub diagnostics: Vec<NamedDiagnostics>,
    pub notes: Vec<String>,
}

impl ConstructionReport {
    pub fn new(kind: impl Into<String>) -> Self {
        ConstructionReport { kind: kind.into(), ..Default::default() }
    }

    pub fn pass(&self) -> bool {
        all_pass(&self.checks)
    }

    pub fn push_poly(&mut self, name: &str, poly: &TrigPoly) {
        self.coefficients.extend(poly.terms().iter().map(|(f, c)| CoefficientRow {
            poly: name.to_string(),
            freq: f.value(),
            re: c.re,
            im: c.im,
        }));
    }

    pub fn push_diagnostics(&mut self, name: impl Into<String>, d: &Diagnostics) {
        self.diagnostics.push(NamedDiagnostics { name: name.into(), diagnostics: d.clone() });
    }

    pub fn failing(&self) -> impl Iterator<Item = &Check> + '_ {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Serde for `f64` values that may be infinite: finite values stay numbers,
/// the others become the strings `"inf"`, `"-inf"` and `"nan"`.
pub mod float {
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn to_repr(x: f64) -> Repr {
        if x.is_finite() {
            Repr::Num(x)
        } else if x.is_nan() {
            Repr::Text("nan".into())
        } else if x > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    fn from_repr<E: de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(E::custom(format!("expected a number, inf, -inf or nan, found {t:?}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*x).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(xs.iter().map(|x| to_repr(*x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
        }
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            x.map(to_repr).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<Repr>::deserialize(d)?.map(from_repr).transpose()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_values_round_trip() {
        let mut r = ConstructionReport::new("demo");
        r.residuals.push(ResidualRow { name: "sup".into(), step: 1, p: f64::INFINITY, value: 0.1 + 0.2, bound: 1.0 / 3.0 });
        r.diagnostics.push(NamedDiagnostics {
            name: "fit".into(),
            diagnostics: Diagnostics {
                n_final: 3,
                iterations: 9,
                objective_trace: vec![f64::INFINITY, 1e-300, -0.0],
                condition_estimate: Some(f64::NEG_INFINITY),
            },
        });
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"inf\"") && text.contains("\"-inf\""));
        let back: ConstructionReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        assert!(serde_json::from_str::<ResidualRow>(r#"{"name":"x","step":0,"p":"big","value":0,"bound":0}"#).is_err());
    }

    #[test]
    fn empty_report_serializes_with_empty_arrays() {
        let v = serde_json::to_value(ConstructionReport::new("empty")).unwrap();
        for key in ["lambdas", "residuals", "coefficients", "checks", "diagnostics", "notes"] {
            assert_eq!(v[key], serde_json::json!([]), "{key}");
        }
    }
}
