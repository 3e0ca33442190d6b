use serde::{Deserialize, Serialize};

use crate::builtin::{parse_builtin, Builtin};
use crate::error::{Error, Result};
use crate::exact::{self, parse_rational, Rational};
use crate::functional::WienerFunctional;
use crate::kernel::PathPrefix;
use crate::oracle::{McConfig, NormalStream};

pub const DEFAULT_PATH_STEPS: usize = 16;
pub const DEFAULT_DYSON_ORDER: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Bte,
    Dyson,
    Mc,
    MomentOracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bte => "bte",
            Method::Dyson => "dyson",
            Method::Mc => "mc",
            Method::MomentOracle => "moment-oracle",
        }
    }
}

/// A built-in name such as `"monomial(3)"`, or a functional in its JSON text form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FunctionalSpec {
    Builtin(String),
    Dsl(Box<WienerFunctional>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PathSpec {
    Zero {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        steps: Option<usize>,
    },
    /// `W(u) = slope·u`, or the line through `(t, end)` when `end` is given.
    Linear {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slope: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        end: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        steps: Option<usize>,
    },
    SeededRandom {
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        steps: Option<usize>,
    },
    /// Explicit grid; times are rational strings starting at 0 and ending at `t`.
    Inline { times: Vec<String>, values: Vec<f64> },
}

impl Default for PathSpec {
    fn default() -> Self {
        PathSpec::Zero { steps: None }
    }
}

impl PathSpec {
    /// Parses the compact CLI form: `zero`, `linear`, `linear:<end>`,
    /// `seeded-random:<seed>` or `inline:<time>=<value>,...`.
    pub fn parse_flag(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::config("path", msg);
        let (kind, arg) = match text.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (text.trim(), None),
        };
        match (kind, arg) {
            ("zero", None) => Ok(PathSpec::Zero { steps: None }),
            ("linear", None) => Ok(PathSpec::Linear {
                slope: None,
                end: None,
                steps: None,
            }),
            ("linear", Some(a)) => Ok(PathSpec::Linear {
                slope: None,
                end: Some(a.parse().map_err(|_| bad(format!("bad end value `{a}`")))?),
                steps: None,
            }),
            ("seeded-random", Some(a)) => Ok(PathSpec::SeededRandom {
                seed: a.parse().map_err(|_| bad(format!("bad seed `{a}`")))?,
                steps: None,
            }),
            ("inline", Some(a)) => {
                let mut times = vec!["0".to_string()];
                let mut values = vec![0.0];
                for pair in a.split(',').filter(|p| !p.trim().is_empty()) {
                    let (u, w) = pair
                        .split_once('=')
                        .ok_or_else(|| bad(format!("expected <time>=<value>, got `{pair}`")))?;
                    times.push(u.trim().to_string());
                    values.push(w.trim().parse().map_err(|_| bad(format!("bad value `{w}`")))?);
                }
                Ok(PathSpec::Inline { times, values })
            }
            _ => Err(bad(format!(
                "`{text}` is not one of zero, linear[:end], seeded-random:<seed>, inline:<t>=<w>,..."
            ))),
        }
    }

    pub fn build(&self, t: &Rational, horizon: &Rational) -> Result<PathPrefix> {
        let wrap = |e: Error| Error::config("path", e.to_string());
        let tf = exact::to_f64(t);
        match self {
            PathSpec::Zero { steps } => {
                PathPrefix::sampled(t, steps.unwrap_or(DEFAULT_PATH_STEPS), horizon.clone(), |_| 0.0).map_err(wrap)
            }
            PathSpec::Linear { slope, end, steps } => {
                let slope = match (slope, end) {
                    (Some(_), Some(_)) => return Err(Error::config("path", "give either slope or end, not both")),
                    (Some(s), None) => *s,
                    (None, Some(w)) if tf > 0.0 => w / tf,
                    (None, Some(w)) if *w != 0.0 => return Err(Error::config("path", "a path at t = 0 must end at 0")),
                    _ => 1.0,
                };
                PathPrefix::sampled(t, steps.unwrap_or(DEFAULT_PATH_STEPS), horizon.clone(), |u| slope * u)
                    .map_err(wrap)
            }
            PathSpec::SeededRandom { seed, steps } => {
                let steps = steps.unwrap_or(DEFAULT_PATH_STEPS);
                if num_traits::Zero::is_zero(t) {
                    return Ok(PathPrefix::origin(horizon.clone()));
                }
                let stream = NormalStream::new(*seed);
                let dt = (tf / steps as f64).sqrt();
                let increments: Vec<f64> = (0..steps as u64).map(|k| dt * stream.normal(0, k)).collect();
                let times = (0..=steps).map(|k| t * exact::rat(k as i64, steps as i64)).collect();
                PathPrefix::from_increments(times, &increments, horizon.clone()).map_err(wrap)
            }
            PathSpec::Inline { times, values } => {
                let times = times
                    .iter()
                    .map(|s| parse_rational(s))
                    .collect::<Result<Vec<_>>>()
                    .map_err(wrap)?;
                if times.last() != Some(t) {
                    return Err(Error::config("path", format!("inline path must end at t = {t}")));
                }
                PathPrefix::new(times, values.clone(), horizon.clone()).map_err(wrap)
            }
        }
    }
}

/// Monte Carlo parameters as they appear in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_grid_steps")]
    pub grid_steps: usize,
    #[serde(default)]
    pub antithetic: bool,
}

fn default_grid_steps() -> usize {
    16
}

impl From<&McSpec> for McConfig {
    fn from(s: &McSpec) -> Self {
        McConfig {
            samples: s.n,
            seed: s.seed,
            grid_steps: s.grid_steps,
            antithetic: s.antithetic,
        }
    }
}

/// One experiment. All times and the BTE step are exact rational strings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<FunctionalSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<String>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathSpec>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<String>,
    /// Chosen backward-path increments for `bte`; frozen when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub increments: Option<Vec<f64>>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub dyson_order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

/// A config after validation, with every parameter resolved.
#[derive(Clone, Debug)]
pub struct ResolvedExperiment {
    pub method: Method,
    pub functional: WienerFunctional,
    pub builtin: Option<Builtin>,
    pub t: Rational,
    pub horizon: Rational,
    pub tau: Option<Rational>,
    pub path: PathPrefix,
    pub method_params: MethodParams,
}

#[derive(Clone, Debug)]
pub enum MethodParams {
    Bte {
        order: usize,
        steps: usize,
        delta: Rational,
        increments: Option<Vec<f64>>,
    },
    Dyson {
        order: usize,
        tol: Option<f64>,
    },
    Mc(McConfig),
    MomentOracle,
}

fn rational_field(field: &str, value: &Option<String>) -> Result<Option<Rational>> {
    value
        .as_deref()
        .map(|s| parse_rational(s).map_err(|e| Error::config(field, e.to_string())))
        .transpose()
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        let method = self
            .method
            .ok_or_else(|| Error::config("method", "missing (bte | dyson | mc | moment-oracle)"))?;
        let horizon = rational_field("T", &self.horizon)?.unwrap_or_else(|| exact::int(1));
        if horizon <= exact::int(0) {
            return Err(Error::config("T", "horizon must be positive"));
        }
        let t = rational_field("t", &self.t)?.unwrap_or_else(|| exact::int(0));
        if t < exact::int(0) || t > horizon {
            return Err(Error::config("t", format!("{t} lies outside [0, {horizon}]")));
        }
        let tau = rational_field("tau", &self.tau)?;

        let (functional, builtin) = match &self.functional {
            None => return Err(Error::config("functional", "missing")),
            Some(FunctionalSpec::Builtin(name)) => {
                let b = parse_builtin(name)?;
                if b != Builtin::Example1 && tau.is_some() {
                    return Err(Error::config("tau", format!("not used by {}", b.name())));
                }
                let f = b.build(&horizon, tau.as_ref()).map_err(|e| match e {
                    Error::Config { .. } => e,
                    other => Error::config("tau", other.to_string()),
                })?;
                (f, Some(b))
            }
            Some(FunctionalSpec::Dsl(f)) => {
                if f.horizon() != &horizon {
                    return Err(Error::config(
                        "functional",
                        format!("functional horizon {} differs from T = {horizon}", f.horizon()),
                    ));
                }
                if !f.is_scalar() {
                    return Err(Error::config("functional", "functional has free time variables"));
                }
                ((**f).clone(), None)
            }
        };

        let path = self.path.clone().unwrap_or_default().build(&t, &horizon)?;

        let unused = |field: &str, present: bool| -> Result<()> {
            if present {
                Err(Error::config(field, format!("not used by method {}", method.name())))
            } else {
                Ok(())
            }
        };
        let bte_fields = [
            ("L", self.order.is_some()),
            ("M", self.steps.is_some()),
            ("delta", self.delta.is_some()),
            ("increments", self.increments.is_some()),
        ];
        let dyson_fields = [("K", self.dyson_order.is_some()), ("tol", self.tol.is_some())];
        let mc_fields = [("mc", self.mc.is_some())];
        let check_unused = |groups: &[&[(&str, bool)]]| -> Result<()> {
            for group in groups {
                for (field, present) in group.iter() {
                    unused(field, *present)?;
                }
            }
            Ok(())
        };

        let method_params = match method {
            Method::Bte => {
                check_unused(&[&dyson_fields, &mc_fields])?;
                let order = self
                    .order
                    .ok_or_else(|| Error::config("L", "bte needs a truncation order"))?;
                let steps = self.steps.ok_or_else(|| Error::config("M", "bte needs a step count"))?;
                if steps == 0 {
                    return Err(Error::config("M", "need at least one step"));
                }
                let span = &horizon - &t;
                let delta = match rational_field("delta", &self.delta)? {
                    Some(d) => d,
                    None => &span / exact::int(steps as i64),
                };
                if exact::int(steps as i64) * &delta != span {
                    return Err(Error::config(
                        "delta",
                        format!("M·delta = {steps}·{delta} must equal T - t = {span}"),
                    ));
                }
                if let Some(inc) = &self.increments {
                    if inc.len() != steps {
                        return Err(Error::config(
                            "increments",
                            format!("{} increments for {steps} steps", inc.len()),
                        ));
                    }
                }
                MethodParams::Bte {
                    order,
                    steps,
                    delta,
                    increments: self.increments.clone(),
                }
            }
            Method::Dyson => {
                check_unused(&[&bte_fields, &mc_fields])?;
                if let Some(tol) = self.tol {
                    if !(tol >= 0.0) {
                        return Err(Error::config("tol", "must be non-negative"));
                    }
                }
                MethodParams::Dyson {
                    order: self.dyson_order.unwrap_or(DEFAULT_DYSON_ORDER),
                    tol: self.tol,
                }
            }
            Method::Mc => {
                check_unused(&[&bte_fields, &dyson_fields])?;
                let spec = self
                    .mc
                    .as_ref()
                    .ok_or_else(|| Error::config("mc", "mc needs {n, seed}"))?;
                let cfg = McConfig::from(spec);
                cfg.validate().map_err(|e| match e {
                    Error::Config { field, message } => Error::config(format!("mc.{field}"), message),
                    other => other,
                })?;
                MethodParams::Mc(cfg)
            }
            Method::MomentOracle => {
                check_unused(&[&bte_fields, &dyson_fields, &mc_fields])?;
                MethodParams::MomentOracle
            }
        };

        Ok(ResolvedExperiment {
            method,
            functional,
            builtin,
            t,
            horizon,
            tau,
            path,
            method_params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(method: Method) -> ExperimentConfig {
        ExperimentConfig {
            functional: Some(FunctionalSpec::Builtin("monomial(2)".into())),
            method: Some(method),
            t: Some("1/4".into()),
            horizon: Some("1".into()),
            ..Default::default()
        }
    }

    #[test]
    fn parses_json_document() {
        let cfg = ExperimentConfig::from_json(
            r#"{"functional": "example1", "method": "dyson", "t": "1/2", "T": "1", "tau": "2",
                "path": {"kind": "linear", "end": 0.3}, "K": 12}"#,
        )
        .unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.t, exact::rat(1, 2));
        assert!((r.path.end_value() - 0.3).abs() < 1e-15);
        assert!(matches!(r.method_params, MethodParams::Dyson { order: 12, tol: None }));
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn field_level_errors() {
        let field_of = |cfg: &ExperimentConfig| match cfg.resolve() {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        };
        let mut cfg = base(Method::Bte);
        assert_eq!(field_of(&cfg), "L");
        cfg.order = Some(2);
        assert_eq!(field_of(&cfg), "M");
        cfg.steps = Some(3);
        cfg.delta = Some("1/3".into());
        assert_eq!(field_of(&cfg), "delta");
        cfg.delta = None;
        cfg.dyson_order = Some(4);
        assert_eq!(field_of(&cfg), "K");

        let mut cfg = base(Method::Dyson);
        cfg.t = Some("3/2".into());
        assert_eq!(field_of(&cfg), "t");
        cfg.t = Some("x".into());
        assert_eq!(field_of(&cfg), "t");

        let cfg = base(Method::Mc);
        assert_eq!(field_of(&cfg), "mc");

        let mut cfg = base(Method::Dyson);
        cfg.functional = Some(FunctionalSpec::Builtin("example1".into()));
        assert_eq!(field_of(&cfg), "tau");
        cfg.tau = Some("1".into());
        assert_eq!(field_of(&cfg), "tau");

        let mut cfg = base(Method::Dyson);
        cfg.tau = Some("2".into());
        assert_eq!(field_of(&cfg), "tau");

        assert!(ExperimentConfig::from_json(r#"{"method": "dyson", "bogus": 1}"#).is_err());
    }

    #[test]
    fn path_flags() {
        assert_eq!(PathSpec::parse_flag("zero").unwrap(), PathSpec::Zero { steps: None });
        let p = PathSpec::parse_flag("inline:1/4=0.1,1/2=-0.2").unwrap();
        let built = p.build(&exact::rat(1, 2), &exact::int(1)).unwrap();
        assert_eq!(built.values(), &[0.0, 0.1, -0.2]);
        assert!(PathSpec::parse_flag("wiggly").is_err());
        let r = PathSpec::parse_flag("seeded-random:9").unwrap();
        let a = r.build(&exact::rat(1, 2), &exact::int(1)).unwrap();
        let b = r.build(&exact::rat(1, 2), &exact::int(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inline_path_must_end_at_t() {
        let p = PathSpec::parse_flag("inline:1/4=0.1").unwrap();
        assert!(matches!(
            p.build(&exact::rat(1, 2), &exact::int(1)),
            Err(Error::Config { .. })
        ));
    }
}
