//! Experiment configuration: a TOML file with a schema version, patched by
//! `--set key=value` overrides before it is parsed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nlskam::kam::ScheduleParams;
use nlskam::lattice::{Lattice, LatticeConfig, Site};
use nlskam::nls::Perturbation;
use nlskam::nonresonance::{ParameterPoint, SamplingBox};
use nlskam::pipeline::{ModelSpec, NfSettings};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Relative paths are taken from the directory of the config file. Not
    /// part of the config hash.
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    /// Draws of `w` from the sampling box, one per seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub lattice: LatticeSection,
    pub model: ModelSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub normal_form: NormalFormSection,
    #[serde(default)]
    pub stability: StabilitySection,
    #[serde(default)]
    pub measure: MeasureSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub d: usize,
    pub tangential: Vec<Site>,
    pub cutoff: i32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Taylor coefficients of `F`.
    pub f_taylor: Vec<f64>,
    pub eps: f64,
    pub q: Vec<f64>,
    #[serde(default = "default_degree")]
    pub degree_cutoff: u32,
    pub v_hat: VHat,
}

fn default_degree() -> u32 {
    5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteValue {
    pub site: Site,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VHat {
    Sample {
        #[serde(default)]
        lo: f64,
        #[serde(default = "one")]
        hi: f64,
    },
    Explicit {
        /// Value on every site not listed.
        default: Option<f64>,
        #[serde(default)]
        values: Vec<SiteValue>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub rho: Option<f64>,
    pub sigma: Option<f64>,
    pub gamma: Option<f64>,
    pub p: Option<f64>,
    pub delta: Option<f64>,
    pub lambda: Option<f64>,
    pub kappa: Option<f64>,
    pub delta_cap: Option<f64>,
    pub n_inner: Option<usize>,
    pub m_max: Option<usize>,
    pub cte: Option<f64>,
    pub lie_order: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalFormSection {
    pub delta: f64,
    pub m: u32,
    pub c0: f64,
    pub n: Option<f64>,
    pub delta_t: Option<f64>,
    pub kappa_t: Option<f64>,
}

impl Default for NormalFormSection {
    fn default() -> Self {
        let s = NfSettings::new(0.05, 2);
        NormalFormSection { delta: s.delta, m: s.m, c0: s.c0, n: None, delta_t: None, kappa_t: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityMode {
    /// Start from the exact torus of the model.
    Direct,
    /// Use `w` of the `kam` artifact; requires `kam` and `nf` outputs.
    Pipeline,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilitySection {
    pub mode: StabilityMode,
    pub deltas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub m: u32,
    pub p: f64,
    pub dt: f64,
    pub degree_cutoff: u32,
    pub perturbation: Perturbation,
    pub pure_site: Option<Site>,
    pub n_samples: usize,
}

impl Default for StabilitySection {
    fn default() -> Self {
        StabilitySection {
            mode: StabilityMode::Direct,
            deltas: vec![0.05, 0.02],
            seeds: (0..5).collect(),
            m: 2,
            p: 4.0,
            dt: 0.01,
            degree_cutoff: 4,
            perturbation: Perturbation::Sphere,
            pure_site: None,
            n_samples: 200,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureSection {
    pub kappas: Vec<f64>,
    pub delta_prime: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for MeasureSection {
    fn default() -> Self {
        MeasureSection { kappas: vec![0.02, 0.05, 0.1, 0.2], delta_prime: 10.0, n_samples: 500, seed: 77 }
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::usage(msg.into())
}

/// Writes `value` at the dotted `key` of `table`, creating tables on the way.
fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<(), CliError> {
    let parsed = match format!("v = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(value.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_error(format!("override key `{key}` is malformed")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| config_error(format!("override `{key}`: `{part}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        let parse_error = |e: toml::de::Error| config_error(format!("{}: {}", path.display(), e.to_string().trim_end()));
        // parsing the text directly keeps line numbers in the diagnostics
        let mut cfg: ExperimentConfig = if overrides.is_empty() {
            toml::from_str(&text).map_err(parse_error)?
        } else {
            let mut table: toml::Table = text.parse().map_err(parse_error)?;
            for o in overrides {
                let (k, v) = o.split_once('=').ok_or_else(|| config_error(format!("override `{o}` is not key=value")))?;
                apply_override(&mut table, k.trim(), v.trim())?;
            }
            toml::Value::Table(table).try_into().map_err(parse_error)?
        };
        if cfg.output_dir.is_relative() {
            cfg.output_dir = path.parent().unwrap_or(Path::new(".")).join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_error(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        let lat = self.lattice()?;
        let m = &self.model;
        if m.q.len() != lat.n_tangential() || m.q.iter().any(|&q| !(q > 0.0)) {
            return Err(config_error(format!("model.q needs {} positive entries, one per tangential site", lat.n_tangential())));
        }
        if !(m.eps >= 0.0) || m.f_taylor.iter().any(|c| !c.is_finite()) {
            return Err(config_error("model.eps must be >= 0 and model.f_taylor finite"));
        }
        match &m.v_hat {
            VHat::Sample { lo, hi } => {
                if !(lo < hi) {
                    return Err(config_error("model.v_hat: need lo < hi"));
                }
            }
            VHat::Explicit { default, values } => {
                for v in values {
                    if !lat.all_sites().contains(&v.site) {
                        return Err(config_error(format!("model.v_hat: site {:?} is outside the lattice", v.site)));
                    }
                }
                if default.is_none() {
                    let listed: Vec<&Site> = values.iter().map(|v| &v.site).collect();
                    if let Some(a) = lat.all_sites().iter().find(|a| !listed.contains(a)) {
                        return Err(config_error(format!("model.v_hat: no value for site {a:?} and no default")));
                    }
                }
            }
        }
        self.schedule_params().validate().map_err(|e| config_error(format!("schedule: {e}")))?;
        let nf = &self.normal_form;
        if !(nf.delta > 0.0 && nf.delta < 1.0) || nf.m == 0 || !(nf.c0 > 0.0) {
            return Err(config_error("normal_form: need 0 < delta < 1, m >= 1, c0 > 0"));
        }
        let st = &self.stability;
        if st.deltas.iter().any(|&d| !(d > 0.0 && d < 1.0)) || !(st.dt > 0.0) || st.m == 0 || st.n_samples == 0 {
            return Err(config_error("stability: need deltas in (0,1), dt > 0, m >= 1, n_samples >= 1"));
        }
        let ms = &self.measure;
        if ms.kappas.iter().any(|&k| !(k > 0.0)) || ms.n_samples < 100 || !(ms.delta_prime >= 0.0) {
            return Err(config_error("measure: need kappas > 0, n_samples >= 100, delta_prime >= 0"));
        }
        Ok(())
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            d: self.lattice.d,
            tangential: self.lattice.tangential.clone(),
            cutoff: self.lattice.cutoff,
            f_taylor: self.model.f_taylor.clone(),
            eps: self.model.eps,
            q: self.model.q.clone(),
            degree_cutoff: self.model.degree_cutoff,
        }
    }

    pub fn lattice(&self) -> Result<Lattice, CliError> {
        let l = &self.lattice;
        Lattice::new(LatticeConfig { d: l.d, tangential: l.tangential.clone(), cutoff: l.cutoff }).map_err(|e| config_error(format!("lattice: {e}")))
    }

    pub fn sampling_box(&self) -> Option<SamplingBox> {
        match self.model.v_hat {
            VHat::Sample { lo, hi } => Some(SamplingBox { lo, hi }),
            VHat::Explicit { .. } => None,
        }
    }

    /// The explicit `w`, if the config gives one.
    pub fn explicit_parameter(&self, lat: &Lattice) -> Option<ParameterPoint> {
        match &self.model.v_hat {
            VHat::Sample { .. } => None,
            VHat::Explicit { default, values } => {
                let mut w = ParameterPoint::constant(lat, default.unwrap_or(0.0));
                for v in values {
                    w.set(&v.site, v.value);
                }
                Some(w)
            }
        }
    }

    pub fn schedule_params(&self) -> ScheduleParams {
        let s = &self.schedule;
        let mut p = ScheduleParams::new(self.model.eps);
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = s.$f { p.$f = v; } )* };
        }
        set!(rho, sigma, gamma, p, delta, lambda, m_max, cte, lie_order);
        if s.kappa.is_some() {
            p.kappa = s.kappa;
        }
        if s.delta_cap.is_some() {
            p.delta_cap = s.delta_cap;
        }
        if s.n_inner.is_some() {
            p.n_inner = s.n_inner;
        }
        p
    }

    pub fn nf_settings(&self) -> NfSettings {
        let n = &self.normal_form;
        NfSettings { delta: n.delta, m: n.m, c0: n.c0, n: n.n, delta_t: n.delta_t, kappa_t: n.kappa_t }
    }
}
