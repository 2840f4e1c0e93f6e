//! The `key = value` run configuration of `adareg invert`.
//!
//! ```text
//! start = start.grd          # starting model, any kind
//! data = data.fdd
//! geometry = geometry.txt
//! output = out               # directory
//! method = irwri             # irwri | fwi
//! algorithm = nadmm          # nadmm | nista
//! denoiser = tv2d            # identity | l1 | tv2d | nlm | external:<command>
//! lambda = 1e-14
//! batches = 5,7; 10,12.5     # default: every geometry frequency at once
//! ```
//!
//! Relative paths are resolved against the directory of the configuration file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use adareg::denoise::{Denoiser, NlmParams};
use adareg::inversion::{ContinuationPlan, Penalty};
use adareg::model::parse_list;
use adareg::optim::{AdmmInit, CRule, HessianModel, Method, OptConfig, Stopping};
use adareg::wave::WaveOptions;
use anyhow::{Context, Result};

use crate::exit::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Physics {
    Fwi,
    IrWri,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserSpec {
    Builtin(Denoiser),
    /// Command template for [`crate::external::ExternalDenoiser`].
    External(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertConfig {
    pub start: PathBuf,
    pub data: PathBuf,
    pub geometry: PathBuf,
    pub output: PathBuf,
    pub true_model: Option<PathBuf>,
    /// Noise contained in `data`; enables the discrepancy stopping rule.
    pub noise: Option<PathBuf>,
    /// Add noise at this SNR to `data` before inverting (and use it for the stopping rule).
    pub noise_db: Option<f64>,
    pub seed: u64,
    pub physics: Physics,
    pub penalty: Penalty,
    pub algorithm: Method,
    pub denoiser: DenoiserSpec,
    pub opt: OptConfig,
    /// `None`: all geometry frequencies in one batch, one path.
    pub plan: Option<ContinuationPlan>,
    pub wave: WaveOptions,
    /// Every effective setting, defaults included, in key order.
    pub resolved: Vec<(String, String)>,
}

/// Reads keys once each and reports the ones nobody asked for.
struct Entries {
    map: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected 'key = value', got '{line}'", n + 1)))?;
            Self::insert(&mut map, k, v)?;
        }
        Ok(Self {
            map,
            used: BTreeSet::new(),
        })
    }

    fn insert(map: &mut BTreeMap<String, String>, k: &str, v: &str) -> Result<()> {
        let k = k.trim();
        if k.is_empty() {
            return Err(usage("config key is empty"));
        }
        map.insert(k.to_string(), v.trim().to_string());
        Ok(())
    }

    fn get(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.map.get(key).cloned()
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.get(key).ok_or_else(|| usage(format!("config is missing '{key}'")))
    }

    fn parse_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| usage(format!("bad value '{v}' for '{key}'"))),
        }
    }

    fn parse_opt<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| usage(format!("bad value '{v}' for '{key}'"))),
        }
    }

    fn unused(&self) -> Vec<&str> {
        self.map
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect()
    }
}

fn parse_c_rule(s: &str) -> Result<CRule> {
    let (kind, value) = s.split_once(':').unwrap_or((s, ""));
    let num = |v: &str, default: f64| -> Result<f64> {
        if v.is_empty() {
            Ok(default)
        } else {
            v.trim().parse().map_err(|_| usage(format!("bad c-rule value '{v}'")))
        }
    };
    match kind.trim() {
        "auto" => Ok(CRule::AutoSpectral {
            factor: num(value, 0.9)?,
        }),
        "auto2" => Ok(CRule::AutoSpectralSquared {
            factor: num(value, 0.9)?,
        }),
        "fixed" if !value.is_empty() => Ok(CRule::Fixed(num(value, 0.0)?)),
        _ => Err(usage(format!(
            "bad c_rule '{s}' (auto[:factor] | auto2[:factor] | fixed:<c>)"
        ))),
    }
}

fn c_rule_text(c: CRule) -> String {
    match c {
        CRule::AutoSpectral { factor } => format!("auto:{factor}"),
        CRule::AutoSpectralSquared { factor } => format!("auto2:{factor}"),
        CRule::Fixed(c) => format!("fixed:{c}"),
    }
}

pub fn parse_hessian(s: &str) -> Result<HessianModel> {
    match s {
        "exact" => Ok(HessianModel::Exact),
        "lbfgs" => Ok(HessianModel::Lbfgs),
        "identity" => Ok(HessianModel::Identity),
        _ => Err(usage(format!("bad hessian '{s}' (exact | lbfgs | identity)"))),
    }
}

fn hessian_text(h: HessianModel) -> &'static str {
    match h {
        HessianModel::Exact => "exact",
        HessianModel::Lbfgs => "lbfgs",
        HessianModel::Identity => "identity",
    }
}

fn parse_batches(s: &str) -> Result<Vec<Vec<f64>>> {
    s.split(';')
        .map(str::trim)
        .filter(|b| !b.is_empty())
        .map(|b| parse_list(b).map_err(|e| usage(format!("bad batch '{b}': {e}"))))
        .collect()
}

fn list_text(v: &[f64]) -> String {
    v.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(",")
}

impl InvertConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::parse(&text, &base, overrides)
    }

    /// `overrides` are `key=value` strings applied after the file.
    pub fn parse(text: &str, base: &Path, overrides: &[String]) -> Result<Self> {
        let mut e = Entries::parse(text)?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| usage(format!("override '{o}' is not key=value")))?;
            Entries::insert(&mut e.map, k, v)?;
        }
        let path = |p: String| -> PathBuf {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };

        let start = path(e.require("start")?);
        let data = path(e.require("data")?);
        let geometry = path(e.require("geometry")?);
        let output = path(e.require("output")?);
        let true_model = e.get("true_model").map(path);
        let noise = e.get("noise").map(path);
        let noise_db: Option<f64> = e.parse_opt("noise_db")?;
        if noise.is_some() && noise_db.is_some() {
            return Err(usage("set either 'noise' or 'noise_db', not both"));
        }
        let seed = e.parse_or("seed", 0u64)?;

        let physics = match e.get("method").as_deref().unwrap_or("irwri") {
            "fwi" => Physics::Fwi,
            "irwri" | "wri" => Physics::IrWri,
            other => return Err(usage(format!("bad method '{other}' (fwi | irwri)"))),
        };
        let algorithm: Method = e
            .get("algorithm")
            .as_deref()
            .unwrap_or("nadmm")
            .parse()
            .map_err(|err| usage(format!("{err}")))?;
        let penalty = match (e.parse_opt::<f64>("mu")?, e.parse_opt::<f64>("mu_ratio")?) {
            (Some(_), Some(_)) => return Err(usage("set either 'mu' or 'mu_ratio', not both")),
            (Some(mu), None) => Penalty::Absolute(mu),
            (None, ratio) => Penalty::Relative(ratio.unwrap_or(1e-2)),
        };

        let denoiser_kind = e.get("denoiser").unwrap_or_else(|| "identity".into());
        let tv_weight = e.parse_or("tv_weight", 1.0)?;
        let tv_iterations = e.parse_or("tv_iterations", 50usize)?;
        let nlm = NlmParams {
            patch_radius: e.parse_or("nlm_patch", 1usize)?,
            search_radius: e.parse_or("nlm_search", 3usize)?,
            h: e.parse_or("nlm_h", 0.1)?,
            sigma: e.parse_or("nlm_sigma", 0.0)?,
        };
        let denoiser = match denoiser_kind.split_once(':') {
            Some(("external", cmd)) => DenoiserSpec::External(cmd.trim().to_string()),
            _ => DenoiserSpec::Builtin(match denoiser_kind.as_str() {
                "identity" | "none" => Denoiser::Identity,
                "l1" => Denoiser::SoftThreshold,
                "tv2d" | "tv" => Denoiser::Tv2d {
                    weight: tv_weight,
                    iterations: tv_iterations,
                },
                "nlm" => Denoiser::Nlm(nlm),
                other => {
                    return Err(usage(format!(
                        "bad denoiser '{other}' (identity | l1 | tv2d | nlm | external:<command>)"
                    )))
                }
            }),
        };

        let defaults = OptConfig::default();
        let hessian = match e.get("hessian") {
            Some(h) => parse_hessian(&h)?,
            None if physics == Physics::Fwi => HessianModel::Lbfgs,
            None => HessianModel::Exact,
        };
        let stopping = match e.get("stopping").as_deref() {
            None | Some("max-iter") => Stopping::MaxIter,
            Some(s) => match s.split_once(':') {
                Some(("data-residual", t)) => Stopping::DataResidual {
                    target: t
                        .trim()
                        .parse()
                        .map_err(|_| usage(format!("bad data-residual target '{t}'")))?,
                },
                _ => return Err(usage(format!("bad stopping '{s}' (max-iter | data-residual:<target>)"))),
            },
        };
        let freeze_c_after = match e.get("freeze_c_after").as_deref() {
            None => defaults.freeze_c_after,
            Some("never") => None,
            Some(v) => Some(v.parse().map_err(|_| usage(format!("bad freeze_c_after '{v}'")))?),
        };
        let opt = OptConfig {
            lambda: e.parse_or("lambda", 0.0)?,
            c_rule: match e.get("c_rule") {
                Some(s) => parse_c_rule(&s)?,
                None => defaults.c_rule,
            },
            max_outer: e.parse_or("max_outer", defaults.max_outer)?,
            max_inner: e.parse_or("max_inner", defaults.max_inner)?,
            lbfgs_memory: e.parse_or("lbfgs_memory", defaults.lbfgs_memory)?,
            warm_start: e.parse_or("warm_start", defaults.warm_start)?,
            stopping,
            hessian,
            freeze_c_after,
            step_tolerance: e.parse_opt("step_tolerance")?,
            admm_init: match e.get("admm_init").as_deref().unwrap_or("start") {
                "start" => AdmmInit::Start,
                "zero" => AdmmInit::Zero,
                other => return Err(usage(format!("bad admm_init '{other}' (start | zero)"))),
            },
            min_outer: e.parse_or("min_outer", defaults.min_outer)?,
            ..defaults
        };
        opt.validate().map_err(|err| usage(err.to_string()))?;

        let plan = match e.get("batches") {
            None => None,
            Some(b) => {
                let plan = ContinuationPlan {
                    batches: parse_batches(&b)?,
                    paths: e.parse_or("paths", 1usize)?,
                };
                plan.validate().map_err(|err| usage(err.to_string()))?;
                Some(plan)
            }
        };
        let wd = WaveOptions::default();
        let wave = WaveOptions {
            pml_cells: e.parse_or("pml_cells", wd.pml_cells)?,
            free_surface: e.parse_or("free_surface", wd.free_surface)?,
            pml_reflection: e.parse_or("pml_reflection", wd.pml_reflection)?,
            f_peak: e.parse_or("f_peak", wd.f_peak)?,
        };
        wave.validate().map_err(|err| usage(err.to_string()))?;

        let unused = e.unused();
        if !unused.is_empty() {
            return Err(usage(format!("unknown config keys: {}", unused.join(", "))));
        }

        let mut cfg = Self {
            start,
            data,
            geometry,
            output,
            true_model,
            noise,
            noise_db,
            seed,
            physics,
            penalty,
            algorithm,
            denoiser,
            opt,
            plan,
            wave,
            resolved: Vec::new(),
        };
        cfg.resolved = cfg.describe();
        Ok(cfg)
    }

    fn describe(&self) -> Vec<(String, String)> {
        let mut r: BTreeMap<&str, String> = BTreeMap::new();
        let p = |p: &Path| p.to_string_lossy().into_owned();
        r.insert("start", p(&self.start));
        r.insert("data", p(&self.data));
        r.insert("geometry", p(&self.geometry));
        r.insert("output", p(&self.output));
        if let Some(t) = &self.true_model {
            r.insert("true_model", p(t));
        }
        if let Some(n) = &self.noise {
            r.insert("noise", p(n));
        }
        if let Some(db) = self.noise_db {
            r.insert("noise_db", db.to_string());
        }
        r.insert("seed", self.seed.to_string());
        r.insert(
            "method",
            match self.physics {
                Physics::Fwi => "fwi",
                Physics::IrWri => "irwri",
            }
            .into(),
        );
        r.insert(
            "algorithm",
            match self.algorithm {
                Method::Nista => "nista",
                Method::Nadmm => "nadmm",
            }
            .into(),
        );
        match self.penalty {
            Penalty::Absolute(mu) => r.insert("mu", mu.to_string()),
            Penalty::Relative(ratio) => r.insert("mu_ratio", ratio.to_string()),
        };
        match &self.denoiser {
            DenoiserSpec::External(cmd) => {
                r.insert("denoiser", format!("external:{cmd}"));
            }
            DenoiserSpec::Builtin(d) => {
                r.insert("denoiser", adareg::denoise::Denoise::name(d));
                match d {
                    Denoiser::Tv2d { weight, iterations } => {
                        r.insert("tv_weight", weight.to_string());
                        r.insert("tv_iterations", iterations.to_string());
                    }
                    Denoiser::Nlm(n) => {
                        r.insert("nlm_patch", n.patch_radius.to_string());
                        r.insert("nlm_search", n.search_radius.to_string());
                        r.insert("nlm_h", n.h.to_string());
                        r.insert("nlm_sigma", n.sigma.to_string());
                    }
                    _ => {}
                }
            }
        }
        let o = &self.opt;
        r.insert("lambda", o.lambda.to_string());
        r.insert("c_rule", c_rule_text(o.c_rule));
        r.insert("max_outer", o.max_outer.to_string());
        r.insert("max_inner", o.max_inner.to_string());
        r.insert("min_outer", o.min_outer.to_string());
        r.insert("lbfgs_memory", o.lbfgs_memory.to_string());
        r.insert("warm_start", o.warm_start.to_string());
        r.insert("hessian", hessian_text(o.hessian).into());
        r.insert(
            "freeze_c_after",
            o.freeze_c_after.map_or("never".into(), |k| k.to_string()),
        );
        if let Some(t) = o.step_tolerance {
            r.insert("step_tolerance", t.to_string());
        }
        r.insert(
            "admm_init",
            match o.admm_init {
                AdmmInit::Start => "start",
                AdmmInit::Zero => "zero",
            }
            .into(),
        );
        r.insert(
            "stopping",
            match &o.stopping {
                Stopping::DataResidual { target } => format!("data-residual:{target}"),
                _ => "max-iter".into(),
            },
        );
        if let Some(plan) = &self.plan {
            r.insert(
                "batches",
                plan.batches.iter().map(|b| list_text(b)).collect::<Vec<_>>().join(";"),
            );
            r.insert("paths", plan.paths.to_string());
        }
        r.insert("pml_cells", self.wave.pml_cells.to_string());
        r.insert("free_surface", self.wave.free_surface.to_string());
        r.insert("pml_reflection", self.wave.pml_reflection.to_string());
        r.insert("f_peak", self.wave.f_peak.to_string());
        r.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// The resolved settings as a configuration file that reproduces this run.
    pub fn to_text(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "start = s.grd\ndata = d.fdd\ngeometry = g.txt\noutput = out\n";

    #[test]
    fn defaults_and_relative_paths() {
        let c = InvertConfig::parse(MINIMAL, Path::new("/runs/a"), &[]).unwrap();
        assert_eq!(c.start, PathBuf::from("/runs/a/s.grd"));
        assert_eq!(c.physics, Physics::IrWri);
        assert_eq!(c.algorithm, Method::Nadmm);
        assert_eq!(c.penalty, Penalty::Relative(1e-2));
        assert_eq!(c.opt.max_outer, 70);
        assert_eq!(c.opt.hessian, HessianModel::Exact);
        assert_eq!(c.opt.admm_init, AdmmInit::Start);
        assert_eq!(c.denoiser, DenoiserSpec::Builtin(Denoiser::Identity));
        assert!(c.plan.is_none());
    }

    #[test]
    fn full_config() {
        let text = format!(
            "{MINIMAL}method = fwi\nalgorithm = nista  # comment\ndenoiser = tv2d\ntv_weight = 0.5\nlambda = 2e-3\n\
             c_rule = fixed:3\nbatches = 5,7; 10,12.5\npaths = 3\nmu = 4\nstopping = data-residual:0.5\nfreeze_c_after = never\n"
        );
        let c = InvertConfig::parse(&text, Path::new(""), &["max_outer=12".into()]).unwrap();
        assert_eq!(c.physics, Physics::Fwi);
        assert_eq!(c.opt.hessian, HessianModel::Lbfgs);
        assert_eq!(c.opt.c_rule, CRule::Fixed(3.0));
        assert_eq!(c.opt.max_outer, 12);
        assert_eq!(c.opt.freeze_c_after, None);
        assert_eq!(c.opt.stopping, Stopping::DataResidual { target: 0.5 });
        assert_eq!(c.penalty, Penalty::Absolute(4.0));
        assert_eq!(
            c.plan,
            Some(ContinuationPlan {
                batches: vec![vec![5.0, 7.0], vec![10.0, 12.5]],
                paths: 3
            })
        );
        assert_eq!(
            c.denoiser,
            DenoiserSpec::Builtin(Denoiser::Tv2d {
                weight: 0.5,
                iterations: 50
            })
        );
        // the resolved text parses back to the same run
        let again = InvertConfig::parse(&c.to_text(), Path::new(""), &[]).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn external_denoiser_keeps_its_command() {
        let text = format!("{MINIMAL}denoiser = external:{{exe}} denoise --kind l1 {{in}} {{out}} --scale {{scale}}\n");
        let c = InvertConfig::parse(&text, Path::new(""), &[]).unwrap();
        assert_eq!(
            c.denoiser,
            DenoiserSpec::External("{exe} denoise --kind l1 {in} {out} --scale {scale}".into())
        );
    }

    #[test]
    fn malformed_configs_are_usage_errors() {
        let bad = [
            "start = s.grd\n".to_string(),
            format!("{MINIMAL}lambda = lots\n"),
            format!("{MINIMAL}colour = blue\n"),
            format!("{MINIMAL}method = fdtd\n"),
            format!("{MINIMAL}mu = 1\nmu_ratio = 0.1\n"),
            format!("{MINIMAL}c_rule = fixed\n"),
            format!("{MINIMAL}batches = 5,x\n"),
            format!("{MINIMAL}lambda = -1\n"),
            format!("{MINIMAL}just some words\n"),
            format!("{MINIMAL}noise = n.fdd\nnoise_db = 5\n"),
        ];
        for text in &bad {
            let err = InvertConfig::parse(text, Path::new(""), &[]).unwrap_err();
            assert_eq!(crate::exit::code(&err), crate::exit::USAGE, "{text}: {err}");
        }
    }
}
