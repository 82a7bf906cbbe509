//! Experiment configuration files.
//!
//! A configuration is a TOML document: a top-level `kind` plus the sections below,
//! every key optional except `kind`. Unknown keys are rejected. Field entries take
//! either a preset expression such as `"pure_bend(1)+bump(0.3)"` or `"csv:<path>"`,
//! with paths relative to the configuration file.
//!
//! ```toml
//! kind = "evolve"            # evolve | gamma | slope | toy
//!
//! [material]                 # w, mu, lambda, d, gamma, p, c_p, alpha, cw2, cd2, allow_nonzero_poisson
//! [grid]                     # l1, l2, n1, n2 (node counts)
//! [bc]                       # u_hat, v_hat, grad_v_hat
//! [init]                     # u, v; default to the boundary fields
//! [load]                     # f
//! [run]                      # tau, t_end, eps_inner, max_iters, record_slopes, precondition, seed
//! [slope]                    # state (snapshot csv)
//! [gamma]                    # h_list, u, v, pair_u, pair_v, corrector, taper_c, taper_exponent, dissipation
//! [quadrature]               # n_xy, n_z, cells, rel_tol, max_cells
//! [toy]                      # x0
//! ```

use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VkError};
use crate::field::GridSpec;
use crate::presets::{ScalarExpr, VectorExpr};
use crate::tensor::{DirectForms, MaterialSpec, ReducedForms};
use crate::thin::{Corrector, QuadratureSpec, TaperWidth};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Evolve,
    Gamma,
    Slope,
    Toy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialConfig {
    pub w: String,
    pub mu: f64,
    /// Only read by `w = "stvk_full"`.
    pub lambda: f64,
    pub d: String,
    pub gamma: f64,
    pub p: f64,
    pub c_p: f64,
    pub alpha: f64,
    /// Row-major 2D elasticity tensor in Voigt coordinates, overriding `w`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cw2: Option<[f64; 9]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cd2: Option<[f64; 9]>,
    pub allow_nonzero_poisson: bool,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        MaterialConfig {
            w: "stvk_simplified".into(),
            mu: 1.0,
            lambda: 0.0,
            d: "cauchy_green".into(),
            gamma: 1.0,
            p: 4.0,
            c_p: 1.0,
            alpha: 0.5,
            cw2: None,
            cd2: None,
            allow_nonzero_poisson: false,
        }
    }
}

impl MaterialConfig {
    pub fn spec(&self) -> Result<MaterialSpec> {
        let mut spec = MaterialSpec::from_tags(&self.w, self.mu, self.lambda, &self.d, self.gamma, self.c_p, self.p, self.alpha)?;
        spec.allow_nonzero_poisson = self.allow_nonzero_poisson;
        spec.direct = match (self.cw2, self.cd2) {
            (None, None) => None,
            (Some(a), Some(b)) => Some(DirectForms {
                cw2: Matrix3::from_row_slice(&a),
                cd2: Matrix3::from_row_slice(&b),
            }),
            _ => return Err(VkError::config("material.cw2", "cw2 and cd2 must be given together")),
        };
        Ok(spec)
    }

    pub fn forms(&self) -> Result<ReducedForms> {
        ReducedForms::from_material(&self.spec()?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub l1: f64,
    pub l2: f64,
    pub n1: usize,
    pub n2: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            l1: 1.0,
            l2: 1.0,
            n1: 33,
            n2: 33,
        }
    }
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.l1, self.l2, self.n1, self.n2).map_err(|e| VkError::config("grid", e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub u_hat: String,
    pub v_hat: String,
    /// Defaults to the gradient of `v_hat`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_v_hat: Option<String>,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            u_hat: "zero".into(),
            v_hat: "zero".into(),
            grad_v_hat: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadConfig {
    pub f: String,
}

impl Default for LoadConfig {
    fn default() -> Self {
        LoadConfig { f: "zero".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub tau: f64,
    pub t_end: f64,
    pub eps_inner: f64,
    pub max_iters: usize,
    pub record_slopes: bool,
    pub precondition: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tau: 1e-2,
            t_end: 1.0,
            eps_inner: 1e-10,
            max_iters: 5000,
            record_slopes: false,
            precondition: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlopeConfig {
    /// Snapshot csv; when absent the state is built from `[bc]` and `[init]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammaConfig {
    pub h_list: Vec<f64>,
    pub u: String,
    pub v: String,
    /// Start point for the dissipation ladder.
    pub pair_u: String,
    pub pair_v: String,
    /// `"tapered"` or `"zero"`.
    pub corrector: String,
    pub taper_c: f64,
    pub taper_exponent: f64,
    pub dissipation: bool,
}

impl Default for GammaConfig {
    fn default() -> Self {
        let TaperWidth::Scaled { c, exponent } = TaperWidth::default() else {
            unreachable!("default taper is scaled")
        };
        GammaConfig {
            h_list: vec![0.2, 0.1, 0.05, 0.025],
            u: "pure_bend(1)".into(),
            v: "pure_bend(1)".into(),
            pair_u: "zero".into(),
            pair_v: "zero".into(),
            corrector: "tapered".into(),
            taper_c: c,
            taper_exponent: exponent,
            dissipation: true,
        }
    }
}

impl GammaConfig {
    pub fn corrector(&self) -> Result<Corrector> {
        match self.corrector.as_str() {
            "zero" => Ok(Corrector::Zero),
            "tapered" => {
                if !(self.taper_c > 0.0) || !self.taper_exponent.is_finite() {
                    return Err(VkError::config("gamma.taper_c", "taper needs c > 0 and a finite exponent"));
                }
                Ok(Corrector::TaperedStretch(TaperWidth::Scaled {
                    c: self.taper_c,
                    exponent: self.taper_exponent,
                }))
            }
            other => Err(VkError::config("gamma.corrector", format!("unknown corrector `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    pub n_xy: usize,
    pub n_z: usize,
    pub cells: usize,
    pub rel_tol: f64,
    pub max_cells: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        let q = QuadratureSpec::default();
        QuadratureConfig {
            n_xy: q.n_xy,
            n_z: q.n_z,
            cells: q.cells,
            rel_tol: q.rel_tol,
            max_cells: q.max_cells,
        }
    }
}

impl QuadratureConfig {
    pub fn spec(&self) -> Result<QuadratureSpec> {
        let q = QuadratureSpec {
            n_xy: self.n_xy,
            n_z: self.n_z,
            cells: self.cells,
            rel_tol: self.rel_tol,
            max_cells: self.max_cells,
        };
        q.validate()?;
        Ok(q)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub x0: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig { x0: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    #[serde(default)]
    pub material: MaterialConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub bc: BcConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub load: LoadConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub slope: SlopeConfig,
    #[serde(default)]
    pub gamma: GammaConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub toy: ToyConfig,
}

/// A field entry: preset expression or csv file.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldSource {
    Preset(String),
    Csv(PathBuf),
}

impl FieldSource {
    pub fn parse(s: &str) -> FieldSource {
        match s.trim().strip_prefix("csv:") {
            Some(p) => FieldSource::Csv(PathBuf::from(p.trim())),
            None => FieldSource::Preset(s.trim().to_string()),
        }
    }
}

/// Convert a TOML error into a parse error with line number, or a configuration
/// error naming the offending key.
fn toml_error(src: &str, e: toml::de::Error) -> VkError {
    let line = e
        .span()
        .map(|s| src[..s.start.min(src.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    let msg = e.message().trim().to_string();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        let field = rest.split('`').next().unwrap_or_default();
        let section = src
            .lines()
            .take(line.saturating_sub(1))
            .filter_map(|l| {
                let t = l.trim();
                t.strip_prefix('[').and_then(|r| r.split(']').next()).map(|s| s.trim().to_string())
            })
            .last();
        let key = match section {
            Some(s) if !s.is_empty() => format!("{s}.{field}"),
            _ => field.to_string(),
        };
        return VkError::Config {
            key,
            msg: format!("unknown key (line {line})"),
        };
    }
    VkError::Parse { line, msg }
}

impl ExperimentConfig {
    /// Parse TOML text. Relative csv paths are resolved against `base`.
    pub fn from_toml(src: &str, base: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(src).map_err(|e| toml_error(src, e))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&src, &base)
    }

    /// Normalized TOML with every default spelled out. Parses back to `self`.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    fn field_entries_mut(&mut self) -> Vec<&mut String> {
        let mut v = vec![&mut self.bc.u_hat, &mut self.bc.v_hat, &mut self.load.f, &mut self.gamma.u, &mut self.gamma.v];
        v.extend(self.bc.grad_v_hat.as_mut());
        v.extend(self.init.u.as_mut());
        v.extend(self.init.v.as_mut());
        v
    }

    fn resolve_paths(&mut self, base: &Path) {
        for s in self.field_entries_mut() {
            if let FieldSource::Csv(p) = FieldSource::parse(s) {
                if p.is_relative() {
                    *s = format!("csv:{}", base.join(p).display());
                }
            }
        }
        if let Some(p) = self.slope.state.as_mut() {
            let pb = PathBuf::from(&*p);
            if pb.is_relative() {
                *p = base.join(pb).display().to_string();
            }
        }
    }

    /// Semantic checks: tags, ranges, expressions, and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        self.material.spec()?;
        self.grid.spec()?;
        let check_scalar = |key: &str, s: &str| -> Result<()> {
            match FieldSource::parse(s) {
                FieldSource::Preset(e) => ScalarExpr::parse(&e).map(|_| ()).map_err(|err| VkError::config(key, err.to_string())),
                FieldSource::Csv(p) => exists(key, &p),
            }
        };
        let check_vector = |key: &str, s: &str| -> Result<()> {
            match FieldSource::parse(s) {
                FieldSource::Preset(e) => VectorExpr::parse(&e).map(|_| ()).map_err(|err| VkError::config(key, err.to_string())),
                FieldSource::Csv(p) => exists(key, &p),
            }
        };
        check_vector("bc.u_hat", &self.bc.u_hat)?;
        check_scalar("bc.v_hat", &self.bc.v_hat)?;
        if let Some(g) = &self.bc.grad_v_hat {
            check_vector("bc.grad_v_hat", g)?;
        }
        if let Some(u) = &self.init.u {
            check_vector("init.u", u)?;
        }
        if let Some(v) = &self.init.v {
            check_scalar("init.v", v)?;
        }
        check_scalar("load.f", &self.load.f)?;
        let r = &self.run;
        if !(r.tau > 0.0 && r.tau.is_finite()) {
            return Err(VkError::config("run.tau", "must be positive"));
        }
        if !(r.t_end >= 0.0 && r.t_end.is_finite()) {
            return Err(VkError::config("run.t_end", "must be nonnegative"));
        }
        if !(r.eps_inner > 0.0) {
            return Err(VkError::config("run.eps_inner", "must be positive"));
        }
        if r.max_iters == 0 {
            return Err(VkError::config("run.max_iters", "must be positive"));
        }
        if let Some(p) = &self.slope.state {
            exists("slope.state", Path::new(p))?;
        }
        let g = &self.gamma;
        if g.h_list.is_empty() || g.h_list.iter().any(|h| !(*h > 0.0)) || g.h_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(VkError::config("gamma.h_list", "thicknesses must be positive and strictly decreasing"));
        }
        check_vector("gamma.u", &g.u)?;
        check_scalar("gamma.v", &g.v)?;
        check_vector("gamma.pair_u", &g.pair_u)?;
        check_scalar("gamma.pair_v", &g.pair_v)?;
        g.corrector()?;
        self.quadrature.spec()?;
        if !self.toy.x0.is_finite() {
            return Err(VkError::config("toy.x0", "must be finite"));
        }
        Ok(())
    }
}

fn exists(key: &str, p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(VkError::config(key, format!("file `{}` does not exist", p.display())))
    }
}

/// A file holding only a `[material]` section.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialFile {
    #[serde(default)]
    pub material: MaterialConfig,
}

impl MaterialFile {
    pub fn load(path: &Path) -> Result<MaterialConfig> {
        let src = std::fs::read_to_string(path)?;
        let f: MaterialFile = toml::from_str(&src).map_err(|e| toml_error(&src, e))?;
        f.material.spec()?;
        Ok(f.material)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(s, Path::new("."))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse("kind = \"evolve\"\n").unwrap();
        assert_eq!(c.run.eps_inner, 1e-10);
        assert_eq!((c.quadrature.n_xy, c.quadrature.n_z), (2, 3));
        assert_eq!(c.material, MaterialConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse("kind = \"evolve\"\n[material]\nmu = 2.0\nnu = 0.3\n").unwrap_err();
        match err {
            VkError::Config { key, .. } => assert_eq!(key, "material.nu"),
            other => panic!("{other:?}"),
        }
        let err = parse("kind = \"evolve\"\nseedling = 3\n").unwrap_err();
        assert!(matches!(err, VkError::Config { key, .. } if key == "seedling"));
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = parse("kind = \"evolve\"\n[run]\ntau = = 3\n").unwrap_err();
        assert!(matches!(err, VkError::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn semantic_errors_name_keys() {
        for (src, key) in [
            ("kind=\"evolve\"\n[run]\ntau = -1.0\n", "run.tau"),
            ("kind=\"evolve\"\n[material]\nw = \"neo_hooke\"\n", "material.w"),
            ("kind=\"evolve\"\n[bc]\nv_hat = \"wobble(2)\"\n", "bc.v_hat"),
            ("kind=\"evolve\"\n[load]\nf = \"csv:missing.csv\"\n", "load.f"),
            ("kind=\"gamma\"\n[gamma]\nh_list = [0.1, 0.2]\n", "gamma.h_list"),
        ] {
            match parse(src) {
                Err(VkError::Config { key: k, .. }) => assert_eq!(k, key),
                other => panic!("{src}: {other:?}"),
            }
        }
    }

    #[test]
    fn echo_round_trips() {
        let c = parse(
            "kind = \"evolve\"\n[material]\ncw2 = [2,0,0,0,2,0,0,0,2]\ncd2 = [4,0,0,0,4,0,0,0,4]\n\
             [bc]\nu_hat = \"pure_bend(1)\"\nv_hat = \"pure_bend(1)\"\n[init]\nv = \"pure_bend(1)+bump(0.3)\"\n",
        )
        .unwrap();
        let again = parse(&c.echo()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.echo(), c.echo());
    }

    #[test]
    fn direct_forms_override_catalog() {
        let c = parse("kind = \"evolve\"\n[material]\ncw2 = [3,0,0,0,3,0,0,0,3]\ncd2 = [1,0,0,0,1,0,0,0,1]\n").unwrap();
        assert_eq!(c.material.forms().unwrap().cw2[(0, 0)], 3.0);
        let half = parse("kind = \"evolve\"\n[material]\ncw2 = [3,0,0,0,3,0,0,0,3]\n");
        assert!(matches!(half, Err(VkError::Config { key, .. }) if key == "material.cw2"));
    }
}
