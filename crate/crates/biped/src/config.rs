//! Sectioned key=value run configuration.
//!
//! One plain-text file drives the whole pipeline: physical parameters,
//! gait shape, orbit anchor, controller gains, section feedback weights,
//! integrator settings, and output location.  Parsing is total — every
//! key is either consumed or reported with its `[section].key` path —
//! and [`RunConfig::emit`] writes the effective configuration back out
//! in a stable order so a run can be reproduced from its own artifacts.

use crate::control::{HighGainConfig, ImpulseMode, TrackingGains};
use crate::error::{Error, Result};
use crate::params::BipedParams;
use crate::sim::SimConfig;
use crate::vhc::{FreeParam, VhcParams};
use nalgebra::DMatrix;
use std::f64::consts::{FRAC_PI_8, PI};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Reduced-orbit selection: anchor point and tabulation interval.
#[derive(Clone, Debug)]
pub struct OrbitConfig {
    pub anchor_q2: f64,
    pub anchor_dq2: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Swing-phase gains plus the impulse actuation mode.
#[derive(Clone, Debug)]
pub struct ControllerConfig {
    pub gains: TrackingGains,
    pub high_gain: HighGainConfig,
    pub use_high_gain: bool,
}

impl ControllerConfig {
    /// Impulse mode selected by the configuration.
    pub fn impulse_mode(&self) -> ImpulseMode {
        if self.use_high_gain {
            ImpulseMode::HighGain(self.high_gain.clone())
        } else {
            ImpulseMode::Ideal
        }
    }
}

/// Section placement and LQR weights as identity-block multipliers.
#[derive(Clone, Debug)]
pub struct IcpmConfig {
    /// When false, runs apply no section feedback (open-loop walking).
    pub enabled: bool,
    pub section_q2: f64,
    pub q_angle: f64,
    pub q_velocity: f64,
    pub r: f64,
}

impl IcpmConfig {
    /// Expands the scalar multipliers into full weight matrices.
    pub fn weights(&self, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let dim = 2 * n - 1;
        let mut q = DMatrix::zeros(dim, dim);
        for i in 0..n - 1 {
            q[(i, i)] = self.q_angle;
        }
        for i in n - 1..dim {
            q[(i, i)] = self.q_velocity;
        }
        (q, DMatrix::identity(n - 1, n - 1) * self.r)
    }
}

/// Run-length, sampling, and perturbation-draw settings.
#[derive(Clone, Debug)]
pub struct SimSection {
    pub config: SimConfig,
    pub steps: usize,
    pub seed: u64,
    pub perturb: f64,
}

/// Everything a pipeline run needs, with benchmark defaults.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub biped: BipedParams,
    pub vhc: VhcParams,
    pub free: Vec<FreeParam>,
    pub orbit: OrbitConfig,
    pub controller: ControllerConfig,
    pub icpm: IcpmConfig,
    pub sim: SimSection,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            biped: BipedParams::five_link(),
            vhc: VhcParams::five_link_nominal(),
            free: vec![
                FreeParam::Amplitude(1),
                FreeParam::Amplitude(3),
                FreeParam::Amplitude(4),
                FreeParam::Slope(4),
            ],
            orbit: OrbitConfig {
                anchor_q2: FRAC_PI_8,
                anchor_dq2: -5.0 * PI / 3.0,
                lo: -(FRAC_PI_8 + 0.1),
                hi: FRAC_PI_8 + 0.1,
            },
            controller: ControllerConfig {
                gains: TrackingGains::default(),
                high_gain: HighGainConfig::default(),
                use_high_gain: false,
            },
            icpm: IcpmConfig {
                enabled: true,
                section_q2: PI / 16.0,
                q_angle: 1.0,
                q_velocity: 1.5,
                r: 1.0,
            },
            sim: SimSection {
                config: SimConfig::default(),
                steps: 1,
                seed: 42,
                perturb: 0.0,
            },
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Reads and parses a configuration file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text)
    }

    /// Parses sectioned key=value text over the benchmark defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut w = Working::default();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::config(format!("line {}", idx + 1), "unterminated section header")
                })?;
                section = name.trim().to_string();
                if !SECTIONS.contains(&section.as_str()) {
                    return Err(Error::config(
                        format!("[{section}]"),
                        "unknown section",
                    ));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", idx + 1), "expected key = value")
            })?;
            w.apply(&section, key.trim(), value.trim())?;
        }
        w.finish()
    }

    /// Writes the effective configuration in a stable order.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[biped]");
        let _ = writeln!(s, "ell = {}", join(self.biped.ell()));
        let _ = writeln!(s, "d = {}", join(self.biped.d()));
        let _ = writeln!(s, "m = {}", join(self.biped.m()));
        let _ = writeln!(s, "inertia = {}", join(self.biped.inertia()));
        let _ = writeln!(s, "g = {}", self.biped.g());
        let _ = writeln!(s);
        let _ = writeln!(s, "[vhc]");
        let _ = writeln!(s, "a = {}", join(&self.vhc.a));
        let ks: Vec<String> = self.vhc.k.iter().map(|k| k.to_string()).collect();
        let _ = writeln!(s, "k = {}", ks.join(" "));
        let _ = writeln!(s, "amp = {}", join(&self.vhc.amp));
        let _ = writeln!(s, "freq = {}", join(&self.vhc.freq));
        let _ = writeln!(s, "theta1_i = {}", self.vhc.theta1_i);
        let free: Vec<String> = self.free.iter().map(free_token).collect();
        let _ = writeln!(s, "free = {}", free.join(" "));
        let _ = writeln!(s);
        let _ = writeln!(s, "[orbit]");
        let _ = writeln!(s, "anchor = {} {}", self.orbit.anchor_q2, self.orbit.anchor_dq2);
        let _ = writeln!(s, "interval = {} {}", self.orbit.lo, self.orbit.hi);
        let _ = writeln!(s);
        let _ = writeln!(s, "[controller]");
        let _ = writeln!(s, "kp = {}", self.controller.gains.kp);
        let _ = writeln!(s, "kd = {}", self.controller.gains.kd);
        let mode = if self.controller.use_high_gain { "highgain" } else { "ideal" };
        let _ = writeln!(s, "impulse_mode = {mode}");
        let _ = writeln!(s, "gain = {}", self.controller.high_gain.gain);
        let _ = writeln!(s, "mu = {}", self.controller.high_gain.mu);
        let _ = writeln!(s, "stop_tol = {}", self.controller.high_gain.stop_tol);
        let _ = writeln!(s);
        let _ = writeln!(s, "[icpm]");
        let _ = writeln!(s, "enabled = {}", self.icpm.enabled);
        let _ = writeln!(s, "section_q2 = {}", self.icpm.section_q2);
        let _ = writeln!(s, "q_angle = {}", self.icpm.q_angle);
        let _ = writeln!(s, "q_velocity = {}", self.icpm.q_velocity);
        let _ = writeln!(s, "r = {}", self.icpm.r);
        let _ = writeln!(s);
        let _ = writeln!(s, "[sim]");
        let _ = writeln!(s, "rtol = {}", self.sim.config.rtol);
        let _ = writeln!(s, "atol = {}", self.sim.config.atol);
        let _ = writeln!(s, "h_max = {}", self.sim.config.h_max);
        let _ = writeln!(s, "sample_dt = {}", self.sim.config.sample_dt);
        let _ = writeln!(s, "steps = {}", self.sim.steps);
        let _ = writeln!(s, "seed = {}", self.sim.seed);
        let _ = writeln!(s, "perturb = {}", self.sim.perturb);
        let _ = writeln!(s);
        let _ = writeln!(s, "[output]");
        let _ = writeln!(s, "dir = {}", self.output_dir.display());
        s
    }
}

const SECTIONS: [&str; 7] = ["biped", "vhc", "orbit", "controller", "icpm", "sim", "output"];

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn free_token(p: &FreeParam) -> String {
    match p {
        FreeParam::Slope(j) => format!("slope{}", j + 1),
        FreeParam::Amplitude(j) => format!("amp{}", j + 1),
    }
}

fn scalar(path: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::config(path, format!("expected a number, got {value:?}")))
}

fn unsigned(path: &str, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| Error::config(path, format!("expected a non-negative integer, got {value:?}")))
}

fn list(path: &str, value: &str) -> Result<Vec<f64>> {
    value.split_whitespace().map(|tok| scalar(path, tok)).collect()
}

fn int_list(path: &str, value: &str) -> Result<Vec<i32>> {
    value
        .split_whitespace()
        .map(|tok| {
            tok.parse()
                .map_err(|_| Error::config(path, format!("expected an integer, got {tok:?}")))
        })
        .collect()
}

fn pair(path: &str, value: &str) -> Result<(f64, f64)> {
    let v = list(path, value)?;
    if v.len() != 2 {
        return Err(Error::config(path, format!("expected two numbers, got {}", v.len())));
    }
    Ok((v[0], v[1]))
}

fn free_list(path: &str, value: &str) -> Result<Vec<FreeParam>> {
    value
        .split_whitespace()
        .map(|tok| {
            let (kind, idx) = if let Some(rest) = tok.strip_prefix("amp") {
                ("amp", rest)
            } else if let Some(rest) = tok.strip_prefix("slope") {
                ("slope", rest)
            } else {
                return Err(Error::config(
                    path,
                    format!("expected ampJ or slopeJ tokens, got {tok:?}"),
                ));
            };
            let j: usize = idx.parse().map_err(|_| {
                Error::config(path, format!("bad link number in {tok:?}"))
            })?;
            if j < 2 {
                return Err(Error::config(
                    path,
                    format!("{tok:?}: only links 2 and beyond have adjustable shape"),
                ));
            }
            Ok(match kind {
                "amp" => FreeParam::Amplitude(j - 1),
                _ => FreeParam::Slope(j - 1),
            })
        })
        .collect()
}

/// Mutable accumulation state while parsing.
struct Working {
    ell: Vec<f64>,
    d: Vec<f64>,
    m: Vec<f64>,
    inertia: Vec<f64>,
    g: f64,
    cfg: RunConfig,
}

impl Default for Working {
    fn default() -> Self {
        let cfg = RunConfig::default();
        Working {
            ell: cfg.biped.ell().to_vec(),
            d: cfg.biped.d().to_vec(),
            m: cfg.biped.m().to_vec(),
            inertia: cfg.biped.inertia().to_vec(),
            g: cfg.biped.g(),
            cfg,
        }
    }
}

impl Working {
    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let path = format!("[{section}].{key}");
        match (section, key) {
            ("biped", "ell") => self.ell = list(&path, value)?,
            ("biped", "d") => self.d = list(&path, value)?,
            ("biped", "m") => self.m = list(&path, value)?,
            ("biped", "inertia") => self.inertia = list(&path, value)?,
            ("biped", "g") => self.g = scalar(&path, value)?,
            ("vhc", "a") => self.cfg.vhc.a = list(&path, value)?,
            ("vhc", "k") => self.cfg.vhc.k = int_list(&path, value)?,
            ("vhc", "amp") => self.cfg.vhc.amp = list(&path, value)?,
            ("vhc", "freq") => self.cfg.vhc.freq = list(&path, value)?,
            ("vhc", "theta1_i") => self.cfg.vhc.theta1_i = scalar(&path, value)?,
            ("vhc", "free") => self.cfg.free = free_list(&path, value)?,
            ("orbit", "anchor") => {
                let (q2, dq2) = pair(&path, value)?;
                self.cfg.orbit.anchor_q2 = q2;
                self.cfg.orbit.anchor_dq2 = dq2;
            }
            ("orbit", "interval") => {
                let (lo, hi) = pair(&path, value)?;
                self.cfg.orbit.lo = lo;
                self.cfg.orbit.hi = hi;
            }
            ("controller", "kp") => self.cfg.controller.gains.kp = scalar(&path, value)?,
            ("controller", "kd") => self.cfg.controller.gains.kd = scalar(&path, value)?,
            ("controller", "impulse_mode") => {
                self.cfg.controller.use_high_gain = match value {
                    "ideal" => false,
                    "highgain" => true,
                    other => {
                        return Err(Error::config(
                            &path,
                            format!("expected ideal or highgain, got {other:?}"),
                        ));
                    }
                }
            }
            ("controller", "gain") => self.cfg.controller.high_gain.gain = scalar(&path, value)?,
            ("controller", "mu") => self.cfg.controller.high_gain.mu = scalar(&path, value)?,
            ("controller", "stop_tol") => {
                self.cfg.controller.high_gain.stop_tol = scalar(&path, value)?
            }
            ("icpm", "enabled") => {
                self.cfg.icpm.enabled = match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(Error::config(
                            &path,
                            format!("expected true or false, got {other:?}"),
                        ));
                    }
                }
            }
            ("icpm", "section_q2") => self.cfg.icpm.section_q2 = scalar(&path, value)?,
            ("icpm", "q_angle") => self.cfg.icpm.q_angle = scalar(&path, value)?,
            ("icpm", "q_velocity") => self.cfg.icpm.q_velocity = scalar(&path, value)?,
            ("icpm", "r") => self.cfg.icpm.r = scalar(&path, value)?,
            ("sim", "rtol") => self.cfg.sim.config.rtol = scalar(&path, value)?,
            ("sim", "atol") => self.cfg.sim.config.atol = scalar(&path, value)?,
            ("sim", "h_max") => self.cfg.sim.config.h_max = scalar(&path, value)?,
            ("sim", "sample_dt") => self.cfg.sim.config.sample_dt = scalar(&path, value)?,
            ("sim", "steps") => self.cfg.sim.steps = unsigned(&path, value)? as usize,
            ("sim", "seed") => self.cfg.sim.seed = unsigned(&path, value)?,
            ("sim", "perturb") => self.cfg.sim.perturb = scalar(&path, value)?,
            ("output", "dir") => self.cfg.output_dir = PathBuf::from(value),
            ("", _) => {
                return Err(Error::config(key, "key appears before any [section] header"));
            }
            _ => return Err(Error::config(&path, "unknown key")),
        }
        Ok(())
    }

    fn finish(mut self) -> Result<RunConfig> {
        // Surface chain-parameter problems under the section syntax the file
        // actually uses.
        self.cfg.biped = BipedParams::new(self.ell, self.d, self.m, self.inertia, self.g)
            .map_err(|e| match e {
                Error::Validation { path, message } => {
                    let path = match path.strip_prefix("biped.") {
                        Some(rest) => format!("[biped].{rest}"),
                        None => path,
                    };
                    Error::Validation { path, message }
                }
                other => other,
            })?;
        if self.cfg.icpm.q_angle <= 0.0
            || self.cfg.icpm.q_velocity <= 0.0
            || self.cfg.icpm.r <= 0.0
        {
            return Err(Error::config("[icpm]", "weights must be positive"));
        }
        if self.cfg.sim.perturb < 0.0 {
            return Err(Error::config("[sim].perturb", "perturbation size must be >= 0"));
        }
        Ok(self.cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_survive_a_text_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.emit();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(text, back.emit(), "emit must be a fixed point of parse");
        assert_eq!(back.biped.n(), 5);
        assert_eq!(back.vhc.a, cfg.vhc.a);
        assert_eq!(back.orbit.anchor_dq2, cfg.orbit.anchor_dq2);
        assert_eq!(back.sim.seed, 42);
    }

    #[test]
    fn scalar_overrides_are_applied() {
        let text = "[biped]\ng = 3.71\n[controller]\nkp = 900\n[sim]\nsteps = 7\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.biped.g(), 3.71);
        assert_eq!(cfg.controller.gains.kp, 900.0);
        assert_eq!(cfg.sim.steps, 7);
        // Untouched keys keep their defaults.
        assert_eq!(cfg.controller.gains.kd, 25.0);
    }

    #[test]
    fn unknown_keys_report_their_full_path() {
        let err = RunConfig::parse("[biped]\nfoo = 1\n").unwrap_err();
        assert!(err.to_string().contains("[biped].foo"), "{err}");
        let err = RunConfig::parse("[nope]\n").unwrap_err();
        assert!(err.to_string().contains("[nope]"), "{err}");
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(RunConfig::parse("[biped]\ngarbage\n").is_err());
        assert!(RunConfig::parse("[biped\n").is_err());
        assert!(RunConfig::parse("orphan = 1\n").is_err());
        assert!(RunConfig::parse("[biped]\ng = fast\n").is_err());
    }

    #[test]
    fn physical_validation_runs_after_parsing() {
        let err = RunConfig::parse("[biped]\nm = 0.4 -0.45 0.55 0.45 0.4\n").unwrap_err();
        assert!(err.to_string().contains("[biped].m[1]"), "{err}");
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let text = "# leading note\n[sim]\n\nseed = 9 # trailing note\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.sim.seed, 9);
    }

    #[test]
    fn free_parameter_tokens_round_trip() {
        let cfg = RunConfig::parse("[vhc]\nfree = amp2 slope5\n").unwrap();
        assert_eq!(cfg.free, vec![FreeParam::Amplitude(1), FreeParam::Slope(4)]);
        assert!(RunConfig::parse("[vhc]\nfree = amp1\n").is_err());
        assert!(RunConfig::parse("[vhc]\nfree = wiggle3\n").is_err());
        let text = cfg.emit();
        assert!(text.contains("free = amp2 slope5"), "{text}");
    }

    #[test]
    fn impulse_mode_selection() {
        let cfg = RunConfig::parse("[controller]\nimpulse_mode = highgain\nmu = 0.001\n").unwrap();
        match cfg.controller.impulse_mode() {
            ImpulseMode::HighGain(hg) => assert_eq!(hg.mu, 0.001),
            ImpulseMode::Ideal => panic!("expected the high-gain mode"),
        }
        assert!(RunConfig::parse("[controller]\nimpulse_mode = sideways\n").is_err());
    }

    #[test]
    fn weight_matrices_expand_the_multipliers() {
        let cfg = RunConfig::parse("[icpm]\nq_angle = 2\nq_velocity = 3\nr = 0.5\n").unwrap();
        let (q, r) = cfg.icpm.weights(5);
        assert_eq!(q.nrows(), 9);
        assert_eq!(q[(0, 0)], 2.0);
        assert_eq!(q[(3, 3)], 2.0);
        assert_eq!(q[(4, 4)], 3.0);
        assert_eq!(q[(8, 8)], 3.0);
        assert_eq!(r[(2, 2)], 0.5);
        assert!(RunConfig::parse("[icpm]\nr = 0\n").is_err());
    }
}
