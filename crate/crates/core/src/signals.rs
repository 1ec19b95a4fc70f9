//! Truth signals for synthetic experiments.

use serde::{Deserialize, Serialize};

use crate::circle::{wrap, Mesh, PLFunction};
use crate::error::{Error, Result};
use crate::io::SignalFile;

/// One additive piece of a piecewise profile, active on `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Segment {
    Constant { start: f64, end: f64, value: f64 },
    Linear { start: f64, end: f64, from: f64, to: f64 },
    /// Smooth compactly supported bump `height · exp(1 - 1/(1 - t²))`.
    Bump { start: f64, end: f64, height: f64 },
}

impl Segment {
    fn eval(&self, x: f64) -> f64 {
        let (start, end) = match *self {
            Segment::Constant { start, end, .. }
            | Segment::Linear { start, end, .. }
            | Segment::Bump { start, end, .. } => (start, end),
        };
        if x < start || x >= end {
            return 0.0;
        }
        let s = (x - start) / (end - start);
        match *self {
            Segment::Constant { value, .. } => value,
            Segment::Linear { from, to, .. } => from + s * (to - from),
            Segment::Bump { height, .. } => {
                let t = 2.0 * s - 1.0;
                if t.abs() >= 1.0 {
                    0.0
                } else {
                    height * (1.0 - 1.0 / (1.0 - t * t)).exp()
                }
            }
        }
    }

    fn check(&self) -> Result<()> {
        let (start, end) = match *self {
            Segment::Constant { start, end, .. }
            | Segment::Linear { start, end, .. }
            | Segment::Bump { start, end, .. } => (start, end),
        };
        if !(0.0..1.0).contains(&start) || !(start < end && end <= 1.0) {
            return Err(Error::param(
                "signal.segments",
                format!("segment [{start}, {end}) must satisfy 0 <= start < end <= 1"),
            ));
        }
        Ok(())
    }
}

/// Source of a truth signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SignalSpec {
    /// A named builtin profile, multiplied by `scale`.
    Builtin { name: String, scale: f64 },
    /// Sum of segments, optionally shifted to zero mean.
    Piecewise { segments: Vec<Segment>, zero_mean: bool },
    /// A signal file `{ "n": int, "nodal": [...] }`.
    File { path: String },
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec::Builtin {
            name: "step_ramp_bump".into(),
            scale: 1.0,
        }
    }
}

pub const BUILTIN_NAMES: &[&str] = &["step_ramp_bump", "two_step", "smooth"];

/// Jump locations of the `two_step` profile.
pub const TWO_STEP_JUMPS: [f64; 2] = [0.28, 0.78];

fn builtin_segments(name: &str) -> Result<Vec<Segment>> {
    Ok(match name {
        "step_ramp_bump" => vec![
            Segment::Constant { start: 0.1, end: 0.35, value: 1.0 },
            Segment::Linear { start: 0.45, end: 0.7, from: 0.0, to: 1.0 },
            Segment::Bump { start: 0.75, end: 0.95, height: 0.8 },
        ],
        "two_step" => vec![
            Segment::Constant { start: 0.0, end: 1.0, value: -1.0 },
            Segment::Constant {
                start: TWO_STEP_JUMPS[0],
                end: TWO_STEP_JUMPS[1],
                value: 2.0,
            },
        ],
        "smooth" => vec![
            Segment::Bump { start: 0.1, end: 0.6, height: 1.0 },
            Segment::Bump { start: 0.55, end: 0.95, height: -0.7 },
        ],
        other => {
            return Err(Error::param(
                "signal.name",
                format!("unknown builtin `{other}` (known: {})", BUILTIN_NAMES.join(", ")),
            ))
        }
    })
}

/// Analytic profile `x ↦ Σ segments(x) - offset`.
#[derive(Debug, Clone)]
pub struct Profile {
    segments: Vec<Segment>,
    scale: f64,
    offset: f64,
}

impl Profile {
    fn new(segments: Vec<Segment>, scale: f64, zero_mean: bool) -> Result<Self> {
        for s in &segments {
            s.check()?;
        }
        let mut p = Profile {
            segments,
            scale,
            offset: 0.0,
        };
        if zero_mean {
            // Midpoint rule on a fine grid; segments are piecewise smooth.
            let k = 1 << 16;
            let mean = (0..k).map(|i| p.eval((i as f64 + 0.5) / k as f64)).sum::<f64>() / k as f64;
            p.offset = mean;
        }
        Ok(p)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let y = wrap(x);
        self.scale * self.segments.iter().map(|s| s.eval(y)).sum::<f64>() - self.offset
    }
}

/// Builtin profiles are shifted to zero mean. The mean of `u` is carried by a
/// single coordinate whose posterior width is of order `ε^q`, which the
/// sampler cannot resolve when `ε^q` is negligible, so experiments keep it at
/// its initial value zero.
pub fn builtin_profile(name: &str, scale: f64) -> Result<Profile> {
    Profile::new(builtin_segments(name)?, scale, true)
}

/// Resolves a signal specification to a PL function at `level`.
pub fn resolve_signal(spec: &SignalSpec, level: u32) -> Result<PLFunction> {
    let mesh = Mesh::new(level)?;
    match spec {
        SignalSpec::Builtin { name, scale } => {
            let p = builtin_profile(name, *scale)?;
            Ok(PLFunction::interpolate(mesh, |x| p.eval(x)))
        }
        SignalSpec::Piecewise { segments, zero_mean } => {
            let p = Profile::new(segments.clone(), 1.0, *zero_mean)?;
            Ok(PLFunction::interpolate(mesh, |x| p.eval(x)))
        }
        SignalSpec::File { path } => {
            let f = SignalFile::load(std::path::Path::new(path))?.to_function()?;
            if f.mesh().level() > level {
                return Err(Error::param(
                    "signal.path",
                    format!("signal level {} exceeds truth level {level}", f.mesh().level()),
                ));
            }
            f.prolong_to(level)
        }
    }
}
