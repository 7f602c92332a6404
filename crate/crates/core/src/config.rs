//! Analysis settings, their `key = value` file format, and precedence.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::engine::DEFAULT_FUEL;
use crate::lazy::Variant;
use crate::syntax::PermissionSet;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`")]
    Value { key: String, value: String },
    #[error("{0}")]
    Conflict(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MachineKind {
    Cek,
    Cesk,
    CeskStar,
    CeskStarT,
    Lk,
    LkStar,
    Extended,
    Ceshk,
    Cm,
}

impl MachineKind {
    pub const ALL: [MachineKind; 9] = [
        MachineKind::Cek,
        MachineKind::Cesk,
        MachineKind::CeskStar,
        MachineKind::CeskStarT,
        MachineKind::Lk,
        MachineKind::LkStar,
        MachineKind::Extended,
        MachineKind::Ceshk,
        MachineKind::Cm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MachineKind::Cek => "cek",
            MachineKind::Cesk => "cesk",
            MachineKind::CeskStar => "cesk-star",
            MachineKind::CeskStarT => "cesk-star-t",
            MachineKind::Lk => "lk",
            MachineKind::LkStar => "lk-star",
            MachineKind::Extended => "extended",
            MachineKind::Ceshk => "ceshk",
            MachineKind::Cm => "cm",
        }
    }

    pub fn is_lazy(self) -> bool {
        matches!(self, MachineKind::Lk | MachineKind::LkStar)
    }
}

impl fmt::Display for MachineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MachineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        MachineKind::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| format!("unknown machine `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Widening {
    #[default]
    None,
    GlobalStore,
}

impl FromStr for Widening {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Widening::None),
            "global-store" => Ok(Widening::GlobalStore),
            _ => Err(format!("unknown widening `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Dot,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dot" => Ok(Format::Dot),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format `{s}`")),
        }
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "optimized" => Ok(Variant::Optimized),
            "postponed" => Ok(Variant::Postponed),
            _ => Err(format!("unknown variant `{s}`")),
        }
    }
}

/// Comma-separated permission names; empty entries are ignored.
pub fn parse_permissions(s: &str) -> PermissionSet {
    PermissionSet::new(s.split(',').map(str::trim).filter(|p| !p.is_empty()))
}

/// Partially specified settings from one source.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    pub machine: Option<MachineKind>,
    pub k: Option<usize>,
    pub gc: Option<bool>,
    pub widen: Option<Widening>,
    pub fuel: Option<usize>,
    pub permissions: Option<PermissionSet>,
    pub variant: Option<Variant>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

impl Settings {
    /// Parse the `key = value` file format. `#` starts a comment; values may
    /// be quoted.
    pub fn parse(text: &str) -> Result<Settings, ConfigError> {
        let mut s = Settings::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, msg: "expected `key = value`".into() });
            };
            let key = key.trim();
            let value = value.trim().trim_matches('"');
            s.set(key, value)?;
        }
        Ok(s)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::Value { key: key.to_string(), value: value.to_string() };
        match key {
            "machine" => self.machine = Some(value.parse().map_err(|_| bad())?),
            "k" => self.k = Some(value.parse().map_err(|_| bad())?),
            "gc" => self.gc = Some(value.parse().map_err(|_| bad())?),
            "widen" => self.widen = Some(value.parse().map_err(|_| bad())?),
            "fuel" => self.fuel = Some(value.parse().map_err(|_| bad())?),
            "permissions" => self.permissions = Some(parse_permissions(value)),
            "variant" => self.variant = Some(value.parse().map_err(|_| bad())?),
            "out" => self.out = Some(PathBuf::from(value)),
            "format" => self.format = Some(value.parse().map_err(|_| bad())?),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Fields set in `over` replace ours.
    pub fn overlay(mut self, over: Settings) -> Settings {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f; } )* };
        }
        take!(machine, k, gc, widen, fuel, permissions, variant, out, format);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalysisConfig {
    pub machine: MachineKind,
    pub k: usize,
    pub gc: bool,
    pub widen: Widening,
    pub fuel: usize,
    /// The permission universe; `None` means the permissions the program
    /// mentions.
    pub permissions: Option<PermissionSet>,
    pub variant: Variant,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

impl AnalysisConfig {
    /// Precedence: flags, then the config file, then `AAM_FUEL` (fuel only),
    /// then defaults.
    pub fn resolve(file: Settings, flags: Settings, env_fuel: Option<&str>) -> Result<AnalysisConfig, ConfigError> {
        let s = file.overlay(flags);
        let default_fuel = match env_fuel {
            Some(v) => v
                .trim()
                .parse()
                .map_err(|_| ConfigError::Value { key: "AAM_FUEL".into(), value: v.to_string() })?,
            None => DEFAULT_FUEL,
        };
        let cfg = AnalysisConfig {
            machine: s.machine.unwrap_or(MachineKind::CeskStar),
            k: s.k.unwrap_or(0),
            gc: s.gc.unwrap_or(false),
            widen: s.widen.unwrap_or_default(),
            fuel: s.fuel.unwrap_or(default_fuel),
            permissions: s.permissions,
            variant: s.variant.unwrap_or(Variant::Baseline),
            out: s.out,
            format: s.format,
        };
        if cfg.gc && cfg.widen == Widening::GlobalStore {
            return Err(ConfigError::Conflict("--gc cannot be combined with --widen global-store".into()));
        }
        if cfg.widen == Widening::GlobalStore && matches!(cfg.machine, MachineKind::Cek | MachineKind::Lk) {
            return Err(ConfigError::Conflict(format!("the {} machine has no abstract counterpart to widen", cfg.machine)));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_format() {
        let s = Settings::parse("# analysis\nmachine = cm\nk=1\ngc = true\npermissions = \"p, q\"\n\n").unwrap();
        assert_eq!(s.machine, Some(MachineKind::Cm));
        assert_eq!(s.k, Some(1));
        assert_eq!(s.gc, Some(true));
        assert_eq!(s.permissions, Some(PermissionSet::new(["p", "q"])));
        assert!(matches!(Settings::parse("k 1"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(Settings::parse("depth = 1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(Settings::parse("k = x"), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn flags_win_over_file_and_env() {
        let file = Settings::parse("k = 1\nfuel = 50").unwrap();
        let flags = Settings { k: Some(2), ..Settings::default() };
        let cfg = AnalysisConfig::resolve(file, flags, Some("7")).unwrap();
        assert_eq!(cfg.k, 2);
        assert_eq!(cfg.fuel, 50);
        let cfg = AnalysisConfig::resolve(Settings::default(), Settings::default(), Some("7")).unwrap();
        assert_eq!(cfg.fuel, 7);
        let cfg = AnalysisConfig::resolve(Settings::default(), Settings::default(), None).unwrap();
        assert_eq!(cfg.fuel, DEFAULT_FUEL);
        assert!(AnalysisConfig::resolve(Settings::default(), Settings::default(), Some("lots")).is_err());
    }

    #[test]
    fn conflicting_options_are_rejected() {
        let s = Settings { gc: Some(true), widen: Some(Widening::GlobalStore), ..Settings::default() };
        assert!(matches!(AnalysisConfig::resolve(Settings::default(), s, None), Err(ConfigError::Conflict(_))));
        let s = Settings { machine: Some(MachineKind::Cek), widen: Some(Widening::GlobalStore), ..Settings::default() };
        assert!(AnalysisConfig::resolve(Settings::default(), s, None).is_err());
    }

    #[test]
    fn machine_names_round_trip() {
        for m in MachineKind::ALL {
            assert_eq!(m.name().parse::<MachineKind>().unwrap(), m);
        }
    }
}
