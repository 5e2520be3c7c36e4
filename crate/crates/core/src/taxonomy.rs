//! Corner-case classification vocabulary.
//!
//! Two layers are modelled. The sensor layer holds the `Physical` and
//! `Hardware` levels, each optionally refined into a global or local outlier.
//! The content layer holds `Domain`, `Object` and `Scene`, where only `Scene`
//! may carry a `Collective` or `Contextual` sublevel.
//!
//! Every type here has one canonical string form, which is what all file
//! formats use. Parsing is case-insensitive and ignores whitespace and
//! underscores inside tokens, so `global_outlier`, `GlobalOutlier` and
//! `Global Outlier` are the same token.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaxonomyError {
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("layer `{0}` is not supported (only Sensor and Content layers are modelled)")]
    OutOfScopeLayer(String),
    #[error("illegal classification: {0}")]
    IllegalCombination(String),
    #[error("sensor source set is empty")]
    EmptySet,
}

fn normalize(token: &str) -> String {
    token
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    Sensor,
    Content,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Sensor => "Sensor",
            Layer::Content => "Content",
        }
    }
}

impl FromStr for Layer {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize(s).as_str() {
            "sensor" => Ok(Layer::Sensor),
            "content" => Ok(Layer::Content),
            "temporal" | "method" => Err(TaxonomyError::OutOfScopeLayer(s.trim().to_string())),
            _ => Err(TaxonomyError::UnknownToken(s.trim().to_string())),
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Physical,
    Hardware,
    Domain,
    Object,
    Scene,
}

impl Level {
    pub const ALL: [Level; 5] = [
        Level::Physical,
        Level::Hardware,
        Level::Domain,
        Level::Object,
        Level::Scene,
    ];

    /// The only layer this level may appear under.
    pub fn layer(self) -> Layer {
        match self {
            Level::Physical | Level::Hardware => Layer::Sensor,
            Level::Domain | Level::Object | Level::Scene => Layer::Content,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Physical => "Physical",
            Level::Hardware => "Hardware",
            Level::Domain => "Domain",
            Level::Object => "Object",
            Level::Scene => "Scene",
        }
    }

    pub fn allows(self, sublevel: SubLevel) -> bool {
        matches!(
            (self, sublevel),
            (
                Level::Physical | Level::Hardware,
                SubLevel::GlobalOutlier | SubLevel::LocalOutlier
            ) | (Level::Scene, SubLevel::Collective | SubLevel::Contextual)
        )
    }
}

impl FromStr for Level {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize(s).as_str() {
            "physical" => Ok(Level::Physical),
            "hardware" => Ok(Level::Hardware),
            "domain" => Ok(Level::Domain),
            "object" => Ok(Level::Object),
            "scene" => Ok(Level::Scene),
            _ => Err(TaxonomyError::UnknownToken(s.trim().to_string())),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SubLevel {
    GlobalOutlier,
    LocalOutlier,
    Collective,
    Contextual,
}

impl SubLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            SubLevel::GlobalOutlier => "Global Outlier",
            SubLevel::LocalOutlier => "Local Outlier",
            SubLevel::Collective => "Collective",
            SubLevel::Contextual => "Contextual",
        }
    }
}

impl FromStr for SubLevel {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize(s).as_str() {
            "globaloutlier" => Ok(SubLevel::GlobalOutlier),
            "localoutlier" => Ok(SubLevel::LocalOutlier),
            "collective" => Ok(SubLevel::Collective),
            "contextual" => Ok(SubLevel::Contextual),
            _ => Err(TaxonomyError::UnknownToken(s.trim().to_string())),
        }
    }
}

impl fmt::Display for SubLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A legal (layer, level, sublevel) triple.
///
/// Fields are private so that an illegal triple cannot be built; use
/// [`Classification::new`] or [`parse_classification`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Classification {
    layer: Layer,
    level: Level,
    sublevel: Option<SubLevel>,
}

impl Classification {
    pub fn new(
        layer: Layer,
        level: Level,
        sublevel: Option<SubLevel>,
    ) -> Result<Self, TaxonomyError> {
        if level.layer() != layer {
            return Err(TaxonomyError::IllegalCombination(format!(
                "level {level} does not belong to layer {layer}"
            )));
        }
        if let Some(sub) = sublevel {
            if !level.allows(sub) {
                return Err(TaxonomyError::IllegalCombination(format!(
                    "sublevel {sub} is not allowed under level {level}"
                )));
            }
        }
        Ok(Classification {
            layer,
            level,
            sublevel,
        })
    }

    pub fn layer(&self) -> Layer {
        self.layer
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn sublevel(&self) -> Option<SubLevel> {
        self.sublevel
    }

    /// Canonical level column text, e.g. `Physical - Global Outlier`.
    pub fn level_text(&self) -> String {
        match self.sublevel {
            Some(sub) => format!("{} - {}", self.level, sub),
            None => self.level.to_string(),
        }
    }

    /// Every legal classification, in canonical order.
    pub fn all() -> Vec<Classification> {
        let subs = [
            None,
            Some(SubLevel::GlobalOutlier),
            Some(SubLevel::LocalOutlier),
            Some(SubLevel::Collective),
            Some(SubLevel::Contextual),
        ];
        let mut out = Vec::new();
        for level in Level::ALL {
            for sub in subs {
                if let Ok(c) = Classification::new(level.layer(), level, sub) {
                    out.push(c);
                }
            }
        }
        out
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.layer, self.level_text())
    }
}

/// Parses the layer and level columns of a corner-case sheet.
///
/// `level_text` may carry a sublevel after a ` - ` separator.
pub fn parse_classification(
    layer_text: &str,
    level_text: &str,
) -> Result<Classification, TaxonomyError> {
    let layer: Layer = layer_text.parse()?;
    let (level, sublevel) = match level_text.split_once(" - ") {
        Some((lvl, sub)) => (lvl.parse::<Level>()?, Some(sub.parse::<SubLevel>()?)),
        None => (level_text.parse::<Level>()?, None),
    };
    Classification::new(layer, level, sublevel)
}

#[derive(Serialize, Deserialize)]
struct ClassificationRepr {
    layer: String,
    level: String,
}

impl Serialize for Classification {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ClassificationRepr {
            layer: self.layer.to_string(),
            level: self.level_text(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Classification {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = ClassificationRepr::deserialize(deserializer)?;
        parse_classification(&repr.layer, &repr.level).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SensorSource {
    Radar,
    Video,
    Lidar,
}

impl SensorSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SensorSource::Radar => "R",
            SensorSource::Video => "V",
            SensorSource::Lidar => "L",
        }
    }
}

/// Non-empty subset of {RADAR, Video, LiDAR}.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SensorSources(BTreeSet<SensorSource>);

impl SensorSources {
    pub fn new(sources: impl IntoIterator<Item = SensorSource>) -> Result<Self, TaxonomyError> {
        let set: BTreeSet<_> = sources.into_iter().collect();
        if set.is_empty() {
            return Err(TaxonomyError::EmptySet);
        }
        Ok(SensorSources(set))
    }

    pub fn contains(&self, source: SensorSource) -> bool {
        self.0.contains(&source)
    }

    pub fn iter(&self) -> impl Iterator<Item = SensorSource> + '_ {
        self.0.iter().copied()
    }
}

/// Parses slash-separated `R`/`V`/`L` tokens.
pub fn parse_sources(text: &str) -> Result<SensorSources, TaxonomyError> {
    let mut set = BTreeSet::new();
    for token in text.split('/').map(str::trim).filter(|t| !t.is_empty()) {
        let source = match token.to_ascii_lowercase().as_str() {
            "r" | "radar" => SensorSource::Radar,
            "v" | "video" | "camera" => SensorSource::Video,
            "l" | "lidar" => SensorSource::Lidar,
            _ => return Err(TaxonomyError::UnknownToken(token.to_string())),
        };
        set.insert(source);
    }
    SensorSources::new(set)
}

impl fmt::Display for SensorSources {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.0.iter().map(|s| s.as_str()).collect();
        f.write_str(&parts.join("/"))
    }
}

impl FromStr for SensorSources {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_sources(s)
    }
}

impl Serialize for SensorSources {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SensorSources {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_sources(&text).map_err(serde::de::Error::custom)
    }
}

/// Whether a corner case arises before or after sensor fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FusionStage {
    Single,
    Multi,
}

impl FusionStage {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionStage::Single => "Single",
            FusionStage::Multi => "Multi",
        }
    }
}

impl fmt::Display for FusionStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionStage {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize(s).as_str() {
            "single" => Ok(FusionStage::Single),
            "multi" => Ok(FusionStage::Multi),
            _ => Err(TaxonomyError::UnknownToken(s.trim().to_string())),
        }
    }
}

impl Serialize for FusionStage {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for FusionStage {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}
