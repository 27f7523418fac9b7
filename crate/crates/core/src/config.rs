use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotation::AnnotationSettings;
use crate::debug::RepairSettings;
use crate::design::{DesignSettings, DEFAULT_MAX_MODULES};
use crate::implementation::GenerationSettings;
use crate::llm::{StageSettings, StageTag};
use crate::requirements::AnalysisSettings;

/// Which of the three mechanisms are active, and the debug-iteration cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationConfig {
    pub pool: bool,
    pub retrieval: bool,
    pub feedback: bool,
    pub max_debug_iterations: u32,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { pool: true, retrieval: true, feedback: true, max_debug_iterations: 3 }
    }
}

impl AblationConfig {
    pub fn new(pool: bool, retrieval: bool, feedback: bool) -> Self {
        Self { pool, retrieval, feedback, ..Self::default() }
    }

    /// All eight on/off combinations: nothing, singles, pairs, everything.
    pub fn mechanism_grid(max_debug_iterations: u32) -> Vec<AblationConfig> {
        [
            (false, false, false),
            (true, false, false),
            (false, true, false),
            (false, false, true),
            (true, true, false),
            (false, true, true),
            (true, false, true),
            (true, true, true),
        ]
        .into_iter()
        .map(|(pool, retrieval, feedback)| AblationConfig { pool, retrieval, feedback, max_debug_iterations })
        .collect()
    }

    pub fn label(&self) -> String {
        let mark = |b: bool| if b { "on" } else { "off" };
        format!(
            "pool={} retrieval={} feedback={}",
            mark(self.pool),
            mark(self.retrieval),
            mark(self.feedback)
        )
    }
}

/// Per-session pipeline settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub ablation: AblationConfig,
    pub k_per_kb: usize,
    pub max_reasks: u32,
    pub max_modules: usize,
    pub clarification_cap: u32,
    /// Overrides of the default per-stage sampling settings.
    pub stages: BTreeMap<StageTag, StageSettings>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            ablation: AblationConfig::default(),
            k_per_kb: 5,
            max_reasks: 2,
            max_modules: DEFAULT_MAX_MODULES,
            clarification_cap: 5,
            stages: BTreeMap::new(),
        }
    }
}

impl PipelineConfig {
    pub fn with_ablation(ablation: AblationConfig) -> Self {
        Self { ablation, ..Self::default() }
    }

    pub fn stage(&self, tag: StageTag) -> StageSettings {
        self.stages.get(&tag).copied().unwrap_or_else(|| StageSettings::default_for(tag))
    }

    pub fn analysis(&self) -> AnalysisSettings {
        AnalysisSettings { stage: self.stage(StageTag::RequirementAnalysis), max_reasks: self.max_reasks }
    }

    pub fn design(&self) -> DesignSettings {
        DesignSettings {
            stage: self.stage(StageTag::AlgorithmDesign),
            max_reasks: self.max_reasks,
            max_modules: self.max_modules,
        }
    }

    pub fn generation(&self) -> GenerationSettings {
        GenerationSettings { stage: self.stage(StageTag::CodeImplementation) }
    }

    pub fn repair(&self) -> RepairSettings {
        RepairSettings { stage: self.stage(StageTag::CodeDebugging) }
    }

    pub fn annotation(&self) -> AnnotationSettings {
        AnnotationSettings { stage: self.stage(StageTag::CodeAnnotation) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_eight_distinct_configs() {
        let grid = AblationConfig::mechanism_grid(3);
        assert_eq!(grid.len(), 8);
        let set: std::collections::HashSet<_> = grid.iter().collect();
        assert_eq!(set.len(), 8);
        assert_eq!(grid[7], AblationConfig::default());
    }

    #[test]
    fn config_round_trips_with_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"k_per_kb": 2}"#).unwrap();
        assert_eq!(cfg.k_per_kb, 2);
        assert_eq!(cfg.clarification_cap, 5);
    }
}
