//! Sample-set and record files.

use std::path::Path;

use anyhow::Context;

use ddpinn_core::geometry::SampleSet;

pub fn write_samples(path: &Path, samples: &SampleSet) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(samples)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_samples(path: &Path) -> anyhow::Result<SampleSet> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid sample set in {}", path.display()))
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ddpinn_core::geometry::build_samples;
    use ddpinn_core::problems::{Problem, ProblemKind};

    #[test]
    fn samples_round_trip() {
        let problem = Problem::native(ProblemKind::PoissonInterface);
        let samples = build_samples(&problem.partition, &ProblemKind::PoissonInterface.default_samples(3), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        write_samples(&path, &samples).unwrap();
        assert_eq!(read_samples(&path).unwrap(), samples);
    }
}
