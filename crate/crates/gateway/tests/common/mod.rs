use std::path::PathBuf;
use std::sync::OnceLock;

use vcd_core::fixtures::synthetic_clip;
use vcd_core::replay::{run_replay, ReplayConfig};
use vcd_core::risk::MockService;

/// Runs root holding one replay of the synthetic clip, built once per binary.
pub fn runs_root() -> PathBuf {
    static ROOT: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    ROOT.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let clip = synthetic_clip();
        let fixture = clip.write(&tmp.path().join("fixtures"), 15).unwrap();
        let out = tmp.path().join("runs");
        run_replay(&[fixture], &MockService::new(clip.responses.clone()), &ReplayConfig::default(), &out).unwrap();
        (tmp, out)
    })
    .1
    .clone()
}
