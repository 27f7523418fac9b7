mod common;

use cop_core::config::PipelineConfig;
use cop_core::debug::DebugFeedback;
use cop_core::fixtures::{self, sample_corpus};
use cop_core::pool::ArtifactKind;
use cop_core::session::{Phase, Session};
use std::sync::Arc;

#[test]
fn every_sample_task_reaches_done() {
    for task in sample_corpus() {
        let backend = Arc::new(fixtures::gold_backend(&task, 3));
        let engine = common::engine_with(backend, common::fixed_clock());
        let mut s = Session::create(task.id.clone(), &task.requirement_text, PipelineConfig::default(), &engine)
            .unwrap();
        assert_eq!(s.phase(), Phase::AwaitingFeedback, "{}: {:?}", task.id, s.error());
        s.post_feedback(&DebugFeedback::error("ee.ImageCollection is not defined @rev0."), &engine).unwrap();
        assert_eq!(s.phase(), Phase::AwaitingFeedback, "{}: {:?}", task.id, s.error());
        assert_eq!(s.pool().latest_code().unwrap().0, 1);
        let view = s.post_feedback(&DebugFeedback::success(), &engine).unwrap();
        assert_eq!(view.phase, Phase::Done, "{}: {:?}", task.id, view.error);
        for kind in ArtifactKind::ALL {
            assert!(s.pool().get(kind).is_some(), "{} missing {kind}", task.id);
        }
        assert_eq!(s.pool().requirements().unwrap(), task.gold);
    }
}
