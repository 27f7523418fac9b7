"""Smoke test for the pycop extension module.

Build and install first:
    pip install maturin
    maturin develop -m crates/python/Cargo.toml
"""

import pycop


def main():
    kb = pycop.KnowledgeBase("function")
    hits = kb.search("normalizedDifference NDVI", platform="Google Earth Engine", k=3)
    assert hits and hits[0]["snippet"].startswith("[KB]"), hits
    print(f"kb: {len(kb)} functions, top hit {hits[0]['record_id']}")

    assert pycop.score_readability([9, 7, 8, 6, 10]) == 80.0
    assert pycop.score_executability([(True, False), (True, False), (False, False), (True, False)]) == 75.0
    assert pycop.score_accuracy([(True, True), (True, False), (False, False), (True, True)]) == 50.0
    print("metrics: ok")

    corpus = pycop.sample_corpus()
    task = corpus[1]
    service = pycop.Service(script_rules=pycop.gold_rules(task["id"]), seed=7, fixed_clock=True)
    view = service.create(task["requirement_text"])
    assert view["phase"] == "awaiting_feedback", view
    sid = view["session_id"]
    view = service.feedback(sid, executable=False, error_text="ee is not defined")
    assert view["code"]["revision"] == 1
    try:
        service.answer(sid, {"platform": "x"})
        raise AssertionError("expected WrongPhaseError")
    except pycop.WrongPhaseError:
        pass
    view = service.feedback(sid, executable=True, correct=True)
    assert view["phase"] == "done" and view["annotated"], view
    print(f"session {sid}: done after {len(service.artifacts(sid)['code_revisions'])} revisions")

    replayed = pycop.replay(service.event_log(sid))
    assert replayed["snapshot"] == service.artifacts(sid)["snapshot"]
    print("replay: identical snapshot")

    design = view["design"]
    original = service.artifacts(sid)["code_revisions"][-1]["source"]
    language = view["requirements"]["requirements"]["Programming_Language"]
    assert pycop.check_annotation(view["annotated"], original, design, language) == []
    assert "missing header" in pycop.check_annotation(original, original, design, language)
    print("annotation check: ok")

    gold = task["gold"]
    assert pycop.score_matchability(gold, gold) == 100.0
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
