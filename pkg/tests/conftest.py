import json

import pytest

from scribblelidar import pipeline

TINY = {
    "data_root": "data",
    "seed": 0,
    "synth": {"train_frames": 3, "val_frames": 2, "points_per_frame": 1500},
    "model": {"hidden": [16]},
    "train": {"epochs": 2},
    "distill": {"epochs": 2},
}


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    """Directory holding ``cfg.json`` and a generated ``data/`` tree."""
    root = tmp_path_factory.mktemp("tiny")
    (root / "cfg.json").write_text(json.dumps(TINY))
    pipeline.stage_synth(pipeline.PipelineConfig.load(root / "cfg.json"))
    return root


@pytest.fixture(scope="session")
def tiny_cfg(tiny_root):
    return pipeline.PipelineConfig.load(tiny_root / "cfg.json")


# -- acceptance summary -------------------------------------------------------------

_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    n, title = marker.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "notes": []})
    if rep.failed or rep.skipped:
        entry["ok"] = False
        entry["notes"].append(f"{item.name} {'xfailed' if hasattr(rep, 'wasxfail') else rep.outcome}")
    if rep.when == "call":
        entry["notes"].extend(v for k, v in item.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        notes = "; ".join(e["notes"])
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
                                    + (f"  [{notes}]" if notes else ""))
