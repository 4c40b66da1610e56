import types

import numpy as np
import pytest
import torch

from colonnet.config import TINY_PRESET, RunConfig
from colonnet.synthgen import SynthConfig, generate
from colonnet.trainer import run_full_schedule


@pytest.fixture(scope="session")
def small_synth():
    return generate(SynthConfig(n_samples=40, image_size=64, seed=3))


@pytest.fixture
def tiny_config():
    def make(**overrides):
        return RunConfig.from_mapping({**TINY_PRESET, **overrides}, env={})
    return make


@pytest.fixture
def tiny_model(tiny_config):
    return tiny_config().build_model()


@pytest.fixture(scope="session")
def tiny_run():
    """Full default schedule on 500 synthetic frames (400 train / 100 val), seed 0."""
    cfg = RunConfig.from_mapping(TINY_PRESET, env={})
    samples = generate(SynthConfig(n_samples=500, image_size=64, seed=0))
    model = cfg.build_model()
    schedule = cfg.build_schedule()
    seen = {"detection": [], "classification": [], "segmentation": []}

    def record(stage, batch):
        seen[stage].extend(s.label for s in batch)

    report, val = run_full_schedule(model, samples, schedule, on_batch=record)
    return types.SimpleNamespace(model=model, report=report, val=val, samples=samples,
                                 schedule=schedule, seen=seen, config=cfg)


def random_mask(rng, shape, p=0.4):
    return (rng.random(shape) < p).astype(np.uint8)


@pytest.fixture(scope="session")
def equivariant_model():
    """Mirror-tied tiny model after short detection and classification stages."""
    cfg = RunConfig.from_mapping({
        **TINY_PRESET,
        "backbone.flip_equivariant": True,
        "train.detection_epochs": 3,
        "train.classification_epochs": 5,
        "train.segmentation_epochs": 0,
    }, env={})
    model = cfg.build_model()
    samples = generate(SynthConfig(n_samples=120, image_size=64, seed=11))
    run_full_schedule(model, samples, cfg.build_schedule())
    return model.eval(), samples


# one pass/fail line per acceptance criterion, printed after the run

_CRITERIA: dict[int, dict] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when not in ("setup", "call"):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "failed": [], "ran": 0})
    if call.excinfo is not None:
        entry["failed"].append(item.name)
    elif call.when == "call":
        entry["ran"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        ok = not entry["failed"] and entry["ran"] > 0
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {entry['title']}"
        if entry["failed"]:
            line += f"  (failed: {', '.join(entry['failed'])})"
        terminalreporter.write_line(line)


def pytest_collection_modifyitems(items):
    for item in items:
        if "tiny_run" in getattr(item, "fixturenames", ()):
            item.add_marker(pytest.mark.slow)
