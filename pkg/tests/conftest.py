"""Shared fixtures: a small synthetic dataset and a tiny model configuration."""

import numpy as np
import pytest

from gesturegen import audio
from gesturegen.data import Dataset, records_with_mirror
from gesturegen.model import ModelConfig
from gesturegen.synth import make_clip


def tiny_config(num_joints, **kw):
    base = dict(speech_channels=8, speech_dim=8, style_dim=8, style_channels=16, fft_channels=8,
                gru_hidden=16, init_hidden=16)
    base.update(kw)
    return ModelConfig.reduced(num_joints, **base)


def synthetic_records(specs, duration=8.0):
    """Clip records (with mirrors) for ``[(style, seed, split), ...]``."""
    records = []
    for style, seed, split in specs:
        s = make_clip(style, duration, seed=seed)
        speech = audio.speech_features(s.waveform, target_rate=s.clip.fps)
        records += records_with_mirror(s.clip, speech, split)
    return records


@pytest.fixture(scope="session")
def small_dataset():
    recs = synthetic_records([("High", 1, "train"), ("Low", 2, "train"), ("Mid", 3, "heldout")])
    return Dataset.from_records(recs, {"source": "synthetic"})


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# -- acceptance reporting ----------------------------------------------------------------------
_ACCEPTANCE = pytest.StashKey[list]()
STATUS = {True: "PASS", False: "FAIL", None: "SKIP"}


@pytest.fixture
def acceptance_log(request):
    """List collecting ``(criterion, passed, detail)`` for the terminal summary."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = config.stash.get(_ACCEPTANCE, [])
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for n, passed, detail in sorted(rows, key=lambda r: (int(r[0].rstrip('abc')), r[0])):
        terminalreporter.write_line(f"criterion {n:>3}: {STATUS[passed]}  {detail}")
