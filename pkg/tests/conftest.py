import numpy as np
import pytest

from silentwave.simulator import KinematicMotif, SceneConfig, UtteranceScript, default_motif_bank


# one "C<n> PASS|FAIL ..." line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_motif(rng, duration_s=0.5):
    l = rng.normal(size=3)
    l *= rng.uniform(0.005, 0.05) / np.linalg.norm(l)
    return KinematicMotif(L=rng.normal(size=3), v=rng.normal(scale=0.05, size=3),
                          omega=rng.normal(scale=30.0, size=3), l=l, duration_s=duration_s)


def scene_script(n_units=3, gap_s=0.5, seed=0, token_offset=3):
    """A short utterance built from the default motif bank."""
    cfg = SceneConfig()
    bank = default_motif_bank(range(token_offset, token_offset + n_units), cfg)
    rng = np.random.default_rng(seed)
    toks = list(range(token_offset, token_offset + n_units))
    return UtteranceScript(toks, [bank[t].sample(rng) for t in toks], gap_s), cfg


SMALL_CONFIG = """\
seeds: [0]
corpus: {n_sentences: 12, n_per_sentence: 3, min_word_count: 1}
features: {k: 8, n_init: 2}
pretrain: {epochs: 1}
train: {epochs: 2}
"""


@pytest.fixture(scope="session")
def small_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.yaml"
    path.write_text(SMALL_CONFIG)
    return path


@pytest.fixture(scope="session")
def small_run(small_config, tmp_path_factory):
    from silentwave.config import PipelineConfig
    from silentwave.pipeline import run_pipeline

    cfg = PipelineConfig.load([small_config])
    out = tmp_path_factory.mktemp("run")
    res = run_pipeline(cfg, out)
    return cfg, out, res
