import numpy as np
import pytest

from poe.panel import PanelConfig, Vocab, init_panel, new_panel
from poe.synthetic import make_world

ACCEPTANCE: dict[int, str] = {}

TINY = dict(n_layers=2, d_model=16, n_heads=2, d_ffn=24, bottleneck=4, max_len=16)


def record_acceptance(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


@pytest.fixture
def world():
    return make_world(seed=0)


@pytest.fixture
def vocab():
    return Vocab.from_texts(["the cat sat on a mat", "hello there how are you", "fine thanks and you"])


@pytest.fixture
def tiny_panel(vocab):
    """Three experts with distinct random weights; biases and gains perturbed off their init values."""
    panel = new_panel(vocab, ["a", "b", "c"], 0, init_range=0.3, **TINY)
    rng = np.random.default_rng(1)
    panel.params = {k: v + rng.uniform(-0.1, 0.1, size=v.shape) for k, v in panel.params.items()}
    return panel


def random_params(cfg: PanelConfig, seed: int, spread: float = 0.1) -> dict:
    rng = np.random.default_rng(seed)
    return {k: v + rng.uniform(-spread, spread, size=v.shape) for k, v in init_panel(cfg, seed).items()}
