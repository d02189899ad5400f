from __future__ import annotations

import numpy as np
import pytest

from tinydistill.evaluation.tasks import TASK_ALPHABET, TaskSpec, build_mixed_suite
from tinydistill.model import ModelConfig, TinyTransformer, build_tokenizer


@pytest.fixture(scope="session")
def tok():
    return build_tokenizer([TASK_ALPHABET])


def tiny_model(tok, seed=0, dtype=np.float32, max_len=48, layers=1, d=16, heads=2):
    cfg = ModelConfig(n_layers=layers, d_model=d, n_heads=heads, d_ff=2 * d, max_len=max_len,
                      vocab_size=tok.vocab_size, seed=seed)
    return TinyTransformer(cfg, tok, dtype=dtype)


@pytest.fixture
def model(tok):
    return tiny_model(tok)


@pytest.fixture(scope="session")
def small_suite():
    specs = [TaskSpec("addition"), TaskSpec("reversal")]
    return build_mixed_suite(specs, {"addition": (40, 40, 20), "reversal": (20, 20, 10)})


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
