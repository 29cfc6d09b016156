import numpy as np
import pytest

from gatedhtr.tensor import finite_diff_grad, relative_error


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def grad_check(loss_of, x, analytic, eps=1e-5):
    """Relative error between ``analytic`` and central differences of ``loss_of`` at ``x``."""
    numeric = finite_diff_grad(loss_of, x, eps)
    return relative_error(analytic, numeric)


def micro_config(**over):
    """Three-block model on 64 x 16 inputs: 16 time steps, a few hundred weights."""
    from gatedhtr.config import RunConfig
    base = dict(
        input_width=64, input_height=16, illumination=False, deslant=False,
        channels=(2, 3, 4), kernels=((3, 3),) * 3, strides=((2, 2), (2, 1), (2, 2)), paddings=((1, 1),) * 3,
        dropout=(0.0, 0.2, 0.2), gate_after=(2,), feature_dim=8, attn_dim=3, gru_hidden=4, gru_layers=2,
        max_label_len=8, max_epochs=3, patience=20, seed=7,
    )
    base.update(over)
    return RunConfig(**base)


@pytest.fixture(scope="session")
def micro_bundles(tmp_path_factory):
    from gatedhtr import toy
    from gatedhtr.pipeline import Charset, build_bundles
    root = tmp_path_factory.mktemp("micro")
    toy.make_corpus(root / "corpus", 60, seed=5)
    return build_bundles(root / "corpus", root / "bundles", Charset(toy.ALPHABET),
                         {"train": 0.6, "valid": 0.2, "test": 0.2}, seed=1, target=(64, 16),
                         illumination=False, deslant=False)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
