import numpy as np
import pytest

from nases.autoencoder import AutoencoderModel, pretrain
from nases.config import SearchConfig
from nases.space import SpaceConfig

ACCEPTANCE = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


# Search-quality setting for the 625-architecture space: one-hot pretraining
# gives a decoder whose images cover the space, and a wide policy explores it.
SMALL_SEARCH = dict(
    layers=4,
    skips=False,
    pretrain_epochs=50,
    pretrain_batches=64,
    holdout=512,
    pretrain_lr=1e-3,
    pretrain_one_hot=True,
    controller_lr=1e-3,
    sigma=4.0,
)


@pytest.fixture(scope="session")
def small_cfg():
    return SearchConfig(**SMALL_SEARCH)


@pytest.fixture(scope="session")
def small_ae(small_cfg, tmp_path_factory):
    from nases.search import run_pretrain

    out = tmp_path_factory.mktemp("small_ae")
    ae, _ = run_pretrain(small_cfg.replace(out_dir=str(out)))
    return ae


@pytest.fixture(scope="session")
def tiny_ae():
    """A briefly pretrained L=3 model for cheap plumbing tests."""
    ae = AutoencoderModel.create(SpaceConfig(3), embed_dim=4, hidden=8, seed=0)
    pretrain(ae, epochs=2, batch=16, lr=1e-3, seed=0, batches_per_epoch=4, holdout_size=32)
    return ae


@pytest.fixture
def rng():
    return np.random.default_rng(0)
