import numpy as np
import pytest
import torch

from latentaug.data import build_dataset, generate_real
from latentaug.models import pretrain_real_encoder
from latentaug.train import save_real_encoder

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """20-identity, m=5 benchmark with domain 5 held out."""
    root = tmp_path_factory.mktemp("tiny_ds")
    build_dataset(str(root), identities=20, m=5, seed=0, hold_out=5)
    return str(root)


@pytest.fixture(scope="session")
def real_encoder_path(tmp_path_factory):
    reals = generate_real(20, 8, seed=999)
    enc, acc = pretrain_real_encoder(reals, epochs=30, seed=0)
    path = tmp_path_factory.mktemp("enc") / "real_encoder.pt"
    save_real_encoder(str(path), enc, acc, 0)
    return str(path)


@pytest.fixture(scope="session")
def tiny_checkpoint(tiny_dataset, real_encoder_path, tmp_path_factory):
    from latentaug.train import Trainer, TrainConfig

    cfg = TrainConfig(
        data_dir=tiny_dataset,
        real_encoder_path=real_encoder_path,
        epochs=2,
        batch_identities=4,
        seed=0,
    )
    out = tmp_path_factory.mktemp("tiny_run")
    return Trainer(cfg).fit(str(out))


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def trng():
    g = torch.Generator()
    g.manual_seed(42)
    return g
