import copy
import json
import os

import numpy as np
import pytest
import torch

from latentaug.data import BenchmarkDataset, images_to_array
from latentaug.losses import LossWeights
from latentaug.train import Trainer, TrainConfig, infer, load_real_encoder


def make_config(tiny_dataset, real_encoder_path, **kw):
    base = dict(
        data_dir=tiny_dataset,
        real_encoder_path=real_encoder_path,
        epochs=1,
        batch_identities=4,
        seed=0,
    )
    base.update(kw)
    return TrainConfig(**base)


class TestTrainStep:
    def test_loss_decreases_over_50_steps(self, tiny_dataset, real_encoder_path):
        finals, firsts = [], []
        for seed in (0, 1, 2):
            tr = Trainer(make_config(tiny_dataset, real_encoder_path, seed=seed,
                                     lr=1e-3))
            first = None
            for _ in range(50):
                b = tr.train_step()
                if first is None:
                    first = float(b.total.detach())
            firsts.append(first)
            finals.append(float(b.total.detach()))
        assert np.mean(finals) < np.mean(firsts)

    def test_zero_weights_freeze_parameters(self, tiny_dataset, real_encoder_path):
        cfg = make_config(tiny_dataset, real_encoder_path,
                          weights=LossWeights(0.0, 0.0, 0.0))
        tr = Trainer(cfg)
        before = [p.detach().clone() for p in tr.trainable_parameters()]
        tr.train_step()
        for p, b in zip(tr.trainable_parameters(), before):
            assert torch.equal(p.detach(), b)

    def test_identical_seeds_identical_losses(self, tiny_dataset, real_encoder_path):
        runs = []
        for _ in range(2):
            tr = Trainer(make_config(tiny_dataset, real_encoder_path, seed=3))
            runs.append([tr.train_step().floats() for _ in range(5)])
        assert runs[0] == runs[1]

    def test_real_encoder_gradient_free(self, tiny_dataset, real_encoder_path):
        tr = Trainer(make_config(tiny_dataset, real_encoder_path))
        tr.train_step()
        for p in tr.real_encoder.parameters():
            assert p.grad is None or float(p.grad.abs().max()) == 0.0

    def test_trainable_set_constant(self, tiny_dataset, real_encoder_path):
        tr = Trainer(make_config(tiny_dataset, real_encoder_path))
        ids = {id(p) for p in tr.trainable_parameters()}
        for _ in range(3):
            tr.train_step()
        assert {id(p) for p in tr.trainable_parameters()} == ids

    def test_student_only_mode(self, tiny_dataset):
        cfg = TrainConfig(data_dir=tiny_dataset, epochs=1, batch_identities=4,
                          seed=0, student_only=True)
        tr = Trainer(cfg)
        b = tr.train_step()
        f = b.floats()
        assert f["domain"] == 0.0 and f["distill"] == 0.0 and f["binary"] > 0.0


class TestWarmStart:
    def test_student_matches_real_encoder(self, tiny_dataset, real_encoder_path):
        tr = Trainer(make_config(tiny_dataset, real_encoder_path))
        ref = load_real_encoder(real_encoder_path).state_dict()
        for k, v in tr.student.state_dict().items():
            assert torch.equal(v, ref[k])

    def test_teachers_near_but_not_equal(self, tiny_dataset, real_encoder_path):
        tr = Trainer(make_config(tiny_dataset, real_encoder_path))
        ref = load_real_encoder(real_encoder_path).state_dict()
        for t in tr.teachers.values():
            state = t.state_dict()
            assert any(not torch.equal(state[k], ref[k]) for k in ref)
            for k in ref:
                assert float((state[k] - ref[k]).abs().max()) < 0.1

    def test_teachers_mutually_distinct(self, tiny_dataset, real_encoder_path):
        tr = Trainer(make_config(tiny_dataset, real_encoder_path))
        x = torch.rand(2, 3, 32, 32, generator=torch.Generator().manual_seed(0))
        outs = [tr.teachers[str(d)](x) for d in tr.train_domains]
        for i in range(len(outs)):
            for j in range(i + 1, len(outs)):
                assert not torch.equal(outs[i], outs[j])

    def test_disabled_keeps_random_init(self, tiny_dataset, real_encoder_path):
        cfg = make_config(tiny_dataset, real_encoder_path, warm_start=False)
        tr = Trainer(cfg)
        ref = load_real_encoder(real_encoder_path).state_dict()
        state = tr.student.state_dict()
        assert any(not torch.allclose(state[k], ref[k])
                   for k in ref if state[k].numel())


class TestFit:
    def test_epochs_zero_rejected(self, tiny_dataset, real_encoder_path):
        with pytest.raises(ValueError):
            Trainer(make_config(tiny_dataset, real_encoder_path, epochs=0))

    def test_metrics_log_and_hash(self, tiny_dataset, real_encoder_path, tmp_path):
        cfg = make_config(tiny_dataset, real_encoder_path)
        tr = Trainer(cfg)
        ckpt = tr.fit(str(tmp_path))
        blob = torch.load(ckpt, weights_only=False)
        assert blob["config_hash"] == cfg.hash()
        lines = open(tmp_path / "metrics.jsonl").read().splitlines()
        steps = [json.loads(x) for x in lines if "step" in json.loads(x)]
        epochs = [json.loads(x) for x in lines if "epoch" in json.loads(x)]
        assert len(steps) == tr.steps_per_epoch()
        assert len(epochs) == 1 and 0.0 <= epochs[0]["val_auc"] <= 1.0

    def test_resume_matches_uninterrupted(self, tiny_dataset, real_encoder_path,
                                          tmp_path):
        cfg = make_config(tiny_dataset, real_encoder_path, epochs=2,
                          checkpoint_every=1)
        full = Trainer(copy.deepcopy(cfg))
        full_ckpt = full.fit(str(tmp_path / "full"))

        part = Trainer(copy.deepcopy(cfg))
        part.config.epochs = 1
        part.fit(str(tmp_path / "part"))
        resumed = Trainer.resume(str(tmp_path / "part" / "checkpoint.pt"))
        resumed.config.epochs = 2
        resumed_ckpt = resumed.fit(str(tmp_path / "resumed"))

        full_log = [json.loads(x) for x in open(tmp_path / "full" / "metrics.jsonl")]
        res_log = [json.loads(x) for x in open(tmp_path / "resumed" / "metrics.jsonl")]
        full_steps = {r["step"]: r for r in full_log if "step" in r}
        res_steps = {r["step"]: r for r in res_log if "step" in r}
        for step, rec in res_steps.items():
            assert abs(rec["total"] - full_steps[step]["total"]) < 1e-6

        a = torch.load(full_ckpt, weights_only=False)["student"]
        b = torch.load(resumed_ckpt, weights_only=False)["student"]
        for k in a:
            assert torch.allclose(a[k], b[k], atol=1e-6)


@pytest.fixture(scope="module")
def trained(tiny_dataset, real_encoder_path, tmp_path_factory):
    cfg = make_config(tiny_dataset, real_encoder_path)
    tr = Trainer(cfg)
    out = tmp_path_factory.mktemp("trained")
    return tr.fit(str(out)), tiny_dataset


class TestInfer:
    def test_probabilities_in_unit_interval(self, trained):
        ckpt, data_dir = trained
        ds = BenchmarkDataset(data_dir)
        probs = infer(ckpt, images_to_array(ds.samples("test")[:8]))
        assert probs.min() >= 0.0 and probs.max() <= 1.0

    def test_student_only_contract(self, trained, tmp_path):
        # deleting teacher parameters must not change inference output
        ckpt, data_dir = trained
        ds = BenchmarkDataset(data_dir)
        imgs = images_to_array(ds.samples("test")[:4])
        ref = infer(ckpt, imgs)
        blob = torch.load(ckpt, weights_only=False)
        for key in ("teachers", "fusion", "domain_head", "optimizer"):
            blob.pop(key, None)
        stripped = tmp_path / "stripped.pt"
        torch.save(blob, str(stripped))
        assert np.array_equal(infer(str(stripped), imgs), ref)

    def test_batch_equals_per_sample(self, trained):
        ckpt, data_dir = trained
        ds = BenchmarkDataset(data_dir)
        imgs = images_to_array(ds.samples("test")[:6])
        batched = infer(ckpt, imgs)
        single = np.concatenate([infer(ckpt, imgs[i : i + 1]) for i in range(6)])
        assert np.allclose(batched, single, atol=1e-6)

    def test_corrupt_checkpoint(self, tmp_path):
        bad = tmp_path / "bad.pt"
        bad.write_bytes(b"not a checkpoint")
        with pytest.raises(RuntimeError):
            infer(str(bad), np.zeros((1, 32, 32, 3), dtype=np.float32))


def test_load_real_encoder_frozen(real_encoder_path):
    enc = load_real_encoder(real_encoder_path)
    assert all(not p.requires_grad for p in enc.parameters())
