import json

import numpy as np
import pytest

from losslab.checkpoint import load_checkpoint
from losslab.harness.config import RunConfig, changed_knobs, config_diff, load_config
from losslab.harness.data import (
    CIFAR_RECORD,
    DatasetFormatError,
    avg_pool,
    epoch_batches,
    load_cifar10_binary,
    make_dataset,
    random_crop,
    read_cifar10_records,
    tiny_images,
    two_moons,
)
from losslab.harness.export import read_heatmap_csv, read_pgm, write_heatmap, write_pgm
from losslab.harness.recipes import expand_recipe, recipe_params
from losslab.harness.train import train_run
from losslab.nn import dense_stack_layers
from losslab.repsim import SimilarityHeatmap

MOONS = {"kind": "two-moons", "n": 200, "noise": 0.1, "seed": 0}


def moons_config(**kw):
    base = dict(dataset=MOONS, network="moons-mlp", schedule={"kind": "constant", "lr": 0.05}, batch_size=20, epochs=3, seed=1)
    base.update(kw)
    return RunConfig(**base)


def cifar_bytes(labels, rng):
    recs = []
    for lab in labels:
        recs.append(bytes([lab]) + rng.integers(0, 256, 3072, dtype=np.uint8).tobytes())
    return b"".join(recs)


class TestData:
    def test_moons_split_disjoint_and_deterministic(self):
        d1, d2 = two_moons(300, 0.1, seed=4), two_moons(300, 0.1, seed=4)
        assert d1.x_train.tobytes() == d2.x_train.tobytes()
        assert len(d1.x_train) + len(d1.x_val) == 300
        rows = {r.tobytes() for r in d1.x_train}
        assert not any(r.tobytes() in rows for r in d1.x_val)

    def test_tiny_images_shape(self):
        d = tiny_images(n=100, seed=1)
        assert d.x_train.shape[1:] == (3, 16, 16) and d.is_image
        assert set(np.unique(d.y_train)) <= {0, 1}

    def test_cifar_records(self, tmp_path, rng):
        path = tmp_path / "batch.bin"
        path.write_bytes(cifar_bytes([3, 0, 9, 3], rng))
        labels, pix = read_cifar10_records(path)
        assert labels.tolist() == [3, 0, 9, 3] and pix.shape == (4, 3, 32, 32)
        raw = path.read_bytes()
        assert pix[1, 2, 0, 5] == raw[CIFAR_RECORD + 1 + 2 * 1024 + 5]

    def test_truncated_file_names_sizes(self, tmp_path, rng):
        path = tmp_path / "bad.bin"
        path.write_bytes(cifar_bytes([1, 2], rng)[:-10])
        with pytest.raises(DatasetFormatError, match=str(2 * CIFAR_RECORD - 10)):
            read_cifar10_records(path)

    def test_bad_label(self, tmp_path, rng):
        path = tmp_path / "bad.bin"
        path.write_bytes(cifar_bytes([12], rng))
        with pytest.raises(DatasetFormatError):
            read_cifar10_records(path)

    def test_pooling_oracle(self):
        # 2x2 checkerboard blocks pool to their block value
        img = np.kron(np.arange(256, dtype=float).reshape(16, 16), np.ones((2, 2)))
        x = np.broadcast_to(img, (1, 3, 32, 32))
        np.testing.assert_array_equal(avg_pool(x, 16)[0, 0], np.arange(256).reshape(16, 16))
        with pytest.raises(ValueError):
            avg_pool(x, 5)

    def test_subset_and_downsample(self, tmp_path, rng):
        path = tmp_path / "b.bin"
        path.write_bytes(cifar_bytes([0, 1, 5, 1, 0, 7, 1, 0, 1, 5], rng))
        d = load_cifar10_binary(path, classes=[1, 5], downsample=16, val_fraction=0.2)
        assert d.x_train.shape[1:] == (3, 16, 16)
        assert set(d.y_train) | set(d.y_val) <= {0, 1}
        assert len(d.x_train) + len(d.x_val) == 6
        assert 0 <= d.x_train.min() and d.x_train.max() <= 1
        assert len(d.meta["channel_mean"]) == 3

    def test_directory_layout_and_env(self, tmp_path, rng, monkeypatch):
        (tmp_path / "data_batch_1.bin").write_bytes(cifar_bytes([0, 1, 2], rng))
        (tmp_path / "test_batch.bin").write_bytes(cifar_bytes([3], rng))
        monkeypatch.setenv("LOSSLAB_DATA_DIR", str(tmp_path))
        d = make_dataset({"kind": "cifar10-binary"})
        assert len(d.x_train) == 3 and len(d.x_val) == 1 and d.n_classes == 10

    def test_random_crop_keeps_shape_and_content(self, rng):
        x = rng.normal(size=(4, 3, 8, 8))
        y = random_crop(x, 2, np.random.default_rng(0))
        assert y.shape == x.shape
        assert random_crop(x, 0, rng).tobytes() == x.tobytes()

    def test_epoch_batches_cover_all(self):
        batches = epoch_batches(23, 5, seed=3, epoch=2)
        assert sorted(np.concatenate(batches).tolist()) == list(range(23))
        assert [len(b) for b in batches] == [5, 5, 5, 5, 3]
        assert np.array_equal(np.concatenate(batches), np.concatenate(epoch_batches(23, 5, 3, 2)))


class TestConfig:
    def test_round_trip_file(self, tmp_path):
        cfg = moons_config()
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg.to_dict()))
        assert load_config(path) == cfg

    def test_unknown_keys_rejected(self):
        with pytest.raises(KeyError):
            RunConfig.from_dict({**moons_config().to_dict(), "bogus": 1})

    def test_unresolvable_names(self):
        with pytest.raises(KeyError):
            moons_config(network="resnet-9000")
        with pytest.raises(ValueError):
            moons_config(schedule={"kind": "mystery"})
        with pytest.raises(ValueError):
            moons_config(checkpoint_epochs=[7])
        with pytest.raises(ValueError):
            moons_config(checkpoint_epochs=["restarts"])

    def test_diff(self):
        a = moons_config()
        b = a.replace(optimizer={**a.optimizer, "weight_decay": 0.0})
        assert config_diff(a, b) == ["optimizer.weight_decay"]
        assert changed_knobs(a, b) == ["optimizer"]

    def test_restart_checkpoints(self):
        cfg = moons_config(schedule={"kind": "cosine_restarts", "eta_min": 0, "eta_max": 0.1, "t0": 10, "t_mult": 2}, epochs=200, checkpoint_epochs=["restarts"])
        assert cfg.resolved_checkpoint_epochs() == [10, 30, 70, 150]


class TestTrainRun:
    def test_zero_epochs_only_init(self, tmp_path):
        run = train_run(moons_config(epochs=0), tmp_path)
        assert list(run.checkpoints) == ["epoch-0"]
        assert sorted(p.name for p in tmp_path.glob("*.llab")) == ["epoch-0.llab"]

    def test_determinism_and_artifacts(self, tmp_path):
        cfg = moons_config(checkpoint_epochs=[1], checkpoint_iters=[5])
        train_run(cfg, tmp_path / "a")
        train_run(cfg, tmp_path / "b")
        for name in ("metrics.csv", "config.json", "epoch-1.llab", "iter-5.llab", "epoch-3.llab"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        ck = load_checkpoint(tmp_path / "a" / "epoch-3.llab")
        assert ck.meta["seed"] == 1 and ck.meta["dataset"] == MOONS
        header = (tmp_path / "a" / "metrics.csv").read_text().splitlines()[0]
        assert header == "epoch,iteration,lr,train_loss,train_acc,val_loss,val_acc"

    def test_divergence_flagged(self, tmp_path):
        run = train_run(moons_config(schedule={"kind": "constant", "lr": 1e6}, epochs=5), tmp_path)
        assert run.diverged
        assert (tmp_path / "DIVERGED").exists()
        assert (tmp_path / "metrics.csv").exists()

    def test_freeze_window(self):
        cfg = moons_config(freeze=[{"layers": "dense-stack", "start_iter": 0, "end_iter": 5}], checkpoint_iters=[5])
        run = train_run(cfg)
        layout = cfg.net().layout()
        w0, w5 = run.checkpoints["epoch-0"], run.checkpoints["iter-5"]
        for i in dense_stack_layers(cfg.net()):
            for role in ("weight", "bias"):
                sl = layout.block(i, role).slice
                assert w0[sl].tobytes() == w5[sl].tobytes()
        assert not np.array_equal(run.final, w0)


class TestExport:
    def test_pgm_round_trip(self, tmp_path):
        img = np.arange(12, dtype=np.uint8).reshape(3, 4)
        assert read_pgm(write_pgm(tmp_path / "a.pgm", img)).tolist() == img.tolist()
        assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n4 3\n255\n")

    def test_heatmap_files(self, tmp_path):
        h = SimilarityHeatmap(np.array([[1.0, 0.25], [0.5, 0.0]]), ["a", "b"], ["c", "d"])
        files = write_heatmap(h, tmp_path / "h")
        assert read_pgm(files["pgm"]).tolist() == [[255, 64], [128, 0]]
        back = read_heatmap_csv(files["csv"])
        assert back.matrix.tolist() == h.matrix.tolist() and back.labels_b == ["c", "d"]
        side = json.loads(files["json"].read_text())
        assert side["min"] == 0.0 and side["max"] == 1.0


class TestRecipes:
    def test_mode_zoo_expansion(self):
        plan = expand_recipe("mode-zoo")
        assert sorted(plan.runs) == list("ABCDEFG") and len(plan.jobs) == 6
        ref = plan.runs["G"]
        for m in "ABCDEF":
            assert len(changed_knobs(ref, plan.runs[m])) == 1
        assert plan.runs["E"].init_scale == 3 * ref.init_scale
        assert plan.runs["B"].optimizer["kind"] == "adam"
        assert plan.runs["F"].augment is False and ref.augment is True

    def test_warmup_freeze_expansion(self):
        plan = expand_recipe("warmup-freeze")
        assert sorted(plan.runs) == ["lb-fc-freeze", "lb-no-warmup", "lb-warmup", "sb"]
        lb, sb = plan.runs["lb-warmup"], plan.runs["sb"]
        peak = lb.schedule_spec().peak
        assert peak == pytest.approx(sb.schedule_spec().lr0 * lb.batch_size / sb.batch_size)
        assert plan.runs["lb-fc-freeze"].freeze[0]["end_iter"] == lb.schedule_spec().warmup_iters
        assert len(expand_recipe("warmup-compare").runs) == 3

    def test_sgdr_pairs_are_restarts(self):
        plan = expand_recipe("sgdr-vs-step", overrides={"epochs": 28, "t0": 4})
        assert plan.jobs[:3] == ["connect sgdr 4-12", "connect sgdr 4-28", "connect sgdr 12-28"]

    def test_overrides_checked(self):
        with pytest.raises(KeyError):
            recipe_params("mode-zoo", {"nonsense": 1})
        with pytest.raises(KeyError):
            expand_recipe("fig-99")

    def test_missing_upstream(self, tmp_path):
        from losslab.harness.recipes import MissingUpstreamError, run_recipe

        with pytest.raises(MissingUpstreamError):
            run_recipe("sgdr-plane", tmp_path, overrides={"upstream": str(tmp_path / "nowhere")})
