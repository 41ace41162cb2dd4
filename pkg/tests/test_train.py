"""Trainer tests on small synthetic datasets: seeded determinism, NaN
divergence handling, checkpoint cadence, and the KL-dominated limit."""
import numpy as np
import pytest
import torch

from compbench.config import PolicyConfig
from compbench.controller import ControllerTarget
from compbench.episodes import Episode, EpisodeWriter, load_chunks
from compbench.geometry import Pose, StiffnessSpec, Wrench, rotvec_to_quat
from compbench.policy import PolicyError, load_checkpoint
from compbench.train import TrainResult, collate, dataset_stats, train
from compbench.world import ArmObservation, Observation


def synth_episode(path, steps=40, seed=0, cameras=(), image_size=16):
    rng = np.random.default_rng(seed)
    writer = EpisodeWriter(path, "wiping", seed, ["arm"], {"arm": 3},
                           cameras=cameras, image_size=image_size)
    spec = StiffnessSpec.diagonal(500.0)
    for t in range(steps):
        pos = np.array([0.4 + 0.05 * np.sin(t / 7.0),
                        0.02 * np.cos(t / 5.0), 0.25])
        quat = rotvec_to_quat([0, 0, 0.1 * np.sin(t / 9.0)])
        obs = Observation(time=t / 20.0, arms={"arm": ArmObservation(
            ee_pose=Pose(pos + rng.normal(0, 1e-3, 3), quat),
            ee_twist=np.zeros(6), wrench=Wrench(force=rng.normal(0, 0.1, 3)),
            wrench_raw=Wrench(), gripper=0.5, q=np.zeros(3),
            stiffness=spec)})
        target = ControllerTarget(pose=Pose(pos, quat), stiffness=spec,
                                  gripper=0.5)
        images = None
        if cameras:
            images = [rng.integers(0, 255, (image_size, image_size, 3),
                                   dtype=np.uint8) for _ in cameras]
        writer.record_step(obs, {"arm": target}, images=images)
    writer.finalize(success=True)
    return Episode.load(path)


def tiny_cfg(**kw):
    base = dict(chunk_size=5, latent_dim=4, width=16, heads=2, enc_layers=1,
                dec_layers=1, lr=1e-3, epochs=6, batch_size=8,
                samples_per_epoch=16, checkpoint_every=0, torch_threads=1,
                use_ft=True)
    base.update(kw)
    return PolicyConfig(**base)


@pytest.fixture(scope="module")
def episodes(tmp_path_factory):
    root = tmp_path_factory.mktemp("eps")
    return [synth_episode(root / f"e{i}.cpak", seed=i) for i in range(2)]


def make_dataset(episodes, chunk=5):
    stats = None
    return load_chunks(episodes, chunk)


def test_same_seed_identical_curves(episodes, tmp_path):
    cfg = tiny_cfg()
    a = train(make_dataset(episodes), cfg, tmp_path / "a", seed=3)
    b = train(make_dataset(episodes), cfg, tmp_path / "b", seed=3)
    assert a.curve == b.curve
    assert len(a.curve) == cfg.epochs


def test_different_seeds_differ(episodes, tmp_path):
    cfg = tiny_cfg(epochs=3)
    a = train(make_dataset(episodes), cfg, tmp_path / "a", seed=0)
    b = train(make_dataset(episodes), cfg, tmp_path / "b", seed=1)
    assert a.curve != b.curve


def test_curve_rows_decompose(episodes, tmp_path):
    cfg = tiny_cfg(epochs=2)
    res = train(make_dataset(episodes), cfg, tmp_path, seed=0)
    for row in res.curve:
        assert row["total"] == pytest.approx(
            row["l1"] + cfg.kl_weight * row["kl"], rel=1e-5)


def test_checkpoint_cadence_and_curve_file(episodes, tmp_path):
    cfg = tiny_cfg(epochs=5, checkpoint_every=2)
    res = train(make_dataset(episodes), cfg, tmp_path, seed=0)
    assert (tmp_path / "policy_ep00002.pt").exists()
    assert (tmp_path / "policy_ep00004.pt").exists()
    assert res.checkpoint == tmp_path / "policy.pt"
    assert res.checkpoint.exists()
    lines = (tmp_path / "curve.csv").read_text().strip().splitlines()
    assert lines[0] == "epoch,l1,kl,total"
    assert len(lines) == 1 + cfg.epochs


def test_nan_dataset_halts_with_last_good_checkpoint(tmp_path):
    # poison one recorded action in place: the pose types reject non-finite
    # values at construction, so damage has to be simulated post hoc
    ep = synth_episode(tmp_path / "bad.cpak", steps=30)
    off, _ = ep.layout["arm/act_pos"]
    ep.data[4, off] = np.nan
    res = train(load_chunks([ep], 5), tiny_cfg(), tmp_path / "out", seed=0)
    assert res.halted
    assert res.epochs_run < tiny_cfg().epochs
    assert all(np.isfinite(list(row.values())).all() for row in res.curve)
    # the checkpoint must still exist and hold usable weights
    policy, meta = load_checkpoint(res.checkpoint)
    assert meta["extra"]["epoch"] == res.epochs_run


def test_posterior_collapses_under_huge_beta(episodes, tmp_path):
    cfg = tiny_cfg(kl_weight=1e6, epochs=60, lr=3e-3)
    res = train(make_dataset(episodes), cfg, tmp_path, seed=0)
    assert not res.halted
    policy, _ = load_checkpoint(res.checkpoint)
    ds = make_dataset(episodes)
    batch = collate([ds.sample(i) for i in range(16)], use_ft=True)
    with torch.no_grad():
        mu, _ = policy.encode_posterior(batch["actions"], batch["mask"],
                                        batch["proprio"], batch["ft"])
    assert float(mu.abs().mean()) < 0.05


def test_training_with_images(tmp_path):
    eps = [synth_episode(tmp_path / f"im{i}.cpak", steps=20, seed=i,
                         cameras=("front",), image_size=16)
           for i in range(2)]
    cfg = tiny_cfg(epochs=2, samples_per_epoch=8)
    res = train(load_chunks(eps, 5), cfg, tmp_path / "out", seed=0)
    assert not res.halted
    policy, meta = load_checkpoint(res.checkpoint)
    assert meta["cameras"] == ["front"]
    imgs = torch.rand(1, 1, 3, 16, 16)
    chunk = policy.infer(imgs, torch.zeros(1, 8), torch.zeros(1, 6))
    assert chunk.shape == (1, 5, 19)


def test_chunk_mismatch_rejected(episodes, tmp_path):
    with pytest.raises(ValueError, match="chunk"):
        train(load_chunks(episodes, 4), tiny_cfg(), tmp_path, seed=0)


def test_dataset_stats_fall_back_to_identity(episodes):
    stats = dataset_stats(load_chunks(episodes, 5))
    assert np.allclose(stats["proprio"].mean, 0.0)
    assert np.allclose(stats["proprio"].std, 1.0)
    assert stats["proprio"].mean.shape == (8,)
    assert stats["ft"].mean.shape == (6,)
