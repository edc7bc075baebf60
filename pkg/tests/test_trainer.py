import json

import numpy as np
import pytest
import torch

from ftfoot.fsm import FsmConfig, LossWeights, TransformSpec
from ftfoot.gfn import GfnConfig
from ftfoot.synthdata import generate_corpus
from ftfoot.trainer import (
    CheckpointError,
    TrainConfig,
    apply_checkpoint,
    batch_indices,
    build_model,
    collate,
    config_hash,
    evaluate,
    fit,
    load_checkpoint,
    make_optimizer,
    model_from_checkpoint,
    sample_transform,
    save_checkpoint,
    train_step,
)

GFN = GfnConfig(num_stages=2, channels=(8, 16), strides=(1, 2), fusion_channels=4)
FSM = FsmConfig(grid=(8, 8))


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(12, seed=3, width=32, height=32)


def dir_bytes(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(steps=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError, match="optimizer"):
        TrainConfig(optimizer="lbfgs")


def test_batch_indices_cover_each_epoch():
    seen = np.concatenate([batch_indices(10, 5, s, seed=1) for s in range(2)])
    assert sorted(seen.tolist()) == list(range(10))
    assert np.array_equal(batch_indices(10, 5, 3, 1), batch_indices(10, 5, 3, 1))


def test_transform_schedule():
    kinds = {sample_transform(s, 0, 64).kind for s in range(40)}
    assert kinds == {"horizontal_flip", "translate"}
    shifts = {sample_transform(s, 0, 64).dx for s in range(40) if sample_transform(s, 0, 64).kind == "translate"}
    assert shifts <= {-6, 6}


@pytest.mark.parametrize("optimizer", ["adaptive_moments", "sgd_momentum"])
def test_zero_weights_leave_parameters_unchanged(corpus, optimizer):
    model = build_model(GFN, FSM, seed=0)
    opt = make_optimizer(model, TrainConfig(optimizer=optimizer))
    before = {n: p.detach().clone() for n, p in model.named_parameters()}
    batch = collate(corpus[:2])
    for s in range(3):
        train_step(model, opt, batch, sample_transform(s, 0, 32), LossWeights(0.0, 0.0, 0.0))
    for n, p in model.named_parameters():
        assert torch.equal(p, before[n]), n


def test_single_sample_overfit(corpus):
    sample = corpus[0]
    result = fit([sample], TrainConfig(steps=200, batch_size=1, learning_rate=1e-2), GFN, FSM)
    bce = evaluate(result.model, collate([sample]))["footprint_bce"]
    assert bce < 0.05


def test_non_finite_loss_names_component(corpus):
    model = build_model(GFN, FSM)
    opt = make_optimizer(model, TrainConfig())
    batch = collate(corpus[:1])
    batch.normals[:] = float("nan")
    with pytest.raises(FloatingPointError, match="sn"):
        train_step(model, opt, batch, TransformSpec("identity"), LossWeights())


def test_logged_total_is_weighted_sum(corpus, tmp_path):
    cfg = TrainConfig(steps=6, batch_size=2, lambda_ce=0.7, lambda_ss=0.3, lambda_sn=1.9)
    fit(corpus[:4], cfg, GFN, FSM, out_dir=tmp_path)
    lines = [json.loads(x) for x in (tmp_path / "log.jsonl").read_text().splitlines()]
    steps = [r for r in lines if "total" in r]
    assert [r["step"] for r in steps] == list(range(1, 7))
    for r in steps:
        assert abs(r["total"] - (0.7 * r["ce"] + 0.3 * r["ss"] + 1.9 * r["sn"])) <= 1e-6 * max(1.0, r["total"])


def test_logged_total_is_weighted_sum_fp64(corpus):
    model = build_model(GFN, FSM, dtype=torch.float64)
    opt = make_optimizer(model, TrainConfig())
    batch = collate(corpus[:2], dtype=torch.float64)
    w = LossWeights(0.7, 0.3, 1.9)
    for s in range(3):
        r = train_step(model, opt, batch, sample_transform(s, 0, 32), w)
        assert abs(r["total"] - (w.ce * r["ce"] + w.ss * r["ss"] + w.sn * r["sn"])) <= 1e-9


def test_empty_dataset_is_fatal():
    with pytest.raises(ValueError, match="empty"):
        fit([], TrainConfig(steps=1), GFN, FSM)


def test_full_run_determinism(corpus, tmp_path):
    cfg = TrainConfig(steps=8, batch_size=3, seed=4)
    a = fit(corpus[:6], cfg, GFN, FSM, out_dir=tmp_path / "a")
    b = fit(corpus[:6], cfg, GFN, FSM, out_dir=tmp_path / "b")
    assert dir_bytes(a.checkpoint) == dir_bytes(b.checkpoint)
    c = fit(corpus[:6], TrainConfig(steps=8, batch_size=3, seed=5), GFN, FSM, out_dir=tmp_path / "c")
    assert dir_bytes(a.checkpoint) != dir_bytes(c.checkpoint)


@pytest.mark.parametrize("optimizer", ["adaptive_moments", "sgd_momentum"])
def test_resume_reproduces_uninterrupted_run(corpus, tmp_path, optimizer):
    cfg = TrainConfig(steps=10, batch_size=2, seed=2, optimizer=optimizer)
    full = fit(corpus[:6], cfg, GFN, FSM, out_dir=tmp_path / "full")
    first = fit(corpus[:6], cfg, GFN, FSM, out_dir=tmp_path / "first", stop_at=4)
    assert load_checkpoint(first.checkpoint).step == 4
    second = fit(corpus[:6], cfg, GFN, FSM, out_dir=tmp_path / "second", resume_from=first.checkpoint)
    assert [h["step"] for h in second.history] == list(range(5, 11))
    for a, b in zip(full.history[4:], second.history):
        assert a == b
    assert dir_bytes(full.checkpoint) == dir_bytes(second.checkpoint)


def test_checkpoint_round_trip_eval(corpus, tmp_path):
    res = fit(corpus[:4], TrainConfig(steps=3, batch_size=2), GFN, FSM, out_dir=tmp_path)
    val = collate(corpus[8:])
    before = evaluate(res.model, val)
    model, ckpt = model_from_checkpoint(res.checkpoint)
    after = evaluate(model, val)
    for k, v in before.items():
        assert abs(v - after[k]) <= 1e-6, k
    assert ckpt.step == 3 and ckpt.config_hash == config_hash(GFN, FSM)


def test_save_load_save_identical_bytes(tmp_path):
    model = build_model(GFN, FSM, seed=9)
    save_checkpoint(tmp_path / "a", model, 5, GFN, FSM, TrainConfig())
    model2, _ = model_from_checkpoint(tmp_path / "a")
    save_checkpoint(tmp_path / "b", model2, 5, GFN, FSM, TrainConfig())
    assert dir_bytes(tmp_path / "a") == dir_bytes(tmp_path / "b")
    ck = load_checkpoint(tmp_path / "a")
    for n, p in model.named_parameters():
        assert np.array_equal(ck.tensors[n], p.detach().numpy())


def test_truncated_blob_names_tensor(tmp_path):
    model = build_model(GFN, FSM)
    path = save_checkpoint(tmp_path / "c", model, 1, GFN, FSM)
    manifest = json.loads((path / "manifest.json").read_text())
    victim = manifest["tensors"][3]
    blob = path / victim["file"]
    blob.write_bytes(blob.read_bytes()[:-4])
    with pytest.raises(CheckpointError, match=victim["name"].replace(".", r"\.")):
        load_checkpoint(path)


def test_missing_manifest(tmp_path):
    with pytest.raises(CheckpointError, match="manifest"):
        load_checkpoint(tmp_path)


def test_hash_mismatch_and_forced_partial_load(tmp_path):
    small = build_model(GFN, FSM, seed=1)
    path = save_checkpoint(tmp_path / "c", small, 1, GFN, FSM)
    other_gfn = GfnConfig(num_stages=2, channels=(8, 12), strides=(1, 2), fusion_channels=4)
    other = build_model(other_gfn, FSM, seed=2)
    ck = load_checkpoint(path)
    with pytest.raises(CheckpointError, match="hash mismatch"):
        apply_checkpoint(other, ck, expected_hash=config_hash(other_gfn, FSM))
    skipped = apply_checkpoint(other, ck, expected_hash=config_hash(other_gfn, FSM), force=True)
    assert skipped
    src = dict(small.named_parameters())
    for n, p in other.named_parameters():
        if n in skipped:
            assert n not in src or tuple(src[n].shape) != tuple(p.shape)
        else:
            assert torch.equal(p, src[n]), n


def test_smoothed_training_loss_non_increasing_at_evals(corpus):
    # full batches so the only step-to-step noise is the consistency transform
    cfg = TrainConfig(steps=200, batch_size=8, eval_every=25, seed=0)
    res = fit(corpus[:8], cfg, GFN, FSM, val_samples=corpus[8:])
    total = np.array([h["total"] for h in res.history])
    smoothed = np.convolve(total, np.ones(5) / 5, mode="valid")  # smoothed[i] ends at step i + 5
    at_evals = [smoothed[e["step"] - 5] for e in res.evals]
    assert len(at_evals) == 8
    assert all(b <= a for a, b in zip(at_evals, at_evals[1:])), at_evals
    assert {"normal_angular_error_deg", "footprint_bce", "trav_iou"} <= set(res.evals[-1])
