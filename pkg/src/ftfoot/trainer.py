"""Training loop, evaluation and checkpoint I/O.

A checkpoint is a directory holding ``manifest.json`` plus one raw
little-endian float32 blob per named tensor (model parameters and
optimizer moments).
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .fsm import FsmConfig, LossWeights, TransformSpec, TraversabilityNet, total_loss, weighted_bce
from .geometry import angular_error_deg
from .gfn import GfnConfig, frame_to_input
from .planner import freespace_metrics

log = logging.getLogger(__name__)

OPTIMIZERS = ("adaptive_moments", "sgd_momentum")


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    learning_rate: float = 1e-3
    optimizer: str = "adaptive_moments"
    momentum: float = 0.9
    lambda_ce: float = 1.0
    lambda_ss: float = 0.1
    lambda_sn: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0  # 0: final checkpoint only
    eval_every: int = 0  # 0: evaluate at the end only

    def __post_init__(self):
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_ce, self.lambda_ss, self.lambda_sn)


def config_hash(gfn: GfnConfig, fsm: FsmConfig) -> str:
    blob = json.dumps({"gfn": gfn.to_dict(), "fsm": fsm.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_model(gfn: GfnConfig | None = None, fsm: FsmConfig | None = None, seed: int = 0, dtype=torch.float32) -> TraversabilityNet:
    torch.manual_seed(seed)
    model = TraversabilityNet(gfn or GfnConfig(), fsm or FsmConfig())
    return model.to(dtype)


def make_optimizer(model, config: TrainConfig):
    params = [p for p in model.parameters() if p.requires_grad]
    if config.optimizer == "sgd_momentum":
        return torch.optim.SGD(params, lr=config.learning_rate, momentum=config.momentum)
    return torch.optim.Adam(params, lr=config.learning_rate, betas=(0.9, 0.999), eps=1e-8)


# ------------------------------------------------------------------ batches


@dataclass
class Batch:
    x: torch.Tensor  # (b, 4, h, w)
    footprint: torch.Tensor  # (b, 1, h, w)
    footprint_valid: torch.Tensor
    normals: torch.Tensor  # (b, 3, h, w)
    normals_valid: torch.Tensor
    traversable: torch.Tensor | None = None

    def select(self, idx) -> "Batch":
        idx = torch.as_tensor(np.asarray(idx))
        trav = None if self.traversable is None else self.traversable[idx]
        return Batch(self.x[idx], self.footprint[idx], self.footprint_valid[idx], self.normals[idx], self.normals_valid[idx], trav)

    def __len__(self):
        return self.x.shape[0]


def collate(samples, dtype=torch.float32) -> Batch:
    if not samples:
        raise ValueError("cannot collate an empty sample list")
    xs, fps, fvs, ns, nvs, trs = [], [], [], [], [], []
    have_trav = all(s.gt_traversable is not None for s in samples)
    for s in samples:
        xs.append(frame_to_input(s.frame))
        fps.append(torch.from_numpy(s.footprint.mask.astype(np.float64)))
        fvs.append(torch.from_numpy(s.footprint.valid))
        h, w = s.frame.shape
        if s.gt_normals is not None:
            ns.append(torch.from_numpy(s.gt_normals.normals))
            nvs.append(torch.from_numpy(s.gt_normals.validity))
        else:
            ns.append(torch.zeros(3, h, w, dtype=torch.float64))
            nvs.append(torch.zeros(1, h, w, dtype=torch.bool))
        if have_trav:
            trs.append(torch.from_numpy(np.asarray(s.gt_traversable, dtype=bool).reshape(1, h, w)))
    return Batch(
        torch.stack(xs).to(dtype),
        torch.stack(fps).to(dtype),
        torch.stack(fvs),
        torch.stack(ns).to(dtype),
        torch.stack(nvs),
        torch.stack(trs) if have_trav else None,
    )


def batch_indices(n: int, batch_size: int, step: int, seed: int) -> np.ndarray:
    """Indices for ``step``: seeded per-epoch permutations, wrapping across epochs."""
    start = step * batch_size
    out = []
    for pos in range(start, start + batch_size):
        epoch, offset = divmod(pos, n)
        perm = np.random.default_rng([seed, epoch]).permutation(n)
        out.append(perm[offset])
    return np.array(out)


def sample_transform(step: int, seed: int, width: int) -> TransformSpec:
    rng = np.random.default_rng([seed, step, 7])
    if rng.random() < 0.5:
        return TransformSpec("horizontal_flip")
    shift = int(np.floor(0.1 * width))
    return TransformSpec("translate", dx=int(rng.choice([-shift, shift])), dy=0)


# ------------------------------------------------------------------ training


def train_step(model: TraversabilityNet, optimizer, batch: Batch, tr: TransformSpec, weights: LossWeights) -> dict:
    model.train()
    optimizer.zero_grad(set_to_none=False)
    total, parts = total_loss(model, batch.x, batch.footprint, batch.footprint_valid, batch.normals, batch.normals_valid, tr, weights)
    for name, value in parts.items():
        if not torch.isfinite(value):
            raise FloatingPointError(f"non-finite {name} loss component")
    if not torch.isfinite(total):
        raise FloatingPointError("non-finite total loss")
    total.backward()
    optimizer.step()
    record = {k: float(v.detach()) for k, v in parts.items()}
    record["total"] = float(total.detach())
    return record


@torch.no_grad()
def predict(model: TraversabilityNet, x: torch.Tensor, batch_size: int = 8) -> dict:
    model.eval()
    outs = {"p_trav": [], "normals": []}
    for i in range(0, x.shape[0], batch_size):
        out = model(x[i : i + batch_size])
        outs["p_trav"].append(out["p_trav"])
        outs["normals"].append(out["normals"])
    return {k: torch.cat(v) for k, v in outs.items()}


def evaluate(model: TraversabilityNet, batch: Batch) -> dict:
    """Normal angular error, footprint BCE and freespace metrics vs the corridor."""
    dtype = next(model.parameters()).dtype
    out = predict(model, batch.x.to(dtype))
    p, n = out["p_trav"].double(), out["normals"].double()
    valid = batch.normals_valid
    cos = (n * batch.normals.double()).sum(1, keepdim=True).clamp(-1, 1)
    ang = torch.rad2deg(torch.arccos(cos))[valid]
    result = {
        "normal_angular_error_deg": float(ang.mean()) if ang.numel() else float("nan"),
        "footprint_bce": float(weighted_bce(p, batch.footprint.double(), batch.footprint_valid)),
    }
    if batch.traversable is not None:
        m = freespace_metrics((p > 0.5).numpy(), batch.traversable.numpy())
        result.update({f"trav_{k}": v for k, v in m.as_dict().items()})
    return result


@dataclass
class FitResult:
    model: TraversabilityNet
    history: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    checkpoint: Path | None = None


def fit(
    train_samples,
    config: TrainConfig,
    gfn: GfnConfig | None = None,
    fsm: FsmConfig | None = None,
    val_samples=None,
    out_dir=None,
    resume_from=None,
    stop_at: int | None = None,
) -> FitResult:
    """Train from scratch (or resume) for ``config.steps`` steps.

    ``stop_at`` ends the run early after that many steps while keeping the
    schedule of the full run, so a resumed run continues identically.
    """
    train_samples = list(train_samples)
    if not train_samples:
        raise ValueError("training dataset is empty")
    gfn, fsm = gfn or GfnConfig(), fsm or FsmConfig()
    torch.use_deterministic_algorithms(True)
    model = build_model(gfn, fsm, config.seed)
    optimizer = make_optimizer(model, config)
    start = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        apply_checkpoint(model, ckpt, optimizer=optimizer, expected_hash=config_hash(gfn, fsm))
        start = ckpt.step
    data = collate(train_samples)
    val = collate(list(val_samples)) if val_samples else None
    weights = config.loss_weights
    width = data.x.shape[-1]
    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / "log.jsonl", "a")
    result = FitResult(model)
    end = config.steps if stop_at is None else min(stop_at, config.steps)
    try:
        for step in range(start, end):
            idx = batch_indices(len(data), config.batch_size, step, config.seed)
            tr = sample_transform(step, config.seed, width)
            record = train_step(model, optimizer, data.select(idx), tr, weights)
            record["step"] = step + 1
            result.history.append(record)
            done = step + 1
            if val is not None and config.eval_every and done % config.eval_every == 0 and done != config.steps:
                ev = {"step": done, **evaluate(model, val)}
                result.evals.append(ev)
                record["eval"] = ev
            if log_file is not None:
                log_file.write(json.dumps({**record, "time": time.time()}) + "\n")
            if out_dir is not None and config.checkpoint_every and done % config.checkpoint_every == 0:
                save_checkpoint(out_dir / f"ckpt_{done:06d}", model, done, gfn, fsm, config, optimizer)
        if end == config.steps and val is not None:
            ev = {"step": end, **evaluate(model, val)}
            result.evals.append(ev)
            if log_file is not None:
                log_file.write(json.dumps({"step": end, "eval": ev, "time": time.time()}) + "\n")
        if out_dir is not None:
            result.checkpoint = save_checkpoint(out_dir / "final", model, end, gfn, fsm, config, optimizer)
    finally:
        if log_file is not None:
            log_file.close()
    return result


# ------------------------------------------------------------------ checkpoints


@dataclass
class Checkpoint:
    manifest: dict
    tensors: dict  # name -> float32 ndarray

    @property
    def step(self) -> int:
        return int(self.manifest["step"])

    @property
    def config_hash(self) -> str:
        return self.manifest["config_hash"]

    def configs(self):
        cfg = self.manifest["config"]
        return GfnConfig(**cfg["gfn"]), FsmConfig(**cfg["fsm"]), TrainConfig(**cfg["train"]) if cfg.get("train") else None


def _blob_name(name: str) -> str:
    return name.replace("/", "__") + ".bin"


def _optimizer_tensors(model, optimizer) -> tuple[dict, int]:
    tensors, step = {}, 0
    if optimizer is None:
        return tensors, step
    names = {id(p): n for n, p in model.named_parameters()}
    for group in optimizer.param_groups:
        for p in group["params"]:
            state = optimizer.state.get(p, {})
            for key, value in state.items():
                if key == "step":
                    step = int(value)
                elif torch.is_tensor(value):
                    tensors[f"optim/{names[id(p)]}/{key}"] = value
    return tensors, step


def save_checkpoint(path, model, step: int, gfn: GfnConfig, fsm: FsmConfig, train: TrainConfig | None = None, optimizer=None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = {n: p.detach() for n, p in model.named_parameters()}
    opt_tensors, opt_step = _optimizer_tensors(model, optimizer)
    tensors.update(opt_tensors)
    entries = []
    for name, t in tensors.items():
        arr = t.cpu().numpy().astype("<f4", order="C")  # keeps 0-d shapes
        fname = _blob_name(name)
        (path / fname).write_bytes(arr.tobytes())
        entries.append({"name": name, "shape": list(arr.shape), "file": fname, "nbytes": arr.nbytes})
    manifest = {
        "format": "ftfoot-checkpoint-1",
        "step": int(step),
        "optimizer_step": opt_step,
        "optimizer": train.optimizer if train else None,
        "config_hash": config_hash(gfn, fsm),
        "config": {"gfn": gfn.to_dict(), "fsm": fsm.to_dict(), "train": asdict(train) if train else None},
        "tensors": entries,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        entries = manifest["tensors"]
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"unreadable checkpoint manifest in {path}: {exc}") from exc
    tensors = {}
    for e in entries:
        blob = path / e["file"]
        expected = int(np.prod(e["shape"], dtype=np.int64)) * 4
        try:
            raw = blob.read_bytes()
        except OSError as exc:
            raise CheckpointError(f"tensor {e['name']}: missing blob {blob.name}") from exc
        if len(raw) != expected:
            raise CheckpointError(f"tensor {e['name']}: blob has {len(raw)} bytes, expected {expected}")
        tensors[e["name"]] = np.frombuffer(raw, dtype="<f4").reshape(e["shape"]).copy()
    return Checkpoint(manifest, tensors)


def apply_checkpoint(model, ckpt: Checkpoint, optimizer=None, expected_hash: str | None = None, force: bool = False) -> list[str]:
    """Copy checkpoint tensors into ``model`` (and ``optimizer``).

    On a config-hash or shape mismatch this raises unless ``force`` is set,
    in which case only tensors matching by name and shape are loaded.
    Returns the names that were not loaded.
    """
    params = dict(model.named_parameters())
    if expected_hash is not None and ckpt.config_hash != expected_hash and not force:
        raise CheckpointError(f"config hash mismatch: checkpoint {ckpt.config_hash}, model {expected_hash}")
    skipped = []
    loaded = set()
    with torch.no_grad():
        for name, arr in ckpt.tensors.items():
            if name.startswith("optim/"):
                continue
            p = params.get(name)
            if p is None or tuple(p.shape) != arr.shape:
                if not force:
                    have = None if p is None else tuple(p.shape)
                    raise CheckpointError(f"tensor {name}: checkpoint shape {arr.shape}, model shape {have}")
                skipped.append(name)
                continue
            p.copy_(torch.from_numpy(arr).to(p.dtype))
            loaded.add(name)
    missing = sorted(set(params) - loaded)
    if missing and not force:
        raise CheckpointError(f"checkpoint lacks tensors: {', '.join(missing)}")
    skipped.extend(missing)
    if optimizer is not None:
        step = int(ckpt.manifest.get("optimizer_step", 0))
        for group in optimizer.param_groups:
            for p in group["params"]:
                name = next(n for n, q in params.items() if q is p)
                state = {}
                for key in ("exp_avg", "exp_avg_sq", "momentum_buffer"):
                    arr = ckpt.tensors.get(f"optim/{name}/{key}")
                    if arr is not None:
                        state[key] = torch.from_numpy(arr.copy()).to(p.dtype)
                if state:
                    if "exp_avg" in state:
                        state["step"] = torch.tensor(float(step))
                    optimizer.state[p] = state
    return skipped


def model_from_checkpoint(path, dtype=torch.float32) -> tuple[TraversabilityNet, Checkpoint]:
    ckpt = load_checkpoint(path)
    gfn, fsm, _ = ckpt.configs()
    model = build_model(gfn, fsm, 0, dtype)
    apply_checkpoint(model, ckpt, expected_hash=config_hash(gfn, fsm))
    return model, ckpt
