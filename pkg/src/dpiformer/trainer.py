"""AdamW training loop with linear warmup/decay, validation tracking and checkpoints."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import model as M
from ._io import atomic_write_text
from .checkpoint import load_tensors, save_tensors, validate_params
from .errors import InvalidSchedule, MissingCache, NonFiniteLoss, ShapeMismatch
from .numerics import cross_entropy
from .tokenizer import TokenizedDataset


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 2e-5
    epochs: int = 5
    batch_size: int = 32
    warmup_fraction: float = 0.1
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip_norm: Optional[float] = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.grad_clip_norm is not None and not self.grad_clip_norm > 0:
            raise ValueError("grad_clip_norm must be positive or null")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise KeyError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class OptimizerState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


@dataclass
class TrainHistory:
    epochs: List[dict] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)
    lr_trace: Optional[List[float]] = None

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {"epochs": self.epochs}
        if self.lr_trace is not None:
            d["lr_trace"] = self.lr_trace
        if include_timing:
            d["seconds"] = self.seconds
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"


@dataclass
class TrainResult:
    params: M.Parameters
    state: OptimizerState
    best_params: M.Parameters
    best_epoch: int
    total_steps: int
    checkpoints: Dict[str, Path] = field(default_factory=dict)


def lr_at(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup from 0 to ``base_lr`` over ``warmup_steps``, then linear decay to 0."""
    if not 0 <= warmup_steps < total_steps:
        raise InvalidSchedule(f"need 0 <= warmup_steps ({warmup_steps}) < total_steps ({total_steps})")
    if not 0 <= step <= total_steps:
        raise InvalidSchedule(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    return base_lr * (total_steps - step) / (total_steps - warmup_steps)


def decayed_names(params) -> set:
    """Weight decay applies to matrices only; biases and layer-norm vectors are skipped."""
    return {k for k, p in params.items() if p.ndim >= 2}


def adamw_step(params, grads, state: OptimizerState, lr: float, config: TrainConfig,
               decay: Optional[set] = None):
    """One decoupled-weight-decay Adam update, in place. Returns ``(params, state)``."""
    if decay is None:
        decay = decayed_names(params)
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ShapeMismatch(f"gradient {k}: {g.shape} vs parameter {params[k].shape}")
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for k, theta in params.items():
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
        if k in decay and config.weight_decay:
            update = update + (lr * config.weight_decay) * theta
        theta -= update.astype(theta.dtype, copy=False)
    return params, state


def clip_global_norm(grads, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.dot(g.reshape(-1).astype(np.float64), g.reshape(-1).astype(np.float64)))
                          for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-6)
        for g in grads.values():
            g *= g.dtype.type(scale)
    return total


def total_steps_for(n_train: int, config: TrainConfig) -> int:
    return config.epochs * math.ceil(n_train / config.batch_size)


def predict_logits(params, config: M.ModelConfig, data: TokenizedDataset, batch_size: int) -> np.ndarray:
    out = []
    for start in range(0, len(data), batch_size):
        ids, mask, _ = data.batch(range(start, min(start + batch_size, len(data))))
        out.append(M.forward(params, config, ids, mask, mode="eval")[0])
    if not out:
        return np.zeros((0, config.num_labels))
    return np.concatenate(out, axis=0)


def _validate(params, config, data, batch_size):
    if len(data) == 0:
        return None, None
    logits = predict_logits(params, config, data, batch_size)
    loss, _ = cross_entropy(logits.astype(np.float64), data.labels)
    acc = float(np.mean(np.argmax(logits, axis=1) == data.labels))
    return loss, acc


def _rngs(seed: int):
    a, b = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.PCG64(a)), np.random.Generator(np.random.PCG64(b))


def save_checkpoint(path, params, state: OptimizerState, model_config: M.ModelConfig,
                    train_config: Optional[TrainConfig], extra: Optional[dict] = None) -> None:
    """Parameters, AdamW moments, step counter and both configs in one file."""
    tensors = dict(params)
    if state is not None:
        tensors.update({f"adam.m.{k}": a for k, a in state.m.items()})
        tensors.update({f"adam.v.{k}": a for k, a in state.v.items()})
    meta = {
        "model_config": model_config.to_dict(),
        "train_config": train_config.to_dict() if train_config else None,
        "step": state.step if state is not None else None,
    }
    meta.update(extra or {})
    save_tensors(path, tensors, meta)


def load_checkpoint(path):
    """``(params, state, model_config, train_config, manifest)``; ``state`` is None if absent."""
    tensors, manifest = load_tensors(path)
    model_config = M.ModelConfig.from_dict(manifest["model_config"])
    tc = manifest.get("train_config")
    train_config = TrainConfig.from_dict(tc) if tc else None
    params = validate_params({k: v for k, v in tensors.items() if not k.startswith("adam.")}, model_config)
    state = None
    if manifest.get("step") is not None:
        m = validate_params({k[7:]: v for k, v in tensors.items() if k.startswith("adam.m.")}, model_config)
        v = validate_params({k[7:]: v for k, v in tensors.items() if k.startswith("adam.v.")}, model_config)
        state = OptimizerState(m, v, int(manifest["step"]))
    return params, state, model_config, train_config, manifest


def train(model_config: M.ModelConfig, train_config: TrainConfig, train_set: TokenizedDataset,
          val_set: TokenizedDataset, out_dir=None, *, resume_from=None,
          log: Optional[Callable[[str], None]] = None, keep_epoch_checkpoints: bool = False,
          dtype=np.float32, class_names: Optional[list] = None, trace_lr: bool = False):
    """Train from scratch (or from ``resume_from``) and return ``(TrainResult, TrainHistory)``.

    With ``out_dir`` set, ``final.ckpt`` is rewritten after every epoch,
    ``best.ckpt`` whenever validation accuracy improves (earliest epoch wins a
    tie), and ``history.json`` at the end.
    """
    if train_set.n_classes > model_config.num_labels or (
            len(train_set) and int(train_set.labels.max()) >= model_config.num_labels):
        raise ShapeMismatch(
            f"data has {train_set.n_classes} classes, model num_labels is {model_config.num_labels}")
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    tc = train_config
    steps_per_epoch = math.ceil(len(train_set) / tc.batch_size)
    total_steps = tc.epochs * steps_per_epoch
    warmup_steps = int(tc.warmup_fraction * total_steps)
    lr_at(0, total_steps, warmup_steps, tc.base_lr)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    shuffle_rng, dropout_rng = _rngs(tc.seed)
    history = TrainHistory(lr_trace=[] if trace_lr else None)
    start_epoch = 0
    best_acc, best_epoch, best_params = -1.0, -1, None
    if resume_from is not None:
        params, state, mc, saved_tc, man = load_checkpoint(resume_from)
        if state is None:
            raise MissingCache(f"{resume_from} holds no optimizer state")
        if mc != model_config or saved_tc != tc:
            raise ShapeMismatch("resume checkpoint was written with different configs")
        params = {k: p.astype(dtype) for k, p in params.items()}
        state.m = {k: a.astype(dtype) for k, a in state.m.items()}
        state.v = {k: a.astype(dtype) for k, a in state.v.items()}
        shuffle_rng.bit_generator.state = man["rng"]["shuffle"]
        dropout_rng.bit_generator.state = man["rng"]["dropout"]
        start_epoch = man["epochs_completed"]
        history.epochs = list(man["history"]["epochs"])
        history.seconds = list(man["history"].get("seconds", []))
        if trace_lr:
            history.lr_trace = list(man["history"].get("lr_trace") or [])
        best_acc, best_epoch = man["best"]["val_accuracy"], man["best"]["epoch"]
        best_path = Path(resume_from).with_name("best.ckpt")
        if best_path.exists():
            bp, _, _, _, bman = load_checkpoint(best_path)
            if bman.get("epochs_completed") == best_epoch + 1:
                best_params = {k: p.astype(dtype) for k, p in bp.items()}
        if best_params is None:
            best_params = {k: p.copy() for k, p in params.items()}
    else:
        params = M.init_parameters(model_config, dtype=dtype)
        state = OptimizerState.zeros_like(params)
    decay = decayed_names(params)

    def checkpoint_meta(epochs_completed):
        return {
            "epochs_completed": epochs_completed,
            "rng": {"shuffle": shuffle_rng.bit_generator.state,
                    "dropout": dropout_rng.bit_generator.state},
            "history": history.to_dict(),
            "best": {"epoch": best_epoch, "val_accuracy": best_acc},
            "class_names": class_names,
            "total_steps": total_steps,
            "warmup_steps": warmup_steps,
        }

    checkpoints = {}
    for epoch in range(start_epoch, tc.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(train_set))
        loss_sum = 0.0
        for start in range(0, len(order), tc.batch_size):
            idx = order[start:start + tc.batch_size]
            ids, mask, labels = train_set.batch(idx)
            loss, grads, _ = M.loss_and_grads(params, model_config, ids, mask, labels, rng=dropout_rng)
            if not math.isfinite(loss):
                raise NonFiniteLoss(state.step, loss)
            if tc.grad_clip_norm is not None:
                clip_global_norm(grads, tc.grad_clip_norm)
            lr = lr_at(state.step, total_steps, warmup_steps, tc.base_lr)
            if history.lr_trace is not None:
                history.lr_trace.append(lr)
            adamw_step(params, grads, state, lr, tc, decay)
            loss_sum += loss * len(idx)
        val_loss, val_acc = _validate(params, model_config, val_set, tc.batch_size)
        entry = {
            "epoch": epoch + 1,
            "train_loss": loss_sum / len(order),
            "val_loss": val_loss,
            "val_accuracy": val_acc,
            "steps": state.step,
        }
        history.epochs.append(entry)
        history.seconds.append(time.perf_counter() - t0)
        score = val_acc if val_acc is not None else -entry["train_loss"]
        improved = best_params is None or score > best_acc
        if improved:
            best_acc, best_epoch = score, epoch
            best_params = {k: p.copy() for k, p in params.items()}
        if log is not None:
            va = "n/a" if val_acc is None else f"{100 * val_acc:.2f}%"
            vl = "n/a" if val_loss is None else f"{val_loss:.4f}"
            log(f"epoch {epoch + 1}/{tc.epochs} train_loss={entry['train_loss']:.4f} "
                f"val_loss={vl} val_acc={va} steps={state.step} ({history.seconds[-1]:.1f}s)")
        if out_dir is not None:
            meta = checkpoint_meta(epoch + 1)
            save_checkpoint(out_dir / "final.ckpt", params, state, model_config, tc, meta)
            checkpoints["final"] = out_dir / "final.ckpt"
            if improved:
                save_checkpoint(out_dir / "best.ckpt", params, state, model_config, tc, meta)
                checkpoints["best"] = out_dir / "best.ckpt"
            if keep_epoch_checkpoints:
                p = out_dir / f"epoch-{epoch + 1}.ckpt"
                save_checkpoint(p, params, state, model_config, tc, meta)
                checkpoints[f"epoch-{epoch + 1}"] = p

    if out_dir is not None:
        atomic_write_text(out_dir / "history.json", history.to_json())
        checkpoints["history"] = out_dir / "history.json"
    result = TrainResult(params, state, best_params, best_epoch, total_steps, checkpoints)
    return result, history
