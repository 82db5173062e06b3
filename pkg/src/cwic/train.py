"""Rate-distortion objective, ADAM and the end-to-end training loop."""

from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from cwic import nets, quant
from cwic._backend import kernels
from cwic import tensor as T
from cwic.nets import ModelParams
from cwic.tensor import Tape, Tensor

log = logging.getLogger(__name__)

LR_LADDER = (1e-4, 1e-5, 1e-6)


@dataclass
class TrainConfig:
    gamma: float = 0.01
    r0: float = 0.25
    n: int = 64
    batch_size: int = 4
    max_iters: int = 2000           # per learning-rate stage
    total_iters: int | None = None  # across all stages
    lr_ladder: tuple = LR_LADDER
    seed: int = 0
    patch_size: int = 128
    importance_map_enabled: bool = True
    rate_threshold: float | None = None  # overrides the r0-derived threshold
    window: int = 50
    patience: int = 3

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.n not in nets.LEVELS_FOR_N:
            raise ValueError(f"n must be 64 or 128, got {self.n}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.lr_ladder = tuple(float(v) for v in self.lr_ladder)

    @property
    def L(self) -> int:
        return nets.LEVELS_FOR_N[self.n]

    def threshold(self, h: int, w: int) -> float:
        """Rate threshold r on the importance-map sum for an h x w code."""
        if self.rate_threshold is not None:
            return float(self.rate_threshold)
        scale = 1.0 if self.n == 64 else 0.5
        return scale * self.r0 * h * w

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, (tuple, list)):
                value = ",".join(repr(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            kwargs[key] = _parse_value(key, value)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())


def _parse_value(key: str, value: str):
    if key == "lr_ladder":
        return tuple(float(v) for v in value.split(","))
    if value in ("None", ""):
        return None
    if value in ("True", "true"):
        return True
    if value in ("False", "false"):
        return False
    if key in ("gamma", "r0", "rate_threshold"):
        return float(value)
    return int(value)


# --------------------------------------------------------------------------
# losses


def distortion_loss(x_hat: Tensor, x: Tensor) -> Tensor:
    """Summed squared error ||x_hat - x||^2."""
    return T.sq_error(x_hat, x)


def rate_loss(p: Tensor, r: float) -> Tensor:
    """Per-image max(sum(p) - r, 0), summed over the batch.

    ``p`` is (N,1,h,w) or a single (1,h,w)/(h,w) map.
    """
    if p.data.ndim == 4:
        s = T.sum(p, axis=(1, 2, 3))
    else:
        s = T.reshape(T.sum(p), (1,))
    return T.sum(T.relu(T.add_scalar(s, -float(r))))


@dataclass
class ForwardResult:
    objective: Tensor
    distortion: Tensor
    rate: Tensor
    p: Tensor | None
    mask: Tensor | None


def forward(x: Tensor, params: ModelParams, gamma: float, r: float,
            importance_enabled: bool = True) -> ForwardResult:
    """encode -> binarize -> importance -> mask -> trim -> decode, with losses."""
    e, f = nets.encode(x, params)
    b = quant.binarize(e)
    if importance_enabled:
        p = nets.importance(f, params)
        m = quant.importance_mask(p, params.n, params.L)
        c = quant.trim(b, m)
        rate = rate_loss(p, r)
    else:
        p = m = None
        c = b
        rate = Tensor(np.zeros(()))
    x_hat = nets.decode(c, params)
    dist = distortion_loss(x_hat, x)
    obj = T.add(dist, T.scale(rate, gamma)) if importance_enabled else dist
    return ForwardResult(obj, dist, rate, p, m)


def objective(batch: np.ndarray, params: ModelParams, cfg: TrainConfig) -> float:
    """Value of sum over the batch of distortion + gamma * rate (no gradients)."""
    x = Tensor(np.asarray(batch, dtype=np.float64))
    h, w = x.shape[2] // 8, x.shape[3] // 8
    res = forward(x, params, cfg.gamma, cfg.threshold(h, w), cfg.importance_map_enabled)
    return float(res.objective.data)


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place ADAM update of the arrays in ``params`` (name -> ndarray)."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, value in params.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        kernels.adam_update(value, np.ascontiguousarray(grads[name], dtype=np.float64), m,
                            state.v[name], lr, beta1, beta2, eps, bc1, bc2)


class Plateau:
    """Stops when a monitored value fails to improve ``patience`` times in a row."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.bad = 0

    def update(self, value: float) -> bool:
        if value < self.best:
            self.best = value
            self.bad = 0
        else:
            self.bad += 1
        return self.bad >= self.patience


def run_ladder(step_fn: Callable[[float], float], ladder: Sequence[float], max_iters: int,
               window: int, patience: int, total_iters: int | None = None,
               on_check: Callable[[int, float, float], None] | None = None) -> list[float]:
    """Drive ``step_fn(lr) -> loss`` through each learning-rate stage.

    Each stage ends after ``max_iters`` steps or when the mean loss over
    consecutive ``window``-step blocks stops improving for ``patience``
    blocks.  Returns the per-step loss history.
    """
    history: list[float] = []
    for lr in ladder:
        plateau = Plateau(patience)
        for it in range(max_iters):
            if total_iters is not None and len(history) >= total_iters:
                return history
            history.append(step_fn(lr))
            if (it + 1) % window == 0:
                avg = float(np.mean(history[-window:]))
                if on_check:
                    on_check(len(history), lr, avg)
                if plateau.update(avg):
                    break
    return history


# --------------------------------------------------------------------------
# training loop


def train(cfg: TrainConfig, patches: np.ndarray, params: ModelParams | None = None,
          callback: Callable[[int, float, dict], None] | None = None) -> ModelParams:
    """End-to-end training over the learning-rate ladder.

    ``params`` warm-starts from an existing model (for example one trained
    with ``importance_map_enabled=False``); otherwise weights are initialised
    from ``cfg.seed``.  Returns a new ModelParams snapped to float32.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 4 or len(patches) == 0:
        raise ValueError("training needs a non-empty (N,3,H,W) patch array")
    if params is None:
        params = nets.init_params(cfg.seed, cfg.n)
    else:
        params = params.copy()
        if params.n != cfg.n:
            raise ValueError(f"warm-start model has n={params.n}, config says n={cfg.n}")
    params.importance_enabled = cfg.importance_map_enabled
    h, w = patches.shape[2] // 8, patches.shape[3] // 8
    r = cfg.threshold(h, w)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    values = {k: t.data for k, t in params.tensors.items()}
    bs = min(cfg.batch_size, len(patches))
    order: list[int] = []

    def next_batch():
        nonlocal order
        if len(order) < bs:
            order = order + rng.permutation(len(patches)).tolist()
        idx, order = order[:bs], order[bs:]
        return patches[idx]

    def step(lr: float) -> float:
        batch = Tensor(next_batch())
        params.zero_grad()
        with Tape() as tape:
            res = forward(batch, params, cfg.gamma, r, cfg.importance_map_enabled)
        tape.backward(res.objective)
        grads = {k: t.grad for k, t in params.tensors.items()}
        adam_step(values, grads, state, lr)
        loss = float(res.objective.data)
        if callback:
            callback(state.t, loss, {"distortion": float(res.distortion.data),
                                     "rate": float(res.rate.data)})
        return loss

    def on_check(it, lr, avg):
        log.info("iter %d lr %.0e mean objective %.4f", it, lr, avg)

    run_ladder(step, cfg.lr_ladder, cfg.max_iters, cfg.window, cfg.patience,
               cfg.total_iters, on_check)
    params.round_to_float32()
    return params


# --------------------------------------------------------------------------
# data


def load_patches(dir_path, patch_size: int = 128, seed: int = 0,
                 max_patches: int | None = None) -> np.ndarray:
    """Non-overlapping crops from every PPM in ``dir_path``, shuffled by ``seed``.

    Returns (N, 3, patch_size, patch_size) float64 in [0, 1].  Images smaller
    than the patch are skipped with a warning.
    """
    from cwic.container import read_ppm

    paths = sorted(p for p in Path(dir_path).iterdir() if p.suffix.lower() in (".ppm", ".pnm"))
    crops = []
    for path in paths:
        img = read_ppm(path)
        if img.height < patch_size or img.width < patch_size:
            log.warning("skipping %s: %dx%d smaller than patch %d", path.name, img.width,
                        img.height, patch_size)
            continue
        arr = img.pixels.transpose(2, 0, 1)
        for y in range(0, img.height - patch_size + 1, patch_size):
            for x in range(0, img.width - patch_size + 1, patch_size):
                crops.append(arr[:, y:y + patch_size, x:x + patch_size])
    if not crops:
        return np.zeros((0, 3, patch_size, patch_size))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(crops))
    if max_patches is not None:
        order = order[:max_patches]
    return np.stack([crops[i] for i in order]).astype(np.float64) / 255.0


def synthetic_patches(count: int, size: int = 64, seed: int = 0) -> np.ndarray:
    """Smooth gradients overlaid with sinusoidal textures, values in [0, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = np.empty((count, 3, size, size))
    for n in range(count):
        for c in range(3):
            a, b, c0 = rng.uniform(-0.5, 0.5, 3)
            base = 0.5 + a * (xx - 0.5) + b * (yy - 0.5) + 0.2 * c0
            fx, fy = rng.uniform(1, 8, 2)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.0, 0.25)
            tex = amp * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
            # texture only in part of the patch so bit allocation can vary
            region = (xx > rng.uniform(0.2, 0.8)).astype(float)
            out[n, c] = base + tex * region
    return np.clip(out, 0.0, 1.0)
