"""Impedance regulation network: a small LSTM written directly in numpy.

The network maps the partner's co-contraction and the trajectory features to
the collaborator's co-contraction. Predictions are turned into a regulatory
factor that scales the learned stiffness schedule online.

Inputs and outputs are normalized to [0, 1] with per-channel bounds stored
alongside the weights; all arrays are float64.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .datamodel import ValidationError, rng_for

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "imprsl-regnet"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("Wx", "Wh", "b", "Wy", "by")
RHO_MIN = 0.5
RHO_MAX = 1.8


class TrainingDivergedError(RuntimeError):
    pass


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class RegNetParams:
    """LSTM weights (gate order: input, forget, candidate, output) and bounds."""

    Wx: np.ndarray   # (4H, I)
    Wh: np.ndarray   # (4H, H)
    b: np.ndarray    # (4H,)
    Wy: np.ndarray   # (O, H)
    by: np.ndarray   # (O,)
    in_lo: np.ndarray
    in_hi: np.ndarray
    out_lo: np.ndarray
    out_hi: np.ndarray

    def __post_init__(self):
        H4, I = self.Wx.shape
        if H4 % 4 or self.Wh.shape != (H4, H4 // 4) or self.b.shape != (H4,):
            raise ValidationError("inconsistent LSTM gate shapes")
        if self.Wy.shape[1] != H4 // 4 or self.by.shape != (self.Wy.shape[0],):
            raise ValidationError("inconsistent readout shapes")
        for lo, hi, what in ((self.in_lo, self.in_hi, "input"), (self.out_lo, self.out_hi, "output")):
            if not np.all(lo < hi):
                raise ValidationError(f"{what} normalization bounds need min < max per channel")

    @property
    def hidden(self) -> int:
        return self.Wh.shape[1]

    @property
    def n_in(self) -> int:
        return self.Wx.shape[1]

    @property
    def n_out(self) -> int:
        return self.Wy.shape[0]

    def weights(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def check_finite(self):
        for k, w in self.weights().items():
            if not np.all(np.isfinite(w)):
                raise ValidationError(f"non-finite values in weight {k}")

    def copy(self) -> "RegNetParams":
        return RegNetParams(**{k: np.array(v, copy=True) for k, v in vars(self).items()})

    def normalize_inputs(self, x):
        return (np.asarray(x, dtype=float) - self.in_lo) / (self.in_hi - self.in_lo)

    def normalize_outputs(self, y):
        return (np.asarray(y, dtype=float) - self.out_lo) / (self.out_hi - self.out_lo)

    def denormalize_outputs(self, y):
        return self.out_lo + np.asarray(y, dtype=float) * (self.out_hi - self.out_lo)


def init_params(n_in: int, hidden: int = 32, n_out: int = 1, seed: int = 0,
                in_bounds=None, out_bounds=None) -> RegNetParams:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, forget-gate bias 1."""
    rng = rng_for(seed, "regnet-init")
    s = 1.0 / math.sqrt(hidden)
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    in_lo, in_hi = in_bounds if in_bounds is not None else (np.zeros(n_in), np.ones(n_in))
    out_lo, out_hi = out_bounds if out_bounds is not None else (np.zeros(n_out), np.ones(n_out))
    return RegNetParams(
        Wx=rng.uniform(-s, s, (4 * hidden, n_in)),
        Wh=rng.uniform(-s, s, (4 * hidden, hidden)),
        b=b,
        Wy=rng.uniform(-s, s, (n_out, hidden)),
        by=np.zeros(n_out),
        in_lo=np.asarray(in_lo, float), in_hi=np.asarray(in_hi, float),
        out_lo=np.asarray(out_lo, float), out_hi=np.asarray(out_hi, float),
    )


@dataclass
class ForwardCache:
    x: np.ndarray      # (B, T, I)
    gates: np.ndarray  # (B, T, 4H) activated
    c: np.ndarray      # (B, T+1, H), index 0 is the initial state
    h: np.ndarray      # (B, T+1, H)
    y: np.ndarray      # (B, T, O)


def _batched(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ValidationError(f"expected (T, I) or (B, T, I) inputs, got shape {x.shape}")
    return x, False


def forward(params: RegNetParams, x, h0=None, c0=None, check_range: bool = True):
    """Run the LSTM over normalized inputs.

    ``x`` is (T, I) or (B, T, I). Returns ``(y, cache)`` with ``y`` shaped
    like the input batch layout.
    """
    params.check_finite()
    xb, squeeze = _batched(x)
    if check_range and (np.any(xb < -1e-9) or np.any(xb > 1 + 1e-9)):
        raise ValidationError("inputs must be normalized to [0, 1]")
    B, T, _ = xb.shape
    H = params.hidden
    gates = np.empty((B, T, 4 * H))
    c = np.zeros((B, T + 1, H))
    h = np.zeros((B, T + 1, H))
    if h0 is not None:
        h[:, 0] = h0
    if c0 is not None:
        c[:, 0] = c0
    xw = xb @ params.Wx.T + params.b
    for t in range(T):
        z = xw[:, t] + h[:, t] @ params.Wh.T
        g = gates[:, t]
        g[:, :2 * H] = _sigmoid(z[:, :2 * H])
        g[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        g[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
        c[:, t + 1] = g[:, H:2 * H] * c[:, t] + g[:, :H] * g[:, 2 * H:3 * H]
        h[:, t + 1] = g[:, 3 * H:] * np.tanh(c[:, t + 1])
    y = h[:, 1:] @ params.Wy.T + params.by
    cache = ForwardCache(xb, gates, c, h, y)
    return (y[0] if squeeze else y), cache


def mse_loss(y, target, mask=None) -> float:
    y = np.asarray(y, dtype=float)
    target = np.asarray(target, dtype=float)
    w = np.ones(y.shape[:-1]) if mask is None else np.asarray(mask, dtype=float)
    return float(np.sum(w[..., None] * (y - target) ** 2) / (np.sum(w) * y.shape[-1]))


def backward(params: RegNetParams, cache: ForwardCache, target, mask=None) -> dict:
    """Exact gradients of :func:`mse_loss` by backpropagation through time."""
    tb, _ = _batched(target)
    B, T, O = cache.y.shape
    H = params.hidden
    w = np.ones((B, T)) if mask is None else np.asarray(mask, dtype=float).reshape(B, T)
    dy = 2.0 * w[..., None] * (cache.y - tb) / (np.sum(w) * O)
    grads = {k: np.zeros_like(v) for k, v in params.weights().items()}
    grads["Wy"] = np.einsum("bto,bth->oh", dy, cache.h[:, 1:])
    grads["by"] = dy.sum(axis=(0, 1))
    dh_all = dy @ params.Wy
    dz = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g = cache.gates[:, t]
        i, f, cand, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        tc = np.tanh(cache.c[:, t + 1])
        dh = dh_all[:, t] + dh_next
        dc = dh * o * (1.0 - tc ** 2) + dc_next
        d = dz[:, t]
        d[:, :H] = dc * cand * i * (1.0 - i)
        d[:, H:2 * H] = dc * cache.c[:, t] * f * (1.0 - f)
        d[:, 2 * H:3 * H] = dc * i * (1.0 - cand ** 2)
        d[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = d @ params.Wh
    grads["Wx"] = np.einsum("btg,bti->gi", dz, cache.x)
    grads["Wh"] = np.einsum("btg,bth->gh", dz, cache.h[:, :-1])
    grads["b"] = dz.sum(axis=(0, 1))
    return grads


def gradcheck(params: RegNetParams, x, target, eps: float = 1e-5, floor: float = 1e-7):
    """Max relative error between BPTT and central differences over all weights.

    The relative error of each entry is ``|a - n| / max(|a| + |n|, floor)``;
    the floor keeps entries whose true gradient is ~0 from dominating.
    """
    _, cache = forward(params, x, check_range=False)
    analytic = backward(params, cache, target)
    worst = 0.0
    for name in PARAM_NAMES:
        W = getattr(params, name)
        it = np.nditer(W, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = W[idx]
            W[idx] = orig + eps
            lp = mse_loss(forward(params, x, check_range=False)[0], target)
            W[idx] = orig - eps
            lm = mse_loss(forward(params, x, check_range=False)[0], target)
            W[idx] = orig
            num = (lp - lm) / (2 * eps)
            a = analytic[name][idx]
            worst = max(worst, abs(a - num) / max(abs(a) + abs(num), floor))
    return worst


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 32
    window: int = 64
    burn_in: int = 8
    batch: int = 16
    epochs: int = 60
    batches_per_epoch: int = 20
    lr: float = 5e-3
    lr_decay: float = 0.97
    clip: float = 1.0
    ema: float = 0.8
    seed: int = 0


@dataclass
class TrainResult:
    params: RegNetParams
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    train_ema: list = field(default_factory=list)


def channel_bounds(arrays, pad: float = 0.0):
    """Per-channel [lo, hi] over a list of (T, C) arrays; flat channels get unit width."""
    allv = np.concatenate([np.asarray(a, float) for a in arrays])
    lo, hi = allv.min(axis=0), allv.max(axis=0)
    span = hi - lo
    flat = span <= 1e-12
    lo = lo - pad * span
    hi = hi + pad * span
    hi[flat] = lo[flat] + 1.0
    return lo, hi


def _windows(rng, lengths, n, L):
    seq = rng.integers(0, len(lengths), size=n)
    starts = [int(rng.integers(0, max(1, lengths[s] - L + 1))) for s in seq]
    return seq, starts


def train(inputs, targets, config: TrainConfig = TrainConfig(), val_inputs=None, val_targets=None,
          ) -> TrainResult:
    """Truncated-BPTT training on random windows with Adam and norm clipping.

    ``inputs``/``targets`` are lists of raw (T_k, I) / (T_k, O) arrays. When no
    validation set is passed the last sequence is held out. Each window runs
    from a zero state; its first ``burn_in`` steps are excluded from the loss.
    """
    inputs = [np.asarray(a, float) for a in inputs]
    targets = [np.asarray(a, float).reshape(len(a), -1) for a in targets]
    if len(inputs) < 2:
        raise ValidationError("training needs >= 2 sequences")
    if val_inputs is None:
        inputs, val_inputs = inputs[:-1], inputs[-1:]
        targets, val_targets = targets[:-1], targets[-1:]
    in_b = channel_bounds(inputs)
    out_b = channel_bounds(targets)
    params = init_params(inputs[0].shape[1], config.hidden, targets[0].shape[1], config.seed, in_b, out_b)
    xs = [np.clip(params.normalize_inputs(a), 0, 1) for a in inputs]
    ys = [params.normalize_outputs(a) for a in targets]
    L = min(config.window, min(len(a) for a in xs))
    burn = min(config.burn_in, L - 1)
    mask = np.ones((config.batch, L))
    mask[:, :burn] = 0.0
    rng = rng_for(config.seed, "regnet-train")
    m = {k: np.zeros_like(v) for k, v in params.weights().items()}
    v = {k: np.zeros_like(w) for k, w in params.weights().items()}
    b1, b2, eps_adam = 0.9, 0.999, 1e-8
    step = 0
    result = TrainResult(params)
    ema = None
    lengths = [len(a) for a in xs]
    for epoch in range(config.epochs):
        lr = config.lr * config.lr_decay ** epoch
        losses = []
        for _ in range(config.batches_per_epoch):
            seq, starts = _windows(rng, lengths, config.batch, L)
            xb = np.stack([xs[s][a:a + L] for s, a in zip(seq, starts)])
            yb = np.stack([ys[s][a:a + L] for s, a in zip(seq, starts)])
            pred, cache = forward(params, xb, check_range=False)
            loss = mse_loss(pred, yb, mask)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss} at epoch {epoch}, step {step}; "
                    f"last finite losses {result.train_loss[-3:]}, lr {lr:.3g}")
            grads = backward(params, cache, yb, mask)
            gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            scale = min(1.0, config.clip / gnorm) if gnorm > 0 else 1.0
            step += 1
            for k, g in grads.items():
                g = g * scale
                m[k] = b1 * m[k] + (1 - b1) * g
                v[k] = b2 * v[k] + (1 - b2) * g * g
                mh = m[k] / (1 - b1 ** step)
                vh = v[k] / (1 - b2 ** step)
                W = getattr(params, k)
                W -= lr * mh / (np.sqrt(vh) + eps_adam)
            losses.append(loss)
        tl = float(np.mean(losses))
        ema = tl if ema is None else config.ema * ema + (1 - config.ema) * tl
        result.train_loss.append(tl)
        result.train_ema.append(ema)
        result.val_loss.append(evaluate_loss(params, val_inputs, val_targets, burn))
    return result


def evaluate_loss(params: RegNetParams, inputs, targets, burn_in: int = 0) -> float:
    """Normalized-unit MSE of full-sequence predictions."""
    num = 0.0
    den = 0
    for x, y in zip(inputs, targets):
        y = np.asarray(y, float).reshape(len(y), -1)
        pred = predict(params, x, normalized_output=True)
        err = (pred - params.normalize_outputs(y))[burn_in:]
        num += float(np.sum(err ** 2))
        den += err.size
    return num / max(den, 1)


def predict(params: RegNetParams, x_raw, normalized_output: bool = False) -> np.ndarray:
    """Causal predictions for one raw (T, I) sequence, in output units."""
    x = np.clip(params.normalize_inputs(x_raw), 0.0, 1.0)
    y, _ = forward(params, x)
    if normalized_output:
        return y
    out = params.denormalize_outputs(y)
    span = params.out_hi - params.out_lo
    if np.any(out < params.out_lo - 0.1 * span) or np.any(out > params.out_hi + 0.1 * span):
        log.warning("regnet predictions leave the training range by more than 10%%; possible distribution shift")
    return out


class OnlineRegNet:
    """Step-by-step inference carrying the recurrent state between calls."""

    def __init__(self, params: RegNetParams):
        self.params = params
        self.h = np.zeros((1, params.hidden))
        self.c = np.zeros((1, params.hidden))

    def step(self, x_raw) -> np.ndarray:
        x = np.clip(self.params.normalize_inputs(np.asarray(x_raw, float)[None, None]), 0, 1)
        y, cache = forward(self.params, x, self.h, self.c)
        self.h = cache.h[:, -1]
        self.c = cache.c[:, -1]
        return self.params.denormalize_outputs(y[0, 0])


# ---------------------------------------------------------------- outputs

def metrics(pred, truth) -> tuple[float, float]:
    """RMSE and Pearson correlation."""
    p = np.asarray(pred, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.shape != t.shape or p.size < 2:
        raise ValidationError("pred and truth need equal lengths >= 2")
    rmse = float(np.sqrt(np.mean((p - t) ** 2)))
    pc, tc = p - p.mean(), t - t.mean()
    sp, st = np.sqrt(pc @ pc), np.sqrt(tc @ tc)
    if st <= 0 or sp <= 0:
        raise ValidationError("correlation undefined for a zero-variance series")
    return rmse, float(np.clip(pc @ tc / (sp * st), -1.0, 1.0))


def regulatory_factor(pred_alpha, baseline_alpha: float, rho_min: float = RHO_MIN,
                      rho_max: float = RHO_MAX) -> np.ndarray:
    """rho_t = clamp(pred_t / baseline, rho_min, rho_max)."""
    if not baseline_alpha > 0:
        raise ValidationError(f"baseline must be > 0, got {baseline_alpha}")
    if not 0 < rho_min <= rho_max:
        raise ValidationError("need 0 < rho_min <= rho_max")
    p = np.asarray(pred_alpha, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValidationError("non-finite prediction")
    return np.clip(p / baseline_alpha, rho_min, rho_max)


def save_checkpoint(path, params: RegNetParams, meta: dict | None = None):
    doc = {"format": CHECKPOINT_MAGIC, "version": CHECKPOINT_VERSION, "meta": meta or {},
           **{k: np.asarray(v).tolist() for k, v in vars(params).items()}}
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)


def load_checkpoint(path) -> RegNetParams:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != CHECKPOINT_MAGIC:
        raise ValidationError(f"{path}: not a regnet checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    fields = ("Wx", "Wh", "b", "Wy", "by", "in_lo", "in_hi", "out_lo", "out_hi")
    p = RegNetParams(**{k: np.asarray(doc[k], dtype=float) for k in fields})
    p.check_finite()
    return p


def write_report(path, result: TrainResult, extra: dict | None = None):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "train_loss_ema", "val_loss"])
        for e, (a, b, c) in enumerate(zip(result.train_loss, result.train_ema, result.val_loss)):
            w.writerow([e, repr(a), repr(b), repr(c)])
        for k, val in (extra or {}).items():
            w.writerow([f"# {k}", repr(val)])
