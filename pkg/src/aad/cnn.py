"""A small convolutional decoder mapping 1 s two-channel EEG windows to
the speech feature at the window onset, implemented directly in numpy
with hand-derived reverse-mode gradients.

Each block is conv (same padding) -> ReLU -> BatchNorm -> average pool
(width 2), plus a skip path that projects the block input with a
width-1 convolution and pools it to match. A linear readout maps the
last block's output to one scalar per window. The training loss is the
negative Pearson correlation over the batch, matching the evaluation
metric. Everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateBatchError

# small enough that normalized batch variance stays within 1e-4 of 1
_BN_EPS = 1e-8
_BN_MOMENTUM = 0.1

KERNEL_SIZES = (3, 5)
BLOCK_COUNTS = (1, 2, 3)


@dataclass(frozen=True)
class CnnHyper:
    """The tuned hyperparameters: conv kernel size and block count."""

    kernel_size: int = 3
    n_blocks: int = 2
    width: int = 16
    pool: int = 2

    def __post_init__(self):
        if self.kernel_size not in KERNEL_SIZES:
            raise ValueError(f"kernel_size must be in {KERNEL_SIZES}")
        if self.n_blocks not in BLOCK_COUNTS:
            raise ValueError(f"n_blocks must be in {BLOCK_COUNTS}")


def hyper_grid() -> list[CnnHyper]:
    """The 6-point tuning grid: kernel in {3, 5} x blocks in {1, 2, 3}."""
    return [CnnHyper(k, n) for k in KERNEL_SIZES for n in BLOCK_COUNTS]


def _conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same-padding 1-D convolution via im2col; returns output and cols."""
    n_batch, _, n_time = x.shape
    n_out, n_in, k = w.shape
    pad = (k - 1) // 2
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    cols = sliding_window_view(x, k, axis=2)  # (B, Cin, T, k)
    c2 = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(
        n_batch * n_time, n_in * k
    )
    z = c2 @ w.reshape(n_out, -1).T + b
    return z.reshape(n_batch, n_time, n_out).transpose(0, 2, 1), c2


def _conv1d_backward(dz: np.ndarray, w: np.ndarray, c2: np.ndarray):
    """Gradients of _conv1d w.r.t. weights, bias and input."""
    n_batch, n_out, n_time = dz.shape
    n_in, k = w.shape[1], w.shape[2]
    dzm = np.ascontiguousarray(dz.transpose(0, 2, 1)).reshape(n_batch * n_time, n_out)
    dw = (c2.T @ dzm).T.reshape(n_out, n_in, k)
    db = dzm.sum(axis=0)
    # dx is a same-padding conv of dz with the channel-swapped,
    # tap-reversed kernel (exact for odd k, stride 1).
    w_swap = np.ascontiguousarray(w[:, :, ::-1].transpose(1, 0, 2))
    dx, _ = _conv1d(dz, w_swap, np.zeros(n_in))
    return dx, dw, db


def _avgpool(x: np.ndarray, width: int) -> np.ndarray:
    n_batch, n_ch, n_time = x.shape
    return x.reshape(n_batch, n_ch, n_time // width, width).mean(axis=-1)


def _avgpool_backward(dout: np.ndarray, width: int) -> np.ndarray:
    return np.repeat(dout, width, axis=-1) / width


class CnnModel:
    """Parameter container with explicit forward/backward passes."""

    def __init__(self, hyper: CnnHyper = CnnHyper(), n_channels: int = 2,
                 window: int = 64, seed: int = 0):
        if window % hyper.pool**hyper.n_blocks != 0:
            raise ValueError(
                f"window {window} not divisible by pool^blocks "
                f"{hyper.pool**hyper.n_blocks}"
            )
        self.hyper = hyper
        self.n_channels = n_channels
        self.window = window
        self.mode = "eval"
        self.params: dict[str, np.ndarray] = {}
        self.running: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        in_ch = n_channels
        for i in range(hyper.n_blocks):
            k = hyper.kernel_size
            self.params[f"block{i}.conv.w"] = uniform((hyper.width, in_ch, k), in_ch * k)
            self.params[f"block{i}.conv.b"] = uniform((hyper.width,), in_ch * k)
            self.params[f"block{i}.bn.gamma"] = np.ones(hyper.width)
            self.params[f"block{i}.bn.beta"] = np.zeros(hyper.width)
            self.params[f"block{i}.skip.w"] = uniform((hyper.width, in_ch, 1), in_ch)
            self.params[f"block{i}.skip.b"] = uniform((hyper.width,), in_ch)
            self.running[f"block{i}.bn.mean"] = np.zeros(hyper.width)
            self.running[f"block{i}.bn.var"] = np.ones(hyper.width)
            in_ch = hyper.width
        flat = hyper.width * (window // hyper.pool**hyper.n_blocks)
        self.params["readout.w"] = uniform((flat,), flat)
        self.params["readout.b"] = uniform((1,), flat)

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    def copy_state(self) -> dict:
        return {
            "params": {k: v.copy() for k, v in self.params.items()},
            "running": {k: v.copy() for k, v in self.running.items()},
        }

    def load_state(self, state: dict):
        self.params = {k: v.copy() for k, v in state["params"].items()}
        self.running = {k: v.copy() for k, v in state["running"].items()}

    def forward_batch(self, x: np.ndarray, update_running: bool = False):
        """Batched forward pass; returns (predictions, caches)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != self.n_channels or x.shape[2] != self.window:
            raise ValueError(
                f"expected (B, {self.n_channels}, {self.window}) windows, "
                f"got {x.shape}"
            )
        train = self.mode == "train"
        caches = []
        h = x
        for i in range(self.hyper.n_blocks):
            p = self.params
            z, conv_cols = _conv1d(h, p[f"block{i}.conv.w"], p[f"block{i}.conv.b"])
            mask = z > 0
            r = z * mask
            gamma = p[f"block{i}.bn.gamma"][None, :, None]
            beta = p[f"block{i}.bn.beta"][None, :, None]
            if train:
                mu = r.mean(axis=(0, 2), keepdims=True)
                var = r.var(axis=(0, 2), keepdims=True)
                if update_running:
                    self.running[f"block{i}.bn.mean"] += _BN_MOMENTUM * (
                        mu[0, :, 0] - self.running[f"block{i}.bn.mean"]
                    )
                    self.running[f"block{i}.bn.var"] += _BN_MOMENTUM * (
                        var[0, :, 0] - self.running[f"block{i}.bn.var"]
                    )
            else:
                mu = self.running[f"block{i}.bn.mean"][None, :, None]
                var = self.running[f"block{i}.bn.var"][None, :, None]
            sigma = np.sqrt(var + _BN_EPS)
            xhat = (r - mu) / sigma
            bn_out = gamma * xhat + beta
            pooled = _avgpool(bn_out, self.hyper.pool)
            skip_z, skip_cols = _conv1d(h, p[f"block{i}.skip.w"], p[f"block{i}.skip.b"])
            skip = _avgpool(skip_z, self.hyper.pool)
            caches.append(
                {
                    "in_shape": h.shape,
                    "conv_cols": conv_cols,
                    "mask": mask,
                    "xhat": xhat,
                    "sigma": sigma,
                    "train_bn": train,
                    "skip_cols": skip_cols,
                }
            )
            h = pooled + skip
        flat = h.reshape(h.shape[0], -1)
        out = flat @ self.params["readout.w"] + self.params["readout.b"][0]
        caches.append({"flat": flat, "h_shape": h.shape})
        return out, caches

    def backward_batch(self, caches: list, dout: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of sum(dout * predictions) w.r.t. every parameter."""
        grads = {}
        head = caches[-1]
        grads["readout.w"] = head["flat"].T @ dout
        grads["readout.b"] = np.array([dout.sum()])
        dh = np.outer(dout, self.params["readout.w"]).reshape(head["h_shape"])
        for i in reversed(range(self.hyper.n_blocks)):
            cache = caches[i]
            p = self.params
            dskip_z = _avgpool_backward(dh, self.hyper.pool)
            dx_skip, dw_skip, db_skip = _conv1d_backward(
                dskip_z, p[f"block{i}.skip.w"], cache["skip_cols"]
            )
            grads[f"block{i}.skip.w"] = dw_skip
            grads[f"block{i}.skip.b"] = db_skip

            dbn = _avgpool_backward(dh, self.hyper.pool)
            gamma = p[f"block{i}.bn.gamma"][None, :, None]
            xhat, sigma = cache["xhat"], cache["sigma"]
            grads[f"block{i}.bn.gamma"] = (dbn * xhat).sum(axis=(0, 2))
            grads[f"block{i}.bn.beta"] = dbn.sum(axis=(0, 2))
            dxhat = dbn * gamma
            if cache["train_bn"]:
                dr = (
                    dxhat
                    - dxhat.mean(axis=(0, 2), keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=(0, 2), keepdims=True)
                ) / sigma
            else:
                dr = dxhat / sigma
            dz = dr * cache["mask"]
            dx_conv, dw_conv, db_conv = _conv1d_backward(
                dz, p[f"block{i}.conv.w"], cache["conv_cols"]
            )
            grads[f"block{i}.conv.w"] = dw_conv
            grads[f"block{i}.conv.b"] = db_conv
            dh = dx_conv + dx_skip
        return grads


def preactivation_margin(model: CnnModel, x: np.ndarray) -> float:
    """Smallest |pre-activation| over all conv outputs for a batch.

    Finite-difference gradient checks are only valid when no ReLU input
    sits within the probe step of zero; use this to validate fixtures.
    """
    was = model.mode
    model.train()
    try:
        _, caches = model.forward_batch(x)
    finally:
        model.mode = was
    margin = np.inf
    for i in range(model.hyper.n_blocks):
        cols = caches[i]["conv_cols"]
        w = model.params[f"block{i}.conv.w"]
        z = cols @ w.reshape(w.shape[0], -1).T + model.params[f"block{i}.conv.b"]
        margin = min(margin, float(np.abs(z).min()))
    return margin


def forward(model: CnnModel, window: np.ndarray):
    """Evaluate the network on one 2x64 window or a batch of them."""
    x = np.asarray(window, dtype=np.float64)
    if x.ndim == 2:
        out, _ = model.forward_batch(x[None])
        return float(out[0])
    out, _ = model.forward_batch(x)
    return out


def loss(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Negative Pearson correlation over the batch."""
    value, _ = _loss_and_grad(predictions, targets)
    return value


def _loss_and_grad(predictions: np.ndarray, targets: np.ndarray):
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.shape[0] < 8:
        raise ValueError(f"batch size must be >= 8, got {p.shape[0]}")
    tc = t - t.mean()
    stt = tc @ tc
    if stt <= 1e-13 * max(1.0, abs(t.mean())):
        raise DegenerateBatchError("constant targets in batch")
    pc = p - p.mean()
    spp = pc @ pc
    if spp == 0.0:
        # constant predictions: zero correlation, zero gradient through
        # the (undefined) normalization is replaced by the limit 0
        return 0.0, np.zeros_like(p)
    spt = pc @ tc
    denom = np.sqrt(spp * stt)
    rho = spt / denom
    grad = -(tc - (spt / spp) * pc) / denom
    return float(-rho), grad


def gradients(model: CnnModel, batch, update_running: bool = False):
    """Analytic gradients of the batch loss; returns (loss, grads)."""
    if model.mode != "train":
        raise RuntimeError("gradients require train mode")
    x, targets = batch
    preds, caches = model.forward_batch(x, update_running=update_running)
    value, dpred = _loss_and_grad(preds, targets)
    return value, model.backward_batch(caches, dpred)


@dataclass
class AdamState:
    """Adam moments and step counter for a parameter dict."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict):
    """One Adam update with bias correction, in place."""
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = state.m.setdefault(name, np.zeros_like(g))
        v = state.v.setdefault(name, np.zeros_like(g))
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        params[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


class WindowBank:
    """Sliding 1 s windows (stride 1) over EEG chunks, gathered lazily.

    The target of a window is the feature value at the window onset.
    """

    def __init__(self, pairs, window: int = 64):
        self.views = []
        self.targets = []
        counts = []
        for eeg, feat in pairs:
            eeg = np.asarray(eeg, dtype=np.float64)
            feat = np.asarray(feat, dtype=np.float64)
            if eeg.ndim != 2 or eeg.shape[1] != feat.shape[0]:
                raise ValueError("chunk shapes do not line up")
            n = eeg.shape[1] - window + 1
            if n <= 0:
                continue
            self.views.append(
                sliding_window_view(eeg, window, axis=1).transpose(1, 0, 2)
            )
            self.targets.append(feat[:n])
            counts.append(n)
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    def __len__(self) -> int:
        return int(self.offsets[-1])

    def gather(self, idx: np.ndarray):
        idx = np.asarray(idx)
        chunk = np.searchsorted(self.offsets, idx, side="right") - 1
        x = np.empty((idx.shape[0],) + self.views[0].shape[1:])
        y = np.empty(idx.shape[0])
        for c in np.unique(chunk):
            sel = chunk == c
            local = idx[sel] - self.offsets[c]
            x[sel] = self.views[c][local]
            y[sel] = self.targets[c][local]
        return x, y

    def all_windows(self, batch: int = 4096):
        for start in range(0, len(self), batch):
            idx = np.arange(start, min(start + batch, len(self)))
            yield self.gather(idx)


@dataclass(frozen=True)
class TrainBudget:
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 5
    lr: float = 0.001
    seed: int = 0


def _validation_correlation(model: CnnModel, bank: WindowBank) -> float:
    from .linear import safe_pearson

    model.eval()
    preds, targets = [], []
    for x, y in bank.all_windows():
        preds.append(forward(model, x))
        targets.append(y)
    return safe_pearson(np.concatenate(preds), np.concatenate(targets))


def train_cnn(
    train_pairs,
    val_pairs,
    hyper: CnnHyper = CnnHyper(),
    budget: TrainBudget = TrainBudget(),
    n_channels: int = 2,
    window: int = 64,
) -> CnnModel:
    """Mini-batch Adam training with early stopping on validation rho.

    ``train_pairs``/``val_pairs`` are lists of (eeg: channels x T,
    feature: T) chunks. The model checkpoint with the best validation
    correlation (including the untrained initialization) is returned;
    training stops after ``patience`` evaluations without improvement.
    """
    train_bank = WindowBank(train_pairs, window)
    val_bank = WindowBank(val_pairs, window)
    if len(train_bank) == 0:
        raise ValueError("no training windows")
    if len(val_bank) == 0:
        raise ValueError("no validation windows")

    model = CnnModel(hyper, n_channels=n_channels, window=window, seed=budget.seed)
    state = AdamState(lr=budget.lr)
    rng = np.random.default_rng(budget.seed)

    best_val = _validation_correlation(model, val_bank)
    best_state = model.copy_state()
    history = [{"epoch": 0, "train_loss": float("nan"), "val_rho": best_val}]
    stale = 0
    for epoch in range(1, budget.max_epochs + 1):
        model.train()
        order = rng.permutation(len(train_bank))
        losses = []
        for start in range(0, len(order), budget.batch_size):
            idx = order[start : start + budget.batch_size]
            if idx.shape[0] < 8:
                continue
            x, y = train_bank.gather(idx)
            try:
                value, grads = gradients(model, (x, y), update_running=True)
            except DegenerateBatchError:
                continue
            adam_step(state, model.params, grads)
            losses.append(value)
        val_rho = _validation_correlation(model, val_bank)
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)) if losses else float("nan"),
                "val_rho": val_rho,
            }
        )
        if val_rho > best_val:
            best_val = val_rho
            best_state = model.copy_state()
            stale = 0
        else:
            stale += 1
            if stale >= budget.patience:
                break
    model.load_state(best_state)
    model.eval()
    model.history = history
    model.best_validation = best_val
    return model


def reconstruct_cnn(model: CnnModel, eeg) -> np.ndarray:
    """Whole-record reconstruction: one estimate per window onset.

    The record is zero-padded at the end so the output keeps the input
    length (the final second is edge-affected, as with zero-padded
    filtering elsewhere).
    """
    data = eeg.data if hasattr(eeg, "data") else np.asarray(eeg, dtype=np.float64)
    padded = np.pad(data, ((0, 0), (0, model.window - 1)))
    bank = WindowBank([(padded, np.zeros(padded.shape[1]))], model.window)
    model.eval()
    return np.concatenate([forward(model, x) for x, _ in bank.all_windows()])


def save_checkpoint(path, model: CnnModel):
    from .io import save_payload

    header = {
        "kind": "cnn_checkpoint",
        "kernel_size": model.hyper.kernel_size,
        "n_blocks": model.hyper.n_blocks,
        "width": model.hyper.width,
        "pool": model.hyper.pool,
        "n_channels": model.n_channels,
        "window": model.window,
    }
    arrays = {f"param.{k}": v for k, v in model.params.items()}
    arrays.update({f"running.{k}": v for k, v in model.running.items()})
    return save_payload(path, header, arrays)


def load_checkpoint(path) -> CnnModel:
    from .io import load_payload

    header, arrays = load_payload(path)
    hyper = CnnHyper(
        header["kernel_size"], header["n_blocks"], header["width"], header["pool"]
    )
    model = CnnModel(hyper, n_channels=header["n_channels"], window=header["window"])
    model.params = {
        k[len("param.") :]: v for k, v in arrays.items() if k.startswith("param.")
    }
    model.running = {
        k[len("running.") :]: v for k, v in arrays.items() if k.startswith("running.")
    }
    return model
