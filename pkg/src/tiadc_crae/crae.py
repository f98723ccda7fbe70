"""Convolutional recurrent autoencoder (and ablations) on 100-point segments.

Layer stack for the default variant, input ``(B, 1, 100)``::

    conv1 32x2 tanh -> conv2 64x2 -> pool1 /2 tanh -> conv3 128x3 tanh
    -> conv4 1x1 -> pool2 /2 tanh -> rnn 128 -> deconv1 128x3 s2 tanh
    -> deconv2 64x3 s2 tanh -> deconv3 32x3 tanh -> deconv4 1x3

Stride-1 convolutions keep the length ("same" padding, extra pad on the
left for even kernels); the two stride-2 deconvolutions undo the pooling.
"""
from __future__ import annotations

import enum
import json
import logging
import struct
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import nncore as nn
from .analysis import Spectrum, fft_magnitude
from .sampler import FS_TOTAL
from .validation import check_records

__all__ = [
    "Variant",
    "CraeConfig",
    "CraeModel",
    "Checkpoint",
    "TrainingDiverged",
    "build_model",
    "forward",
    "train",
    "infer_record",
    "save_checkpoint",
    "load_checkpoint",
    "layer_spectra",
    "TAP_POINTS",
    "CRAECompensator",
]

log = logging.getLogger(__name__)

TAP_POINTS = ("input", "conv1", "rnn", "deconv1", "deconv2", "deconv3", "deconv4")


class Variant(str, enum.Enum):
    CRAE = "CRAE"
    CAE = "CAE"
    RNN_ONLY = "RNN_ONLY"
    TCN = "TCN"


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class CraeConfig:
    variant: Variant = Variant.CRAE
    segment_len: int = 100
    rnn_hidden: int = 128
    seed: int = 0
    lr: float = 1e-3
    epochs: int = 2000
    batch_size: int = 200
    test_every: int = 10
    test_subset: int = 400
    batch_mode: str = "shuffle"

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.segment_len <= 0 or self.segment_len % 4:
            raise ValueError("segment_len must be a positive multiple of 4")
        if self.rnn_hidden < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("rnn_hidden, batch_size must be >= 1 and epochs >= 0")
        if self.batch_mode not in ("shuffle", "record"):
            raise ValueError("batch_mode must be 'shuffle' or 'record'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CraeConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# (name, kind, weight shape, options); channel counts for the default variant.
def _layer_table(cfg: CraeConfig) -> list[tuple]:
    H = cfg.rnn_hidden
    if cfg.variant is Variant.RNN_ONLY:
        return [
            ("rnn", "rnn", (H, 1), {}),
            ("readout", "conv", (1, H, 1), {"pad": (0, 0), "act": False}),
        ]
    table = [
        ("conv1", "conv", (32, 1, 2), {"pad": (1, 0), "act": True}),
        ("conv2", "conv", (64, 32, 2), {"pad": (1, 0), "act": False}),
        ("pool1", "pool", None, {}),
    ]
    if cfg.variant is Variant.TCN:
        table.append(("dil1", "conv", (64, 64, 3), {"pad": (4, 4), "dilation": 4, "act": True}))
    table += [
        ("conv3", "conv", (128, 64, 3), {"pad": (1, 1), "act": True}),
        ("conv4", "conv", (1, 128, 1), {"pad": (0, 0), "act": False}),
        ("pool2", "pool", None, {}),
    ]
    if cfg.variant is Variant.TCN:
        table.append(("dil2", "conv", (1, 1, 3), {"pad": (4, 4), "dilation": 4, "act": True}))
    dec_in = 1
    if cfg.variant is not Variant.CAE:
        table.append(("rnn", "rnn", (H, 1), {}))
        dec_in = H
    table += [
        ("deconv1", "tconv", (dec_in, 128, 3), {"stride": 2, "pad": 1, "out_pad": 1, "act": True}),
        ("deconv2", "tconv", (128, 64, 3), {"stride": 2, "pad": 1, "out_pad": 1, "act": True}),
        ("deconv3", "tconv", (64, 32, 3), {"stride": 1, "pad": 1, "out_pad": 0, "act": True}),
        ("deconv4", "tconv", (32, 1, 3), {"stride": 1, "pad": 1, "out_pad": 0, "act": False}),
    ]
    return table


class CraeModel:
    """Parameters plus the layer table of one network variant."""

    def __init__(self, config: CraeConfig, params: dict[str, nn.Tensor]):
        self.config = config
        self.layers = _layer_table(config)
        self.params = params

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def __call__(self, x, taps: bool = False):
        return forward(self, x, taps=taps)


def build_model(cfg: CraeConfig) -> CraeModel:
    """Initialize weights (Glorot uniform) and biases (truncated normal, std 0.1)."""
    params: dict[str, nn.Tensor] = {}
    for i, (name, kind, shape, _) in enumerate(_layer_table(cfg)):
        seeds = np.random.SeedSequence([cfg.seed, i]).spawn(3)
        if kind == "pool":
            continue
        if kind == "rnn":
            H, cin = shape
            params[f"{name}.wx"] = nn.xavier_init((H, cin), cin, H, seeds[0])
            params[f"{name}.wh"] = nn.xavier_init((H, H), H, H, seeds[1])
            params[f"{name}.b"] = nn.truncated_normal_init((H,), seeds[2])
            continue
        if kind == "conv":
            cout, cin, k = shape
        else:
            cin, cout, k = shape
        params[f"{name}.w"] = nn.xavier_init(shape, cin * k, cout * k, seeds[0])
        params[f"{name}.b"] = nn.truncated_normal_init((cout,), seeds[2])
    for name, p in params.items():
        p.name = name
    return CraeModel(cfg, params)


def forward(model: CraeModel, batch, taps: bool = False):
    """Run the network on ``(B, 1, segment_len)``; optionally return every layer output."""
    x = nn.as_tensor(batch)
    L = model.config.segment_len
    if x.data.ndim != 3 or x.shape[1] != 1 or x.shape[2] != L:
        raise ValueError(f"expected batch of shape (B, 1, {L}), got {x.shape}")
    P = model.params
    trace = {"input": x}
    for name, kind, _, opt in model.layers:
        if kind == "conv":
            x = nn.conv1d(x, P[f"{name}.w"], P[f"{name}.b"], pad=opt["pad"], dilation=opt.get("dilation", 1))
        elif kind == "tconv":
            x = nn.tconv1d(x, P[f"{name}.w"], P[f"{name}.b"], opt["stride"], opt["pad"], opt["out_pad"])
        elif kind == "pool":
            x = nn.tanh_op(nn.maxpool1d(x, 2, 2))
        elif kind == "rnn":
            x = nn.rnn_forward(x, P[f"{name}.wx"], P[f"{name}.wh"], P[f"{name}.b"])
        if opt.get("act"):
            x = nn.tanh_op(x)
        trace[name] = x
    return trace if taps else x


def _segments(records: np.ndarray, L: int) -> np.ndarray:
    n, m = records.shape
    if m % L:
        raise ValueError(f"record length {m} is not a multiple of segment length {L}")
    return records.reshape(n * (m // L), 1, L)


def evaluate_loss(model: CraeModel, X: np.ndarray, Y: np.ndarray, chunk: int = 400) -> float:
    """Mean L1 between network output and reference over segment arrays."""
    total = 0.0
    with nn.no_grad():
        for s in range(0, X.shape[0], chunk):
            out = forward(model, X[s : s + chunk]).data
            total += np.abs(out - Y[s : s + chunk]).sum()
    return float(total / Y.size)


@dataclass
class Checkpoint:
    config: CraeConfig
    tensors: dict[str, np.ndarray]
    optimizer: nn.AdamState | None = None
    history: dict[str, list] = field(default_factory=dict)

    def to_model(self) -> CraeModel:
        model = build_model(self.config)
        missing = set(model.params) - set(self.tensors)
        if missing:
            raise ValueError(f"checkpoint lacks tensors {sorted(missing)}")
        for name, p in model.params.items():
            if self.tensors[name].shape != p.data.shape:
                raise ValueError(f"tensor {name!r} has shape {self.tensors[name].shape}, model needs {p.data.shape}")
            p.data = self.tensors[name].copy()
        return model


def train(model: CraeModel, train_set, test_set=None, hyper: CraeConfig | None = None) -> Checkpoint:
    """Fit ``model`` by Adam on mean L1 over paired (mismatched, reference) records.

    One epoch is one optimizer step on a batch of ``batch_size`` segments.
    ``batch_mode="record"`` takes consecutive segments in record order (a
    200-segment batch is one record); ``"shuffle"`` draws segments without
    replacement across the whole training set. Test loss is logged at epoch 1
    and every ``test_every`` epochs on a fixed ``test_subset`` of test
    segments (0 = all); the full test set is scored at the first and last
    epoch.
    """
    cfg = hyper or model.config
    L = model.config.segment_len
    X = _segments(np.asarray(train_set[0], dtype=float), L)
    Y = _segments(np.asarray(train_set[1], dtype=float), L)
    if X.shape != Y.shape:
        raise ValueError("training inputs and references differ in shape")
    rng = np.random.default_rng(cfg.seed)
    if test_set is not None:
        Xt = _segments(np.asarray(test_set[0], dtype=float), L)
        Yt = _segments(np.asarray(test_set[1], dtype=float), L)
        # periodic monitoring on a fixed subset; the full set at the first and last epoch
        pick = np.arange(Xt.shape[0])
        if 0 < cfg.test_subset < Xt.shape[0]:
            pick = np.sort(np.random.default_rng([cfg.seed, 1]).choice(Xt.shape[0], cfg.test_subset, replace=False))
        Xm, Ym = Xt[pick], Yt[pick]
    state = nn.AdamState(lr=cfg.lr)
    history: dict[str, list] = {"train_loss": [], "test_epoch": [], "test_loss": [], "full_test_epoch": [], "full_test_loss": []}
    n = X.shape[0]
    order = np.empty(0, dtype=np.int64)
    for epoch in range(1, cfg.epochs + 1):
        if order.size < cfg.batch_size:
            fresh = rng.permutation(n) if cfg.batch_mode == "shuffle" else np.arange(n)
            order = np.concatenate([order, fresh])
        idx, order = order[: cfg.batch_size], order[cfg.batch_size :]
        model.zero_grad()
        loss = nn.l1_loss(forward(model, X[idx]), Y[idx])
        if not np.isfinite(loss.data):
            raise TrainingDiverged(f"non-finite training loss at epoch {epoch}: {loss.data}")
        loss.backward()
        adam_grads = {k: p.grad for k, p in model.params.items()}
        nn.adam_step(model.params, adam_grads, state)
        history["train_loss"].append(float(loss.data))
        if test_set is not None and (epoch == 1 or epoch % cfg.test_every == 0 or epoch == cfg.epochs):
            history["test_epoch"].append(epoch)
            history["test_loss"].append(evaluate_loss(model, Xm, Ym))
        if test_set is not None and epoch in (1, cfg.epochs):
            history["full_test_epoch"].append(epoch)
            history["full_test_loss"].append(evaluate_loss(model, Xt, Yt))
        if epoch % 100 == 0:
            log.info("epoch %d train %.5f", epoch, loss.data)
    tensors = {k: p.data.copy() for k, p in model.params.items()}
    return Checkpoint(model.config, tensors, state, history)


def infer_record(model: CraeModel, interleaved) -> np.ndarray:
    """Split into segments, run each through the network, concatenate in order."""
    v = np.asarray(interleaved, dtype=float)
    L = model.config.segment_len
    if v.ndim != 1 or v.size % L:
        raise ValueError(f"record length {v.size} is not a multiple of {L}")
    with nn.no_grad():
        return forward(model, v.reshape(-1, 1, L)).data.reshape(-1).copy()


def layer_spectra(model: CraeModel, interleaved, fs: float = FS_TOTAL) -> dict[str, Spectrum]:
    """FFT of the first feature map at each tap, concatenated across segments.

    A tap whose per-segment length is ``L_tap`` is transformed at its own rate
    ``fs * L_tap / segment_len``.
    """
    v = np.asarray(interleaved, dtype=float)
    L = model.config.segment_len
    if v.ndim != 1 or v.size % L:
        raise ValueError(f"record length {v.size} is not a multiple of {L}")
    with nn.no_grad():
        trace = forward(model, v.reshape(-1, 1, L), taps=True)
    out = {}
    for tap in TAP_POINTS:
        if tap not in trace:
            continue
        fmap = trace[tap].data[:, 0, :]
        out[tap] = fft_magnitude(fmap.reshape(-1), fs * fmap.shape[1] / L)
    return out


_MAGIC = b"CRAE"
_VERSION = 1


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode()
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(ckpt: Checkpoint | CraeModel, path) -> None:
    """Binary checkpoint: magic, u16 version, length-prefixed JSON, tensors, CRC-32."""
    if isinstance(ckpt, CraeModel):
        ckpt = Checkpoint(ckpt.config, {k: p.data for k, p in ckpt.params.items()})
    tensors = dict(ckpt.tensors)
    meta: dict = {"config": ckpt.config.to_dict(), "history": {}}
    opt = ckpt.optimizer
    if opt is not None:
        meta["adam"] = {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "t": opt.t}
        for k in opt.m:
            tensors[f"adam.m.{k}"] = opt.m[k]
            tensors[f"adam.v.{k}"] = opt.v[k]
    for k, seq in ckpt.history.items():
        tensors[f"history.{k}"] = np.asarray(seq, dtype=float)
        meta["history"][k] = len(seq)
    blob = json.dumps(meta, sort_keys=True).encode()
    body = _MAGIC + struct.pack("<H", _VERSION) + struct.pack("<I", len(blob)) + blob
    body += b"".join(_pack_tensor(k, v) for k, v in tensors.items())
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path, expect: CraeConfig | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 14:
        raise ValueError(f"{path}: truncated checkpoint")
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise ValueError(f"{path}: CRC mismatch (truncated or corrupted)")
    (jlen,) = struct.unpack_from("<I", body, 6)
    pos = 10 + jlen
    meta = json.loads(body[10:pos])
    tensors: dict[str, np.ndarray] = {}
    while pos < len(body):
        (nlen,) = struct.unpack_from("<H", body, pos)
        name = body[pos + 2 : pos + 2 + nlen].decode()
        pos += 2 + nlen
        (rank,) = struct.unpack_from("<B", body, pos)
        dims = struct.unpack_from(f"<{rank}I", body, pos + 1)
        pos += 1 + 4 * rank
        count = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(body, "<f8", count, pos).reshape(dims).astype(np.float64)
        pos += 8 * count
    config = CraeConfig.from_dict(meta["config"])
    if expect is not None and (expect.variant, expect.segment_len, expect.rnn_hidden) != (
        config.variant,
        config.segment_len,
        config.rnn_hidden,
    ):
        raise ValueError(f"checkpoint holds a {config.variant.value} network, expected {expect.variant.value}")
    optimizer = None
    if "adam" in meta:
        a = meta["adam"]
        optimizer = nn.AdamState(a["lr"], a["beta1"], a["beta2"], a["eps"], int(a["t"]))
    history = {}
    params = {}
    for name, arr in tensors.items():
        if name.startswith("history."):
            key = name[len("history.") :]
            history[key] = [int(x) if key.endswith("epoch") else float(x) for x in arr]
        elif name.startswith("adam.m.") and optimizer is not None:
            optimizer.m[name[7:]] = arr.copy()
        elif name.startswith("adam.v.") and optimizer is not None:
            optimizer.v[name[7:]] = arr.copy()
        else:
            params[name] = arr
    return Checkpoint(config, params, optimizer, history)


class CRAECompensator(TransformerMixin, BaseEstimator):
    """Mismatch compensator with a scikit-learn estimator interface.

    ``X`` and ``y`` hold one interleaved record per row (mismatched input and
    its 0-ps reference). ``transform`` returns the compensated records.
    """

    def __init__(
        self,
        variant="CRAE",
        segment_len=100,
        rnn_hidden=128,
        seed=0,
        lr=1e-3,
        epochs=2000,
        batch_size=200,
        test_every=10,
        test_subset=400,
        batch_mode="shuffle",
    ):
        self.variant = variant
        self.segment_len = segment_len
        self.rnn_hidden = rnn_hidden
        self.seed = seed
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.test_every = test_every
        self.test_subset = test_subset
        self.batch_mode = batch_mode

    def _config(self) -> CraeConfig:
        return CraeConfig(**self.get_params())

    def fit(self, X, y, eval_set=None):
        cfg = self._config()
        X = check_records(X, multiple_of=cfg.segment_len)
        y = check_records(y, multiple_of=cfg.segment_len)
        if X.shape != y.shape:
            raise ValueError(f"X and y shapes differ: {X.shape} vs {y.shape}")
        if eval_set is not None:
            eval_set = tuple(check_records(a, multiple_of=cfg.segment_len) for a in eval_set)
        self.model_ = build_model(cfg)
        self.checkpoint_ = train(self.model_, (X, y), eval_set, cfg)
        self.history_ = self.checkpoint_.history
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_records(X, multiple_of=self.segment_len)
        return np.stack([infer_record(self.model_, row) for row in X])

    def predict(self, X):
        return self.transform(X)

    def score(self, X, y):
        """Negative mean absolute error against the references."""
        return -float(np.mean(np.abs(self.transform(X) - check_records(y))))

    def save(self, path) -> None:
        check_is_fitted(self, "checkpoint_")
        save_checkpoint(self.checkpoint_, path)

    @classmethod
    def from_checkpoint(cls, path) -> "CRAECompensator":
        ckpt = load_checkpoint(path)
        est = cls(**ckpt.config.to_dict())
        est.model_ = ckpt.to_model()
        est.checkpoint_ = ckpt
        est.history_ = ckpt.history
        return est
