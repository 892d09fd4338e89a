"""GRU encoder-attention-decoder with interchangeable output heads.

Every agent's state history runs through a shared stacked-GRU encoder;
the reference agent's final encoder state queries a scaled dot-product
attention over all agents' final states, and the attended context
initializes a stacked-GRU decoder driven for a fixed number of steps by
a learned constant input.  A dense layer on the final decoder state
emits either fixed-offset coordinates (with per-point log-sigmas) or
polynomial coefficients (with per-coefficient log-sigmas).

The forward pass is written against dispatching ops, so it runs in two
modes: with Tensor parameters it builds the autodiff graph for training,
with raw arrays it is a plain numpy inference path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .anchoring import AnchorDistribution, AnchorSchedule, fixed_schedule, random_schedule
from .autodiff import Adam, Parameter, Tensor, sgd_step
from .data import STATE_DIM, Sample
from .errors import ConfigError, DataError, NumericalError, ShapeError
from .poly import PolyTrajectory, eval_poly, gaussian_nll

COORDINATES = "coordinates"
POLYNOMIAL = "polynomial"

# fixed feature normalization applied before the first encoder layer, chosen
# for motorway magnitudes: [dx, dy, v, alpha, theta, l, phi]
INPUT_SCALE = np.array([1.0, 1.0, 0.1, 0.5, 1.0, 0.05, 1.0])


@dataclass(frozen=True)
class ModelConfig:
    head: str = POLYNOMIAL
    units: int = 32
    encoder_layers: int = 2
    decoder_layers: int = 3
    decoder_steps: int = 5
    d_x: int = 3
    d_y: int = 3
    horizon: int = 50
    anchor_count: int = 25
    anchor_mode: str = "random"
    anchor_min: int = 35
    anchor_max: int = 55
    input_dim: int = STATE_DIM

    def __post_init__(self):
        if self.head not in (COORDINATES, POLYNOMIAL):
            raise ConfigError(f"unknown head {self.head!r}")
        if self.anchor_mode not in ("fixed", "random"):
            raise ConfigError(f"unknown anchor mode {self.anchor_mode!r}")
        if self.head == COORDINATES and self.anchor_mode == "random":
            raise ConfigError(
                "coordinate head bakes its offsets into the output layer; "
                "random anchoring requires the polynomial head"
            )
        if min(self.units, self.encoder_layers, self.decoder_layers, self.decoder_steps) < 1:
            raise ConfigError("units, layer counts and decoder steps must be >= 1")
        if min(self.d_x, self.d_y) < 1:
            raise ConfigError("polynomial degrees must be >= 1")

    @property
    def output_dim(self) -> int:
        if self.head == POLYNOMIAL:
            return 2 * (self.d_x + self.d_y)
        return 4 * self.anchor_count

    @property
    def time_scale(self) -> float:
        """Normalization scale for the output head.

        The polynomial head emits coefficients of scale * sum c_j (t/scale)^j
        and the coordinate head emits positions divided by scale, so raw
        outputs stay O(1) for motorway magnitudes; predictions map back to
        metres and per-frame coefficients."""
        return float(self.horizon)

    @property
    def head_offsets(self) -> tuple[int, ...]:
        """Fixed offsets of the coordinate head (empty for the polynomial head)."""
        if self.head == POLYNOMIAL:
            return ()
        return fixed_schedule(self.anchor_count, self.horizon).offsets

    def to_meta(self) -> dict[str, str]:
        return {
            "model.head": self.head,
            "model.units": str(self.units),
            "model.encoder_layers": str(self.encoder_layers),
            "model.decoder_layers": str(self.decoder_layers),
            "model.decoder_steps": str(self.decoder_steps),
            "model.d_x": str(self.d_x),
            "model.d_y": str(self.d_y),
            "model.horizon": str(self.horizon),
            "model.anchor_count": str(self.anchor_count),
            "model.anchor_mode": self.anchor_mode,
            "model.anchor_min": str(self.anchor_min),
            "model.anchor_max": str(self.anchor_max),
            "model.input_dim": str(self.input_dim),
        }

    @staticmethod
    def from_meta(meta: dict[str, str]) -> "ModelConfig":
        def _int(key):
            return int(meta[f"model.{key}"])

        return ModelConfig(
            head=meta["model.head"],
            units=_int("units"),
            encoder_layers=_int("encoder_layers"),
            decoder_layers=_int("decoder_layers"),
            decoder_steps=_int("decoder_steps"),
            d_x=_int("d_x"),
            d_y=_int("d_y"),
            horizon=_int("horizon"),
            anchor_count=_int("anchor_count"),
            anchor_mode=meta["model.anchor_mode"],
            anchor_min=_int("anchor_min"),
            anchor_max=_int("anchor_max"),
            input_dim=_int("input_dim"),
        )


@dataclass(frozen=True)
class CoordinatePrediction:
    """Fixed-offset positions with per-point standard deviations."""

    offsets: tuple[int, ...]
    points: np.ndarray  # (T, 2)
    sigmas: np.ndarray  # (T, 2)


@dataclass(frozen=True)
class GRUWeights:
    """One cell's weights: `w_x` maps the input to the three stacked gate
    pre-activations [update | reset | candidate], `u_zr` maps the hidden
    state to the two gate pre-activations, `u_c` to the candidate."""

    w_x: object
    u_zr: object
    u_c: object
    b: object


def gru_cell(x, h, weights: GRUWeights):
    """Classic GRU update: the reset gate scales h before the candidate
    matmul, and the update gate interpolates between old state and candidate."""
    units = weights.u_c.shape[0]
    gx = x @ weights.w_x + weights.b
    gh = h @ weights.u_zr
    z = ad.sigmoid(gx[:, :units] + gh[:, :units])
    r = ad.sigmoid(gx[:, units : 2 * units] + gh[:, units:])
    c = ad.tanh(gx[:, 2 * units :] + (r * h) @ weights.u_c)
    return z * h + (1.0 - z) * c


def attention(query, keys, values):
    """Scaled dot-product attention: softmax(q . k / sqrt(d)) weighted values.

    `query` is a (d,) vector, `keys` and `values` are (n, d) stacks.
    """
    keys = np.asarray(keys, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    if keys.ndim != 2 or keys.shape[0] == 0:
        raise ShapeError("attention needs at least one key")
    if keys.shape != values.shape or query.shape != (keys.shape[1],):
        raise ShapeError(
            f"attention shapes mismatch: query {query.shape}, keys {keys.shape}, values {values.shape}"
        )
    scores = keys @ query / math.sqrt(keys.shape[1])
    weights = ad.softmax(scores)
    return weights @ values


class TrajectoryModel:
    """Sequence model over agent state histories; see module docstring."""

    def __init__(self, config: ModelConfig, seed=0):
        self.config = config
        rng = _stream_rng(seed, 0)
        self.params: dict[str, Tensor] = {}
        in_dim = config.input_dim
        for layer in range(config.encoder_layers):
            self._init_gru(rng, f"enc{layer}", in_dim, config.units)
            in_dim = config.units
        for layer in range(config.decoder_layers):
            self._init_gru(rng, f"dec{layer}", config.units, config.units)
        scale = 1.0 / math.sqrt(config.units)
        self.params["dec.x0"] = Tensor(rng.uniform(-scale, scale, size=(1, config.units)))
        self.params["head.w"] = Tensor(
            rng.uniform(-scale, scale, size=(config.units, config.output_dim))
        )
        self.params["head.b"] = Tensor(np.zeros(config.output_dim))

    def _init_gru(self, rng, prefix: str, in_dim: int, units: int) -> None:
        sx = 1.0 / math.sqrt(in_dim)
        sh = 1.0 / math.sqrt(units)
        self.params[f"{prefix}.w_x"] = Tensor(rng.uniform(-sx, sx, size=(in_dim, 3 * units)))
        self.params[f"{prefix}.u_zr"] = Tensor(rng.uniform(-sh, sh, size=(units, 2 * units)))
        self.params[f"{prefix}.u_c"] = Tensor(rng.uniform(-sh, sh, size=(units, units)))
        self.params[f"{prefix}.b"] = Tensor(np.zeros(3 * units))

    def parameters(self) -> list[Parameter]:
        return [Parameter(name, node) for name, node in self.params.items()]

    def zero_head(self) -> None:
        """Zero the output layer; useful as a structural baseline."""
        self.params["head.w"].data[:] = 0.0
        self.params["head.b"].data[:] = 0.0

    # -- forward -----------------------------------------------------------

    def _weights(self, prefix: str, train: bool) -> GRUWeights:
        get = (lambda k: self.params[k]) if train else (lambda k: self.params[k].data)
        return GRUWeights(
            w_x=get(f"{prefix}.w_x"),
            u_zr=get(f"{prefix}.u_zr"),
            u_c=get(f"{prefix}.u_c"),
            b=get(f"{prefix}.b"),
        )

    def _encode_slot(self, x_seq: np.ndarray, mask: np.ndarray, train: bool):
        """Run the stacked encoder over one agent slot: (B, S, F) -> (B, units)."""
        batch, steps, _ = x_seq.shape
        units = self.config.units
        all_present = bool(np.all(mask == 1.0))
        hidden = [np.zeros((batch, units)) for _ in range(self.config.encoder_layers)]
        layer_weights = [
            self._weights(f"enc{layer}", train) for layer in range(self.config.encoder_layers)
        ]
        for t in range(steps):
            x = x_seq[:, t, :]
            for layer, weights in enumerate(layer_weights):
                new_h = gru_cell(x, hidden[layer], weights)
                if not all_present:
                    m = mask[:, t : t + 1]
                    new_h = m * new_h + (1.0 - m) * hidden[layer]
                hidden[layer] = new_h
                x = new_h
        return hidden[-1]

    def forward_batch(self, states: np.ndarray, mask: np.ndarray, train: bool = True):
        """Batched forward pass.

        states: (B, A, S, input_dim) with agent slot 0 the reference agent;
        mask: (B, A, S) with 1.0 where a state is valid.  Returns the raw
        head output, (B, output_dim), as a Tensor in train mode.
        """
        if states.ndim != 4 or states.shape[3] != self.config.input_dim:
            raise ShapeError(f"states must be (B, A, S, {self.config.input_dim}), got {states.shape}")
        batch, n_agents, steps, _ = states.shape
        if steps < 1:
            raise DataError("empty history: at least one state frame is required")
        if self.config.input_dim == INPUT_SCALE.size:
            states = states * INPUT_SCALE
        units = self.config.units
        finals = [
            self._encode_slot(states[:, a, :, :], mask[:, a, :], train) for a in range(n_agents)
        ]
        query = finals[0]
        if n_agents == 1:
            context = query
        else:
            present = mask.any(axis=2)  # (B, A)
            bias = np.where(present, 0.0, -1e9)
            scale = 1.0 / math.sqrt(units)
            scores = ad.concat(
                [ad.sum_along(query * k, axis=1, keepdims=True) * scale for k in finals],
                axis=1,
            )
            weights = ad.softmax(scores + bias, axis=1)
            context = weights[:, 0:1] * finals[0]
            for a in range(1, n_agents):
                context = context + weights[:, a : a + 1] * finals[a]
        x0 = self.params["dec.x0"] if train else self.params["dec.x0"].data
        dec_in = x0 + np.zeros((batch, units))
        hidden = [context for _ in range(self.config.decoder_layers)]
        layer_weights = [
            self._weights(f"dec{layer}", train) for layer in range(self.config.decoder_layers)
        ]
        for _ in range(self.config.decoder_steps):
            x = dec_in
            for layer, weights in enumerate(layer_weights):
                hidden[layer] = gru_cell(x, hidden[layer], weights)
                x = hidden[layer]
        head_w = self.params["head.w"] if train else self.params["head.w"].data
        head_b = self.params["head.b"] if train else self.params["head.b"].data
        return hidden[-1] @ head_w + head_b

    def forward(self, sample: Sample, train: bool = False):
        """Single-sample forward; returns the raw output vector."""
        states = sample.states[np.newaxis]
        mask = sample.mask[np.newaxis]
        out = self.forward_batch(states, mask, train=train)
        return out if train else out[0]

    def predict(self, sample: Sample):
        """Parse the raw output into the head's prediction object."""
        raw = self.forward(sample, train=False)
        cfg = self.config
        scale = cfg.time_scale
        if cfg.head == POLYNOMIAL:
            d_x, d_y = cfg.d_x, cfg.d_y
            # raw c_j parameterizes scale * sum c_j (t/scale)^j, so a_j = c_j * scale^(1-j)
            unscale_x = scale ** (np.arange(1, d_x + 1) - 1.0)
            unscale_y = scale ** (np.arange(1, d_y + 1) - 1.0)
            return PolyTrajectory(
                a=raw[:d_x] / unscale_x,
                b=raw[d_x : d_x + d_y] / unscale_y,
                sigma_a=np.exp(raw[d_x + d_y : 2 * d_x + d_y]) / unscale_x,
                sigma_b=np.exp(raw[2 * d_x + d_y :]) / unscale_y,
            )
        t = cfg.anchor_count
        return CoordinatePrediction(
            offsets=cfg.head_offsets,
            points=raw[: 2 * t].reshape(t, 2) * scale,
            sigmas=np.exp(raw[2 * t :].reshape(t, 2)) * scale,
        )

    def predict_positions(self, sample: Sample, offsets: Sequence[int]) -> np.ndarray:
        """Predicted (x, y) at the requested frame offsets."""
        offsets = [int(t) for t in offsets]
        prediction = self.predict(sample)
        if self.config.head == POLYNOMIAL:
            return np.array(
                [[eval_poly(prediction.a, t), eval_poly(prediction.b, t)] for t in offsets]
            )
        index = {t: i for i, t in enumerate(prediction.offsets)}
        missing = [t for t in offsets if t not in index]
        if missing:
            raise ConfigError(
                f"coordinate head predicts offsets {prediction.offsets}, not {missing}"
            )
        return prediction.points[[index[t] for t in offsets]]


# -- loss -----------------------------------------------------------------------


def batch_loss(model: TrajectoryModel, batch: Sequence[Sample], t_matrix: np.ndarray, train: bool = True):
    """Negative log-likelihood of a batch at the given anchor offsets.

    t_matrix is (B, T) integer frame offsets (one schedule row per sample;
    the coordinate head requires every row to equal its fixed offsets).
    Returns (mean loss, per-sample loss vector).
    """
    cfg = model.config
    t_matrix = np.asarray(t_matrix, dtype=np.int64)
    batch_size, n_anchors = t_matrix.shape
    if batch_size != len(batch):
        raise ShapeError(f"t_matrix rows {batch_size} != batch size {len(batch)}")
    if cfg.head == COORDINATES and not np.all(t_matrix == np.array(cfg.head_offsets)):
        raise ConfigError("coordinate head can only be supervised at its fixed offsets")
    truth = np.zeros((batch_size, n_anchors, 2))
    for i, sample in enumerate(batch):
        horizon = sample.future.shape[0] - 1
        if t_matrix[i].max() > horizon:
            raise DataError(
                f"sample {sample.sample_id}: anchor offset {int(t_matrix[i].max())} "
                f"beyond available future of {horizon} frames"
            )
        truth[i] = sample.future[t_matrix[i]]
    states, mask = collate(batch)
    out = model.forward_batch(states, mask, train=train)
    if cfg.head == POLYNOMIAL:
        d_x, d_y = cfg.d_x, cfg.d_y
        coeff_x = out[:, :d_x]
        coeff_y = out[:, d_x : d_x + d_y]
        var_x_scale = (2.0 * out[:, d_x + d_y : 2 * d_x + d_y]).exp() if train else np.exp(
            2.0 * out[:, d_x + d_y : 2 * d_x + d_y]
        )
        var_y_scale = (2.0 * out[:, 2 * d_x + d_y :]).exp() if train else np.exp(
            2.0 * out[:, 2 * d_x + d_y :]
        )
        exps_x = np.arange(1, d_x + 1, dtype=np.float64)
        exps_y = np.arange(1, d_y + 1, dtype=np.float64)
        x_cols, y_cols, vx_cols, vy_cols = [], [], [], []
        scale = cfg.time_scale
        t_float = t_matrix.astype(np.float64) / scale
        for k in range(n_anchors):
            p_x = (t_float[:, k : k + 1] ** exps_x) * scale
            p_y = (t_float[:, k : k + 1] ** exps_y) * scale
            x_cols.append(ad.sum_along(coeff_x * p_x, axis=1, keepdims=True))
            y_cols.append(ad.sum_along(coeff_y * p_y, axis=1, keepdims=True))
            vx_cols.append(ad.sum_along(var_x_scale * p_x**2, axis=1, keepdims=True))
            vy_cols.append(ad.sum_along(var_y_scale * p_y**2, axis=1, keepdims=True))
        pred_x = ad.concat(x_cols, axis=1)
        pred_y = ad.concat(y_cols, axis=1)
        var_x = ad.concat(vx_cols, axis=1)
        var_y = ad.concat(vy_cols, axis=1)
    else:
        t = cfg.anchor_count
        scale = cfg.time_scale
        pred_x = out[:, 0 : 2 * t : 2] * scale
        pred_y = out[:, 1 : 2 * t : 2] * scale
        ls_x = out[:, 2 * t :: 2]
        ls_y = out[:, 2 * t + 1 :: 2]
        var_x = ((2.0 * ls_x).exp() if train else np.exp(2.0 * ls_x)) * scale**2
        var_y = ((2.0 * ls_y).exp() if train else np.exp(2.0 * ls_y)) * scale**2
    nll = gaussian_nll(pred_x, var_x, truth[:, :, 0]) + gaussian_nll(pred_y, var_y, truth[:, :, 1])
    per_sample = ad.sum_along(nll, axis=1) * (1.0 / n_anchors)
    return ad.mean_all(per_sample), per_sample


def collate(batch: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples, padding agent slots with fully masked zeros."""
    if not batch:
        raise DataError("empty batch")
    steps = batch[0].states.shape[1]
    if any(s.states.shape[1] != steps for s in batch):
        raise DataError("samples in one batch must share the history length")
    max_agents = max(s.states.shape[0] for s in batch)
    states = np.zeros((len(batch), max_agents, steps, STATE_DIM))
    mask = np.zeros((len(batch), max_agents, steps))
    for i, sample in enumerate(batch):
        a = sample.states.shape[0]
        states[i, :a] = sample.states
        mask[i, :a] = sample.mask
    return states, mask


# -- training ---------------------------------------------------------------------


@dataclass(frozen=True)
class TrainSettings:
    lr: float = 0.005
    lr_decay: float = 1.0  # final lr as a fraction of lr, geometric schedule
    epochs: int = 10
    steps: int = 0  # 0 = run all epochs; otherwise stop after this many batches
    batch: int = 32
    optimizer: str = "adam"
    grad_clip: float = 5.0
    seed: tuple = (0, 0)


@dataclass
class TrainResult:
    loss_curve: list = field(default_factory=list)  # (step, loss) pairs

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1][1] if self.loss_curve else math.nan


def _stream_rng(seed, stream: int) -> np.random.Generator:
    parts = [int(s) for s in (seed if isinstance(seed, (tuple, list)) else (seed,))]
    return np.random.default_rng(parts + [stream])


def draw_schedules(
    cfg: ModelConfig, batch_size: int, rng: np.random.Generator
) -> np.ndarray:
    """One anchor schedule per sample: a fresh uniform draw in random mode,
    the fixed evenly spread offsets otherwise."""
    if cfg.head == COORDINATES:
        return np.tile(np.array(cfg.head_offsets, dtype=np.int64), (batch_size, 1))
    if cfg.anchor_mode == "fixed":
        offsets = fixed_schedule(cfg.anchor_count, cfg.horizon).offsets
        return np.tile(np.array(offsets, dtype=np.int64), (batch_size, 1))
    dist = AnchorDistribution(cfg.anchor_min, cfg.anchor_max)
    rows = [random_schedule(dist, cfg.anchor_count, rng).offsets for _ in range(batch_size)]
    return np.array(rows, dtype=np.int64)


def train(model: TrajectoryModel, samples: Sequence[Sample], settings: TrainSettings) -> TrainResult:
    """Mini-batch NLL training; every epoch reshuffles with its own stream.

    Anchor draws use a stream independent of shuffling, so a degenerate
    random range U{c, c} reproduces fixed-anchor training exactly.
    """
    if not samples:
        raise DataError("training needs a non-empty dataset")
    _check_supervision_range(model.config, samples)
    rng_shuffle = _stream_rng(settings.seed, 1)
    rng_anchor = _stream_rng(settings.seed, 2)
    params = model.parameters()
    adam = (
        Adam(params, lr=settings.lr, grad_clip=settings.grad_clip)
        if settings.optimizer == "adam"
        else None
    )
    if settings.optimizer not in ("adam", "sgd"):
        raise ConfigError(f"unknown optimizer {settings.optimizer!r}")
    batches_per_epoch = -(-len(samples) // settings.batch)
    total_steps = settings.steps or settings.epochs * batches_per_epoch
    result = TrainResult()
    step = 0
    for _ in range(settings.epochs):
        order = rng_shuffle.permutation(len(samples))
        for start in range(0, len(order), settings.batch):
            if settings.steps and step >= settings.steps:
                return result
            batch = [samples[i] for i in order[start : start + settings.batch]]
            t_matrix = draw_schedules(model.config, len(batch), rng_anchor)
            loss, per_sample = batch_loss(model, batch, t_matrix, train=True)
            finite = np.isfinite(per_sample.data)
            if not finite.all():
                bad = [batch[i].sample_id for i in np.flatnonzero(~finite)]
                raise NumericalError(
                    f"non-finite loss at step {step} for sample(s) {bad}"
                )
            loss.backward()
            decay = 1.0
            if settings.lr_decay < 1.0 and total_steps > 1:
                decay = settings.lr_decay ** (step / (total_steps - 1))
            if adam is not None:
                adam.lr = settings.lr * decay
                adam.step()
            else:
                sgd_step(params, lr=settings.lr * decay, grad_clip=settings.grad_clip)
            result.loss_curve.append((step, float(loss.data)))
            step += 1
    return result


def _check_supervision_range(cfg: ModelConfig, samples: Sequence[Sample]) -> None:
    if cfg.head == COORDINATES or cfg.anchor_mode == "fixed":
        needed = max(cfg.head_offsets or fixed_schedule(cfg.anchor_count, cfg.horizon).offsets)
    else:
        needed = cfg.anchor_max
    available = min(s.future.shape[0] - 1 for s in samples)
    if needed > available:
        raise DataError(
            f"anchors reach offset {needed} but samples only cover {available} future frames"
        )


# -- persistence ---------------------------------------------------------------------


def save_model(model: TrajectoryModel, path, extra_meta: dict | None = None) -> None:
    meta = model.config.to_meta()
    meta.update(extra_meta or {})
    ad.save_checkpoint(path, model.parameters(), meta)


def load_model(path) -> tuple[TrajectoryModel, dict[str, str]]:
    meta, arrays = ad.load_checkpoint(path)
    config = ModelConfig.from_meta(meta)
    model = TrajectoryModel(config, seed=0)
    expected = set(model.params)
    if set(arrays) != expected:
        raise DataError(
            f"checkpoint parameters {sorted(arrays)} do not match model {sorted(expected)}"
        )
    for name, node in model.params.items():
        if node.data.shape != arrays[name].shape:
            raise DataError(f"checkpoint shape mismatch for '{name}'")
        node.data = arrays[name]
    return model, meta
