"""The five forecasters: discrete d_t / d_tp / d_tpm and continuous c_t / c_tp.

Discrete models share a two-stream layout: a fully connected trajectory
stream reshaped to one h x h channel per forecast horizon, an optional
convolutional stream over the one-hot semantic map (d_tpm only), and a
convolutional fusion stack ending in a linear 1x1 projection followed by
a per-horizon softmax over the grid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from . import jsonio, nnkernel as nn, runtime
from .errors import (
    GridcastError,
    LayoutError,
    OutOfGridError,
    SchemaError,
    TruthOnObstacleError,
)
from .features import (
    POSE_DIM,
    TRAJECTORY_DIM,
    FeatureVector,
    Normalizer,
    ego_transform,
    pose_features,
    trajectory_features,
)
from .grid import Grid, GridDistribution, make_grid, position_to_cell, validate_distribution
from .scene import TRAINING, SemanticMap, encode_one_hot, obstacle_mask
from .targets import SmoothingSchedule, gaussian_target, masked_gaussian_target, one_hot_target

DISCRETE_KINDS = ("d_t", "d_tp", "d_tpm")
CONTINUOUS_KINDS = ("c_t", "c_tp")

# Selected architecture hyperparameters per discrete model kind.
TABLE1 = {
    "d_t": dict(
        trajectory_layers=4,
        trajectory_width=150,
        map_convs=0,
        map_filters=0,
        fusion_convs=2,
        fusion_filters=10,
    ),
    "d_tp": dict(
        trajectory_layers=5,
        trajectory_width=50,
        map_convs=0,
        map_filters=0,
        fusion_convs=2,
        fusion_filters=20,
    ),
    "d_tpm": dict(
        trajectory_layers=5,
        trajectory_width=50,
        map_convs=1,
        map_filters=8,
        fusion_convs=2,
        fusion_filters=20,
    ),
}

STANDARD_HORIZONS = (0.44, 0.96, 1.48, 2.0, 2.52)

SIGMA_FLOOR = 1e-4
RHO_MAX = 0.999

MODEL_MAGIC = b"GCMD"
MODEL_VERSION = 1


@dataclass(frozen=True)
class DiscreteModelConfig:
    kind: str
    grid: Grid
    horizons: tuple
    trajectory_layers: int
    trajectory_width: int
    fusion_convs: int
    fusion_filters: int
    map_convs: int = 0
    map_filters: int = 0
    smoothing: SmoothingSchedule | None = None
    masked_targets: bool = False

    def __post_init__(self):
        object.__setattr__(self, "horizons", tuple(float(t) for t in self.horizons))
        if self.kind not in DISCRETE_KINDS:
            raise ValueError(f"unknown discrete kind {self.kind!r}")
        if not self.horizons or any(t <= 0 for t in self.horizons):
            raise ValueError("horizons must be positive")
        if list(self.horizons) != sorted(self.horizons):
            raise ValueError("horizons must be increasing")
        if self.trajectory_layers < 1 or self.trajectory_width < 1:
            raise ValueError("trajectory net needs at least one hidden layer")
        if self.fusion_convs < 0 or (self.fusion_convs > 0 and self.fusion_filters < 1):
            raise ValueError("invalid fusion net settings")
        if self.kind == "d_tpm":
            if self.map_convs < 1 or self.map_filters < 1:
                raise ValueError("d_tpm requires a semantic map stream")
            if not self.masked_targets:
                raise ValueError("d_tpm trains on obstacle-masked targets")
        else:
            if self.map_convs != 0:
                raise ValueError(f"{self.kind} has no semantic map stream")
            if self.masked_targets:
                raise ValueError(f"{self.kind} does not use masked targets")
        if self.smoothing is not None and len(self.smoothing) != len(self.horizons):
            raise ValueError("smoothing schedule length must match horizons")

    @property
    def feature_layout(self) -> str:
        return "d_t" if self.kind == "d_t" else "d_tp"


def table1_config(
    kind: str,
    grid: Grid,
    horizons=STANDARD_HORIZONS,
    smoothing: SmoothingSchedule | None = None,
) -> DiscreteModelConfig:
    """Config with the selected hyperparameters for the given kind."""
    return DiscreteModelConfig(
        kind=kind,
        grid=grid,
        horizons=tuple(horizons),
        smoothing=smoothing,
        masked_targets=(kind == "d_tpm"),
        **TABLE1[kind],
    )


@dataclass(frozen=True)
class ForecastSet:
    """Per-horizon discrete probability distributions for one sample."""

    grid: Grid
    horizons: tuple
    distributions: tuple

    @classmethod
    def from_probs(cls, grid: Grid, horizons, probs: np.ndarray) -> "ForecastSet":
        dists = tuple(GridDistribution(grid, probs[k]) for k in range(len(horizons)))
        fs = cls(grid, tuple(horizons), dists)
        if runtime.strict_forecasts:
            for t, d in zip(fs.horizons, dists):
                report = validate_distribution(d)
                if not report.ok:
                    raise GridcastError(
                        f"invalid forecast at horizon {t}: {'; '.join(report.violations)}"
                    )
        return fs

    @property
    def probs(self) -> np.ndarray:
        return np.stack([d.probs for d in self.distributions])


@dataclass
class TrainReport:
    seed: int
    train_loss: list
    val_loss: list
    best_epoch: int
    stopped_epoch: int
    excluded_train: dict
    excluded_val: dict

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train_loss": [float(v) for v in self.train_loss],
            "val_loss": [float(v) for v in self.val_loss],
            "best_epoch": self.best_epoch,
            "stopped_epoch": self.stopped_epoch,
            "excluded_train": dict(self.excluded_train),
            "excluded_val": dict(self.excluded_val),
        }


class DiscreteModel:
    """A built (possibly trained) discrete forecaster."""

    def __init__(self, cfg: DiscreteModelConfig, specs, params, normalizer=None, seed=None):
        self.cfg = cfg
        self.specs = specs
        self.params = params
        self.normalizer = normalizer
        self.seed = seed
        counts = _discrete_stream_sizes(cfg)
        self._n_traj, self._n_map, self._n_fusion = counts

    @property
    def grid(self) -> Grid:
        return self.cfg.grid

    @property
    def horizons(self) -> tuple:
        return self.cfg.horizons


def _discrete_stream_sizes(cfg: DiscreteModelConfig):
    n_traj = cfg.trajectory_layers + 1  # hidden stack plus grid projection
    n_map = cfg.map_convs
    n_fusion = cfg.fusion_convs + 1  # conv stack plus final 1x1 projection
    return n_traj, n_map, n_fusion


def _discrete_specs(cfg: DiscreteModelConfig):
    h, t = cfg.grid.h, len(cfg.horizons)
    in_dim = TRAJECTORY_DIM if cfg.kind == "d_t" else POSE_DIM
    specs = []
    prev = in_dim
    for _ in range(cfg.trajectory_layers):
        specs.append(nn.LayerSpec(nn.DENSE, nn.RELU, fan_in=prev, fan_out=cfg.trajectory_width))
        prev = cfg.trajectory_width
    specs.append(nn.LayerSpec(nn.DENSE, nn.RELU, fan_in=prev, fan_out=h * h * t))
    cin = 8
    for _ in range(cfg.map_convs):
        specs.append(nn.LayerSpec(nn.CONV, nn.RELU, ksize=3, cin=cin, cout=cfg.map_filters))
        cin = cfg.map_filters
    fusion_in = t + (cfg.map_filters if cfg.kind == "d_tpm" else 0)
    for _ in range(cfg.fusion_convs):
        specs.append(nn.LayerSpec(nn.CONV, nn.RELU, ksize=3, cin=fusion_in, cout=cfg.fusion_filters))
        fusion_in = cfg.fusion_filters
    specs.append(nn.LayerSpec(nn.CONV, nn.LINEAR, ksize=1, cin=fusion_in, cout=t))
    return specs


def build_discrete(cfg: DiscreteModelConfig, seed: int = 0) -> DiscreteModel:
    specs = _discrete_specs(cfg)
    params = nn.init_parameters(specs, np.random.default_rng(seed))
    return DiscreteModel(cfg, specs, params, seed=seed)


def _forward_discrete_batch(model: DiscreteModel, x, maps, want_cache=False):
    """Logits (N, T, h, h) for normalized features x and one-hot maps."""
    cfg = model.cfg
    h, t = cfg.grid.h, len(cfg.horizons)
    n = x.shape[0]
    i = 0
    cache = []
    a = x
    for _ in range(model._n_traj):
        w, b = model.params[i]
        z = nn.dense_forward(w, b, a)
        if want_cache:
            cache.append((a, z))
        a = nn.relu(z)
        i += 1
    stream = a.reshape(n, t, h, h)
    if cfg.kind == "d_tpm":
        am = maps
        for _ in range(model._n_map):
            w, b = model.params[i]
            if want_cache:
                z, cols = nn.conv2d_same(w, b, am, want_cols=True)
                cache.append((am, z, cols))
            else:
                z = nn.conv2d_same(w, b, am)
            am = nn.relu(z)
            i += 1
        stream = np.concatenate([stream, am], axis=1)
    a = stream
    for j in range(model._n_fusion):
        w, b = model.params[i]
        if want_cache:
            z, cols = nn.conv2d_same(w, b, a, want_cols=True)
            cache.append((a, z, cols))
        else:
            z = nn.conv2d_same(w, b, a)
        a = nn.relu(z) if model.specs[i].activation == nn.RELU else z
        i += 1
    return (a, cache) if want_cache else a


def _backward_discrete_batch(model: DiscreteModel, cache, dlogits):
    """Parameter gradients matching model.params order."""
    cfg = model.cfg
    t = len(cfg.horizons)
    n = dlogits.shape[0]
    grads = [None] * len(model.params)
    # fusion stack (reverse)
    da = dlogits
    base_fusion = model._n_traj + model._n_map
    for j in reversed(range(model._n_fusion)):
        i = base_fusion + j
        xin, z, cols = cache[i]
        dz = da if model.specs[i].activation == nn.LINEAR else nn.relu_backward(z, da)
        da, dw, db = nn.conv2d_backward(model.params[i][0], xin, dz, cols)
        grads[i] = (dw, db)
    dstream = da
    dtraj = dstream[:, :t]
    if cfg.kind == "d_tpm":
        dmap = dstream[:, t:]
        for j in reversed(range(model._n_map)):
            i = model._n_traj + j
            xin, z, cols = cache[i]
            dz = nn.relu_backward(z, dmap)
            dmap, dw, db = nn.conv2d_backward(model.params[i][0], xin, dz, cols)
            grads[i] = (dw, db)
    da = dtraj.reshape(n, -1)
    for i in reversed(range(model._n_traj)):
        xin, z = cache[i]
        dz = nn.relu_backward(z, da)
        da, dw, db = nn.dense_backward(model.params[i][0], xin, dz)
        grads[i] = (dw, db)
    return grads


def _raw_features(kind: str, samples) -> np.ndarray:
    builder = trajectory_features if kind == "d_t" else pose_features
    return np.stack([builder(s).values for s in samples])


def _normalize(model, raw: np.ndarray) -> np.ndarray:
    if model.normalizer is None:
        return raw
    return (raw - model.normalizer.mean) / model.normalizer.std


def _one_hot_maps(samples) -> np.ndarray:
    return np.stack([encode_one_hot(s.map_tc) for s in samples]).astype(np.uint8)


def forward_discrete(model: DiscreteModel, f: FeatureVector, m: SemanticMap | None = None) -> ForecastSet:
    """Forecast distributions for a single sample's features (and map for d_tpm)."""
    if f.layout != model.cfg.feature_layout:
        raise LayoutError(
            f"model {model.cfg.kind} expects layout {model.cfg.feature_layout}, got {f.layout}"
        )
    if model.cfg.kind == "d_tpm":
        if m is None:
            raise LayoutError("d_tpm requires a semantic map input")
        maps = encode_one_hot(m)[None].astype(np.float64)
    else:
        if m is not None:
            raise LayoutError(f"{model.cfg.kind} takes no semantic map input")
        maps = None
    x = _normalize(model, f.values[None, :])
    logits = _forward_discrete_batch(model, x, maps)
    probs = nn.softmax2d(logits)[0]
    return ForecastSet.from_probs(model.grid, model.horizons, probs)


def predict_logits(model: DiscreteModel, samples, batch_size: int = 256) -> np.ndarray:
    """(N, T, h, h) pre-softmax outputs for a list of samples."""
    raw = _raw_features(model.cfg.kind, samples)
    x = _normalize(model, raw)
    maps = _one_hot_maps(samples) if model.cfg.kind == "d_tpm" else None
    out = []
    for start in range(0, len(samples), batch_size):
        xb = x[start : start + batch_size]
        mb = (
            maps[start : start + batch_size].astype(np.float64)
            if maps is not None
            else None
        )
        out.append(_forward_discrete_batch(model, xb, mb))
    return np.concatenate(out, axis=0)


def predict_probs(model: DiscreteModel, samples, batch_size: int = 256) -> np.ndarray:
    return nn.softmax2d(predict_logits(model, samples, batch_size))


def predict_forecasts(model: DiscreteModel, samples, batch_size: int = 256):
    probs = predict_probs(model, samples, batch_size)
    return [
        ForecastSet.from_probs(model.grid, model.horizons, probs[i])
        for i in range(len(samples))
    ]


# ---------------------------------------------------------------------------
# discrete training


def _check_horizons(samples, horizons):
    for s in samples:
        if len(s.future_times) != len(horizons) or not np.allclose(
            s.future_times, horizons, atol=1e-9
        ):
            raise SchemaError(
                f"sample {s.sample_id} horizons {s.future_times.tolist()} do not match "
                f"model horizons {list(horizons)}"
            )


def _discrete_targets(cfg: DiscreteModelConfig, samples):
    """Target rasters per kept sample plus exclusion counters."""
    grid = cfg.grid
    t = len(cfg.horizons)
    kept, rasters = [], []
    excluded = {"out_of_grid": 0, "truth_on_obstacle": 0}
    for idx, s in enumerate(samples):
        try:
            per_h = np.empty((t, grid.h, grid.h))
            for k in range(t):
                cell = position_to_cell(grid, s.future_positions[k])
                sigma = 0.0 if cfg.smoothing is None else cfg.smoothing.sigma_meters(k, grid)
                if cfg.masked_targets:
                    mask = obstacle_mask(s.future_map_at(k), TRAINING)
                    target = masked_gaussian_target(grid, cell, sigma, mask)
                elif sigma > 0:
                    target = gaussian_target(grid, cell, sigma)
                else:
                    target = one_hot_target(grid, cell)
                per_h[k] = target.probs
        except OutOfGridError:
            excluded["out_of_grid"] += 1
            continue
        except TruthOnObstacleError:
            excluded["truth_on_obstacle"] += 1
            continue
        kept.append(idx)
        rasters.append(per_h)
    if not kept:
        raise ValueError("no usable samples: every sample was excluded")
    return np.asarray(kept), np.stack(rasters), excluded


def _epoch_loss(model, x, maps, targets, batch_size):
    total = 0.0
    n = x.shape[0]
    for start in range(0, n, batch_size):
        xb = x[start : start + batch_size]
        mb = maps[start : start + batch_size].astype(np.float64) if maps is not None else None
        logits = _forward_discrete_batch(model, xb, mb)
        probs = nn.softmax2d(logits)
        total += nn.cross_entropy_grids(probs, targets[start : start + batch_size]) * len(xb)
    return total / n


def train_discrete(
    cfg: DiscreteModelConfig,
    train_samples,
    validation_samples,
    seed: int,
    batch_size: int = 40,
    learning_rate: float = 1e-3,
    max_epochs: int = 500,
    patience: int = 10,
    lr_decay: float = 0.5,
    decay_patience: int = 4,
):
    """Minimize the grid cross entropy with Adam and early stopping.

    Validation loss is checked every epoch; training stops after
    `patience` epochs without improvement and the best parameters are
    restored. Whenever the validation loss stalls for `decay_patience`
    epochs the learning rate is scaled by `lr_decay` and optimization
    resumes from the best parameters seen so far.
    """
    if not train_samples or not validation_samples:
        raise ValueError("training and validation sets must be non-empty")
    _check_horizons(train_samples, cfg.horizons)
    _check_horizons(validation_samples, cfg.horizons)

    kept_tr, targets_tr, excl_tr = _discrete_targets(cfg, train_samples)
    kept_va, targets_va, excl_va = _discrete_targets(cfg, validation_samples)
    train_kept = [train_samples[i] for i in kept_tr]
    val_kept = [validation_samples[i] for i in kept_va]

    model = build_discrete(cfg, seed=seed)
    raw_tr = _raw_features(cfg.kind, train_kept)
    model.normalizer = _fit_matrix_normalizer(raw_tr, cfg.feature_layout)
    x_tr = _normalize(model, raw_tr)
    x_va = _normalize(model, _raw_features(cfg.kind, val_kept))
    maps_tr = _one_hot_maps(train_kept) if cfg.kind == "d_tpm" else None
    maps_va = _one_hot_maps(val_kept) if cfg.kind == "d_tpm" else None

    rng = np.random.default_rng(seed)
    adam = nn.init_adam(model.params, lr=learning_rate)
    n = x_tr.shape[0]
    train_curve, val_curve = [], []
    best_val = np.inf
    best_params = nn.clone_parameters(model.params)
    best_epoch = 0
    bad_epochs = 0
    for epoch in range(1, max_epochs + 1):
        perm = rng.permutation(n)
        epoch_total = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            xb = x_tr[idx]
            mb = maps_tr[idx].astype(np.float64) if maps_tr is not None else None
            tb = targets_tr[idx]
            logits, cache = _forward_discrete_batch(model, xb, mb, want_cache=True)
            probs = nn.softmax2d(logits)
            epoch_total += nn.cross_entropy_grids(probs, tb) * len(idx)
            dlogits = nn.softmax_ce_grad(probs, tb)
            grads = _backward_discrete_batch(model, cache, dlogits)
            nn.adam_step(adam, model.params, grads)
        train_curve.append(epoch_total / n)
        val_loss = _epoch_loss(model, x_va, maps_va, targets_va, batch_size)
        val_curve.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_params = nn.clone_parameters(model.params)
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > patience:
                break
            if decay_patience > 0 and bad_epochs % decay_patience == 0:
                adam.lr *= lr_decay
                model.params = nn.clone_parameters(best_params)
                adam = nn.init_adam(model.params, lr=adam.lr)
    model.params = best_params
    report = TrainReport(
        seed=seed,
        train_loss=train_curve,
        val_loss=val_curve,
        best_epoch=best_epoch,
        stopped_epoch=len(val_curve),
        excluded_train=excl_tr,
        excluded_val=excl_va,
    )
    return model, report


def _fit_matrix_normalizer(raw: np.ndarray, layout: str) -> Normalizer:
    mean = raw.mean(axis=0)
    std = np.maximum(raw.std(axis=0), Normalizer.STD_FLOOR)
    return Normalizer(mean, std, layout)


def _jitter_params(params, seed) -> None:
    # Move to a generic point: zero biases plus zero features park ReLU
    # pre-activations exactly on the kink, where central differences and
    # the fixed subgradient legitimately disagree.
    rng = np.random.default_rng(seed)
    for w, b in params:
        w += rng.uniform(-0.1, 0.1, size=w.shape)
        b += rng.uniform(-0.1, 0.1, size=b.shape)


def gradient_check_model(model: DiscreteModel, samples) -> float:
    """Full-model check of the training-loss gradients vs central differences.

    Parameters are jittered to a generic position first; the model is
    meant to be a small throwaway instance.
    """
    _check_horizons(samples, model.cfg.horizons)
    _jitter_params(model.params, 0 if model.seed is None else model.seed)
    kept, targets, _ = _discrete_targets(model.cfg, samples)
    sub = [samples[i] for i in kept]
    x = _normalize(model, _raw_features(model.cfg.kind, sub))
    maps = (
        _one_hot_maps(sub).astype(np.float64) if model.cfg.kind == "d_tpm" else None
    )

    def loss_fn():
        logits = _forward_discrete_batch(model, x, maps)
        return nn.cross_entropy_grids(nn.softmax2d(logits), targets)

    logits, cache = _forward_discrete_batch(model, x, maps, want_cache=True)
    probs = nn.softmax2d(logits)
    grads = _backward_discrete_batch(model, cache, nn.softmax_ce_grad(probs, targets))
    return nn.gradient_check(loss_fn, model.params, grads)


# ---------------------------------------------------------------------------
# continuous baseline


@dataclass(frozen=True)
class ContinuousModelConfig:
    kind: str
    horizons: tuple
    hidden_layers: int = 2
    hidden_width: int = 100

    def __post_init__(self):
        object.__setattr__(self, "horizons", tuple(float(t) for t in self.horizons))
        if self.kind not in CONTINUOUS_KINDS:
            raise ValueError(f"unknown continuous kind {self.kind!r}")
        if not self.horizons or any(t <= 0 for t in self.horizons):
            raise ValueError("horizons must be positive")

    @property
    def feature_layout(self) -> str:
        return "c_t" if self.kind == "c_t" else "c_tp"


@dataclass(frozen=True)
class GaussianForecastSet:
    """Per-horizon bivariate Gaussian parameters in the ego frame."""

    horizons: tuple
    mu: np.ndarray  # (T, 2)
    sigma: np.ndarray  # (T, 2), positive
    rho: np.ndarray  # (T,), |rho| < 1

    def __post_init__(self):
        t = len(self.horizons)
        mu = np.asarray(self.mu, dtype=np.float64).reshape(t, 2)
        sigma = np.asarray(self.sigma, dtype=np.float64).reshape(t, 2)
        rho = np.asarray(self.rho, dtype=np.float64).reshape(t)
        if np.any(sigma <= 0):
            raise ValueError("standard deviations must be positive")
        if np.any(np.abs(rho) >= 1):
            raise ValueError("|rho| must be below 1")
        for name, arr in (("mu", mu), ("sigma", sigma), ("rho", rho)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "horizons", tuple(float(v) for v in self.horizons))


class ContinuousModel:
    def __init__(self, cfg: ContinuousModelConfig, specs, params, normalizer=None, seed=None):
        self.cfg = cfg
        self.specs = specs
        self.params = params
        self.normalizer = normalizer
        self.seed = seed

    @property
    def horizons(self) -> tuple:
        return self.cfg.horizons


def _continuous_specs(cfg: ContinuousModelConfig):
    in_dim = TRAJECTORY_DIM if cfg.kind == "c_t" else POSE_DIM
    specs = []
    prev = in_dim
    for _ in range(cfg.hidden_layers):
        specs.append(nn.LayerSpec(nn.DENSE, nn.RELU, fan_in=prev, fan_out=cfg.hidden_width))
        prev = cfg.hidden_width
    specs.append(
        nn.LayerSpec(nn.DENSE, nn.LINEAR, fan_in=prev, fan_out=5 * len(cfg.horizons))
    )
    return specs


def build_continuous(cfg: ContinuousModelConfig, seed: int = 0) -> ContinuousModel:
    specs = _continuous_specs(cfg)
    params = nn.init_parameters(specs, np.random.default_rng(seed))
    return ContinuousModel(cfg, specs, params, seed=seed)


def _forward_continuous_batch(model: ContinuousModel, x, want_cache=False):
    a = x
    cache = []
    for i, spec in enumerate(model.specs):
        w, b = model.params[i]
        z = nn.dense_forward(w, b, a)
        if want_cache:
            cache.append((a, z))
        a = nn.relu(z) if spec.activation == nn.RELU else z
    raw = a.reshape(x.shape[0], len(model.cfg.horizons), 5)
    return (raw, cache) if want_cache else raw


def _backward_continuous_batch(model: ContinuousModel, cache, draw):
    da = draw.reshape(draw.shape[0], -1)
    grads = [None] * len(model.params)
    for i in reversed(range(len(model.specs))):
        xin, z = cache[i]
        dz = da if model.specs[i].activation == nn.LINEAR else nn.relu_backward(z, da)
        da, dw, db = nn.dense_backward(model.params[i][0], xin, dz)
        grads[i] = (dw, db)
    return grads


def _softplus(x):
    return np.where(x > 30, x, np.log1p(np.exp(np.minimum(x, 30))))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _gaussian_head(raw):
    """Map raw (…, 5) network outputs to (mu, sigma, rho)."""
    mu = raw[..., 0:2]
    sigma = _softplus(raw[..., 2:4]) + SIGMA_FLOOR
    rho = RHO_MAX * np.tanh(raw[..., 4])
    return mu, sigma, rho


def _nll_terms(mu, sigma, rho, truth):
    dx = truth[..., 0] - mu[..., 0]
    dy = truth[..., 1] - mu[..., 1]
    sx, sy = sigma[..., 0], sigma[..., 1]
    q = 1.0 - rho * rho
    z = (dx / sx) ** 2 - 2.0 * rho * dx * dy / (sx * sy) + (dy / sy) ** 2
    return np.log(2 * np.pi) + np.log(sx) + np.log(sy) + 0.5 * np.log(q) + z / (2 * q)


def _nll_raw_grad(raw, truth):
    """Per-grid NLL values and their gradients w.r.t. the raw outputs."""
    mu, sigma, rho = _gaussian_head(raw)
    dx = truth[..., 0] - mu[..., 0]
    dy = truth[..., 1] - mu[..., 1]
    sx, sy = sigma[..., 0], sigma[..., 1]
    q = 1.0 - rho * rho
    z = (dx / sx) ** 2 - 2.0 * rho * dx * dy / (sx * sy) + (dy / sy) ** 2
    nll = np.log(2 * np.pi) + np.log(sx) + np.log(sy) + 0.5 * np.log(q) + z / (2 * q)
    draw = np.empty_like(raw)
    draw[..., 0] = -(dx / sx**2 - rho * dy / (sx * sy)) / q
    draw[..., 1] = -(dy / sy**2 - rho * dx / (sx * sy)) / q
    dsx = 1.0 / sx - (dx**2 / sx**3 - rho * dx * dy / (sx**2 * sy)) / q
    dsy = 1.0 / sy - (dy**2 / sy**3 - rho * dx * dy / (sx * sy**2)) / q
    draw[..., 2] = dsx * _sigmoid(raw[..., 2])
    draw[..., 3] = dsy * _sigmoid(raw[..., 3])
    drho = -rho / q - dx * dy / (sx * sy * q) + z * rho / q**2
    draw[..., 4] = drho * RHO_MAX * (1.0 - np.tanh(raw[..., 4]) ** 2)
    return nll, draw


def forward_continuous(model: ContinuousModel, f: FeatureVector) -> GaussianForecastSet:
    if f.layout != model.cfg.feature_layout:
        raise LayoutError(
            f"model {model.cfg.kind} expects layout {model.cfg.feature_layout}, got {f.layout}"
        )
    x = f.values[None, :]
    if model.normalizer is not None:
        x = (x - model.normalizer.mean) / model.normalizer.std
    raw = _forward_continuous_batch(model, x)[0]
    mu, sigma, rho = _gaussian_head(raw)
    return GaussianForecastSet(model.horizons, mu, sigma, rho)


def bivariate_nll(fc: GaussianForecastSet, truth) -> float:
    """Mean negative log likelihood of the true positions over horizons."""
    truth = np.asarray(truth, dtype=np.float64).reshape(len(fc.horizons), 2)
    return float(_nll_terms(fc.mu, fc.sigma, fc.rho, truth).mean())


def _continuous_arrays(cfg: ContinuousModelConfig, samples):
    _check_horizons(samples, cfg.horizons)
    with_pose = cfg.kind == "c_tp"
    views = [ego_transform(s, with_pose) for s in samples]
    x = np.stack([v.features.values for v in views])
    y = np.stack([v.future_positions for v in views])
    return x, y


def train_continuous(
    cfg: ContinuousModelConfig,
    train_samples,
    validation_samples,
    seed: int,
    batch_size: int = 40,
    learning_rate: float = 1e-3,
    max_epochs: int = 500,
    patience: int = 10,
    lr_decay: float = 0.5,
    decay_patience: int = 4,
):
    """Train the Gaussian-parameter network by minimizing the bivariate NLL.

    Same stopping and plateau-decay policy as the discrete trainer.
    """
    if not train_samples or not validation_samples:
        raise ValueError("training and validation sets must be non-empty")
    x_tr_raw, y_tr = _continuous_arrays(cfg, train_samples)
    x_va_raw, y_va = _continuous_arrays(cfg, validation_samples)
    model = build_continuous(cfg, seed=seed)
    model.normalizer = _fit_matrix_normalizer(x_tr_raw, cfg.feature_layout)
    x_tr = (x_tr_raw - model.normalizer.mean) / model.normalizer.std
    x_va = (x_va_raw - model.normalizer.mean) / model.normalizer.std

    rng = np.random.default_rng(seed)
    adam = nn.init_adam(model.params, lr=learning_rate)
    n, t = x_tr.shape[0], len(cfg.horizons)
    train_curve, val_curve = [], []
    best_val = np.inf
    best_params = nn.clone_parameters(model.params)
    best_epoch = 0
    bad_epochs = 0

    def eval_loss(x, y):
        total = 0.0
        for start in range(0, x.shape[0], batch_size):
            raw = _forward_continuous_batch(model, x[start : start + batch_size])
            nll, _ = _nll_raw_grad(raw, y[start : start + batch_size])
            total += nll.sum()
        return total / (x.shape[0] * t)

    for epoch in range(1, max_epochs + 1):
        perm = rng.permutation(n)
        epoch_total = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            raw, cache = _forward_continuous_batch(model, x_tr[idx], want_cache=True)
            nll, draw = _nll_raw_grad(raw, y_tr[idx])
            epoch_total += nll.sum()
            grads = _backward_continuous_batch(model, cache, draw / (len(idx) * t))
            nn.adam_step(adam, model.params, grads)
        train_curve.append(epoch_total / (n * t))
        val_loss = eval_loss(x_va, y_va)
        val_curve.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_params = nn.clone_parameters(model.params)
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > patience:
                break
            if decay_patience > 0 and bad_epochs % decay_patience == 0:
                adam.lr *= lr_decay
                model.params = nn.clone_parameters(best_params)
                adam = nn.init_adam(model.params, lr=adam.lr)
    model.params = best_params
    report = TrainReport(
        seed=seed,
        train_loss=train_curve,
        val_loss=val_curve,
        best_epoch=best_epoch,
        stopped_epoch=len(val_curve),
        excluded_train={},
        excluded_val={},
    )
    return model, report


def predict_gaussians(model: ContinuousModel, samples) -> list:
    """Ego-frame Gaussian forecasts plus ego-frame truths for each sample."""
    x_raw, y = _continuous_arrays(model.cfg, samples)
    x = x_raw
    if model.normalizer is not None:
        x = (x_raw - model.normalizer.mean) / model.normalizer.std
    raw = _forward_continuous_batch(model, x)
    mu, sigma, rho = _gaussian_head(raw)
    return [
        (GaussianForecastSet(model.horizons, mu[i], sigma[i], rho[i]), y[i])
        for i in range(len(samples))
    ]


def gradient_check_continuous(model: ContinuousModel, samples) -> float:
    _jitter_params(model.params, 0 if model.seed is None else model.seed)
    x_raw, y = _continuous_arrays(model.cfg, samples)
    x = x_raw
    if model.normalizer is not None:
        x = (x_raw - model.normalizer.mean) / model.normalizer.std
    t = len(model.cfg.horizons)
    scale = 1.0 / (x.shape[0] * t)

    def loss_fn():
        raw = _forward_continuous_batch(model, x)
        nll, _ = _nll_raw_grad(raw, y)
        return float(nll.sum() * scale)

    raw, cache = _forward_continuous_batch(model, x, want_cache=True)
    _, draw = _nll_raw_grad(raw, y)
    grads = _backward_continuous_batch(model, cache, draw * scale)
    return nn.gradient_check(loss_fn, model.params, grads)


# ---------------------------------------------------------------------------
# checkpoints


def _normalizer_header(normalizer):
    if normalizer is None:
        return None
    return {
        "layout": normalizer.layout,
        "mean": normalizer.mean.tolist(),
        "std": normalizer.std.tolist(),
    }


def _normalizer_from_header(blob):
    if blob is None:
        return None
    return Normalizer(np.asarray(blob["mean"]), np.asarray(blob["std"]), blob["layout"])


def save_model(model, path) -> None:
    """Versioned binary checkpoint: JSON header plus raw parameter arrays."""
    if isinstance(model, DiscreteModel):
        cfg = model.cfg
        header = {
            "family": "discrete",
            "kind": cfg.kind,
            "grid_h": cfg.grid.h,
            "grid_e": cfg.grid.e,
            "horizons": list(cfg.horizons),
            "trajectory_layers": cfg.trajectory_layers,
            "trajectory_width": cfg.trajectory_width,
            "map_convs": cfg.map_convs,
            "map_filters": cfg.map_filters,
            "fusion_convs": cfg.fusion_convs,
            "fusion_filters": cfg.fusion_filters,
            "smoothing_sigma_cells": list(cfg.smoothing.sigma_cells)
            if cfg.smoothing
            else None,
            "masked_targets": cfg.masked_targets,
            "normalizer": _normalizer_header(model.normalizer),
            "seed": model.seed,
        }
    elif isinstance(model, ContinuousModel):
        cfg = model.cfg
        header = {
            "family": "continuous",
            "kind": cfg.kind,
            "horizons": list(cfg.horizons),
            "hidden_layers": cfg.hidden_layers,
            "hidden_width": cfg.hidden_width,
            "normalizer": _normalizer_header(model.normalizer),
            "seed": model.seed,
        }
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    blob = jsonio.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<IQ", MODEL_VERSION, len(blob)))
        fh.write(blob)
        nn.save_params(fh, model.specs, model.params)


def load_model(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise SchemaError(f"not a model checkpoint: magic {magic!r}")
        version, header_len = struct.unpack("<IQ", fh.read(12))
        if version != MODEL_VERSION:
            raise SchemaError(f"unsupported model checkpoint version {version}")
        header = jsonio.loads(fh.read(header_len).decode("utf-8"))
        specs, params = nn.load_params(fh)
    normalizer = _normalizer_from_header(header.get("normalizer"))
    if header["family"] == "discrete":
        cfg = DiscreteModelConfig(
            kind=header["kind"],
            grid=make_grid(header["grid_h"], header["grid_e"]),
            horizons=tuple(header["horizons"]),
            trajectory_layers=header["trajectory_layers"],
            trajectory_width=header["trajectory_width"],
            map_convs=header["map_convs"],
            map_filters=header["map_filters"],
            fusion_convs=header["fusion_convs"],
            fusion_filters=header["fusion_filters"],
            smoothing=SmoothingSchedule(tuple(header["smoothing_sigma_cells"]))
            if header["smoothing_sigma_cells"]
            else None,
            masked_targets=header["masked_targets"],
        )
        expected = _discrete_specs(cfg)
        if expected != specs:
            raise SchemaError("checkpoint layer specs do not match its configuration")
        return DiscreteModel(cfg, specs, params, normalizer, header.get("seed"))
    if header["family"] == "continuous":
        cfg = ContinuousModelConfig(
            kind=header["kind"],
            horizons=tuple(header["horizons"]),
            hidden_layers=header["hidden_layers"],
            hidden_width=header["hidden_width"],
        )
        expected = _continuous_specs(cfg)
        if expected != specs:
            raise SchemaError("checkpoint layer specs do not match its configuration")
        return ContinuousModel(cfg, specs, params, normalizer, header.get("seed"))
    raise SchemaError(f"unknown model family {header['family']!r}")


def with_smoothing(cfg: DiscreteModelConfig, schedule: SmoothingSchedule | None) -> DiscreteModelConfig:
    return replace(cfg, smoothing=schedule)
