"""Experiment configuration and the round loop for every method."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from . import data as data_mod
from .client import (
    ClientState,
    ClientUpdate,
    TrainConfig,
    local_update_fedavg,
    local_update_fedprox,
    local_update_fedstyle,
)
from .errors import ConfigError, FedStyleError, InputError, NumericError
from .losses import LossWeights
from .nn import ModelDims, init_params
from .server import (
    ServerState,
    evaluate,
    global_update,
    init_global_styles,
    train_on_public,
    weighted_average,
)

log = logging.getLogger(__name__)

METHODS = ("fedstyle", "fedavg", "fedprox", "local")
PARTITIONS = ("sorted", "dirichlet", "evenly")

# RNG stream tags, combined with the run seed.
_INIT, _CLIENT, _SERVER = 11, 23, 37


@dataclass
class ExperimentConfig:
    method: str = "fedstyle"
    rounds: int = 100
    local_epochs: int = 5
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.5
    lambda1: float = 10.0
    lambda2: float = 0.05
    lambda3: float = 20.0
    lambda4: float = 10.0
    lambda5: float = 0.005
    mu: float = 0.01
    global_epochs: int = 1
    partition: str = "sorted"
    alpha: float = 0.5
    num_clients: int = 0  # 0: one client per class
    data_csv: str = ""  # empty: synthetic data
    classes: int = 10
    per_class: int = 200
    dim: int = 32
    sigma: float = 1.0
    hidden_dim: int = 64
    embed_dim: int = 16
    train_fraction: float = 0.8
    public_fraction: float = 0.1
    seed: int = 0
    exclude_positive_in_numerator: bool = False
    public_overlaps_clients: bool = False
    workers: int = 1

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.partition not in PARTITIONS:
            raise ConfigError(f"unknown partition {self.partition!r}; expected one of {PARTITIONS}")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.local_epochs < 0 or self.global_epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ConfigError("need lr > 0 and 0 <= momentum < 1")
        if self.mu < 0:
            raise ConfigError("mu must be >= 0")
        if self.alpha <= 0:
            raise ConfigError("alpha must be > 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.method == "fedstyle" and self.partition != "sorted":
            raise ConfigError("fedstyle needs one class per client (partition = sorted)")
        try:
            self.loss_weights()
        except InputError as exc:
            raise ConfigError(str(exc)) from exc

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5)

    def local_training(self) -> TrainConfig:
        return TrainConfig(
            self.local_epochs, self.batch_size, self.lr, self.momentum, self.loss_weights(),
            self.mu, self.exclude_positive_in_numerator,
        )

    def global_training(self, epochs: int | None = None) -> TrainConfig:
        return TrainConfig(
            self.global_epochs if epochs is None else epochs, self.batch_size, self.lr,
            self.momentum, self.loss_weights(), self.mu, self.exclude_positive_in_numerator,
        )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**values)


@dataclass
class RoundMetrics:
    round: int
    accuracy: float
    macro_f1: float
    mean_local_loss: float
    style_norms: list[float] = field(default_factory=list)
    wall_clock: float = 0.0


@dataclass
class RunResult:
    config: dict[str, Any]
    rounds: list[RoundMetrics]
    final_confusion: list[list[int]]
    trailing_mean_accuracy: float | None

    @property
    def final_accuracy(self) -> float | None:
        return self.rounds[-1].accuracy if self.rounds else None

    @property
    def final_macro_f1(self) -> float | None:
        return self.rounds[-1].macro_f1 if self.rounds else None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def trailing_mean_accuracy(result: RunResult, window: int = 10) -> float:
    """Mean accuracy over the last ``window`` rounds."""
    if window < 1:
        raise InputError("window must be >= 1")
    if len(result.rounds) < window:
        raise InputError(f"need at least {window} rounds, have {len(result.rounds)}")
    return float(np.mean([m.accuracy for m in result.rounds[-window:]]))


def _load_dataset(cfg: ExperimentConfig) -> data_mod.Dataset:
    if cfg.data_csv:
        return data_mod.load_csv(cfg.data_csv)
    return data_mod.generate_synthetic(cfg.classes, cfg.per_class, cfg.dim, cfg.sigma, cfg.seed)


def _partition(cfg: ExperimentConfig, train_sets) -> data_mod.Partition:
    num_classes = len(train_sets)
    if cfg.partition == "sorted":
        if cfg.num_clients not in (0, num_classes):
            raise ConfigError(
                f"sorted partition gives one client per class ({num_classes}); "
                f"num_clients = {cfg.num_clients}"
            )
        return data_mod.partition_sorted(train_sets)
    n = cfg.num_clients or num_classes
    if cfg.partition == "dirichlet":
        return data_mod.partition_dirichlet(train_sets, cfg.alpha, n, cfg.seed)
    return data_mod.partition_evenly(train_sets, n, cfg.seed)


def client_rng(seed: int, client_id: int, round: int) -> np.random.Generator:
    return np.random.default_rng([seed, _CLIENT, client_id, round])


def server_rng(seed: int, round: int) -> np.random.Generator:
    return np.random.default_rng([seed, _SERVER, round])


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Build data and parties, then run ``cfg.rounds`` rounds of ``cfg.method``."""
    cfg.validate()
    ds = _load_dataset(cfg)
    sp = data_mod.split(
        ds,
        data_mod.SplitSpec(
            cfg.train_fraction, cfg.public_fraction, cfg.seed, cfg.public_overlaps_clients
        ),
    )
    test = data_mod.Dataset.concat(sp.test)
    dims = ModelDims(ds.dim, cfg.hidden_dim, cfg.embed_dim, ds.num_classes)
    params = init_params(dims, np.random.default_rng([cfg.seed, _INIT]))
    server = ServerState(params, sp.public)
    local_tc = cfg.local_training()
    global_tc = cfg.global_training()
    metrics: list[RoundMetrics] = []
    last_eval = None

    if cfg.method == "local":
        tc = cfg.global_training(epochs=cfg.local_epochs)
        for t in range(1, cfg.rounds + 1):
            start = time.perf_counter()
            params, loss = train_on_public(params, sp.public, tc, server_rng(cfg.seed, t))
            if not params.is_finite() or not np.isfinite(loss):
                raise NumericError(f"round {t}: non-finite parameters or loss")
            last_eval = evaluate(params, test)
            metrics.append(_round_metrics(t, last_eval, loss, [], start))
        return _finish(cfg, metrics, last_eval)

    pooled = data_mod.pool(sp.train)
    partition = _partition(cfg, sp.train)
    clients = [ClientState(k, pooled.subset(ix)) for k, ix in enumerate(partition.client_indices)]
    if cfg.method == "fedstyle":
        init_global_styles(server)
        for c in clients:
            c.prev_styles = server.global_styles.copy()

    def run_client(state: ClientState, t: int) -> ClientUpdate:
        rng = client_rng(cfg.seed, state.client_id, t)
        gp = server.global_params
        if cfg.method == "fedstyle":
            return local_update_fedstyle(state, gp, server.global_styles, local_tc, rng, t)
        if cfg.method == "fedprox":
            return local_update_fedprox(state, gp, local_tc, rng, t)
        return local_update_fedavg(state, gp, local_tc, rng, t)

    pool_exec = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for t in range(1, cfg.rounds + 1):
            start = time.perf_counter()
            try:
                if pool_exec is None:
                    updates = [run_client(c, t) for c in clients]
                else:
                    updates = list(pool_exec.map(lambda c: run_client(c, t), clients))
                updates.sort(key=lambda u: u.client_id)
                if cfg.method == "fedstyle":
                    global_update(server, updates, global_tc, server_rng(cfg.seed, t), t)
                else:
                    server.global_params = weighted_average(updates)
                    server.round = t
            except NumericError as exc:
                raise NumericError(f"round {t}: {exc}") from exc
            last_eval = evaluate(server.global_params, test)
            mean_loss = float(np.mean([u.mean_loss for u in updates]))
            norms = [float(np.linalg.norm(u.style.v)) for u in updates]
            metrics.append(_round_metrics(t, last_eval, mean_loss, norms, start))
            log.debug("round %d acc=%.4f f1=%.4f", t, last_eval.accuracy, last_eval.macro_f1)
    finally:
        if pool_exec is not None:
            pool_exec.shutdown()
    return _finish(cfg, metrics, last_eval)


def _round_metrics(t, ev, loss, norms, start) -> RoundMetrics:
    return RoundMetrics(t, ev.accuracy, ev.macro_f1, loss, norms, time.perf_counter() - start)


def _finish(cfg, metrics, last_eval) -> RunResult:
    result = RunResult(
        cfg.to_dict(),
        metrics,
        last_eval.confusion.tolist() if last_eval is not None else [],
        None,
    )
    if len(metrics) >= 10:
        result.trailing_mean_accuracy = trailing_mean_accuracy(result, 10)
    return result


@dataclass
class SuiteEntry:
    config: ExperimentConfig
    result: RunResult | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.result is not None


def _run_isolated(cfg: ExperimentConfig) -> tuple[RunResult | None, str | None]:
    try:
        return run_experiment(cfg), None
    except FedStyleError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def run_suite(configs: list[ExperimentConfig], workers: int = 1) -> list[SuiteEntry]:
    """Run independent experiments; failures are recorded per entry, order is preserved."""
    if not configs:
        raise InputError("empty suite")
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            outcomes = list(ex.map(_run_isolated, configs))
    else:
        outcomes = [_run_isolated(c) for c in configs]
    return [SuiteEntry(c, r, e) for c, (r, e) in zip(configs, outcomes)]
