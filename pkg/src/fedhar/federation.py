"""Client selection, aggregation rules, early stopping and the training loops.

All three loops (centralized, synchronous, asynchronous) run on the virtual
clock of :mod:`fedhar.simclock`, so a run is a pure function of its
configuration and seeds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .config import ExperimentConfig
from .metrics import MetricsRecord, evaluate, mean_record
from .neural import MlpArchitecture, OptimizerConfig, init_params, train_local, training_seed
from .preprocess import PreparedData
from .simclock import DelayProfile, EventKind, LatencyModel, ServerResource, SimClock

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AggregationConfig:
    mode: str = "sync"
    clients_per_round: int | None = None  # None selects every client
    local_epochs: int = 2
    mixing_ratio: float = 0.8
    rule_form: str = "convex"
    async_weight_norm: str = "proportional"
    max_rounds: int = 100
    max_virtual_duration: float = 2400.0
    target_avg_updates: float = 0.0
    early_stop_patience: int = 50

    def __post_init__(self):
        if not 0 < self.mixing_ratio <= 1:
            raise ValueError("mixing ratio must lie in (0, 1]")
        if self.early_stop_patience < 1:
            raise ValueError("patience must be >= 1")
        if self.rule_form not in ("convex", "literal"):
            raise ValueError(f"unknown rule form {self.rule_form!r}")
        if self.async_weight_norm not in ("proportional", "client-normalized"):
            raise ValueError(f"unknown async weight normalisation {self.async_weight_norm!r}")

    @classmethod
    def from_experiment(cls, cfg: ExperimentConfig) -> "AggregationConfig":
        f = cfg.federation
        return cls(cfg.mode, None if f.clients_per_round == "all" else f.clients_per_round,
                   f.local_epochs, f.mixing_ratio, f.rule_form, f.async_weight_norm, f.max_rounds,
                   f.max_virtual_duration, f.target_avg_updates, f.early_stop_patience)


@dataclass
class FederationState:
    params: np.ndarray
    version: int
    pool: dict[str, int]  # client id -> n_i
    update_counts: dict[str, int] = field(default_factory=dict)

    @property
    def total_samples(self) -> int:
        return sum(self.pool.values())


@dataclass(frozen=True)
class ClientUpdate:
    client_id: str
    delta: np.ndarray
    base_version: int
    n_samples: int
    local_loss: float = float("nan")
    dispatch_time: float = 0.0
    arrival_time: float = 0.0


def select_clients(pool: Sequence[str], count: int, seed: int, round_index: int) -> list[str]:
    """Uniform sample without replacement, returned in pool order."""
    if not 1 <= count <= len(pool):
        raise ValueError(f"cannot select {count} of {len(pool)} clients")
    if count == len(pool):
        return list(pool)
    rng = np.random.default_rng([int(seed), int(round_index)])
    picked = np.sort(rng.choice(len(pool), size=count, replace=False))
    return [pool[i] for i in picked]


def _check_dim(state: FederationState, delta: np.ndarray):
    if delta.shape != state.params.shape:
        raise ValueError(f"update has shape {delta.shape}, model has {state.params.shape}")


def aggregate_sync(state: FederationState, updates: Sequence[ClientUpdate],
                   rule_form: str = "convex") -> FederationState:
    """One synchronous merge of the round's client updates.

    convex:  x + sum_i (n_i / N_S) delta_i, N_S the selected clients' samples
    literal: x + sum_i (n_i / N) (x + delta_i), N the whole pool's samples

    Updates are summed in client-id order, so the result does not depend on
    arrival order.
    """
    if not updates:
        raise ValueError("no updates to aggregate")
    for u in updates:
        _check_dim(state, u.delta)
        if u.base_version != state.version:
            raise ValueError(f"{u.client_id}: update from version {u.base_version}, "
                             f"model is at {state.version}")
    ordered = sorted(updates, key=lambda u: u.client_id)
    x = state.params
    acc = np.zeros_like(x)
    if rule_form == "convex":
        n_sel = sum(u.n_samples for u in ordered)
        for u in ordered:
            acc += (u.n_samples / n_sel) * u.delta
    elif rule_form == "literal":
        n_all = state.total_samples
        for u in ordered:
            acc += (u.n_samples / n_all) * (x + u.delta)
    else:
        raise ValueError(f"unknown rule form {rule_form!r}")
    counts = dict(state.update_counts)
    for u in ordered:
        counts[u.client_id] = counts.get(u.client_id, 0) + 1
    return replace(state, params=x + acc, version=state.version + 1, update_counts=counts)


def async_weight(cfg: AggregationConfig, n_i: int, total: int, pool_size: int) -> float:
    """Effective mixing weight of one asynchronous update."""
    if cfg.async_weight_norm == "proportional":
        return cfg.mixing_ratio * n_i / total
    return min(1.0, cfg.mixing_ratio * n_i * pool_size / total)


def aggregate_async(state: FederationState, update: ClientUpdate, cfg: AggregationConfig) -> FederationState:
    """Merge a single update on arrival; staleness is not penalised.

    convex:  x + beta delta            (= (1 - beta) x + beta (x + delta))
    literal: x + beta (x + delta)
    """
    _check_dim(state, update.delta)
    beta = async_weight(cfg, update.n_samples, state.total_samples, len(state.pool))
    x = state.params
    if cfg.rule_form == "convex":
        new = x + beta * update.delta
    else:
        new = x + beta * (x + update.delta)
    counts = dict(state.update_counts)
    counts[update.client_id] = counts.get(update.client_id, 0) + 1
    return replace(state, params=new, version=state.version + 1, update_counts=counts)


def early_stop_check(history: Sequence[float], patience: int) -> bool:
    """True once the best value is ``patience`` evaluations old.

    Only a strict improvement resets the count.
    """
    if not history:
        return False
    best = int(np.argmax(np.asarray(history, dtype=float)))
    return len(history) - 1 - best >= patience


# ---------------------------------------------------------------- run loops

@dataclass
class RunTrace:
    records: list[MetricsRecord] = field(default_factory=list)
    client_records: list[MetricsRecord] = field(default_factory=list)
    clock: SimClock = field(default_factory=SimClock)
    params: np.ndarray | None = None
    merges: int = 0
    staleness: list[int] = field(default_factory=list)
    busy_time: float = 0.0
    server_counts: dict = field(default_factory=dict)
    completion_time: float = 0.0
    stop_reason: str = ""
    param_history: list[np.ndarray] = field(default_factory=list)

    def central(self) -> list[MetricsRecord]:
        return [r for r in self.records if r.vantage == "central"]


class _Context:
    """Shared machinery of the three loops."""

    def __init__(self, data: PreparedData, cfg: ExperimentConfig):
        self.data = data
        self.cfg = cfg
        m = cfg.model
        self.arch = MlpArchitecture.for_task(len(data.feature_names), len(data.class_names), m.hidden,
                                             m.leaky_slope)
        self.optimizer = OptimizerConfig(m.optimizer, m.learning_rate, m.momentum, m.beta1, m.beta2, m.eps)
        self.persist = m.persist_state(cfg.mode)
        self.agg = AggregationConfig.from_experiment(cfg)
        self.clients = {c.client_id: c for c in data.clients}
        self.ids = [c.client_id for c in data.clients]
        self.position = {cid: i for i, cid in enumerate(self.ids)}
        s = cfg.simulation
        self.profile = DelayProfile(s.pre_eval_delay, s.pre_merge_delay)
        self.trace = RunTrace()
        self.server = ServerResource(self.profile)

    def latency(self, counts: dict[str, int]):
        s = self.cfg.simulation
        epochs = self.agg.local_epochs if self.cfg.mode != "central" else 1
        return LatencyModel.proportional(counts, s.seconds_per_sample, epochs, jitter=s.jitter,
                                         sigma=s.jitter_sigma, width=s.jitter_width,
                                         seed=self.cfg.seeds.latency).streams()

    def central_eval(self, params, t, counter, avg_updates) -> MetricsRecord:
        test = self.data.test_set
        rec = evaluate(params, self.arch, test.x, test.y, vantage="central", split="test",
                       virtual_time=t, round=counter, avg_updates=avg_updates)
        self.trace.records.append(rec)
        return rec

    def client_eval(self, params, cid, t, counter, avg_updates) -> MetricsRecord:
        c = self.clients[cid]
        rec = evaluate(params, self.arch, c.x_val, c.y_val, vantage="distributed", split="validation",
                       virtual_time=t, round=counter, avg_updates=avg_updates, client_id=cid)
        self.trace.client_records.append(rec)
        return rec

    def distributed_summary(self, records, t, counter, avg_updates):
        if records:
            self.trace.records.append(mean_record(records, virtual_time=t, round=counter,
                                                  avg_updates=avg_updates, client_id=""))

    def train(self, params, x, y, epochs, step_index, position, state):
        m = self.cfg.model
        return train_local(params, self.arch, x, y, epochs, m.batch_size, self.optimizer,
                           training_seed(self.cfg.seeds.model, step_index, position),
                           state=state if self.persist else None)

    def finish(self, params, stop_reason):
        tr = self.trace
        tr.params = params
        tr.stop_reason = stop_reason
        tr.busy_time = self.server.busy_time
        tr.server_counts = dict(self.server.counts)
        tr.completion_time = max(self.server.free_at, tr.clock.now)
        return tr


def run_central(data: PreparedData, cfg: ExperimentConfig, record_params=False) -> RunTrace:
    """Centralized baseline on the pooled training splits, one epoch per step.

    Each epoch is applied as ``x + delta``, the same arithmetic a one-client
    synchronous round performs, so the two trajectories can match exactly.
    """
    ctx = _Context(data, cfg)
    x = np.concatenate([c.x_train for c in data.clients])
    y = np.concatenate([c.y_train for c in data.clients])
    sampler = ctx.latency({"central": int(y.size)})
    clock, trace = ctx.trace.clock, ctx.trace
    params = init_params(ctx.arch, cfg.seeds.model)
    history, state, t = [], None, 0.0
    if record_params:
        trace.param_history.append(params.copy())
    stop = "max_rounds"
    for epoch in range(ctx.agg.max_rounds + 1):
        clock.schedule(t, EventKind.CENTRAL_EVAL)
        t = ctx.server.perform("eval", clock.next_event().fire_time)
        history.append(ctx.central_eval(params, t, epoch, float(epoch)).macro_f1)
        if epoch == ctx.agg.max_rounds:
            break
        if early_stop_check(history, ctx.agg.early_stop_patience):
            stop = "early_stop"
            break
        res = ctx.train(params, x, y, 1, epoch, 0, state)
        state = res.state
        params = params + res.delta
        if record_params:
            trace.param_history.append(params.copy())
        clock.schedule(t + sampler.sample("central"), EventKind.CLIENT_ARRIVAL, "central")
        t = clock.next_event().fire_time
    clock.schedule(t, EventKind.TERMINATE)
    clock.next_event()
    return ctx.finish(params, stop)


def run_sync(data: PreparedData, cfg: ExperimentConfig, record_params=False) -> RunTrace:
    """Round-based federated training.

    Per round: central evaluation, client selection, validation of the
    current model on each selected client, local training, one aggregation
    once every selected update has arrived.
    """
    ctx = _Context(data, cfg)
    agg = ctx.agg
    sampler = ctx.latency({c.client_id: c.n_samples for c in data.clients})
    clock, trace = ctx.trace.clock, ctx.trace
    fed = FederationState(init_params(ctx.arch, cfg.seeds.model), 0,
                          {c.client_id: c.n_samples for c in data.clients})
    count = agg.clients_per_round or len(ctx.ids)
    states: dict[str, object] = {}
    history, t = [], 0.0
    if record_params:
        trace.param_history.append(fed.params.copy())
    stop = "max_rounds"
    for rnd in range(agg.max_rounds + 1):
        avg = trace.merges / len(ctx.ids)
        clock.schedule(t, EventKind.CENTRAL_EVAL)
        t = ctx.server.perform("eval", clock.next_event().fire_time)
        history.append(ctx.central_eval(fed.params, t, rnd, avg).macro_f1)
        if rnd == agg.max_rounds:
            break
        if early_stop_check(history, agg.early_stop_patience):
            stop = "early_stop"
            break
        selected = select_clients(ctx.ids, count, cfg.seeds.selection, rnd)
        pending, dist = {}, []
        for cid in selected:
            dist.append(ctx.client_eval(fed.params, cid, t, rnd, avg))
            c = ctx.clients[cid]
            res = ctx.train(fed.params, c.x_train, c.y_train, agg.local_epochs, rnd,
                            ctx.position[cid], states.get(cid))
            states[cid] = res.state
            arrival = clock.schedule(t + sampler.sample(cid), EventKind.CLIENT_ARRIVAL, cid).fire_time
            pending[cid] = ClientUpdate(cid, res.delta, fed.version, c.n_samples, res.loss, t, arrival)
        ctx.distributed_summary(dist, t, rnd, avg)
        updates = []
        while pending:
            ev = clock.next_event()
            t = ctx.server.perform("merge", ev.fire_time)
            updates.append(pending.pop(ev.client_id))
        fed = aggregate_sync(fed, updates, agg.rule_form)
        trace.merges += len(updates)
        trace.staleness.extend(0 for _ in updates)
        if record_params:
            trace.param_history.append(fed.params.copy())
    clock.schedule(t, EventKind.TERMINATE)
    clock.next_event()
    return ctx.finish(fed.params, stop)


def run_async(data: PreparedData, cfg: ExperimentConfig, record_params=False) -> RunTrace:
    """Event-driven asynchronous training.

    Every client trains continuously.  Each arrival is merged immediately
    (after the server's merge delay, in FIFO order) and the client is sent
    back out with the new global model.  Central evaluation fires every
    ``eval_period`` virtual seconds.  The run ends at ``max_virtual_duration``
    or once the average number of merged updates per client reaches
    ``target_avg_updates`` (followed by one final central evaluation).
    """
    ctx = _Context(data, cfg)
    agg = ctx.agg
    sampler = ctx.latency({c.client_id: c.n_samples for c in data.clients})
    clock, trace = ctx.trace.clock, ctx.trace
    fed = FederationState(init_params(ctx.arch, cfg.seeds.model), 0,
                          {c.client_id: c.n_samples for c in data.clients})
    n_clients = len(ctx.ids)
    target = agg.target_avg_updates * n_clients if agg.target_avg_updates > 0 else None
    dispatches = {cid: 0 for cid in ctx.ids}
    states: dict[str, object] = {}
    latest: dict[str, MetricsRecord] = {}
    pending: dict[str, ClientUpdate] = {}

    def dispatch(cid: str, t: float):
        avg = trace.merges / n_clients
        latest[cid] = ctx.client_eval(fed.params, cid, t, fed.version, avg)
        c = ctx.clients[cid]
        res = ctx.train(fed.params, c.x_train, c.y_train, agg.local_epochs, dispatches[cid],
                        ctx.position[cid], states.get(cid))
        dispatches[cid] += 1
        states[cid] = res.state
        arrival = clock.schedule(t + sampler.sample(cid), EventKind.CLIENT_ARRIVAL, cid).fire_time
        pending[cid] = ClientUpdate(cid, res.delta, fed.version, c.n_samples, res.loss, t, arrival)

    def central(t_request: float):
        t = ctx.server.perform("eval", t_request)
        avg = trace.merges / n_clients
        ctx.central_eval(fed.params, t, fed.version, avg)
        ctx.distributed_summary([latest[c] for c in ctx.ids if c in latest], t, fed.version, avg)
        if record_params:
            trace.param_history.append(fed.params.copy())

    central(0.0)
    clock.schedule(agg.max_virtual_duration, EventKind.TERMINATE)
    clock.schedule(cfg.federation.eval_period, EventKind.CENTRAL_EVAL)
    for cid in ctx.ids:
        dispatch(cid, 0.0)

    stop = "duration"
    while True:
        ev = clock.next_event()
        if ev.kind is EventKind.TERMINATE:
            break
        if ev.kind is EventKind.CENTRAL_EVAL:
            central(ev.fire_time)
            clock.schedule(ev.fire_time + cfg.federation.eval_period, EventKind.CENTRAL_EVAL)
            continue
        commit = ctx.server.perform("merge", ev.fire_time)
        update = pending.pop(ev.client_id)
        trace.staleness.append(fed.version - update.base_version)
        fed = aggregate_async(fed, update, agg)
        trace.merges += 1
        if target is not None and trace.merges >= target:
            stop = "target"
            central(commit)
            break
        dispatch(ev.client_id, commit)
    return ctx.finish(fed.params, stop)


RUNNERS = {"central": run_central, "sync": run_sync, "async": run_async}


def run(data: PreparedData, cfg: ExperimentConfig, record_params=False) -> RunTrace:
    return RUNNERS[cfg.mode](data, cfg, record_params)
