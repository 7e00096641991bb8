"""Round-based federated training protocols over provider-grouped data.

Four deterministic state machines share one scaffolding:

* ``run_fedavg``       -- clients train locally for E epochs, the server
  averages the returned parameters (unweighted).
* ``run_fedshampoo``   -- local updates use two-sided Shampoo preconditioning
  with element-wise clipping; preconditioner statistics stay on the client
  and are never transmitted.
* ``run_fl_group_dp``  -- the group-DP baseline: per selected client, each
  sampled provider group's local update is computed from the broadcast
  model, L2-clipped to the sensitivity S, summed, perturbed once with
  Gaussian noise of scale S*sigma, and scaled by 1/M before upload.
* ``run_dp_clgecl``    -- the constrained loss-sum variant: per-group deltas
  are corrected by a client dual variable (lambda accumulates the gap
  between the received global model and the client's previous local
  solution) before the same clip/noise/aggregate pipeline.

Every random draw is a pure function of (seed, round, client, provider), so
identical configurations produce bit-identical models and ledgers, client
order never matters (aggregation sums in sorted client order), and removing
one provider perturbs nothing but that provider's own contribution.  Rounds
in Bernoulli client-sampling mode that select nobody still apply the server
noise and still count one composition step.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .accountant import (
    AlphaGrid,
    PrivacySpend,
    SgmParams,
    calibrate_sigma,
    compose_and_convert,
    group_sampling_rate,
)
from .errors import ConfigError
from .fed_data import FederatedDataset, min_group_count
from .metrics import evaluate_answers
from .models import LayeredModel, log_softmax, stack_records
from .optim import (
    OptimizerConfig,
    ShampooConfig,
    ShampooState,
    clip_l2,
    make_optimizer,
    shampoo_step,
)
from .rng import stream
from .wire import FULL_PRECISION_BITS, NF4_BITS, CommLedger, UpdateMessage, nf4_roundtrip


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    loss: float
    accuracy: float
    anls: float


@dataclass(frozen=True)
class RoundPlan:
    """Deterministic sampling decision for one round."""

    round_index: int
    sampled_clients: Tuple[int, ...]
    providers: Dict[int, Tuple[str, ...]]
    client_mode: str
    provider_mode: str


@dataclass(frozen=True)
class DpConfig:
    """Group-DP knobs; adjacency is provider-level add/remove.

    ``noise_multiplier`` is relative to the clipping norm (the Gaussian has
    scale ``clip_norm * noise_multiplier``); leave it unset to calibrate it
    from ``target_epsilon`` at ``delta``.  ``noise_disabled`` is a debug mode
    for sensitivity checks: clipping still applies, no noise is added, and
    no privacy spend is reported.
    """

    clip_norm: float = 0.5
    providers_per_round: int = 50
    noise_multiplier: Optional[float] = None
    target_epsilon: Optional[float] = None
    delta: float = 1e-5
    provider_sampling: str = "fixed"  # fixed | poisson
    noise_disabled: bool = False

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be > 0")
        if self.providers_per_round < 1:
            raise ConfigError("providers_per_round must be >= 1")
        if self.provider_sampling not in ("fixed", "poisson"):
            raise ConfigError(f"unknown provider sampling {self.provider_sampling!r}")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must be in (0, 1)")


@dataclass
class DualState:
    """Per-client dual variable and the previous local solution."""

    lam: np.ndarray
    local_prev: np.ndarray


@dataclass
class RunResult:
    model: LayeredModel
    history: List[RoundMetrics]
    ledger: CommLedger
    privacy: Optional[PrivacySpend] = None
    info: Dict = field(default_factory=dict)

    @property
    def final(self) -> RoundMetrics:
        return self.history[-1]


def history_to_csv(history: Sequence[RoundMetrics]) -> str:
    lines = ["round,val_loss,val_accuracy,val_anls"]
    for m in history:
        lines.append(f"{m.round},{m.loss!r},{m.accuracy!r},{m.anls!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Round planning
# ---------------------------------------------------------------------------


def plan_round(
    ds: FederatedDataset,
    seed: int,
    round_index: int,
    *,
    clients_per_round: Optional[int] = None,
    client_prob: Optional[float] = None,
    providers_per_round: Optional[int] = None,
    provider_mode: str = "fixed",
) -> RoundPlan:
    """Sample clients and (optionally) provider groups for one round.

    Client sampling is fixed-size K without replacement, or Bernoulli per
    client when ``client_prob`` is given.  Provider sampling keys an
    independent uniform to every (round, client, provider), so the plan for
    the surviving providers is unchanged when one provider is removed:
    'fixed' mode keeps the M smallest priorities, 'poisson' includes each
    group independently with probability M / group_count.
    """
    n = ds.n_clients
    if (clients_per_round is None) == (client_prob is None):
        raise ConfigError("specify exactly one of clients_per_round / client_prob")
    if clients_per_round is not None:
        if not 1 <= clients_per_round <= n:
            raise ConfigError(f"clients_per_round must be in [1, {n}]")
        rng = stream(seed, "round", round_index, "clients")
        sampled = tuple(sorted(rng.choice(n, size=clients_per_round, replace=False).tolist()))
        client_mode = "fixed"
    else:
        if not 0.0 <= client_prob <= 1.0:
            raise ConfigError("client_prob must be in [0, 1]")
        sampled = tuple(
            k
            for k in range(n)
            if stream(seed, "round", round_index, "client", k, "participate").random()
            < client_prob
        )
        client_mode = "bernoulli"
    providers: Dict[int, Tuple[str, ...]] = {}
    if providers_per_round is not None:
        for k in sampled:
            groups = ds.clients[k].groups
            priorities = [
                (
                    stream(
                        seed, "round", round_index, "client", k, "provider", g.provider_id
                    ).random(),
                    g.provider_id,
                )
                for g in groups
            ]
            if provider_mode == "fixed":
                m = min(providers_per_round, len(groups))
                providers[k] = tuple(sorted(pid for _, pid in sorted(priorities)[:m]))
            elif provider_mode == "poisson":
                pi = min(1.0, providers_per_round / len(groups))
                providers[k] = tuple(sorted(pid for u, pid in priorities if u < pi))
            else:
                raise ConfigError(f"unknown provider sampling mode {provider_mode!r}")
    return RoundPlan(
        round_index=round_index,
        sampled_clients=sampled,
        providers=providers,
        client_mode=client_mode,
        provider_mode=provider_mode if providers_per_round is not None else "none",
    )


# ---------------------------------------------------------------------------
# Shared scaffolding
# ---------------------------------------------------------------------------


class _ParamSpec:
    """Flat-vector view of a model's trainable parameter tree."""

    def __init__(self, model: LayeredModel):
        self.names = model.trainable_names()
        template = model.get_trainable()
        self.shapes = [template[n].shape for n in self.names]
        self.sizes = [template[n].size for n in self.names]
        self.total = int(sum(self.sizes))

    def pack(self, params: Dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(params[n]).ravel() for n in self.names])

    def unpack(self, vec: np.ndarray) -> Dict[str, np.ndarray]:
        out = {}
        off = 0
        for name, shape, size in zip(self.names, self.shapes, self.sizes):
            out[name] = vec[off : off + size].reshape(shape).copy()
            off += size
        return out


def evaluate_model(
    model: LayeredModel, records, labels: Sequence[str], round_index: int = 0, tau: float = 0.5
) -> RoundMetrics:
    """Validation loss, exact-match accuracy and ANLS of the current model."""
    x, y = stack_records(records)
    logits = model.forward(x)
    logp = log_softmax(logits)
    loss = float(-logp[np.arange(len(y)), y].mean())
    preds = logits.argmax(axis=1)
    result = evaluate_answers(
        [labels[i] for i in preds], [[r.answer] for r in records], tau=tau
    )
    return RoundMetrics(round=round_index, loss=loss, accuracy=result.accuracy, anls=result.anls)


def _map_clients(fn: Callable, client_ids: Sequence[int], jobs: int) -> Dict[int, object]:
    """Run per-client work, possibly in parallel; results keyed by client id.

    Aggregation downstream iterates sorted ids, so the outcome is identical
    to sequential execution in client-id order.
    """
    if jobs <= 1 or len(client_ids) <= 1:
        return {k: fn(k) for k in client_ids}
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = {k: pool.submit(fn, k) for k in client_ids}
        return {k: f.result() for k, f in futures.items()}


def _transmit(vec: np.ndarray, quantize: bool) -> np.ndarray:
    """Value seen on the other side of the wire (lossy only when quantized)."""
    return nf4_roundtrip(vec) if quantize else vec.copy()


def _log_exchange(
    ledger: CommLedger, round_index: int, client_id: int, count: int, bits: float
) -> None:
    payload = ((count, bits),)
    ledger.log(
        UpdateMessage(
            round=round_index,
            direction="down",
            sender="server",
            receiver=f"client{client_id}",
            payload=payload,
        )
    )
    ledger.log(
        UpdateMessage(
            round=round_index,
            direction="up",
            sender=f"client{client_id}",
            receiver="server",
            payload=payload,
        )
    )


def _cycled_batches(n: int, batch_size: int, seed: int, path: Tuple, n_batches: int):
    """Deterministic minibatch index stream, reshuffling after each pass."""
    produced = 0
    cycle = 0
    while produced < n_batches:
        perm = stream(seed, *path, "shuffle", cycle).permutation(n)
        for start in range(0, n, batch_size):
            if produced == n_batches:
                return
            yield perm[start : start + batch_size]
            produced += 1
        cycle += 1


# ---------------------------------------------------------------------------
# FedAvg
# ---------------------------------------------------------------------------


def run_fedavg(
    ds: FederatedDataset,
    model: LayeredModel,
    *,
    rounds: int,
    clients_per_round: int,
    local_epochs: int = 1,
    optimizer: OptimizerConfig = OptimizerConfig(kind="adamw", lr=1e-3),
    batch_size: int = 32,
    seed: int = 0,
    ledger: Optional[CommLedger] = None,
    quantize: bool = False,
    jobs: int = 1,
) -> RunResult:
    """Federated averaging: local training, unweighted parameter mean.

    Each round broadcasts the global trainables to the K sampled clients,
    runs ``local_epochs`` of minibatch training per client (fresh optimizer
    state, per-round reshuffle from the client's stream), and averages the
    returned parameters.  Both directions are logged per client; quantized
    runs round-trip both streams through the NF4 codec while the server and
    optimizers stay full-precision.
    """
    if rounds < 1:
        raise ConfigError("rounds must be >= 1")
    ledger = ledger if ledger is not None else CommLedger()
    spec = _ParamSpec(model)
    bits = NF4_BITS if quantize else FULL_PRECISION_BITS
    workers = {k: model.clone() for k in range(ds.n_clients)}
    client_arrays = {k: stack_records(ds.clients[k].all_records()) for k in range(ds.n_clients)}
    history: List[RoundMetrics] = []

    for r in range(1, rounds + 1):
        plan = plan_round(ds, seed, r, clients_per_round=clients_per_round)
        down = _transmit(spec.pack(model.get_trainable()), quantize)

        def train_client(k: int) -> np.ndarray:
            worker = workers[k]
            x, y = client_arrays[k]
            cur = spec.unpack(down)
            opt = make_optimizer(optimizer)
            for epoch in range(local_epochs):
                perm = stream(seed, "round", r, "client", k, "shuffle", epoch).permutation(len(y))
                for start in range(0, len(y), batch_size):
                    idx = perm[start : start + batch_size]
                    worker.set_trainable(cur)
                    _, grads = worker.loss_and_grads(x[idx], y[idx])
                    cur = opt.step(cur, grads)
            return _transmit(spec.pack(cur), quantize)

        returned = _map_clients(train_client, plan.sampled_clients, jobs)
        for k in plan.sampled_clients:
            _log_exchange(ledger, r, k, spec.total, bits)
        mean = sum(returned[k] for k in sorted(returned)) / len(returned)
        model.set_trainable(spec.unpack(mean))
        history.append(evaluate_model(model, ds.validation, ds.labels, round_index=r))

    return RunResult(
        model=model,
        history=history,
        ledger=ledger,
        info={"protocol": "fedavg", "trainable_parameters": spec.total, "bits": bits},
    )


# ---------------------------------------------------------------------------
# FedShampoo
# ---------------------------------------------------------------------------


def run_fedshampoo(
    ds: FederatedDataset,
    model: LayeredModel,
    *,
    rounds: int,
    clients_per_round: int,
    inner_steps: int,
    lr: float = 2e-4,
    clip_value: float = 0.2,
    batch_size: int = 32,
    shampoo: ShampooConfig = ShampooConfig(),
    seed: int = 0,
    ledger: Optional[CommLedger] = None,
    quantize: bool = False,
    jobs: int = 1,
) -> RunResult:
    """FedAvg with locally preconditioned inner steps.

    Clients keep persistent left/right gradient statistics per weight matrix
    across rounds; only the model parameters travel, never the
    preconditioners.  Freeze layers on the model beforehand to shrink the
    per-message payload (frozen layers are not transmitted).
    """
    if rounds < 1 or inner_steps < 1:
        raise ConfigError("rounds and inner_steps must be >= 1")
    ledger = ledger if ledger is not None else CommLedger()
    spec = _ParamSpec(model)
    bits = NF4_BITS if quantize else FULL_PRECISION_BITS
    workers = {k: model.clone() for k in range(ds.n_clients)}
    states = {k: ShampooState(shampoo) for k in range(ds.n_clients)}
    client_arrays = {k: stack_records(ds.clients[k].all_records()) for k in range(ds.n_clients)}
    history: List[RoundMetrics] = []

    for r in range(1, rounds + 1):
        plan = plan_round(ds, seed, r, clients_per_round=clients_per_round)
        down = _transmit(spec.pack(model.get_trainable()), quantize)

        def train_client(k: int) -> np.ndarray:
            worker = workers[k]
            state = states[k]
            x, y = client_arrays[k]
            cur = spec.unpack(down)
            t = 0
            for idx in _cycled_batches(
                len(y), batch_size, seed, ("round", r, "client", k), inner_steps
            ):
                t += 1
                worker.set_trainable(cur)
                _, grads = worker.loss_and_grads(x[idx], y[idx])
                cur = shampoo_step(state, cur, grads, lr, clip_value, t)
            return _transmit(spec.pack(cur), quantize)

        returned = _map_clients(train_client, plan.sampled_clients, jobs)
        for k in plan.sampled_clients:
            _log_exchange(ledger, r, k, spec.total, bits)
        mean = sum(returned[k] for k in sorted(returned)) / len(returned)
        model.set_trainable(spec.unpack(mean))
        history.append(evaluate_model(model, ds.validation, ds.labels, round_index=r))

    return RunResult(
        model=model,
        history=history,
        ledger=ledger,
        info={"protocol": "fedshampoo", "trainable_parameters": spec.total, "bits": bits},
    )


# ---------------------------------------------------------------------------
# Group-DP protocols
# ---------------------------------------------------------------------------


class _GroupDpEngine:
    """Shared round machinery for FL-GROUP-DP and DP-CLGECL."""

    def __init__(
        self,
        ds: FederatedDataset,
        model: LayeredModel,
        *,
        rounds: int,
        clients_per_round: Optional[int],
        client_prob: Optional[float],
        dp: DpConfig,
        optimizer: OptimizerConfig,
        t_gd: int,
        dual: bool,
        lambda_init_scale: float,
        seed: int,
        ledger: Optional[CommLedger],
        grid: Optional[AlphaGrid],
        quantize: bool,
        jobs: int,
        group_hook: Optional[Callable] = None,
    ):
        if rounds < 1 or t_gd < 1:
            raise ConfigError("rounds and t_gd must be >= 1")
        if (clients_per_round is None) == (client_prob is None):
            raise ConfigError("specify exactly one of clients_per_round / client_prob")
        self.ds = ds
        self.model = model
        self.rounds = rounds
        self.clients_per_round = clients_per_round
        self.client_prob = client_prob
        self.dp = dp
        self.optimizer = optimizer
        self.t_gd = t_gd
        self.dual = dual
        self.lambda_init_scale = lambda_init_scale
        self.seed = seed
        self.ledger = ledger if ledger is not None else CommLedger()
        self.quantize = quantize
        self.jobs = jobs
        self.group_hook = group_hook

        self.spec = _ParamSpec(model)
        self.dim = self.spec.total
        self.bits = NF4_BITS if quantize else FULL_PRECISION_BITS
        self.workers = {k: model.clone() for k in range(ds.n_clients)}
        self.group_arrays = {
            g.provider_id: stack_records(g.records) for c in ds.clients for g in c.groups
        }
        self.duals: Dict[int, DualState] = {}

        effective_prob = (
            clients_per_round / ds.n_clients if clients_per_round is not None else client_prob
        )
        self.q = group_sampling_rate(
            effective_prob, dp.providers_per_round, min_group_count(ds)
        )
        if dp.noise_disabled:
            self.sigma = dp.noise_multiplier
            self.spend = None
        else:
            if dp.noise_multiplier is not None:
                self.sigma = dp.noise_multiplier
            elif dp.target_epsilon is not None:
                self.sigma = calibrate_sigma(
                    dp.target_epsilon, dp.delta, q=self.q, steps=rounds, grid=grid
                )
            else:
                raise ConfigError(
                    "DP run needs a noise_multiplier or a target_epsilon to calibrate one"
                )
            self.spend = compose_and_convert(
                SgmParams(q=self.q, sigma=self.sigma, steps=rounds), dp.delta, grid
            )

    # -- per-round pieces ------------------------------------------------------

    def _noise(self, *path) -> np.ndarray:
        scale = self.dp.clip_norm * self.sigma
        return stream(self.seed, *path).normal(0.0, scale, self.dim)

    def _group_delta(self, k: int, provider_id: str, start_vec: np.ndarray) -> np.ndarray:
        """Local update of one provider group from the received model."""
        worker = self.workers[k]
        x, y = self.group_arrays[provider_id]
        cur = self.spec.unpack(start_vec)
        opt = make_optimizer(self.optimizer)
        for _ in range(self.t_gd):
            worker.set_trainable(cur)
            _, grads = worker.loss_and_grads(x, y)
            cur = opt.step(cur, grads)
        return self.spec.pack(cur) - start_vec

    def client_update(self, round_index: int, k: int, received: np.ndarray, plan: RoundPlan):
        """One client's uploaded aggregate for this round.

        Per sampled group: local update from the received model, plus the
        dual correction when running DP-CLGECL, clipped to the sensitivity.
        The clipped contributions are summed, perturbed once with
        ``N(0, (S*sigma)^2 I)``, and scaled by 1/M.
        """
        s = self.dp.clip_norm
        lam = None
        if self.dual:
            state = self.duals.get(k)
            if state is None:
                lam = self.lambda_init_scale * stream(
                    self.seed, "lambda-init", k
                ).standard_normal(self.dim)
            else:
                lam = state.lam + (received - state.local_prev)
        acc = np.zeros(self.dim)
        for pid in plan.providers.get(k, ()):
            delta = self._group_delta(k, pid, received)
            if self.dual:
                delta = delta + lam
            clipped = clip_l2(delta, s)
            norm = float(np.linalg.norm(clipped))
            assert norm <= s * (1.0 + 1e-9), "clipped group update exceeds sensitivity"
            if self.group_hook is not None:
                self.group_hook(round_index, k, pid, norm)
            acc += clipped
        if not self.dp.noise_disabled:
            acc = acc + self._noise("round", round_index, "client", k, "noise")
        u = acc / self.dp.providers_per_round
        if self.dual:
            self.duals[k] = DualState(lam=lam, local_prev=received + u)
        return u

    def run_round(self, round_index: int, w_vec: np.ndarray, log: bool = True):
        """Advance one round; returns (new_w, per-client uploads as sent)."""
        plan = plan_round(
            self.ds,
            self.seed,
            round_index,
            clients_per_round=self.clients_per_round,
            client_prob=self.client_prob,
            providers_per_round=self.dp.providers_per_round,
            provider_mode=self.dp.provider_sampling,
        )
        if not plan.sampled_clients:
            # Nobody sampled: the server still adds the calibrated noise so
            # the released model matches the accounted mechanism.
            if not self.dp.noise_disabled:
                w_vec = w_vec + self._noise("round", round_index, "server-noise") / (
                    self.dp.providers_per_round
                )
            return w_vec, {}
        down = _transmit(w_vec, self.quantize)
        uploads = _map_clients(
            lambda k: _transmit(
                self.client_update(round_index, k, down, plan), self.quantize
            ),
            plan.sampled_clients,
            self.jobs,
        )
        if log:
            for k in plan.sampled_clients:
                _log_exchange(self.ledger, round_index, k, self.dim, self.bits)
        mean = sum(uploads[k] for k in sorted(uploads)) / len(uploads)
        return w_vec + mean, uploads

    def run(self, protocol_name: str) -> RunResult:
        w_vec = self.spec.pack(self.model.get_trainable())
        history: List[RoundMetrics] = []
        for r in range(1, self.rounds + 1):
            w_vec, _ = self.run_round(r, w_vec)
            self.model.set_trainable(self.spec.unpack(w_vec))
            history.append(
                evaluate_model(self.model, self.ds.validation, self.ds.labels, round_index=r)
            )
        info = {
            "protocol": protocol_name,
            "trainable_parameters": self.dim,
            "bits": self.bits,
            "q": self.q,
            "noise_multiplier": self.sigma,
            "steps": self.rounds,
            "clip_norm": self.dp.clip_norm,
        }
        return RunResult(
            model=self.model,
            history=history,
            ledger=self.ledger,
            privacy=self.spend,
            info=info,
        )


def run_fl_group_dp(
    ds: FederatedDataset,
    model: LayeredModel,
    *,
    rounds: int,
    clients_per_round: Optional[int] = None,
    client_prob: Optional[float] = None,
    dp: DpConfig,
    optimizer: OptimizerConfig = OptimizerConfig(kind="adamw", lr=1e-3),
    t_gd: int = 1,
    seed: int = 0,
    ledger: Optional[CommLedger] = None,
    grid: Optional[AlphaGrid] = None,
    quantize: bool = False,
    jobs: int = 1,
    group_hook: Optional[Callable] = None,
) -> RunResult:
    """Group-DP baseline: clip per-provider updates, add noise, average."""
    engine = _GroupDpEngine(
        ds,
        model,
        rounds=rounds,
        clients_per_round=clients_per_round,
        client_prob=client_prob,
        dp=dp,
        optimizer=optimizer,
        t_gd=t_gd,
        dual=False,
        lambda_init_scale=0.0,
        seed=seed,
        ledger=ledger,
        grid=grid,
        quantize=quantize,
        jobs=jobs,
        group_hook=group_hook,
    )
    return engine.run("fl-group-dp")


def run_dp_clgecl(
    ds: FederatedDataset,
    model: LayeredModel,
    *,
    rounds: int,
    clients_per_round: Optional[int] = None,
    client_prob: Optional[float] = None,
    dp: DpConfig,
    local_optimizer: str = "adamw",
    lr: float = 1e-3,
    t_gd: int = 1,
    momentum: float = 0.9,
    lambda_init_scale: float = 0.01,
    seed: int = 0,
    ledger: Optional[CommLedger] = None,
    grid: Optional[AlphaGrid] = None,
    quantize: bool = False,
    jobs: int = 1,
    group_hook: Optional[Callable] = None,
) -> RunResult:
    """Dual-corrected group-DP training (constrained loss-sum minimisation).

    A client's dual variable is randomly initialized on first participation
    and thereafter accumulates the difference between the received global
    model and the client's previous local solution; each group's delta is
    corrected by it before clipping.  Privacy accounting is identical to the
    baseline.  ``local_optimizer`` selects AdamW or heavy-ball momentum for
    the per-group inner solve.
    """
    if local_optimizer not in ("adamw", "momentum", "sgd"):
        raise ConfigError(f"unknown local optimizer {local_optimizer!r}")
    opt = OptimizerConfig(kind=local_optimizer, lr=lr, momentum=momentum)
    engine = _GroupDpEngine(
        ds,
        model,
        rounds=rounds,
        clients_per_round=clients_per_round,
        client_prob=client_prob,
        dp=dp,
        optimizer=opt,
        t_gd=t_gd,
        dual=True,
        lambda_init_scale=lambda_init_scale,
        seed=seed,
        ledger=ledger,
        grid=grid,
        quantize=quantize,
        jobs=jobs,
        group_hook=group_hook,
    )
    return engine.run("dp-clgecl")
