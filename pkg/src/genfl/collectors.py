"""Classical selection policies that build the "selection-score" corpus.

Three collector flavors feed the corpus by default:

* ``oort``     - utility-guided greedy selection with a small exploration
                 fraction.  Per-client utility is the loss-magnitude
                 statistical term times a deadline penalty.
* ``favor``    - epsilon-greedy value learner over per-client credit from
                 the accuracy/latency/cost round reward; the accuracy-path
                 session reward is logged as metadata.
* ``fedmarl``  - same value learner with a smaller exploration rate.

Every emitted record is scored with the comprehensive metric regardless of
which collector produced it, and the stored score is recomputed from the
breakdown as a round-trip check.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .core import Budget, ClientSelection, DevicePool
from .errors import DataError
from .flsim import FLState, PartitionConfig, SimConfig, per_example_losses, run_round

COLLECTORS = ("oort", "favor", "fedmarl")

VALUE_STEP = 0.1  # tabular value-estimate step size


@dataclass
class ClientStats:
    losses: list[float]
    round_time_s: float
    explored: int = 0

    def __post_init__(self):
        if self.round_time_s <= 0:
            raise ValueError("round_time_s must be positive")
        if any(l < 0 for l in self.losses):
            raise ValueError("loss samples must be non-negative")


@dataclass(frozen=True)
class FavorConfig:
    xi: float = 64.0
    omega_target: float = 0.8
    gamma: float = 0.99

    def __post_init__(self):
        if self.xi <= 1 or not 0 < self.gamma <= 1:
            raise ValueError("need xi > 1 and 0 < gamma <= 1")


@dataclass(frozen=True)
class FedMarlConfig:
    w1: float = 1.0
    w2: float = 0.01
    w3: float = 0.01
    utility: str = "identity"  # "identity" | "log1p"

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("reward weights must be non-negative")
        if self.utility not in ("identity", "log1p"):
            raise ValueError(f"unknown utility shape {self.utility!r}")


@dataclass(frozen=True)
class RewardConfig:
    favor: FavorConfig = field(default_factory=FavorConfig)
    fedmarl: FedMarlConfig = field(default_factory=FedMarlConfig)


@dataclass(frozen=True)
class SelectionRecord:
    collector: str
    session_seed: int
    round_index: int
    selection: ClientSelection
    perf: float
    latency_s: float
    energy_j: float
    score: float


@dataclass
class RecordSet:
    records: list[SelectionRecord]
    budget: Budget
    pool_fingerprint: str
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)


def pool_fingerprint(pool: DevicePool) -> str:
    payload = repr([(d.id, d.comm_latency_s, d.comp_latency_s_per_epoch,
                     d.comm_energy_j, d.comp_energy_j_per_epoch, d.availability)
                    for d in pool.devices])
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# selection policies

def random_select(pool: DevicePool, size: int, rng: np.random.Generator) -> ClientSelection:
    if not 1 <= size <= pool.size:
        raise DataError(f"cannot select {size} of {pool.size} devices")
    return ClientSelection(tuple(int(i) for i in rng.choice(pool.size, size=size, replace=False)))


def oort_utility(stats: ClientStats, deadline_s: float, penalty_exp: float) -> float:
    """Loss-magnitude statistical utility times the deadline penalty."""
    if not stats.losses:
        raise DataError("client has no loss samples")
    n = len(stats.losses)
    stat = n * math.sqrt(sum(l * l for l in stats.losses) / n)
    if stats.round_time_s > deadline_s:
        stat *= (deadline_s / stats.round_time_s) ** penalty_exp
    return stat


def oort_select(all_stats: dict[int, ClientStats], size: int, epsilon: float,
                deadline_s: float, penalty_exp: float,
                rng: np.random.Generator) -> ClientSelection:
    """Greedy top utilities plus an exploration quota of unexplored clients.

    The greedy slice takes ceil((1-eps)*size) clients by utility (ties go to
    the lower id); floor(eps*size) slots go to uniformly drawn unexplored
    clients, falling back to greedy picks when none remain.
    """
    ids = sorted(all_stats)
    n_explore = math.floor(epsilon * size + 1e-9)
    n_greedy = size - n_explore

    ranked = sorted(ids, key=lambda i: (-oort_utility(all_stats[i], deadline_s, penalty_exp), i))
    chosen = ranked[:n_greedy]

    unexplored = [i for i in ids if all_stats[i].explored == 0 and i not in set(chosen)]
    if n_explore > 0 and unexplored:
        extra = rng.choice(len(unexplored), size=min(n_explore, len(unexplored)), replace=False)
        chosen += [unexplored[int(k)] for k in sorted(extra)]
    # fall back to the ranking if the exploration quota could not be filled
    for cid in ranked[n_greedy:]:
        if len(chosen) >= size:
            break
        if cid not in set(chosen):
            chosen.append(cid)
    return ClientSelection(tuple(chosen[:size]))


def favor_reward(accuracy_path: list[float], cfg: FavorConfig) -> float:
    """Discounted sum of exponential accuracy-gap terms over a session."""
    return sum(cfg.gamma ** (t) * (cfg.xi ** (acc - cfg.omega_target) - 1.0)
               for t, acc in enumerate(accuracy_path))


def fedmarl_reward(acc_t: float, acc_prev: float, latency_s: float,
                   comm_cost: float, cfg: FedMarlConfig) -> float:
    u = math.log1p if cfg.utility == "log1p" else (lambda v: v)
    return cfg.w1 * (u(acc_t) - u(acc_prev)) - cfg.w2 * latency_s - cfg.w3 * comm_cost


def explore_select(values: dict[int, float], size: int, epsilon: float,
                   rng: np.random.Generator) -> ClientSelection:
    """Epsilon-greedy slot filling over the per-client value table."""
    if not 1 <= size <= len(values):
        raise DataError(f"cannot select {size} of {len(values)} clients")
    remaining = sorted(values)
    chosen: list[int] = []
    for _ in range(size):
        if rng.random() < epsilon:
            pick = remaining[int(rng.integers(len(remaining)))]
        else:
            pick = max(remaining, key=lambda i: (values[i], -i))
        chosen.append(pick)
        remaining.remove(pick)
    return ClientSelection(tuple(chosen))


def update_values(values: dict[int, float], selection: ClientSelection, reward: float) -> None:
    credit = reward / len(selection)
    for cid in selection.tokens:
        values[cid] += VALUE_STEP * (credit - values[cid])


# ---------------------------------------------------------------------------
# corpus collection

OORT_EPSILON = 0.1
EXPLORE_EPSILON = {"favor": 0.3, "fedmarl": 0.1}
SIZE_JITTER = 2  # collector round sizes vary in [T-2, T+2] for corpus diversity


def _round_size(target: int, n_clients: int, rng: np.random.Generator, vary: bool) -> int:
    if not vary:
        return target
    size = target + int(rng.integers(-SIZE_JITTER, SIZE_JITTER + 1))
    return max(1, min(n_clients, size))


def collect_session(collector: str, pool: DevicePool, sim: SimConfig,
                     partition: PartitionConfig, budget: Budget,
                     reward_cfg: RewardConfig, session_seed: int,
                     vary_size: bool) -> tuple[list[SelectionRecord], dict]:
    state = FLState.initialize(pool, sim, partition, seed=session_seed)
    rng = rngmod.stream(session_seed, "collector", collector)
    records: list[SelectionRecord] = []
    meta: dict = {}

    if collector == "oort":
        stats = {d.id: ClientStats(losses=[math.log(4.0)],
                                   round_time_s=d.comm_latency_s
                                   + d.comp_latency_s_per_epoch * sim.local_epochs)
                 for d in pool.devices}
    values = {d.id: 0.0 for d in pool.devices}
    acc_prev = 0.0
    acc_path: list[float] = []

    for r in range(sim.rounds):
        size = _round_size(sim.participants, sim.clients, rng, vary_size)
        if collector == "oort":
            selection = oort_select(stats, size, OORT_EPSILON,
                                    deadline_s=budget.latency_budget_s,
                                    penalty_exp=budget.latency_penalty_exp, rng=rng)
        elif collector in EXPLORE_EPSILON:
            selection = explore_select(values, size, EXPLORE_EPSILON[collector], rng)
        elif collector == "random":
            selection = random_select(pool, size, rng)
        else:
            raise DataError(f"unknown collector {collector!r}")

        outcome = run_round(state, selection, budget)
        bd = outcome.breakdown
        records.append(SelectionRecord(
            collector=collector, session_seed=session_seed, round_index=r,
            selection=selection, perf=bd.perf, latency_s=bd.total_latency_s,
            energy_j=bd.total_energy_j, score=bd.comprehensive))
        acc_path.append(outcome.accuracy)

        if collector == "oort":
            for cid in selection.tokens:
                shard = state.shards[cid]
                losses = per_example_losses(state.model, state.train.x[shard],
                                            state.train.y[shard])
                dev = pool.device(cid)
                avail = dev.availability_at(r)
                stats[cid] = ClientStats(
                    losses=[float(l) for l in losses[:64]],
                    round_time_s=avail * (dev.comm_latency_s
                                          + dev.comp_latency_s_per_epoch * sim.local_epochs),
                    explored=stats[cid].explored + 1)
        else:
            reward = fedmarl_reward(outcome.accuracy, acc_prev, bd.total_latency_s,
                                    float(len(selection)), reward_cfg.fedmarl)
            update_values(values, selection, reward)
        acc_prev = outcome.accuracy

    if collector == "favor":
        meta["favor_session_reward"] = favor_reward(acc_path, reward_cfg.favor)
    return records, meta


def collect_records(collectors: list[str], sessions: int, pool: DevicePool,
                    sim: SimConfig, partition: PartitionConfig, budget: Budget,
                    root_seed: int, reward_cfg: RewardConfig | None = None,
                    vary_size: bool = True) -> RecordSet:
    """Run each collector for `sessions` independent FL sessions."""
    reward_cfg = reward_cfg or RewardConfig()
    fp = pool_fingerprint(pool)
    all_records: list[SelectionRecord] = []
    metadata: dict = {"favor_session_rewards": {}}
    for collector in collectors:
        for s in range(sessions):
            session_seed = int(rngmod.stream(root_seed, "collect", collector,
                                             str(s)).integers(0, 2**63))
            recs, meta = collect_session(collector, pool, sim, partition, budget,
                                          reward_cfg, session_seed, vary_size)
            all_records.extend(recs)
            if "favor_session_reward" in meta:
                metadata["favor_session_rewards"][str(session_seed)] = meta["favor_session_reward"]
    return RecordSet(records=all_records, budget=budget, pool_fingerprint=fp,
                     metadata=metadata)


def augment_records(recordset: RecordSet, shuffles_per_record: int, seed: int) -> RecordSet:
    """Add shuffled-order copies of every record (same id set, same score)."""
    if shuffles_per_record < 0:
        raise DataError("shuffles_per_record must be >= 0")
    gen = rngmod.stream(seed, "augment")
    out: list[SelectionRecord] = []
    for rec in recordset.records:
        out.append(rec)
        tokens = list(rec.selection.tokens)
        for _ in range(shuffles_per_record):
            perm = [tokens[int(i)] for i in gen.permutation(len(tokens))]
            out.append(replace(rec, selection=ClientSelection(tuple(perm))))
    return RecordSet(records=out, budget=recordset.budget,
                     pool_fingerprint=recordset.pool_fingerprint,
                     metadata=dict(recordset.metadata))


# ---------------------------------------------------------------------------
# persistence (line-delimited, one object per line)

def records_to_jsonl(recordset: RecordSet) -> str:
    lines = []
    for r in recordset.records:
        lines.append(json.dumps({
            "collector": r.collector,
            "session_seed": r.session_seed,
            "round": r.round_index,
            "selection": list(r.selection.tokens),
            "perf": r.perf,
            "latency_s": r.latency_s,
            "energy_j": r.energy_j,
            "score": r.score,
        }))
    return "\n".join(lines) + "\n"


def records_from_jsonl(text: str, budget: Budget, fingerprint: str) -> RecordSet:
    records = []
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        records.append(SelectionRecord(
            collector=obj["collector"], session_seed=obj["session_seed"],
            round_index=obj["round"],
            selection=ClientSelection(tuple(obj["selection"])),
            perf=obj["perf"], latency_s=obj["latency_s"],
            energy_j=obj["energy_j"], score=obj["score"]))
    return RecordSet(records=records, budget=budget, pool_fingerprint=fingerprint)
