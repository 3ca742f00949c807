"""Experiment orchestration: pipelines behind the CLI subcommands.

Artifacts live in a flat output directory:

* ``records.jsonl`` + ``records_manifest.json``  (collect)
* ``checkpoint.json``                            (train)
* ``metrics_<policy>.csv``                       (run)
* ``sweep_<param>.csv`` / ``ablation.csv``       (sweep / ablate)

Every artifact carries the producing config hash; loading functions refuse
inputs whose hash does not match the active config.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

from . import collectors as coll
from . import latentopt, neural, profiles, rng as rngmod
from .collectors import RecordSet, SelectionRecord
from .config import ExperimentConfig
from .core import (Budget, ClientSelection, DevicePool, comprehensive_score,
                   round_latency as core_round_latency)
from .errors import DataError
from .flsim import FLState, run_round

METRICS_COLUMNS = ("round", "policy", "selection_size", "accuracy", "score",
                   "cum_latency_s", "cum_energy_j")

POLICIES = ("random", "oort", "explore", "gcs")

# run-time policies map onto the collector machinery with a fixed size
_POLICY_COLLECTOR = {"random": "random", "oort": "oort", "explore": "fedmarl"}


def build_pool(cfg: ExperimentConfig) -> DevicePool:
    return profiles.generate_pool(cfg.devices, cfg.pool_seed)


# ---------------------------------------------------------------------------
# collect / train

def run_collect(cfg: ExperimentConfig, out_dir: Path) -> Path:
    pool = build_pool(cfg)
    recordset = coll.collect_records(list(cfg.collect.collectors), cfg.collect.sessions,
                                     pool, cfg.sim, cfg.partition, cfg.budget,
                                     root_seed=cfg.seed, vary_size=cfg.collect.vary_size)
    out_dir.mkdir(parents=True, exist_ok=True)
    records_path = out_dir / "records.jsonl"
    records_path.write_text(coll.records_to_jsonl(recordset))
    manifest = {
        "config_hash": cfg.hash(),
        "root_seed": cfg.seed,
        "pool_fingerprint": recordset.pool_fingerprint,
        "budget": {"latency_s": cfg.budget.latency_budget_s,
                   "energy_j": cfg.budget.energy_budget_j,
                   "latency_exp": cfg.budget.latency_penalty_exp,
                   "energy_exp": cfg.budget.energy_penalty_exp},
        "collectors": list(cfg.collect.collectors),
        "sessions": cfg.collect.sessions,
        "rounds": cfg.sim.rounds,
        "n_records": len(recordset),
        "metadata": recordset.metadata,
    }
    (out_dir / "records_manifest.json").write_text(json.dumps(manifest, indent=1))
    return records_path


def load_records(cfg: ExperimentConfig, out_dir: Path) -> RecordSet:
    manifest_path = out_dir / "records_manifest.json"
    records_path = out_dir / "records.jsonl"
    if not manifest_path.exists() or not records_path.exists():
        raise DataError(f"no collected records in {out_dir}; run `collect` first")
    manifest = json.loads(manifest_path.read_text())
    if manifest["config_hash"] != cfg.hash():
        raise DataError("records were produced under a different config (stale artifact)")
    b = manifest["budget"]
    budget = Budget(latency_budget_s=b["latency_s"], energy_budget_j=b["energy_j"],
                    latency_penalty_exp=b["latency_exp"], energy_penalty_exp=b["energy_exp"])
    return coll.records_from_jsonl(records_path.read_text(), budget,
                                   manifest["pool_fingerprint"])


def run_train(cfg: ExperimentConfig, out_dir: Path) -> Path:
    recordset = load_records(cfg, out_dir)
    augmented = coll.augment_records(recordset, cfg.collect.shuffles, seed=cfg.seed)
    history: list[float] = []
    bundle = neural.train(augmented, cfg.devices, cfg.train, history=history)
    ckpt_path = out_dir / "checkpoint.json"
    ckpt_path.write_text(neural.checkpoint_dumps(bundle, config_hash=cfg.hash()))
    (out_dir / "train_log.json").write_text(json.dumps({"epoch_loss": history}, indent=1))
    return ckpt_path


def load_bundle(cfg: ExperimentConfig, out_dir: Path) -> neural.ModelBundle:
    ckpt_path = out_dir / "checkpoint.json"
    if not ckpt_path.exists():
        raise DataError(f"no checkpoint in {out_dir}; run `train` first")
    bundle, config_hash = neural.checkpoint_loads(ckpt_path.read_text())
    if config_hash != cfg.hash():
        raise DataError("checkpoint was produced under a different config (stale artifact)")
    return bundle


# ---------------------------------------------------------------------------
# policy runs

def run_policy(cfg: ExperimentConfig, policy: str,
               recordset: RecordSet | None = None,
               bundle: neural.ModelBundle | None = None) -> list[dict]:
    """Run one FL session under a policy; returns per-round metric rows."""
    if policy not in POLICIES:
        raise DataError(f"unknown policy {policy!r}")
    pool = build_pool(cfg)
    session_seed = int(rngmod.stream(cfg.seed, "run", policy).integers(0, 2**63))

    if policy == "gcs":
        if recordset is None or bundle is None:
            raise DataError("gcs policy needs records and a trained checkpoint")
        rows = _run_gcs(cfg, pool, recordset, bundle, session_seed)
    else:
        records, _meta = coll.collect_session(
            _POLICY_COLLECTOR[policy], pool, cfg.sim, cfg.partition, cfg.budget,
            coll.RewardConfig(), session_seed, vary_size=False)
        rows = [_row(policy, r.round_index, len(r.selection), r.perf, r.score,
                     r.latency_s, r.energy_j) for r in records]
        rows = _accumulate(rows, cfg)

    return rows


def _rescore_for_round(recordset: RecordSet, pool: DevicePool, round_index: int,
                       epochs: int) -> RecordSet:
    """Re-rank candidate starts under the upcoming round's availability.

    A stored record's cost was measured at its own round; device availability
    cycles with the round index, so the same selection can sit inside or
    outside the latency budget depending on when it would run next.  The
    returned copy carries scores recomputed for ``round_index`` (energy is
    availability-independent), which only affects start ranking.
    """
    rescored = []
    for rec in recordset.records:
        lat = core_round_latency(rec.selection, pool, round_index, epochs)
        bd = comprehensive_score(rec.perf, lat, rec.energy_j, recordset.budget)
        rescored.append(replace(rec, latency_s=lat, score=bd.comprehensive))
    return RecordSet(records=rescored, budget=recordset.budget,
                     pool_fingerprint=recordset.pool_fingerprint)


def _run_gcs(cfg: ExperimentConfig, pool: DevicePool, recordset: RecordSet,
             bundle: neural.ModelBundle, session_seed: int) -> list[dict]:
    state = FLState.initialize(pool, cfg.sim, cfg.partition, seed=session_seed)
    # working corpus grows with the run's own outcomes so the top-K starts,
    # and hence the decoded selection, can shift between rounds
    working = RecordSet(records=list(recordset.records), budget=recordset.budget,
                        pool_fingerprint=recordset.pool_fingerprint)
    rows = []
    for r in range(cfg.sim.rounds):
        candidates = _rescore_for_round(working, pool, r, cfg.sim.local_epochs)
        restart_rng = rngmod.stream(session_seed, "gcs", "restart", str(r))
        selection = latentopt.gcs_select(bundle, candidates, cfg.opt, restart_rng)
        outcome = run_round(state, selection, cfg.budget)
        bd = outcome.breakdown
        working.records.append(SelectionRecord(
            collector="gcs", session_seed=session_seed, round_index=r,
            selection=selection, perf=bd.perf, latency_s=bd.total_latency_s,
            energy_j=bd.total_energy_j, score=bd.comprehensive))
        rows.append(_row("gcs", r, len(selection), outcome.accuracy,
                         bd.comprehensive, bd.total_latency_s, bd.total_energy_j))
        if cfg.target_accuracy > 0 and outcome.accuracy >= cfg.target_accuracy:
            break
    return _accumulate(rows, cfg)


def _row(policy, round_index, size, accuracy, score, latency, energy) -> dict:
    return {"round": round_index, "policy": policy, "selection_size": size,
            "accuracy": accuracy, "score": score,
            "latency_s": latency, "energy_j": energy}


def _accumulate(rows: list[dict], cfg: ExperimentConfig) -> list[dict]:
    cum_lat = 0.0
    cum_en = 0.0
    out = []
    for row in rows:
        cum_lat += row.pop("latency_s")
        cum_en += row.pop("energy_j")
        out.append({**row, "cum_latency_s": cum_lat, "cum_energy_j": cum_en})
    if out:
        scores = [r["score"] for r in out]
        out.append({"round": "summary", "policy": out[0]["policy"],
                    "selection_size": out[-1]["selection_size"],
                    "accuracy": out[-1]["accuracy"],
                    "score": sum(scores) / len(scores),
                    "cum_latency_s": cum_lat, "cum_energy_j": cum_en})
    return out


def write_metrics_csv(rows: list[dict], path: Path) -> None:
    lines = [",".join(METRICS_COLUMNS)]
    for row in rows:
        lines.append(",".join(_csv_cell(row[c]) for c in METRICS_COLUMNS))
    path.write_text("\n".join(lines) + "\n")


def _csv_cell(value) -> str:
    if isinstance(value, float):
        # plain-float repr is the shortest round-trip decimal
        return repr(float(value))
    return str(value)


def read_metrics_csv(path: Path) -> list[dict]:
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        cells = line.split(",")
        row: dict = {}
        for key, cell in zip(header, cells):
            if key in ("policy",):
                row[key] = cell
            elif key in ("round", "selection_size"):
                row[key] = cell if cell == "summary" else int(cell)
            else:
                row[key] = float(cell)
        rows.append(row)
    return rows


def run_run(cfg: ExperimentConfig, policy: str, out_dir: Path) -> Path:
    if policy == "gcs":
        recordset = load_records(cfg, out_dir)
        bundle = load_bundle(cfg, out_dir)
        rows = run_policy(cfg, policy, recordset, bundle)
    else:
        rows = run_policy(cfg, policy)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"metrics_{policy}.csv"
    write_metrics_csv(rows, path)
    return path


def run_select(cfg: ExperimentConfig, out_dir: Path) -> Path:
    recordset = load_records(cfg, out_dir)
    bundle = load_bundle(cfg, out_dir)
    selection = latentopt.gcs_select(bundle, recordset, cfg.opt)
    path = out_dir / "selection.json"
    path.write_text(json.dumps({"config_hash": cfg.hash(),
                                "selection": list(selection.tokens)}, indent=1))
    return path


# ---------------------------------------------------------------------------
# sweeps and ablations

def _pipeline_mean_score(cfg: ExperimentConfig) -> dict:
    """collect -> train -> gcs run, in memory; returns the summary row."""
    pool = build_pool(cfg)
    recordset = coll.collect_records(list(cfg.collect.collectors), cfg.collect.sessions,
                                     pool, cfg.sim, cfg.partition, cfg.budget,
                                     root_seed=cfg.seed, vary_size=cfg.collect.vary_size)
    augmented = coll.augment_records(recordset, cfg.collect.shuffles, seed=cfg.seed)
    bundle = neural.train(augmented, cfg.devices, cfg.train)
    rows = run_policy(cfg, "gcs", recordset, bundle)
    return rows[-1]


def run_sweep(cfg: ExperimentConfig, param: str, grid: list[float], out_dir: Path) -> Path:
    if param not in ("alpha", "topk"):
        raise DataError(f"unknown sweep parameter {param!r}")
    results = []
    base = None
    for value in grid:
        if param == "alpha":
            swept = replace(cfg, train=replace(cfg.train, alpha=float(value)))
            summary = _pipeline_mean_score(swept)
        else:
            swept = replace(cfg, opt=replace(cfg.opt, top_k=int(value)))
            if base is None:
                pool = build_pool(swept)
                recordset = coll.collect_records(
                    list(swept.collect.collectors), swept.collect.sessions, pool,
                    swept.sim, swept.partition, swept.budget,
                    root_seed=swept.seed, vary_size=swept.collect.vary_size)
                augmented = coll.augment_records(recordset, swept.collect.shuffles,
                                                 seed=swept.seed)
                base = (recordset, neural.train(augmented, swept.devices, swept.train))
            summary = run_policy(swept, "gcs", base[0], base[1])[-1]
        results.append((value, summary))

    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"sweep_{param}.csv"
    lines = [f"{param},mean_score,final_accuracy,cum_latency_s,cum_energy_j"]
    for value, s in results:
        lines.append(",".join([_csv_cell(value), _csv_cell(s["score"]),
                               _csv_cell(s["accuracy"]), _csv_cell(s["cum_latency_s"]),
                               _csv_cell(s["cum_energy_j"])]))
    path.write_text("\n".join(lines) + "\n")
    return path


ABLATION_VARIANTS = ("baseline", "no-collectors", "no-augmentation")


def ablation_config(cfg: ExperimentConfig, variant: str) -> ExperimentConfig:
    if variant == "baseline":
        return cfg
    if variant == "no-collectors":
        # same total session count, sourced from uniform random selection only
        total = cfg.collect.sessions * len(cfg.collect.collectors)
        return replace(cfg, collect=replace(cfg.collect, collectors=("random",),
                                            sessions=total))
    if variant == "no-augmentation":
        return replace(cfg, collect=replace(cfg.collect, shuffles=0))
    raise DataError(f"unknown ablation variant {variant!r}")


def run_ablate(cfg: ExperimentConfig, out_dir: Path,
               variants: tuple[str, ...] = ABLATION_VARIANTS) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["variant,mean_score,final_accuracy,cum_latency_s,cum_energy_j"]
    for variant in variants:
        summary = _pipeline_mean_score(ablation_config(cfg, variant))
        lines.append(",".join([variant, _csv_cell(summary["score"]),
                               _csv_cell(summary["accuracy"]),
                               _csv_cell(summary["cum_latency_s"]),
                               _csv_cell(summary["cum_energy_j"])]))
    path = out_dir / "ablation.csv"
    path.write_text("\n".join(lines) + "\n")
    return path
