"""Gradient ascent in the learned latent space plus beam-search generation.

Starts are the top-K records by comprehensive score, encoded.  Each start
is pushed along the evaluator's latent gradient with a backtracking step
size, so the evaluator estimate along every accepted trajectory is
non-decreasing by construction.  The best candidate is decoded by beam
search with validity masks: already-emitted device ids and PAD are never
re-emitted, and EOS is masked at the first step so the result is a valid
non-empty selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .collectors import RecordSet, SelectionRecord
from .core import ClientSelection
from .errors import DataError, NumericError
from .neural import ModelBundle, decode_step, encode, evaluate_score, evaluate_score_grad

MIN_STEP_SIZE = 1e-8


@dataclass(frozen=True)
class OptConfig:
    top_k: int = 25
    step_size: float = 0.1
    max_steps: int = 20
    shrink: float = 0.5
    beam_width: int = 5
    max_length: int = 12
    restart_scale: float = 0.3

    def __post_init__(self):
        if self.top_k < 1 or self.step_size <= 0 or self.beam_width < 1:
            raise ValueError("invalid opt config")
        if self.max_steps < 0 or not 0 < self.shrink < 1 or self.max_length < 1:
            raise ValueError("invalid opt config")
        if self.restart_scale < 0:
            raise ValueError("invalid opt config")


@dataclass(frozen=True)
class Candidate:
    latent: np.ndarray
    estimate: float
    start_index: int
    steps_taken: int


def top_k_starts(recordset: RecordSet, k: int, bundle: ModelBundle) -> list[tuple[SelectionRecord, np.ndarray]]:
    """Encode the k best-scored records (ties keep collection order)."""
    if len(recordset) == 0:
        raise DataError("no records to start from")
    order = sorted(range(len(recordset.records)),
                   key=lambda i: (-recordset.records[i].score, i))
    picked = order[:min(k, len(order))]
    return [(recordset.records[i], encode(recordset.records[i].selection, bundle))
            for i in picked]


def ascend(latent: np.ndarray, bundle: ModelBundle, cfg: OptConfig,
           score_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]] | None = None
           ) -> tuple[np.ndarray, float, int]:
    """Backtracking gradient ascent on the evaluator estimate.

    ``score_and_grad`` may inject an analytic objective for testing; by
    default the bundle's evaluator is used.  Returns (latent, estimate,
    accepted-step count); the returned estimate never falls below the
    starting one.
    """
    fn = score_and_grad or (lambda e: evaluate_score_grad(e, bundle))
    current = latent
    score, grad = fn(current)
    eta = cfg.step_size
    accepted = 0
    for _ in range(cfg.max_steps):
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite latent gradient at step {accepted}")
        while eta >= MIN_STEP_SIZE:
            proposal = current + eta * grad
            new_score, new_grad = fn(proposal)
            if new_score > score:
                current, score, grad = proposal, new_score, new_grad
                accepted += 1
                break
            eta *= cfg.shrink
        else:
            break
    return current, score, accepted


def select_best(candidates: list[Candidate]) -> Candidate:
    """Argmax by estimate; ties keep the first occurrence."""
    if not candidates:
        raise DataError("empty candidate set")
    best = candidates[0]
    for cand in candidates[1:]:
        if cand.estimate > best.estimate:
            best = cand
    return best


def beam_decode(latent: np.ndarray, bundle: ModelBundle, beam_width: int,
                max_length: int) -> ClientSelection:
    """Best-first decode of a latent matrix into a valid selection.

    Beams are ranked by accumulated log-probability.  A beam finishes by
    emitting EOS (whose log-probability it pays) or by reaching
    ``max_length``.  Masks forbid PAD always, duplicates always, and EOS at
    the first step.
    """
    eos, pad = bundle.vocab.eos, bundle.vocab.pad
    beams = [((), 0.0, None, None)]  # tokens, logprob, prev_token, state
    finished: list[tuple[tuple[int, ...], float]] = []

    for step in range(max_length):
        expansions = []
        for tokens, logp, prev, state in beams:
            probs, new_state = decode_step(prev, state, latent, bundle)
            logprobs = np.log(np.maximum(probs, 1e-300))
            for tok in range(bundle.vocab.size):
                if tok == pad or tok in tokens or (tok == eos and step == 0):
                    continue
                if tok == eos:
                    finished.append((tokens, logp + logprobs[tok]))
                else:
                    expansions.append((tokens + (tok,), logp + logprobs[tok],
                                       tok, new_state))
        if not expansions:
            break
        expansions.sort(key=lambda b: (-b[1], b[0]))
        beams = expansions[:beam_width]
    finished.extend((tokens, logp) for tokens, logp, _, _ in beams)

    best_tokens, _ = max(finished, key=lambda f: (f[1], tuple(-t for t in f[0])))
    return ClientSelection(best_tokens)


def gcs_select(bundle: ModelBundle, recordset: RecordSet, cfg: OptConfig,
               restart_rng: np.random.Generator | None = None) -> ClientSelection:
    """Full generative pipeline: top-K starts, ascend, argmax, beam decode.

    ``restart_rng`` enables jittered restarts: each start latent is displaced
    by ``cfg.restart_scale`` Gaussian noise before ascending, so repeated
    calls with differently seeded generators explore distinct basins around
    the best known selections.  Without a generator the path is fully
    deterministic.
    """
    starts = top_k_starts(recordset, cfg.top_k, bundle)
    candidates = []
    for idx, (_rec, latent) in enumerate(starts):
        if restart_rng is not None and cfg.restart_scale > 0:
            latent = latent + cfg.restart_scale * restart_rng.normal(size=latent.shape)
        out_latent, estimate, steps = ascend(latent, bundle, cfg)
        candidates.append(Candidate(latent=out_latent, estimate=estimate,
                                    start_index=idx, steps_taken=steps))
    best = select_best(candidates)
    return beam_decode(best.latent, bundle, cfg.beam_width, cfg.max_length)
