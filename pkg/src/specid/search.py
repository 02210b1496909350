"""Model-space search: exhaustive enumeration, Occam's window beam, and MC3.

All strategies fit subsets of a candidate pool (library spectra or table
columns) against one observation vector and return a ModelSet of fitted,
non-degenerate models sorted by (bic, regressor names). Degenerate (flagged)
models are discarded: their likelihoods are numerically meaningless and
duplicate-regressor designs double-count evidence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import SpectralLibrary, Spectrum
from .errors import AlignmentError, InputError, SearchError
from .regression import ModelPrior, RegressionModel, Workspace

STRATEGIES = ("exhaustive", "occam", "mc3")


@dataclass(frozen=True)
class SearchConfig:
    """Knobs shared by every strategy.

    window_ratio C defines the Occam window 2*ln(C) in BIC units; models
    worse than the best by more than that are rejected. submodel_exclusion
    additionally drops any retained model when a strict sub-model of it is
    retained with lower BIC (the stricter classic rule; off by default).
    """

    max_size: int = 4
    window_ratio: float = 20.0
    strategy: str = "occam"
    mc3_iterations: int = 20000
    seed: int = 0
    prior: ModelPrior = field(default_factory=ModelPrior.uniform)
    enumeration_cap: int = 2_000_000
    beam_cap: int = 50_000
    submodel_exclusion: bool = False

    def __post_init__(self):
        if self.max_size < 1:
            raise InputError("max_size must be >= 1, got %r" % self.max_size)
        if not self.window_ratio > 1:
            raise InputError("window_ratio must be > 1, got %r" % self.window_ratio)
        if self.strategy not in STRATEGIES:
            raise InputError("strategy must be one of %r, got %r"
                             % (STRATEGIES, self.strategy))
        if self.mc3_iterations < 1:
            raise InputError("mc3_iterations must be >= 1")
        if self.enumeration_cap < 1 or self.beam_cap < 1:
            raise InputError("enumeration_cap and beam_cap must be >= 1")

    @property
    def window(self) -> float:
        return 2.0 * math.log(self.window_ratio)


@dataclass(frozen=True)
class ModelSet:
    """Fitted models retained by one search run.

    `candidates` is the full pool the search drew from, so downstream code
    can tell "never retained" apart from "not a known regressor".
    """

    models: tuple
    best_bic: float
    candidates: tuple
    strategy: str
    strategy_metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.models:
            raise SearchError("a ModelSet needs at least one model")
        keys = [m.key() for m in self.models]
        if len(set(keys)) != len(keys):
            raise SearchError("ModelSet contains duplicate regressor sets")

    def __len__(self) -> int:
        return len(self.models)


def make_workspace(y, library, with_intercept: bool = False) -> Workspace:
    """Bind an observation to a candidate pool.

    `library` may be a SpectralLibrary (y must be a Spectrum or vector on its
    grid; the library band mask and the pixel's validity mask are applied, no
    intercept in the spectral convention) or an existing Workspace (returned
    as is).
    """
    if isinstance(library, Workspace):
        return library
    if not isinstance(library, SpectralLibrary):
        raise InputError("library must be a SpectralLibrary or Workspace, got %r"
                         % type(library).__name__)
    mask = library.band_mask.copy()
    if isinstance(y, Spectrum):
        if y.grid != library.grid:
            raise AlignmentError(
                "pixel %r is not on the library grid; resample first" % y.name)
        mask &= y.valid_mask()
        yvec = y.values
    else:
        yvec = np.asarray(y, dtype=np.float64)
        if yvec.shape != (len(library.grid),):
            raise InputError("observation length %d does not match %d bands"
                             % (yvec.size, len(library.grid)))
    if not mask.any():
        raise InputError("no usable bands shared by pixel and library")
    return Workspace(yvec[mask], library.matrix()[mask], library.names,
                     with_intercept=with_intercept)


def _checked(ws: Workspace, config: SearchConfig) -> int:
    """Common validation; returns the effective per-model size limit."""
    limit = min(config.max_size, ws.n_candidates)
    if config.prior.size_weights is not None and len(config.prior.size_weights) < limit:
        raise InputError("prior covers sizes 1..%d but search needs up to %d"
                         % (len(config.prior.size_weights), limit))
    return limit


def _finish(pool: dict, ws: Workspace, strategy: str, metadata: dict) -> ModelSet:
    models = sorted(pool.values(), key=lambda m: (m.bic, m.key()))
    if not models:
        raise SearchError("no usable models: every candidate design is degenerate")
    return ModelSet(models=tuple(models), best_bic=models[0].bic,
                    candidates=ws.names, strategy=strategy,
                    strategy_metadata=metadata)


def exhaustive_search(y, library, config: SearchConfig = None) -> ModelSet:
    """Fit every regressor subset of size 1..max_size.

    Refuses to run when the subset count exceeds config.enumeration_cap.
    """
    config = config or SearchConfig(strategy="exhaustive")
    ws = make_workspace(y, library)
    limit = _checked(ws, config)
    p = ws.n_candidates
    total = sum(math.comb(p, k) for k in range(1, limit + 1))
    if total > config.enumeration_cap:
        raise SearchError(
            "exhaustive search over %d candidates up to size %d needs %d fits, "
            "above the cap of %d" % (p, limit, total, config.enumeration_cap))
    pool = {}

    def descend(parent, last):
        for j in range(last + 1, p):
            child = ws.extend(parent, j)
            if not child.condition_flag:
                pool[child.key()] = child
            if child.size < limit:
                descend(child, j)

    for j in range(p):
        model = ws.fit_subset((j,))
        if not model.condition_flag:
            pool[model.key()] = model
        if limit > 1:
            descend(model, j)
    return _finish(pool, ws, "exhaustive", {"fits": total})


def filter_window(models: ModelSet, window: float) -> tuple:
    """Models within `window` BIC units of the set's best, sorted as stored."""
    best = models.best_bic
    return tuple(m for m in models.models if m.bic - best <= window)


def occam_search(y, library, config: SearchConfig = None) -> ModelSet:
    """Level-wise beam under a BIC window of 2*ln(window_ratio).

    Fit all single-regressor models, keep those within the window of the best
    BIC seen so far, extend every survivor by every absent candidate
    (deduplicated by regressor set), re-prune against the running best, and
    repeat up to max_size. A final prune against the global best is applied;
    with submodel_exclusion, retained models beaten by one of their own
    retained sub-models are then dropped.
    """
    config = config or SearchConfig(strategy="occam")
    ws = make_workspace(y, library)
    limit = _checked(ws, config)
    p = ws.n_candidates
    window = config.window
    fits = 0
    capped = False
    best = math.inf
    pool = {}

    name_index = {name: j for j, name in enumerate(ws.names)}
    level = []
    for j in range(p):
        model = ws.fit_subset((j,))
        fits += 1
        if model.condition_flag:
            continue
        best = min(best, model.bic)
        level.append(model)
    if not level:
        raise SearchError("every single-regressor model is degenerate")
    survivors = [m for m in level if m.bic - best <= window]
    pool.update({m.key(): m for m in survivors})

    for _size in range(2, limit + 1):
        survivors.sort(key=lambda m: (m.bic, m.key()))
        if len(survivors) > config.beam_cap:
            survivors = survivors[:config.beam_cap]
            capped = True
        candidates = {}
        for parent in survivors:
            inside = {name_index[n] for n in parent.regressors}
            for j in range(p):
                if j in inside:
                    continue
                ckey = tuple(sorted(parent.regressors + (ws.names[j],)))
                if ckey not in candidates:
                    candidates[ckey] = (parent, j)
        level = []
        for ckey in sorted(candidates):
            parent, j = candidates[ckey]
            child = ws.extend(parent, j)
            fits += 1
            if child.condition_flag:
                continue
            best = min(best, child.bic)
            level.append(child)
        survivors = [m for m in level if m.bic - best <= window]
        pool.update({m.key(): m for m in survivors})
        if not survivors:
            break

    retained = {k: m for k, m in pool.items() if m.bic - best <= window}
    dropped = 0
    if config.submodel_exclusion:
        keys = sorted(retained, key=len)
        keep = {}
        for key in keys:
            kset = set(key)
            beaten = any(set(other) < kset and retained[other].bic < retained[key].bic
                         for other in keys if len(other) < len(key))
            if beaten:
                dropped += 1
            else:
                keep[key] = retained[key]
        retained = keep
    meta = {"fits": fits, "beam_capped": capped, "window": window,
            "submodel_excluded": dropped}
    return _finish(retained, ws, "occam", meta)


def mc3_search(y, library, config: SearchConfig = None) -> ModelSet:
    """Metropolis walk over subsets (add / remove / swap moves).

    Proposals are uniform over the legal neighbor moves of the current model;
    acceptance is min(1, exp(-(bic'-bic)/2) * prior ratio * |N(M)|/|N(M')|).
    The returned set holds every unique model the chain occupied, each with
    its exactly computed BIC; degenerate proposals are rejected outright.
    """
    config = config or SearchConfig(strategy="mc3")
    ws = make_workspace(y, library)
    limit = _checked(ws, config)
    p = ws.n_candidates
    prior = config.prior
    rng = np.random.default_rng(config.seed)
    cache = {}

    def fitted(key):
        model = cache.get(key)
        if model is None:
            model = ws.fit_subset(key)
            cache[key] = model
        return model

    def neighbor_count(k: int) -> int:
        adds = p - k if k < limit else 0
        removes = k if k > 1 else 0
        return adds + removes + k * (p - k)

    current_key = None
    for j in rng.permutation(p):
        model = fitted((int(j),))
        if not model.condition_flag:
            current_key = (int(j),)
            current = model
            break
    if current_key is None:
        raise SearchError("every single-regressor model is degenerate")

    visited = {current_key}
    accepted = 0
    for _ in range(config.mc3_iterations):
        k = len(current_key)
        adds = p - k if k < limit else 0
        removes = k if k > 1 else 0
        total = adds + removes + k * (p - k)
        if total == 0:
            break  # no legal move (single candidate pool)
        move = int(rng.integers(total))
        inside = set(current_key)
        outside = [j for j in range(p) if j not in inside]
        if move < adds:
            proposal_key = tuple(sorted(current_key + (outside[move],)))
        elif move < adds + removes:
            kept = list(current_key)
            del kept[move - adds]
            proposal_key = tuple(kept)
        else:
            slot, target = divmod(move - adds - removes, p - k)
            kept = list(current_key)
            kept[slot] = outside[target]
            proposal_key = tuple(sorted(kept))
        proposal = fitted(proposal_key)
        if proposal.condition_flag:
            continue  # zero-posterior state; reject
        log_alpha = (-(proposal.bic - current.bic) / 2.0
                     + prior.log_weight(len(proposal_key)) - prior.log_weight(k)
                     + math.log(total) - math.log(neighbor_count(len(proposal_key))))
        if log_alpha >= 0 or math.log(rng.random()) < log_alpha:
            current_key, current = proposal_key, proposal
            visited.add(proposal_key)
            accepted += 1

    pool = {key: cache[key] for key in visited}
    meta = {"iterations": config.mc3_iterations, "accepted": accepted,
            "unique_fits": len(cache)}
    return _finish(pool, ws, "mc3", meta)


def run_search(y, library, config: SearchConfig) -> ModelSet:
    """Dispatch on config.strategy."""
    fn = {"exhaustive": exhaustive_search, "occam": occam_search,
          "mc3": mc3_search}[config.strategy]
    return fn(y, library, config)
