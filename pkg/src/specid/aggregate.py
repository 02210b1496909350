"""From a retained ModelSet to posteriors, inclusion reports, and class trees.

Model weights are exp(-(bic - bic_min)/2) times the prior weight, normalized
in shifted-log form. A class node's probability is the summed posterior of
every model containing at least one spectrum from the node's member set; a
model with two members of the class still counts once. Sibling classes may
therefore sum above their parent (one model can hit several siblings) and
are never renormalized.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import ClassHierarchy
from .errors import InputError
from .regression import ModelPrior
from .search import ModelSet


class UnknownRegressorWarning(UserWarning):
    """A probability was requested for a name outside the candidate pool."""


@dataclass(frozen=True, eq=False)
class ModelPosterior:
    """Normalized probabilities over the models of a ModelSet."""

    models: ModelSet
    probabilities: np.ndarray
    prior: ModelPrior = field(default_factory=ModelPrior.uniform)

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=np.float64).copy()
        if probs.ndim != 1 or probs.size != len(self.models.models):
            raise InputError("need one probability per model (%d models, %d given)"
                             % (len(self.models.models), probs.size))
        if np.any(probs < 0) or np.any(probs > 1):
            raise InputError("model probabilities must lie in [0, 1]")
        if abs(float(probs.sum()) - 1.0) > 1e-12:
            raise InputError("model probabilities sum to %r, not 1" % float(probs.sum()))
        probs.flags.writeable = False
        object.__setattr__(self, "probabilities", probs)

    def items(self):
        return zip(self.models.models, self.probabilities)


@dataclass(frozen=True, eq=False)
class InclusionReport:
    """Per-regressor inclusion probability and model-averaged coefficient.

    Coefficients are averaged over all models with the model posterior as
    weights (a model not containing the regressor contributes zero), so a
    rarely included regressor has a small averaged coefficient; no division
    by the inclusion probability is applied.
    """

    names: tuple
    probabilities: np.ndarray
    coefficients: np.ndarray
    intercept: float | None = None

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=np.float64)
        coefs = np.asarray(self.coefficients, dtype=np.float64)
        if not (len(self.names) == probs.size == coefs.size):
            raise InputError("names, probabilities, and coefficients must align")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "probabilities", probs)
        object.__setattr__(self, "coefficients", coefs)

    def probability_of(self, name: str) -> float:
        return float(self.probabilities[self.names.index(name)])

    def coefficient_of(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])


@dataclass(frozen=True, eq=False)
class TreeNode:
    name: str
    probability: float
    children: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))


@dataclass(frozen=True, eq=False)
class IdentificationTree:
    """Class hierarchy annotated with class probabilities; root is the library."""

    root: TreeNode

    def walk(self):
        """Yield (path, node) pairs, root first, children in stored order."""
        stack = [((), self.root)]
        while stack:
            path, node = stack.pop()
            yield path, node
            for child in reversed(node.children):
                stack.append((path + (child.name,), child))


def normalize(models: ModelSet, prior: ModelPrior = None) -> ModelPosterior:
    """Posterior P(M) from BIC weights and the prior, in shifted-log form."""
    prior = prior or ModelPrior.uniform()
    bics = [m.bic for m in models.models]
    if not all(math.isfinite(b) for b in bics):
        raise InputError("cannot normalize: non-finite BIC in model set")
    logw = np.array([-b / 2.0 + prior.log_weight(m.size)
                     for b, m in zip(bics, models.models)])
    logw -= logw.max()
    weights = np.exp(logw)
    return ModelPosterior(models, weights / weights.sum(), prior)


def inclusion_probability(posterior: ModelPosterior, regressor: str) -> float:
    """Summed posterior of the models containing `regressor`."""
    if regressor not in posterior.models.candidates:
        warnings.warn("regressor %r is not in the candidate library" % regressor,
                      UnknownRegressorWarning, stacklevel=2)
        return 0.0
    return float(sum(p for m, p in posterior.items() if regressor in m.regressors))


def averaged_coefficients(posterior: ModelPosterior) -> InclusionReport:
    """Inclusion probability and averaged coefficient for every candidate."""
    names = posterior.models.candidates
    index = {name: i for i, name in enumerate(names)}
    probs = np.zeros(len(names))
    coefs = np.zeros(len(names))
    has_intercept = False
    intercept = 0.0
    for model, p in posterior.items():
        for name, beta in zip(model.regressors, model.coefficients):
            probs[index[name]] += p
            coefs[index[name]] += p * beta
        if model.intercept is not None:
            has_intercept = True
            intercept += p * model.intercept
    return InclusionReport(names, probs, coefs,
                           intercept=float(intercept) if has_intercept else None)


def group_probability(posterior: ModelPosterior, names) -> float:
    """Summed posterior of models containing any regressor in `names`.

    The set-membership rule: a model with several group members counts once.
    """
    group = frozenset(names)
    if not group:
        return 0.0
    return float(sum(p for m, p in posterior.items()
                     if not group.isdisjoint(m.regressors)))


def class_probability(posterior: ModelPosterior, hierarchy: ClassHierarchy,
                      node) -> float:
    """Probability that the pixel contains a material of the given class."""
    return group_probability(posterior, hierarchy.members(node))


def member_probability_sum(posterior: ModelPosterior, hierarchy: ClassHierarchy,
                           node) -> float:
    """Diagnostic: sum of member inclusion probabilities.

    Equals class_probability when every model holds at most one member of the
    class; exceeds it (and may pass 1) when models bundle same-class spectra.
    """
    members = hierarchy.members(node)
    return float(sum(p * len(members.intersection(m.regressors))
                     for m, p in posterior.items()
                     if not members.isdisjoint(m.regressors)))


def build_tree(posterior: ModelPosterior, hierarchy: ClassHierarchy) -> IdentificationTree:
    """Annotate every hierarchy node with its class probability.

    Children at each branch are ordered ascending by probability (ties by
    name); values are absolute, never renormalized within a sibling group.
    """

    def build(path) -> TreeNode:
        kids = [build(child) for child in hierarchy.children(path)]
        kids.sort(key=lambda n: (n.probability, n.name))
        return TreeNode(hierarchy.label(path),
                        class_probability(posterior, hierarchy, path),
                        tuple(kids))

    return IdentificationTree(build(()))
