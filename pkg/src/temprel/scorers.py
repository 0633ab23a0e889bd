"""Translational score functions and the softmax predictive distribution.

Four scorers are supported: ``transe`` (translation only), ``mure`` (diagonal
scaling + translation, Euclidean), ``murp`` (the same transform carried out on
the Poincare ball) and ``atth`` (rotation/reflection candidates combined by
tangent-space attention, learnable curvature). All scores are negative squared
distances, so 0 is the maximum and is attained exactly when the transformed
head coincides with the (transformed) tail.
"""

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from . import geometry, numerics
from .exceptions import ConfigurationError, InvalidInputError

SCORER_NAMES = ("transe", "mure", "murp", "atth")

#: Fixed ball curvature for the MuRP scorer.
MURP_CURVATURE = 1.0


@dataclass(frozen=True)
class RelationSet:
    """Ordered, immutable set of relation names.

    ``no_relation`` names the class treated as "no relation" by the
    MATRES-style metric convention (e.g. Vague / None); it may be absent.
    """

    names: tuple
    no_relation: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) == 0:
            raise InvalidInputError("relation set must be non-empty")
        if len(set(self.names)) != len(self.names):
            raise InvalidInputError("relation names must be unique")
        if self.no_relation is not None and self.no_relation not in self.names:
            raise InvalidInputError(
                f"no-relation class {self.no_relation!r} not in relation set"
            )

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise InvalidInputError(f"unknown relation {name!r}") from None


def _check_dims(*vectors):
    sizes = {v.numel() for v in vectors}
    if len(sizes) != 1:
        raise InvalidInputError(f"dimension mismatch: {sorted(sizes)}")


def score_transe(h, t, t_r):
    """-||h + t_r - t||^2 (squared Euclidean form, as for MuRE)."""
    _check_dims(h, t, t_r)
    diff = h + t_r - t
    return -(diff * diff).sum()


def score_mure(h, t, w_r, t_r):
    """-||w_r * h + t_r - t||^2 with elementwise scaling w_r."""
    _check_dims(h, t, w_r, t_r)
    diff = w_r * h + t_r - t
    return -(diff * diff).sum()


def score_murp(h, t, w_r, t_r, c=MURP_CURVATURE):
    """MuRP: the scaling acts in the tangent space at the origin, the
    translation by Mobius addition, the distance is hyperbolic."""
    _check_dims(h, t, w_r, t_r)
    head = geometry.expmap0(
        w_r * geometry.logmap0(geometry.project_to_ball(h, c), c), c
    )
    tail = geometry.mobius_add(
        geometry.project_to_ball(t, c), geometry.expmap0(t_r, c), c
    )
    d = geometry.poincare_distance(head, tail, c)
    return -d * d


@dataclass
class AtthBlock:
    """Per-relation AttH parameters.

    ``rot`` and ``ref`` hold one Givens angle per 2-d coordinate block,
    ``att`` the tangent-space attention vector, ``t`` the translation and
    ``curv_raw`` the unconstrained curvature (softplus-mapped to c > 0).
    """

    rot: torch.Tensor
    ref: torch.Tensor
    att: torch.Tensor
    t: torch.Tensor
    curv_raw: torch.Tensor

    @property
    def curvature(self):
        return F.softplus(self.curv_raw)


def givens_rotation(angles, x):
    """Apply 2x2 rotation blocks to x (one angle per consecutive pair)."""
    pairs = x.view(-1, 2)
    cos, sin = torch.cos(angles), torch.sin(angles)
    out = torch.stack(
        [pairs[:, 0] * cos - pairs[:, 1] * sin, pairs[:, 0] * sin + pairs[:, 1] * cos],
        dim=1,
    )
    return out.reshape(-1)


def givens_reflection(angles, x):
    """Apply 2x2 reflection blocks to x."""
    pairs = x.view(-1, 2)
    cos, sin = torch.cos(angles), torch.sin(angles)
    out = torch.stack(
        [pairs[:, 0] * cos + pairs[:, 1] * sin, pairs[:, 0] * sin - pairs[:, 1] * cos],
        dim=1,
    )
    return out.reshape(-1)


def score_atth(h, t, block):
    """AttH: rotation and reflection candidates, attention-combined in the
    tangent space, Mobius-translated and compared to the tail on the ball."""
    _check_dims(h, t, block.t, block.att)
    if h.numel() % 2 != 0:
        raise ConfigurationError("atth requires an even scoring dimension")
    c = block.curvature
    cand_rot = givens_rotation(block.rot, h)
    cand_ref = givens_reflection(block.ref, h)
    logits = torch.stack([(block.att * cand_rot).sum(), (block.att * cand_ref).sum()])
    alpha = torch.softmax(logits, dim=0)
    combined = alpha[0] * cand_rot + alpha[1] * cand_ref
    head = geometry.mobius_add(
        geometry.expmap0(combined, c), geometry.expmap0(block.t, c), c
    )
    tail = geometry.expmap0(t, c)
    d = geometry.poincare_distance(head, tail, c)
    return -d * d


class ParamLayout:
    """Fixed flattening of per-relation parameters into one vector.

    Order: all scaling diagonals first, then all translations (AttH instead
    packs rotation angles, reflection angles, attention vectors, translations
    and curvatures, in that order). Scaling slices carry a +1 offset so that a
    zero flat vector yields identity transforms.
    """

    def __init__(self, scorer, d_r, relset):
        if scorer not in SCORER_NAMES:
            raise ConfigurationError(f"unknown scorer {scorer!r}")
        if scorer == "atth" and d_r % 2 != 0:
            raise ConfigurationError("atth requires even d_r for Givens blocks")
        self.scorer = scorer
        self.d_r = int(d_r)
        self.relset = relset
        n = len(relset)
        per = {"transe": d_r, "mure": 2 * d_r, "murp": 2 * d_r, "atth": 3 * d_r + 1}
        self.dim = per[scorer] * n
        offset = torch.zeros(self.dim, dtype=torch.float64)
        if scorer in ("mure", "murp"):
            offset[: n * d_r] = 1.0  # identity scaling at raw zero
        self._offset = offset

    def unflatten(self, flat):
        """Slice a flat raw vector into per-relation parameter blocks."""
        if flat.numel() != self.dim:
            raise InvalidInputError(
                f"flat parameter length {flat.numel()} != layout dim {self.dim}"
            )
        flat = flat.reshape(-1) + self._offset
        n, d = len(self.relset), self.d_r
        blocks = {}
        if self.scorer == "transe":
            for i, r in enumerate(self.relset):
                blocks[r] = {"t": flat[i * d : (i + 1) * d]}
        elif self.scorer in ("mure", "murp"):
            for i, r in enumerate(self.relset):
                blocks[r] = {
                    "W": flat[i * d : (i + 1) * d],
                    "t": flat[n * d + i * d : n * d + (i + 1) * d],
                }
        else:  # atth
            half = d // 2
            rot0, ref0, att0, t0, c0 = (
                0,
                n * half,
                2 * n * half,
                2 * n * half + n * d,
                2 * n * half + 2 * n * d,
            )
            for i, r in enumerate(self.relset):
                blocks[r] = AtthBlock(
                    rot=flat[rot0 + i * half : rot0 + (i + 1) * half],
                    ref=flat[ref0 + i * half : ref0 + (i + 1) * half],
                    att=flat[att0 + i * d : att0 + (i + 1) * d],
                    t=flat[t0 + i * d : t0 + (i + 1) * d],
                    curv_raw=flat[c0 + i],
                )
        return TranslationalParams(self.scorer, self.d_r, self.relset, blocks, flat)


@dataclass
class TranslationalParams:
    """Per-relation transformation parameters, plus the transformed flat view
    (scaling offsets applied) used by the latent-activity diagnostics."""

    scorer: str
    d_r: int
    relset: RelationSet
    blocks: dict = field(repr=False)
    flat: torch.Tensor = field(repr=False)

    def score(self, h, t, relation):
        if relation not in self.blocks:
            raise InvalidInputError(f"no parameters for relation {relation!r}")
        b = self.blocks[relation]
        if self.scorer == "transe":
            return score_transe(h, t, b["t"])
        if self.scorer == "mure":
            return score_mure(h, t, b["W"], b["t"])
        if self.scorer == "murp":
            return score_murp(h, t, b["W"], b["t"])
        return score_atth(h, t, b)


def relation_scores(h, t, params, relset):
    """Score vector over ``relset`` order (torch, differentiable)."""
    if params.relset.names != relset.names:
        raise InvalidInputError("parameter relation set does not match")
    return torch.stack([params.score(h, t, r) for r in relset])


def predict_distribution(h, t, params, relset):
    """Softmax predictive distribution over the relation set (numpy)."""
    scores = relation_scores(h, t, params, relset)
    return numerics.softmax(scores.detach().numpy())
