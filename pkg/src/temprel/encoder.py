"""Event-pair representation assembly.

Contextual event-trigger embeddings are produced externally (by whatever
pretrained encoder the user runs) and consumed here through a plain text file,
or provided by a trainable lookup table for desk-scale synthetic experiments.

Embedding file format: UTF-8, first line ``#dim D``, then one row per key:
``key v1 v2 ... vD`` with keys ``<instance_id>:head`` / ``<instance_id>:tail``.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .exceptions import DataFormatError, InvalidInputError


@dataclass
class EventPairInstance:
    """One classification example."""

    instance_id: str
    head_embedding: np.ndarray
    tail_embedding: np.ndarray
    gold_label: str
    text: str | None = None

    def __post_init__(self):
        h = np.asarray(self.head_embedding, dtype=np.float64)
        t = np.asarray(self.tail_embedding, dtype=np.float64)
        if h.shape != t.shape or h.ndim != 1:
            raise InvalidInputError("head/tail embeddings must share one length")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(t))):
            raise InvalidInputError("embeddings must be finite")
        self.head_embedding = h
        self.tail_embedding = t


def pair_representation(inst):
    """Concatenated [head; tail] vector, head first (order carries direction)."""
    return np.concatenate([inst.head_embedding, inst.tail_embedding])


class PrecomputedProvider:
    """Read-only embedding provider backed by a key -> vector file."""

    mode = "precomputed"
    trainable = False

    def __init__(self, dimension, table):
        self.dimension = int(dimension)
        self._table = dict(table)

    def keys(self):
        return self._table.keys()

    def vector(self, key):
        try:
            return self._table[key]
        except KeyError:
            raise InvalidInputError(f"embedding key not found: {key!r}") from None

    def pair(self, instance_id):
        return self.vector(f"{instance_id}:head"), self.vector(f"{instance_id}:tail")

    def pair_tensors(self, instance_id):
        h, t = self.pair(instance_id)
        return torch.from_numpy(h), torch.from_numpy(t)


def load_precomputed(path):
    """Parse an embedding file into a :class:`PrecomputedProvider`."""
    table = {}
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if lineno == 1:
                parts = line.split()
                if len(parts) != 2 or parts[0] != "#dim":
                    raise DataFormatError(
                        "first line must be '#dim D'", path=path, line=lineno
                    )
                try:
                    dim = int(parts[1])
                except ValueError:
                    raise DataFormatError(
                        f"bad dimension {parts[1]!r}", path=path, line=lineno
                    ) from None
                continue
            parts = line.split()
            key = parts[0]
            if key in table:
                raise DataFormatError(f"duplicate key {key!r}", path=path, line=lineno)
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError:
                raise DataFormatError("non-numeric value", path=path, line=lineno) from None
            if vec.size != dim:
                raise DataFormatError(
                    f"expected {dim} values, got {vec.size}", path=path, line=lineno
                )
            table[key] = vec
    if dim is None:
        raise DataFormatError("empty embedding file", path=path)
    return PrecomputedProvider(dim, table)


def save_precomputed(path, dimension, table):
    """Write an embedding file; round-trips at 17 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#dim {int(dimension)}\n")
        for key in table:
            vals = " ".join(f"{v:.17g}" for v in np.asarray(table[key], dtype=np.float64))
            fh.write(f"{key} {vals}\n")


class LookupProvider(torch.nn.Module):
    """Trainable lookup-table provider for synthetic experiments."""

    mode = "lookup"

    def __init__(self, keys, dimension, rng=None, trainable=True):
        super().__init__()
        keys = list(keys)
        if len(keys) != len(set(keys)):
            raise InvalidInputError("lookup keys must be unique")
        self.dimension = int(dimension)
        self.key_index = {k: i for i, k in enumerate(keys)}
        if rng is not None:
            init = 0.1 * rng.normal_matrix(len(keys), dimension)
        else:
            init = np.zeros((len(keys), dimension))
        self.table = torch.nn.Parameter(
            torch.from_numpy(np.ascontiguousarray(init)), requires_grad=trainable
        )
        self.trainable = trainable

    def keys(self):
        return self.key_index.keys()

    def vector(self, key):
        return self._row(key).detach().numpy()

    def _row(self, key):
        try:
            return self.table[self.key_index[key]]
        except KeyError:
            raise InvalidInputError(f"embedding key not found: {key!r}") from None

    def pair(self, instance_id):
        h, t = self.pair_tensors(instance_id)
        return h.detach().numpy(), t.detach().numpy()

    def pair_tensors(self, instance_id):
        return self._row(f"{instance_id}:head"), self._row(f"{instance_id}:tail")


class ScoringProjection(torch.nn.Module):
    """Shared affine map from encoder space (d) into scoring space (d_r).

    One map serves both head and tail; trained jointly with the posterior
    network at the encoder-side learning rate.
    """

    def __init__(self, d_in, d_out, rng=None):
        super().__init__()
        if rng is not None:
            w = rng.normal_matrix(d_out, d_in) / np.sqrt(d_in)
        else:
            w = np.zeros((d_out, d_in))
        self.weight = torch.nn.Parameter(torch.from_numpy(np.ascontiguousarray(w)))
        self.bias = torch.nn.Parameter(torch.zeros(d_out, dtype=torch.float64))

    def forward(self, v):
        if v.numel() != self.weight.shape[1]:
            raise InvalidInputError(
                f"projection expects length {self.weight.shape[1]}, got {v.numel()}"
            )
        return self.weight @ v + self.bias
