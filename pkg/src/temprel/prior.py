"""Knowledge-informed prior construction.

A small relational graph convolution encoder is trained on link prediction
over an ingested event knowledge graph (optionally densified with semantic
similarity edges); the edge scorer's per-relation diagonal vectors serve as
relation embeddings, which are assembled into the prior mean in latent space.

File formats:
  * triples: one edge per line, ``head_id<TAB>relation<TAB>tail_id``
  * node features: first line ``#dim D``, then ``node_id v1 ... vD``
  * prior: text, see :func:`save_prior` (round-trips at 17 significant digits)
"""

from dataclasses import dataclass, field

import numpy as np
import torch

from .exceptions import ConfigurationError, DataFormatError, InvalidInputError

SIMILARITY_RELATION = "SimilarTo"


@dataclass
class KnowledgeGraph:
    node_ids: list
    features: np.ndarray  # (n_nodes, feat_dim), row order matches node_ids
    edges: list  # (head_id, relation, tail_id)
    relations: list = field(default_factory=list)

    def __post_init__(self):
        index = {n: i for i, n in enumerate(self.node_ids)}
        if len(index) != len(self.node_ids):
            raise InvalidInputError("duplicate node ids")
        for h, r, t in self.edges:
            if h not in index or t not in index:
                raise InvalidInputError(f"edge endpoint missing from nodes: {(h, r, t)}")
            if h == t and r != SIMILARITY_RELATION:
                raise InvalidInputError(f"self-loop temporal edge: {(h, r, t)}")
        if not self.relations:
            seen = []
            for _, r, _ in self.edges:
                if r not in seen:
                    seen.append(r)
            self.relations = seen
        self.node_index = index


def load_triples(path):
    edges = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataFormatError(
                    "expected 'head<TAB>relation<TAB>tail'", path=path, line=lineno
                )
            edges.append((parts[0], parts[1], parts[2]))
    return edges


def load_node_features(path):
    ids, rows = [], []
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
                dim = int(parts[1])
                continue
            parts = line.split()
            if parts[0] in ids:
                raise DataFormatError(
                    f"duplicate node id {parts[0]!r}", path=path, line=lineno
                )
            try:
                vec = [float(v) for v in parts[1:]]
            except ValueError:
                raise DataFormatError("non-numeric value", path=path, line=lineno) from None
            if len(vec) != dim:
                raise DataFormatError(
                    f"expected {dim} values, got {len(vec)}", path=path, line=lineno
                )
            ids.append(parts[0])
            rows.append(vec)
    if dim is None or not ids:
        raise DataFormatError("empty node feature file", path=path)
    return ids, np.array(rows, dtype=np.float64)


def load_graph(triples_path, features_path):
    ids, feats = load_node_features(features_path)
    return KnowledgeGraph(ids, feats, load_triples(triples_path))


def augment_similarity_edges(g, threshold):
    """Add undirected SimilarTo edges between node pairs whose feature cosine
    similarity reaches ``threshold``. Idempotent; originals preserved."""
    if not (0.0 < threshold < 1.0):
        raise InvalidInputError("threshold must be in (0, 1)")
    norms = np.linalg.norm(g.features, axis=1)
    if np.any(norms == 0.0):
        raise InvalidInputError("zero-norm node feature vector")
    unit = g.features / norms[:, None]
    sims = unit @ unit.T
    existing = {(h, r, t) for h, r, t in g.edges}
    edges = list(g.edges)
    n = len(g.node_ids)
    for i in range(n):
        for j in range(i + 1, n):
            if sims[i, j] >= threshold:
                for a, b in ((i, j), (j, i)):
                    e = (g.node_ids[a], SIMILARITY_RELATION, g.node_ids[b])
                    if e not in existing:
                        edges.append(e)
                        existing.add(e)
    relations = list(g.relations)
    if any(r == SIMILARITY_RELATION for _, r, _ in edges) and (
        SIMILARITY_RELATION not in relations
    ):
        relations.append(SIMILARITY_RELATION)
    return KnowledgeGraph(list(g.node_ids), g.features.copy(), edges, relations)


@dataclass
class LinkPredictionConfig:
    embedding_dim: int = 16
    epochs: int = 150
    learning_rate: float = 0.01
    seed: int = 0


class _RGCNLayer(torch.nn.Module):
    """One relational graph convolution: mean aggregation per relation type
    plus a self-loop weight."""

    def __init__(self, n_in, n_out, n_rel, rng):
        super().__init__()
        self.weights = torch.nn.Parameter(
            torch.from_numpy(rng.normal_matrix(n_rel, n_in * n_out).reshape(n_rel, n_in, n_out) / np.sqrt(n_in))
        )
        self.self_weight = torch.nn.Parameter(
            torch.from_numpy(rng.normal_matrix(n_in, n_out) / np.sqrt(n_in))
        )

    def forward(self, h, adjacency):
        out = h @ self.self_weight
        for r, adj in enumerate(adjacency):
            out = out + adj @ (h @ self.weights[r])
        return out


class _RGCNEncoder(torch.nn.Module):
    def __init__(self, feat_dim, emb_dim, n_rel, rng):
        super().__init__()
        self.layer1 = _RGCNLayer(feat_dim, emb_dim, n_rel, rng)
        self.layer2 = _RGCNLayer(emb_dim, emb_dim, n_rel, rng)

    def forward(self, features, adjacency):
        h = torch.relu(self.layer1(features, adjacency))
        return self.layer2(h, adjacency)


def _adjacency(g):
    """Row-normalized dense adjacency per relation (incoming-edge mean)."""
    n = len(g.node_ids)
    mats = []
    for r in g.relations:
        a = np.zeros((n, n))
        for h, rel, t in g.edges:
            if rel == r:
                a[g.node_index[t], g.node_index[h]] = 1.0
        deg = a.sum(axis=1, keepdims=True)
        deg[deg == 0.0] = 1.0
        mats.append(torch.from_numpy(a / deg))
    return mats


def train_link_prediction(g, config, rng):
    """Train the graph encoder + bilinear-diagonal edge scorer on link
    prediction with 1:1 uniform negative sampling; returns one embedding
    (the scorer diagonal) per relation, keyed by relation name."""
    if not g.edges:
        raise InvalidInputError("empty edge set")
    n_rel = len(g.relations)
    features = torch.from_numpy(g.features)  # frozen inputs
    adjacency = _adjacency(g)
    init_rng = rng.derive("rgcn-init")
    neg_rng = rng.derive("rgcn-negatives")
    encoder = _RGCNEncoder(g.features.shape[1], config.embedding_dim, n_rel, init_rng)
    diagonals = torch.nn.Parameter(
        torch.from_numpy(init_rng.normal_matrix(n_rel, config.embedding_dim))
    )
    opt = torch.optim.Adam(
        list(encoder.parameters()) + [diagonals], lr=config.learning_rate
    )
    rel_index = {r: i for i, r in enumerate(g.relations)}
    heads = torch.tensor([g.node_index[h] for h, _, _ in g.edges])
    rels = torch.tensor([rel_index[r] for _, r, _ in g.edges])
    tails = torch.tensor([g.node_index[t] for _, _, t in g.edges])
    n_nodes = len(g.node_ids)
    for _ in range(config.epochs):
        emb = encoder(features, adjacency)
        neg_tails = torch.from_numpy(
            neg_rng.integers(0, n_nodes, len(g.edges)).astype(np.int64)
        )
        pos = (emb[heads] * diagonals[rels] * emb[tails]).sum(dim=1)
        neg = (emb[heads] * diagonals[rels] * emb[neg_tails]).sum(dim=1)
        logits = torch.cat([pos, neg])
        labels = torch.cat([torch.ones_like(pos), torch.zeros_like(neg)])
        loss = torch.nn.functional.binary_cross_entropy_with_logits(logits, labels)
        opt.zero_grad()
        loss.backward()
        opt.step()
    emb = encoder(features, adjacency).detach().numpy()
    return LinkPredictionResult(
        relation_embeddings={
            r: diagonals[rel_index[r]].detach().numpy().copy() for r in g.relations
        },
        node_embeddings=emb,
        node_index=dict(g.node_index),
    )


@dataclass
class LinkPredictionResult:
    """Trained link-prediction artifacts: the per-relation scorer diagonals
    (used as relation embeddings) plus the final node encodings for held-out
    edge ranking diagnostics."""

    relation_embeddings: dict
    node_embeddings: np.ndarray
    node_index: dict

    def score_edge(self, head_id, relation, tail_id):
        diag = self.relation_embeddings[relation]
        h = self.node_embeddings[self.node_index[head_id]]
        t = self.node_embeddings[self.node_index[tail_id]]
        return float(np.sum(h * diag * t))


@dataclass
class PriorSpec:
    """Prior over the latent space: mean vector, identity covariance, and a
    per-relation provenance tag (kg-derived vs standard-gaussian)."""

    mean: np.ndarray
    relation_order: tuple
    provenance: dict

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        if not np.all(np.isfinite(self.mean)):
            raise InvalidInputError("prior mean must be finite")

    @property
    def dim(self):
        return self.mean.size


def assemble_prior(rel_embs, mapping, relset, d_z):
    """Build the prior mean by per-relation segmentation of latent space.

    ``mapping`` sends dataset relation names to KG relation names; unmapped
    relations get a zero (standard Gaussian) segment. Embeddings are truncated
    or zero-padded to the segment length. Segment length is D_z // |relset|;
    any remainder stays zero.
    """
    for name, kg_name in mapping.items():
        if name not in relset.names:
            raise ConfigurationError(f"mapping names unknown relation {name!r}")
        if kg_name not in rel_embs:
            raise ConfigurationError(
                f"relation {name!r} maps to {kg_name!r}, absent from KG embeddings"
            )
    seg = int(d_z) // len(relset)
    if seg < 1:
        raise ConfigurationError("d_z smaller than the relation count")
    mean = np.zeros(int(d_z))
    provenance = {}
    for i, name in enumerate(relset):
        if name in mapping:
            emb = np.asarray(rel_embs[mapping[name]], dtype=np.float64)
            take = min(seg, emb.size)
            mean[i * seg : i * seg + take] = emb[:take]
            provenance[name] = "kg-derived"
        else:
            provenance[name] = "standard-gaussian"
    return PriorSpec(mean, tuple(relset.names), provenance)


def standard_prior(relset, d_z):
    """Zero-mean unit-variance prior (the no-knowledge baseline)."""
    return PriorSpec(
        np.zeros(int(d_z)),
        tuple(relset.names),
        {name: "standard-gaussian" for name in relset},
    )


def sample_prior(spec, n, rng):
    """n draws from N(mean, I)."""
    if int(n) < 1:
        raise InvalidInputError("sample count must be >= 1")
    eps = rng.standard_normal(int(n) * spec.dim).reshape(int(n), spec.dim)
    return spec.mean + eps


PRIOR_FORMAT_VERSION = 1


def save_prior(path, spec):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#prior v{PRIOR_FORMAT_VERSION}\n")
        fh.write(f"#dz {spec.dim}\n")
        for name in spec.relation_order:
            fh.write(f"#relation {name} {spec.provenance[name]}\n")
        seg = spec.dim // len(spec.relation_order)
        for i, name in enumerate(spec.relation_order):
            vals = " ".join(f"{v:.17g}" for v in spec.mean[i * seg : (i + 1) * seg])
            fh.write(f"{name} {vals}\n")
        rem = spec.mean[len(spec.relation_order) * seg :]
        if rem.size:
            fh.write("_tail " + " ".join(f"{v:.17g}" for v in rem) + "\n")


def load_prior(path):
    relations, provenance, segments = [], {}, {}
    d_z = None
    tail = None
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith("#prior v"):
        raise DataFormatError("missing prior header", path=path, line=1)
    version = int(lines[0].split("v", 1)[1])
    if version != PRIOR_FORMAT_VERSION:
        raise DataFormatError(f"unsupported prior version {version}", path=path, line=1)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if parts[0] == "#dz":
            d_z = int(parts[1])
        elif parts[0] == "#relation":
            relations.append(parts[1])
            provenance[parts[1]] = parts[2]
        elif parts[0] == "_tail":
            tail = np.array([float(v) for v in parts[1:]])
        else:
            segments[parts[0]] = np.array([float(v) for v in parts[1:]])
    if d_z is None or not relations:
        raise DataFormatError("incomplete prior header", path=path)
    seg = d_z // len(relations)
    mean = np.zeros(d_z)
    for i, name in enumerate(relations):
        if name not in segments:
            raise DataFormatError(f"missing segment for {name!r}", path=path)
        if segments[name].size != seg:
            raise DataFormatError(f"bad segment length for {name!r}", path=path)
        mean[i * seg : (i + 1) * seg] = segments[name]
    if tail is not None:
        mean[len(relations) * seg :] = tail
    return PriorSpec(mean, tuple(relations), provenance)
