"""Dataset ingestion, the training loop, metrics and checkpointing.

Dataset files are TSV: ``id<TAB>label<TAB>optional_text``; embeddings are
joined by id through the provider. Metrics support two conventions: the
MATRES-style F1 (the no-relation class treated as "no prediction") and plain
micro-F1.
"""

import copy
from dataclasses import dataclass, field, fields

import numpy as np
import torch

from . import encoder as encoder_mod
from . import variational
from .exceptions import (
    ConfigurationError,
    DataFormatError,
    InvalidInputError,
    TrainingError,
)
from .numerics import SeededRng
from .scorers import ParamLayout, RelationSet
from .variational import AnnealSchedule, PosteriorNet, RelationModel

CHECKPOINT_VERSION = 1


@dataclass
class DatasetSplit:
    instances: list
    name: str = "train"

    def __post_init__(self):
        ids = [i.instance_id for i in self.instances]
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f"duplicate instance ids in split {self.name!r}")

    def __len__(self):
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)


def parse_dataset(path, relset, name="train"):
    """Parse a TSV dataset file and validate labels against the relation set.

    Embeddings are attached later (``join_embeddings``); until then instances
    carry zero-length vectors.
    """
    instances = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise DataFormatError("expected 'id<TAB>label'", path=path, line=lineno)
            inst_id, label = parts[0], parts[1]
            if label not in relset.names:
                raise DataFormatError(
                    f"unknown label {label!r}", path=path, line=lineno
                )
            if inst_id in seen:
                raise DataFormatError(
                    f"duplicate id {inst_id!r}", path=path, line=lineno
                )
            seen.add(inst_id)
            text = parts[2] if len(parts) > 2 else None
            instances.append(
                encoder_mod.EventPairInstance(
                    inst_id, np.zeros(0), np.zeros(0), label, text
                )
            )
    return DatasetSplit(instances, name)


def join_embeddings(split, provider):
    """Fill instance embeddings from the provider (by id)."""
    for inst in split:
        h, t = provider.pair(inst.instance_id)
        inst.head_embedding = np.asarray(h, dtype=np.float64)
        inst.tail_embedding = np.asarray(t, dtype=np.float64)
    return split


@dataclass
class RunConfig:
    relations: tuple = ("Before", "After", "Equal", "Vague")
    no_relation: str | None = "Vague"
    scorer: str = "mure"
    d_r: int = 50
    d_z: int = 200
    dropout: float = 0.1
    bayesian: bool = True
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 1e-3
    encoder_learning_rate: float = 1e-5
    anneal_start: float = 1e-2
    anneal_end: float = 2.0
    mc_samples: int = 1
    seed: int = 0
    convention: str = "matres"

    def __post_init__(self):
        if self.d_r < 1 or self.d_z < 1:
            raise ConfigurationError("dimensions must be positive")
        if self.learning_rate <= 0 or self.encoder_learning_rate <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.convention not in ("matres", "micro"):
            raise ConfigurationError(f"unknown convention {self.convention!r}")

    @property
    def relset(self):
        return RelationSet(tuple(self.relations), self.no_relation)

    def anneal_schedule(self):
        return AnnealSchedule(self.anneal_start, self.anneal_end, max(self.epochs, 1))

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def build_model(config, embed_dim, rng):
    layout = ParamLayout(config.scorer, config.d_r, config.relset)
    projection = encoder_mod.ScoringProjection(
        embed_dim, config.d_r, rng.derive("projection")
    )
    posterior = PosteriorNet(
        2 * embed_dim,
        config.d_z,
        layout.dim,
        dropout=config.dropout,
        rng=rng.derive("posterior"),
    )
    return RelationModel(projection, posterior, layout, deterministic=not config.bayesian)


@dataclass
class Checkpoint:
    """Everything needed to restore a trained model and keep sampling."""

    config: dict
    embed_dim: int
    model_state: dict
    provider_state: dict | None
    prior_mean: np.ndarray
    epoch: int
    best_dev_f1: float | None
    rng_states: dict = field(default_factory=dict)

    def run_config(self):
        return RunConfig(**self.config)


def snapshot(config, model, provider, prior_mean, epoch, best_dev_f1, rngs=None):
    provider_state = None
    if provider.mode == "lookup":
        provider_state = {
            "keys": list(provider.keys()),
            "table": provider.table.detach().numpy().copy(),
            "trainable": provider.trainable,
        }
    return Checkpoint(
        config=config.to_dict(),
        embed_dim=provider.dimension,
        model_state=copy.deepcopy(model.state_dict()),
        provider_state=provider_state,
        prior_mean=np.asarray(prior_mean, dtype=np.float64).copy(),
        epoch=epoch,
        best_dev_f1=best_dev_f1,
        rng_states={} if rngs is None else {k: v.get_state() for k, v in rngs.items()},
    )


def save_checkpoint(path, ckpt):
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": ckpt.config,
        "embed_dim": ckpt.embed_dim,
        "model_state": ckpt.model_state,
        "provider_state": ckpt.provider_state,
        "prior_mean": ckpt.prior_mean,
        "epoch": ckpt.epoch,
        "best_dev_f1": ckpt.best_dev_f1,
        "rng_states": ckpt.rng_states,
    }
    torch.save(payload, path)


def load_checkpoint(path):
    payload = torch.load(path, weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version", path=str(path))
    return Checkpoint(
        config=payload["config"],
        embed_dim=payload["embed_dim"],
        model_state=payload["model_state"],
        provider_state=payload["provider_state"],
        prior_mean=payload["prior_mean"],
        epoch=payload["epoch"],
        best_dev_f1=payload["best_dev_f1"],
        rng_states=payload["rng_states"],
    )


def restore_model(ckpt, provider=None):
    """Rebuild the model (and lookup provider, if stored) from a checkpoint."""
    config = ckpt.run_config()
    model = build_model(config, ckpt.embed_dim, SeededRng(config.seed).derive("init"))
    model.load_state_dict(ckpt.model_state)
    if provider is None:
        if ckpt.provider_state is None:
            raise InvalidInputError(
                "checkpoint has no embedded provider; pass one explicitly"
            )
        ps = ckpt.provider_state
        provider = encoder_mod.LookupProvider(
            ps["keys"], ckpt.embed_dim, trainable=ps["trainable"]
        )
        with torch.no_grad():
            provider.table.copy_(torch.from_numpy(ps["table"]))
    return model, provider


@dataclass
class MetricsReport:
    convention: str
    precision: float
    recall: float
    f1: float
    micro_f1: float
    per_class: dict  # name -> dict(precision, recall, f1, support, flagged)
    confusion: np.ndarray  # rows gold, cols predicted, relset order
    labels: tuple

    def key_values(self):
        lines = [
            f"convention={self.convention}",
            f"precision={self.precision:.4f}",
            f"recall={self.recall:.4f}",
            f"f1={self.f1:.4f}",
            f"micro_f1={self.micro_f1:.4f}",
        ]
        for name in self.labels:
            row = self.per_class[name]
            for k in ("precision", "recall", "f1"):
                lines.append(f"class.{name}.{k}={row[k]:.4f}")
        return lines

    def table(self):
        out = [f"{'class':<12}{'P':>8}{'R':>8}{'F1':>8}{'support':>9}"]
        for name in self.labels:
            row = self.per_class[name]
            flag = " *" if row["flagged"] else ""
            out.append(
                f"{name:<12}{row['precision']:>8.2f}{row['recall']:>8.2f}"
                f"{row['f1']:>8.2f}{row['support']:>9d}{flag}"
            )
        out.append(
            f"{self.convention} P/R/F1: {self.precision:.2f}/{self.recall:.2f}/"
            f"{self.f1:.2f}  micro-F1: {self.micro_f1:.2f}"
        )
        return "\n".join(out)


def _safe_ratio(num, den):
    """0-for-0/0 with a flag, mirroring how empty classes are reported."""
    if den == 0:
        return 0.0, True
    return num / den, False


def compute_metrics(gold, predicted, relset, convention="matres"):
    """Metrics from parallel gold/predicted label lists (values in [0, 100])."""
    if convention not in ("matres", "micro"):
        raise InvalidInputError(f"unknown convention {convention!r}")
    if len(gold) != len(predicted) or len(gold) == 0:
        raise InvalidInputError("gold/predicted must be equal-length, non-empty")
    k = len(relset)
    confusion = np.zeros((k, k), dtype=np.int64)
    for g, p in zip(gold, predicted):
        confusion[relset.index(g), relset.index(p)] += 1

    per_class = {}
    for i, name in enumerate(relset):
        tp = int(confusion[i, i])
        p, p_flag = _safe_ratio(tp, int(confusion[:, i].sum()))
        r, r_flag = _safe_ratio(tp, int(confusion[i, :].sum()))
        f1, f_flag = _safe_ratio(2 * p * r, p + r)
        per_class[name] = {
            "precision": 100.0 * p,
            "recall": 100.0 * r,
            "f1": 100.0 * f1,
            "support": int(confusion[i, :].sum()),
            "flagged": p_flag or r_flag or f_flag,
        }

    correct = int(np.trace(confusion))
    micro = 100.0 * correct / len(gold)

    if convention == "matres" and relset.no_relation is not None:
        nr = relset.index(relset.no_relation)
        pred_pos = int(confusion[:, :].sum() - confusion[:, nr].sum())
        gold_pos = int(confusion.sum() - confusion[nr, :].sum())
        tp = int(np.trace(confusion) - confusion[nr, nr])
        p, _ = _safe_ratio(tp, pred_pos)
        r, _ = _safe_ratio(tp, gold_pos)
        f1, _ = _safe_ratio(2 * p * r, p + r)
        precision, recall, f_main = 100.0 * p, 100.0 * r, 100.0 * f1
    else:
        precision = recall = f_main = micro

    return MetricsReport(
        convention=convention,
        precision=precision,
        recall=recall,
        f1=f_main,
        micro_f1=micro,
        per_class=per_class,
        confusion=confusion,
        labels=tuple(relset.names),
    )


def predict_proba(model, provider, inst, mc_samples=0, rng=None):
    """Predictive distribution for one instance.

    Default is the deterministic mean-posterior prediction (z = mu);
    ``mc_samples > 0`` averages that many reparameterized forward passes.
    """
    with torch.no_grad():
        e_h, e_t = provider.pair_tensors(inst.instance_id)
        h, t = model.scoring_pair(e_h, e_t)
        g = model.posterior_for(e_h, e_t)
        if mc_samples and mc_samples > 0:
            if rng is None:
                raise InvalidInputError("MC prediction needs an rng")
            rows = []
            for _ in range(mc_samples):
                z = variational.sample_latent(g, rng)
                rows.append(torch.exp(model.log_probs(h, t, z)).numpy())
            return np.mean(rows, axis=0)
        return torch.exp(model.log_probs(h, t, g.mu)).numpy()


def predict_labels(model, provider, split, mc_samples=0, rng=None):
    relset = model.relset
    out = []
    for inst in split:
        probs = predict_proba(model, provider, inst, mc_samples, rng)
        out.append(relset.names[int(np.argmax(probs))])
    return out


def evaluate(ckpt_or_model, split, convention="matres", provider=None, mc_samples=0, rng=None):
    """Evaluate a checkpoint (or live model, with provider) on one split."""
    if isinstance(ckpt_or_model, Checkpoint):
        model, provider = restore_model(ckpt_or_model, provider)
    else:
        model = ckpt_or_model
        if provider is None:
            raise InvalidInputError("evaluating a live model needs a provider")
    if len(split) == 0:
        raise InvalidInputError("empty evaluation split")
    predicted = predict_labels(model, provider, split, mc_samples, rng)
    gold = [inst.gold_label for inst in split]
    return compute_metrics(gold, predicted, model.relset, convention)


def train(config, train_split, dev_split, provider, prior_spec, log=None):
    """Run the full optimization loop; returns (best checkpoint, history).

    Two learning-rate groups: the scoring projection and any trainable lookup
    table at the encoder-side rate, everything else at the main rate. The
    regularizer weight follows the anneal schedule; dev is evaluated every
    epoch and the best-convention-F1 snapshot is retained.
    """
    if len(train_split) == 0:
        raise InvalidInputError("training split must be non-empty")
    if prior_spec.dim != config.d_z:
        raise ConfigurationError(
            f"prior dimension {prior_spec.dim} != configured d_z {config.d_z}"
        )
    root = SeededRng(config.seed)
    model = build_model(config, provider.dimension, root.derive("init"))
    sample_rng = root.derive("latent-samples")
    shuffle_rng = root.derive("shuffle")
    dropout_rng = root.derive("dropout")

    encoder_params = list(model.projection.parameters())
    if provider.mode == "lookup" and provider.trainable:
        encoder_params += list(provider.parameters())
    opt = torch.optim.Adam(
        [
            {"params": encoder_params, "lr": config.encoder_learning_rate},
            {"params": list(model.posterior.parameters()), "lr": config.learning_rate},
        ]
    )
    sched = config.anneal_schedule()
    instances = list(train_split)
    best = None
    history = []
    if config.epochs == 0:
        best = snapshot(config, model, provider, prior_spec.mean, 0, None)
    for epoch in range(config.epochs):
        lam = variational.anneal_weight(epoch, sched) if config.bayesian else 0.0
        order = shuffle_rng.permutation(len(instances))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(instances), config.batch_size):
            batch = [instances[i] for i in order[start : start + config.batch_size]]
            loss = variational.batch_objective(
                batch,
                model,
                provider,
                prior_spec.mean,
                lam,
                sample_rng,
                n_samples=config.mc_samples,
                dropout_rng=dropout_rng if config.dropout > 0 else None,
            )
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach())
            n_batches += 1
        record = {"epoch": epoch, "loss": epoch_loss / max(n_batches, 1), "lambda": lam}
        if dev_split is not None and len(dev_split) > 0:
            report = evaluate(model, dev_split, config.convention, provider=provider)
            record["dev_f1"] = report.f1
            record["dev_micro_f1"] = report.micro_f1
            if best is None or report.f1 > best.best_dev_f1:
                best = snapshot(
                    config, model, provider, prior_spec.mean, epoch, report.f1
                )
        history.append(record)
        if log is not None:
            log(record)
    if best is None:
        best = snapshot(config, model, provider, prior_spec.mean, config.epochs, None)
    return best, history
