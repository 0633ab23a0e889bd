import numpy as np
import pytest
import torch

from temprel import numerics
from temprel.encoder import EventPairInstance
from temprel.harness import DatasetSplit
from temprel.numerics import SeededRng
from temprel.scorers import RelationSet

torch.set_num_threads(1)

# Wall-clock deadlines make property tests flaky under load; correctness
# only depends on the values.
from hypothesis import settings as _hyp_settings  # noqa: E402

_hyp_settings.register_profile("no-deadline", deadline=None)
_hyp_settings.load_profile("no-deadline")


@pytest.fixture
def relset():
    return RelationSet(("Before", "After", "Equal", "Vague"), no_relation="Vague")


def torch_grad_error(make_loss, params, eps=1e-5):
    """Worst relative error between autograd and central differences,
    taken over every element of every tensor in ``params``.

    ``make_loss`` must recompute the scalar loss from the current parameter
    values each time it is called.
    """
    loss = make_loss()
    grads = torch.autograd.grad(loss, params)
    worst = 0.0
    for p, g in zip(params, grads):
        flat0 = p.detach().numpy().ravel().copy()

        def f(x, p=p, flat0=flat0):
            with torch.no_grad():
                p.copy_(torch.from_numpy(x.reshape(p.shape)))
            val = float(make_loss().detach())
            with torch.no_grad():
                p.copy_(torch.from_numpy(flat0.reshape(p.shape)))
            return val

        err = numerics.grad_check(f, flat0, g.detach().numpy().ravel(), eps=eps)
        worst = max(worst, err)
    return worst


def make_synthetic(
    n,
    d=16,
    relations=("Before", "After", "Equal", "Vague"),
    noise=0.05,
    seed=0,
    prefix="s",
):
    """Linearly generated dataset: e_t = W*_r ⊙ e_h + t*_r + N(0, noise²)
    for hidden per-relation parameters. Returns (instances, embedding table,
    true_params dict)."""
    rng = SeededRng(seed)
    true_params = {}
    for r in relations:
        true_params[r] = {
            "W": 1.0 + 0.5 * rng.standard_normal(d),
            "t": rng.standard_normal(d),
        }
    instances = []
    table = {}
    for i in range(n):
        r = relations[i % len(relations)]
        e_h = rng.standard_normal(d)
        e_t = (
            true_params[r]["W"] * e_h
            + true_params[r]["t"]
            + noise * rng.standard_normal(d)
        )
        inst_id = f"{prefix}{i}"
        table[f"{inst_id}:head"] = e_h
        table[f"{inst_id}:tail"] = e_t
        instances.append(EventPairInstance(inst_id, e_h, e_t, r))
    return instances, table, true_params


def split_of(instances, name="train"):
    return DatasetSplit(list(instances), name)


def write_dataset_tsv(path, instances):
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(f"{inst.instance_id}\t{inst.gold_label}\n")


def rand_vec(rng, n, scale=1.0):
    return torch.from_numpy(scale * rng.standard_normal(n))
