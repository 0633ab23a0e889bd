"""The Bayesian core: amortized Gaussian posterior over the latent pair code,
reparameterized sampling, projection into translational parameters, the MMD
regularizer and the annealed Monte Carlo objective."""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import scorers
from .exceptions import InvalidInputError

#: Floor added to the softplus-parameterized posterior std.
SIGMA_FLOOR = 1e-6


@dataclass
class LatentGaussian:
    """Diagonal Gaussian over the latent vector: mean and per-dim std."""

    mu: torch.Tensor
    sigma: torch.Tensor

    def __post_init__(self):
        if self.mu.numel() != self.sigma.numel():
            raise InvalidInputError("mu and sigma lengths differ")


@dataclass
class AnnealSchedule:
    """Linear ramp of the regularizer weight across training epochs."""

    start: float = 1e-2
    end: float = 2.0
    total_epochs: int = 60

    def __post_init__(self):
        if self.total_epochs < 1:
            raise InvalidInputError("total_epochs must be >= 1")
        if self.start > self.end:
            raise InvalidInputError("start weight must not exceed end weight")


def anneal_weight(epoch, sched):
    """Regularizer weight at ``epoch`` (0-based), linearly interpolated."""
    if epoch < 0 or epoch > sched.total_epochs:
        raise InvalidInputError(f"epoch {epoch} outside schedule")
    if sched.total_epochs == 1:
        return float(sched.end)
    t = min(int(epoch), sched.total_epochs - 1)
    return float(sched.start + (sched.end - sched.start) * t / (sched.total_epochs - 1))


class PosteriorNet(torch.nn.Module):
    """Amortized posterior: pair representation -> N(mu, diag(sigma^2)),
    plus the linear projection from latent space to translational parameters.

    One shared tanh hidden layer (width = input width), separate linear heads
    for the mean and the raw std, std mapped through softplus with a small
    floor. Dropout, when configured, acts on the hidden layer and draws its
    masks from the caller-supplied stream so runs stay reproducible.
    """

    def __init__(self, pair_dim, latent_dim, param_dim, dropout=0.0, rng=None):
        super().__init__()
        self.pair_dim = int(pair_dim)
        self.latent_dim = int(latent_dim)
        self.param_dim = int(param_dim)
        self.dropout = float(dropout)
        hidden = self.pair_dim

        def lin(n_in, n_out):
            layer = torch.nn.Linear(n_in, n_out, dtype=torch.float64)
            with torch.no_grad():
                if rng is not None:
                    w = rng.normal_matrix(n_out, n_in) / np.sqrt(n_in)
                    layer.weight.copy_(torch.from_numpy(w))
                else:
                    layer.weight.zero_()
                layer.bias.zero_()
            return layer

        self.hidden = lin(self.pair_dim, hidden)
        self.mu_head = lin(hidden, self.latent_dim)
        self.sigma_head = lin(hidden, self.latent_dim)
        # The latent-to-parameter map starts as a truncated identity so the
        # latent space is axis-aligned with parameter space at initialization
        # (zero latent still decodes to the identity transforms via the
        # layout offsets).
        self.latent_proj = torch.nn.Linear(
            self.latent_dim, self.param_dim, dtype=torch.float64
        )
        with torch.no_grad():
            self.latent_proj.weight.copy_(
                torch.eye(self.param_dim, self.latent_dim, dtype=torch.float64)
            )
            self.latent_proj.bias.zero_()

    def encode(self, pair_repr, dropout_rng=None):
        """Map a pair representation to its posterior :class:`LatentGaussian`."""
        x = torch.as_tensor(pair_repr, dtype=torch.float64).reshape(-1)
        if x.numel() != self.pair_dim:
            raise InvalidInputError(
                f"pair representation length {x.numel()} != {self.pair_dim}"
            )
        h = torch.tanh(self.hidden(x))
        if self.dropout > 0.0 and dropout_rng is not None:
            keep = torch.from_numpy(
                (dropout_rng.uniform(h.numel()) >= self.dropout).astype(np.float64)
            )
            h = h * keep / (1.0 - self.dropout)
        mu = self.mu_head(h)
        sigma = F.softplus(self.sigma_head(h)) + SIGMA_FLOOR
        return LatentGaussian(mu, sigma)

    def project(self, z):
        """Flat raw parameter vector P z + b (offsets applied by the layout)."""
        return self.latent_proj(z)


def encode_posterior(pair_repr, net, dropout_rng=None):
    return net.encode(pair_repr, dropout_rng=dropout_rng)


def sample_latent(g, rng):
    """Reparameterized draw z = mu + sigma * eps, eps ~ N(0, I)."""
    eps = torch.from_numpy(rng.standard_normal(g.mu.numel()))
    return g.mu + g.sigma * eps


def project_to_params(z, net, layout):
    """Map a latent vector to per-relation translational parameters."""
    if z.numel() != net.latent_dim:
        raise InvalidInputError(f"latent length {z.numel()} != {net.latent_dim}")
    return layout.unflatten(net.project(z))


def mmd(x, y, kernel_c):
    """Unbiased MMD estimate with the inverse-multiquadric kernel
    k(a, b) = C / (C + ||a - b||^2).

    Off-diagonal means within each set, minus twice the cross mean. Requires
    at least two vectors per set; differentiable in both sets.
    """
    x = torch.as_tensor(x, dtype=torch.float64)
    y = torch.as_tensor(y, dtype=torch.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise InvalidInputError("mmd expects two 2-d sample sets of equal width")
    n, m = x.shape[0], y.shape[0]
    if n < 2 or m < 2:
        raise InvalidInputError("mmd needs at least 2 samples per set")
    if kernel_c <= 0:
        raise InvalidInputError("kernel constant must be positive")

    def kmat(a, b):
        d2 = torch.cdist(a, b, p=2.0) ** 2
        return kernel_c / (kernel_c + d2)

    kxx = kmat(x, x)
    kyy = kmat(y, y)
    kxy = kmat(x, y)
    xx = (kxx.sum() - kxx.diagonal().sum()) / (n * (n - 1))
    yy = (kyy.sum() - kyy.diagonal().sum()) / (m * (m - 1))
    return xx + yy - 2.0 * kxy.mean()


def default_kernel_constant(latent_dim):
    """C = 2 * D_z, the usual choice for unit-variance Gaussians."""
    return 2.0 * int(latent_dim)


class RelationModel(torch.nn.Module):
    """Full trainable model: scoring projection + posterior net + layout.

    ``deterministic`` pins the posterior std to the floor and predicts from
    the mean, which is the non-Bayesian ("vanilla") ablation.
    """

    def __init__(self, projection, posterior, layout, deterministic=False):
        super().__init__()
        self.projection = projection
        self.posterior = posterior
        self.layout = layout
        self.relset = layout.relset
        self.deterministic = bool(deterministic)

    def posterior_for(self, e_h, e_t, dropout_rng=None):
        pair = torch.cat([e_h.reshape(-1), e_t.reshape(-1)])
        g = self.posterior.encode(pair, dropout_rng=dropout_rng)
        if self.deterministic:
            g = LatentGaussian(g.mu, torch.full_like(g.sigma, SIGMA_FLOOR))
        return g

    def scoring_pair(self, e_h, e_t):
        return self.projection(e_h), self.projection(e_t)

    def params_at(self, z):
        return project_to_params(z, self.posterior, self.layout)

    def log_probs(self, h, t, z):
        scores = scorers.relation_scores(h, t, self.params_at(z), self.relset)
        return F.log_softmax(scores, dim=0)


def batch_objective(
    instances,
    model,
    provider,
    prior_mean,
    lam,
    rng,
    n_samples=1,
    dropout_rng=None,
):
    """Annealed Monte Carlo objective for one mini-batch.

    Mean (over instances and samples) negative log-likelihood, plus
    ``lam`` times the MMD between one posterior draw per instance and an
    equal-count set of prior draws. Returns a differentiable scalar.
    """
    if len(instances) == 0:
        raise InvalidInputError("empty batch")
    if lam < 0:
        raise InvalidInputError("regularizer weight must be >= 0")
    if n_samples < 1:
        raise InvalidInputError("Monte Carlo sample count must be >= 1")
    nll = 0.0
    first_draws = []
    for inst in instances:
        e_h, e_t = provider.pair_tensors(inst.instance_id)
        h, t = model.scoring_pair(e_h, e_t)
        g = model.posterior_for(e_h, e_t, dropout_rng=dropout_rng)
        label = model.relset.index(inst.gold_label)
        for n in range(n_samples):
            z = g.mu if model.deterministic else sample_latent(g, rng)
            if n == 0:
                first_draws.append(z)
            nll = nll - model.log_probs(h, t, z)[label]
    loss = nll / (len(instances) * n_samples)
    if lam > 0.0 and len(instances) >= 2:
        mean = torch.as_tensor(prior_mean, dtype=torch.float64)
        eps = torch.from_numpy(
            rng.standard_normal(len(instances) * mean.numel())
        ).reshape(len(instances), mean.numel())
        prior_draws = mean + eps
        c = default_kernel_constant(model.posterior.latent_dim)
        loss = loss + lam * mmd(torch.stack(first_draws), prior_draws, c)
    return loss
