"""VAE neural topic model.

Two encoder MLPs map a count-normalized BoW vector to the posterior mean and
log-variance; the reparameterized latent goes through softplus, then a linear
head and softmax give the sentence's topic distribution z. Decoding scores
word w as log_softmax(m + z @ T)[w], with m the fixed smoothed log-frequency
vector and T the K x V topic-word matrix. Training minimizes the negative
ELBO: reconstruction cross-entropy plus the Gaussian KL to the prior.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import autodiff as ad
from .corpus import Vocabulary
from .nn import MlpSpec, SeededRng, gaussian_kl, init_mlp, mlp_forward, softmax, softplus_np
from .optim import OptimizerState, adam, optimizer_step


@dataclass(frozen=True)
class NtmConfig:
    vocab_size: int
    num_topics: int = 10
    latent_dim: int = 64
    hidden_dim: int = 256

    def mu_spec(self) -> MlpSpec:
        return MlpSpec((self.vocab_size, self.hidden_dim, self.latent_dim), "softplus")

    def logvar_spec(self) -> MlpSpec:
        return MlpSpec((self.vocab_size, self.hidden_dim, self.latent_dim), "softplus")

    def topic_head_spec(self) -> MlpSpec:
        return MlpSpec((self.latent_dim, self.num_topics))


@dataclass
class LatentSample:
    mu: np.ndarray
    logvar: np.ndarray
    noise: np.ndarray
    theta_hat: np.ndarray


@dataclass
class ElboParts:
    total: float
    reconstruction: float
    kl: float


@dataclass
class NtmEpochStats:
    mean_total: float
    mean_reconstruction: float
    mean_kl: float
    mean_mutual: float
    kl_weight: float
    count: int


class NtmParams:
    """Trainable state plus the fixed log-frequency vector."""

    def __init__(self, cfg: NtmConfig, params: dict[str, np.ndarray], log_freq: np.ndarray):
        if params["topic_word"].shape != (cfg.num_topics, cfg.vocab_size):
            raise ValueError("topic_word must be K x V")
        if log_freq.shape != (cfg.vocab_size,):
            raise ValueError("log_freq must have length V")
        self.cfg = cfg
        self.params = params
        self.log_freq = log_freq

    @property
    def topic_word(self) -> np.ndarray:
        return self.params["topic_word"]


def init_ntm(cfg: NtmConfig, log_freq: np.ndarray, rng: SeededRng) -> NtmParams:
    params: dict[str, np.ndarray] = {}
    params.update(init_mlp(cfg.mu_spec(), rng.child(0), prefix="enc_mu."))
    params.update(init_mlp(cfg.logvar_spec(), rng.child(1), prefix="enc_logvar."))
    params.update(init_mlp(cfg.topic_head_spec(), rng.child(2), prefix="topic_head."))
    bound = np.sqrt(6.0 / (cfg.num_topics + cfg.vocab_size))
    params["topic_word"] = rng.child(3).uniform(
        -bound, bound, (cfg.num_topics, cfg.vocab_size)
    )
    return NtmParams(cfg, params, np.asarray(log_freq, dtype=np.float64))


def compute_log_freq(corpus_bows) -> np.ndarray:
    """Add-one smoothed log unigram frequencies: ln((c_i + 1) / (total + V))."""
    counts = _total_counts(corpus_bows)
    total = counts.sum()
    if total <= 0:
        raise ValueError("corpus has no in-vocabulary tokens")
    return np.log((counts + 1.0) / (total + counts.shape[0]))


def _total_counts(corpus_bows) -> np.ndarray:
    if sparse.issparse(corpus_bows):
        return np.asarray(corpus_bows.sum(axis=0), dtype=np.float64).ravel()
    arr = np.asarray(corpus_bows, dtype=np.float64)
    if arr.ndim == 1:
        return arr
    return arr.sum(axis=0)


def normalize_bow(v: np.ndarray) -> np.ndarray:
    """Counts scaled to sum 1 per row; all-zero rows stay zero."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        total = v.sum()
        return v / total if total > 0 else v.copy()
    totals = v.sum(axis=1, keepdims=True)
    return np.divide(v, np.where(totals > 0, totals, 1.0))


def infer(ntm: NtmParams, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior (mu, logvar) for one BoW vector or a batch of them."""
    v = np.asarray(v, dtype=np.float64)
    squeeze = v.ndim == 1
    x = normalize_bow(np.atleast_2d(v))
    if x.shape[1] != ntm.cfg.vocab_size:
        raise ValueError(f"BoW width {x.shape[1]} != vocabulary size {ntm.cfg.vocab_size}")
    mu = mlp_forward(ntm.cfg.mu_spec(), ntm.params, x, prefix="enc_mu.").data
    logvar = mlp_forward(ntm.cfg.logvar_spec(), ntm.params, x, prefix="enc_logvar.").data
    if squeeze:
        return mu[0], logvar[0]
    return mu, logvar


def reparameterize(mu: np.ndarray, logvar: np.ndarray, rng: SeededRng) -> LatentSample:
    """theta_hat = softplus(mu + exp(logvar/2) * noise), noise ~ N(0, I)."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ValueError(f"shape mismatch: {mu.shape} vs {logvar.shape}")
    noise = rng.normal(mu.shape)
    theta_hat = softplus_np(mu + np.exp(0.5 * logvar) * noise)
    return LatentSample(mu=mu, logvar=logvar, noise=noise, theta_hat=theta_hat)


def topic_distribution(ntm: NtmParams, sample: LatentSample) -> np.ndarray:
    """Softmax over the topic head's logits; a valid length-K distribution."""
    theta = np.atleast_2d(sample.theta_hat)
    logits = mlp_forward(ntm.cfg.topic_head_spec(), ntm.params, theta, prefix="topic_head.").data
    z = softmax(logits, axis=-1)
    return z[0] if sample.theta_hat.ndim == 1 else z


def decode(ntm: NtmParams, z: np.ndarray) -> np.ndarray:
    """Log word probabilities log_softmax(m + z @ T)."""
    z = np.asarray(z, dtype=np.float64)
    logits = ntm.log_freq + np.atleast_2d(z) @ ntm.topic_word
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return logp[0] if z.ndim == 1 else logp


def elbo_loss(ntm: NtmParams, v: np.ndarray, rng: SeededRng, num_samples: int = 1) -> ElboParts:
    """Per-sentence negative ELBO, Monte Carlo averaged over `num_samples`."""
    if num_samples < 1:
        raise ValueError("need at least one Monte Carlo sample")
    v = np.asarray(v, dtype=np.float64)
    mu, logvar = infer(ntm, v)
    recon = 0.0
    for _ in range(num_samples):
        sample = reparameterize(mu, logvar, rng)
        z = topic_distribution(ntm, sample)
        logp = decode(ntm, z)
        recon -= float(np.dot(v, logp))
    recon /= num_samples
    kl = gaussian_kl(mu, logvar)
    return ElboParts(total=recon + kl, reconstruction=recon, kl=kl)


def elbo_batch_graph(
    leaves: dict[str, ad.Tensor],
    cfg: NtmConfig,
    log_freq: np.ndarray,
    counts: np.ndarray,
    noise: np.ndarray,
) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """Differentiable batch ELBO; returns (recon_sum, kl_sum, z) Tensors."""
    x = ad.constant(normalize_bow(counts))
    mu = mlp_forward(cfg.mu_spec(), leaves, x, prefix="enc_mu.")
    logvar = mlp_forward(cfg.logvar_spec(), leaves, x, prefix="enc_logvar.")
    std = ad.exp(0.5 * logvar)
    theta = ad.softplus(mu + std * ad.constant(noise))
    logits = mlp_forward(cfg.topic_head_spec(), leaves, theta, prefix="topic_head.")
    z = ad.softmax(logits, axis=-1)
    word_logits = ad.matmul(z, leaves["topic_word"]) + ad.constant(log_freq)
    logp = ad.log_softmax(word_logits, axis=-1)
    recon_sum = -ad.tensor_sum(ad.constant(counts) * logp)
    kl_sum = 0.5 * ad.tensor_sum(ad.exp(logvar) + mu * mu - 1.0 - logvar)
    return recon_sum, kl_sum, z


def train_ntm_epoch(
    ntm: NtmParams,
    corpus_bows,
    optimizer: OptimizerState,
    batch_size: int,
    rng: SeededRng,
    kl_weight: float = 1.0,
    mutual_term=None,
    gamma: float = 0.0,
) -> NtmEpochStats:
    """One shuffled pass minimizing recon + kl_weight * kl (+ gamma * mutual).

    `mutual_term(z_tensor, batch_indices)` returns the unweighted mutual-loss
    Tensor for the batch; when None, no mutual machinery runs at all.
    """
    n = corpus_bows.shape[0]
    if n == 0:
        raise ValueError("empty corpus")
    order = rng.permutation(n)
    sum_recon = sum_kl = sum_mutual = 0.0
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        counts = _dense_rows(corpus_bows, idx)
        noise = rng.normal((len(idx), ntm.cfg.latent_dim))
        leaves = ad.lift(ntm.params)
        recon, kl, z = elbo_batch_graph(leaves, ntm.cfg, ntm.log_freq, counts, noise)
        loss = recon + kl_weight * kl
        if mutual_term is not None:
            mut = mutual_term(z, idx)
            loss = loss + gamma * mut
            sum_mutual += float(mut.data)
        loss.backward()
        optimizer_step(optimizer, ntm.params, ad.grads_of(leaves))
        sum_recon += float(recon.data)
        sum_kl += float(kl.data)
    return NtmEpochStats(
        mean_total=(sum_recon + sum_kl) / n,
        mean_reconstruction=sum_recon / n,
        mean_kl=sum_kl / n,
        mean_mutual=sum_mutual / n,
        kl_weight=kl_weight,
        count=n,
    )


def train_ntm(
    cfg: NtmConfig,
    log_freq: np.ndarray,
    corpus_bows,
    *,
    epochs: int,
    rng: SeededRng,
    learning_rate: float = 2e-3,
    batch_size: int = 16,
    restarts: int = 1,
    probe_epochs: int = 10,
    kl_warmup_epochs: int = 10,
) -> tuple[NtmParams, list[NtmEpochStats]]:
    """Standalone NTM training with deterministic restart selection.

    VAE topic models can leave topics dead depending on the initialization.
    Each restart trains from its own seeded init for `probe_epochs`; the one
    with the lowest epoch loss continues to `epochs`. Fully reproducible for a
    fixed `rng` seed path.
    """
    if restarts < 1:
        raise ValueError("need at least one restart")

    def kl_weight(epoch_index: int) -> float:
        if kl_warmup_epochs <= 0:
            return 1.0
        return min(1.0, (epoch_index + 1) / kl_warmup_epochs)

    candidates = []
    for r in range(restarts):
        ntm = init_ntm(cfg, log_freq, rng.child(r, 0))
        opt = adam(learning_rate)
        epoch_rng = rng.child(r, 1)
        stats = [
            train_ntm_epoch(ntm, corpus_bows, opt, batch_size, epoch_rng, kl_weight(e))
            for e in range(min(probe_epochs, epochs))
        ]
        candidates.append((stats[-1].mean_total, r, ntm, opt, epoch_rng, stats))
    _, _, ntm, opt, epoch_rng, stats = min(candidates, key=lambda c: (c[0], c[1]))
    for e in range(len(stats), epochs):
        stats.append(
            train_ntm_epoch(ntm, corpus_bows, opt, batch_size, epoch_rng, kl_weight(e))
        )
    return ntm, stats


def infer_topic_distributions(ntm: NtmParams, corpus_bows) -> np.ndarray:
    """Zero-noise z for every row: the deterministic posterior-mean path."""
    counts = _dense_rows(corpus_bows, np.arange(corpus_bows.shape[0]))
    mu, logvar = infer(ntm, counts)
    sample = LatentSample(mu, logvar, np.zeros_like(mu), softplus_np(mu))
    return topic_distribution(ntm, sample)


def _dense_rows(corpus_bows, idx) -> np.ndarray:
    if sparse.issparse(corpus_bows):
        return np.asarray(corpus_bows[idx].todense(), dtype=np.float64)
    return np.asarray(corpus_bows, dtype=np.float64)[idx]


def export_topic_word_tsv(ntm: NtmParams, vocab: Vocabulary, path) -> None:
    """Full K x V matrix as rows of (topic id, word, weight) for audit/coherence."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("topic\tword\tweight\n")
        for k in range(ntm.cfg.num_topics):
            for i, word in enumerate(vocab.id_to_word):
                fh.write(f"{k}\t{word}\t{float(ntm.topic_word[k, i])!r}\n")
