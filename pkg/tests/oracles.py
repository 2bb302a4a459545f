"""Independent reference implementations used to check the package's math.

Everything here recomputes quantities by brute force (dense enumeration
over all state sequences) or directly from first principles, sharing no
recursion code with the package.
"""

import numpy as np
from scipy.special import logsumexp


def randomize_model(model, rng):
    """Give every CPT random row-normalized values over its allowed support."""
    for cpt in model.cpts.values():
        t = rng.random(cpt.shape) * cpt.allowed
        t /= t.sum(axis=-1, keepdims=True)
        cpt.table = t
    return model


def random_obs(model, T, rng, mask_rate=0.0):
    """A (T, K) observation matrix with optional random masking."""
    cols = []
    for obs in model.observables:
        cols.append(rng.integers(0, obs.cardinality, size=T))
    out = np.stack(cols, axis=1).astype(np.int16)
    if mask_rate:
        out[rng.random(out.shape) < mask_rate] = -1
    return out


def _sequence_scores(chain, log_emis, log_clamp=None):
    """Log score of every state sequence, as a (S,)*T tensor.

    Sequences through structural zeros score -inf, contributing nothing
    to sums; that is exactly the semantics of the recursions under test.
    """
    S = chain.n_states
    T = log_emis.shape[0]
    if log_clamp is None:
        log_clamp = np.zeros((T, S))
    lp = chain.log_init + log_emis[0] + log_clamp[0]
    for t in range(1, T):
        last = np.arange(lp.size) % S  # fastest-varying digit is the newest state
        step = chain.log_trans[last] + log_emis[t] + log_clamp[t]
        lp = (lp[:, None] + step).ravel()
    return lp.reshape((S,) * T)


def enumerate_posteriors(chain, log_emis, log_clamp=None):
    """Exact (log_likelihood, gamma, xi_sum) by summing over all sequences."""
    scores = _sequence_scores(chain, log_emis, log_clamp)
    T = scores.ndim
    S = chain.n_states
    ll = logsumexp(scores)
    if ll == -np.inf:
        return ll, np.zeros((T, S)), np.zeros((S, S))
    gamma = np.zeros((T, S))
    for t in range(T):
        axes = tuple(a for a in range(T) if a != t)
        gamma[t] = np.exp(logsumexp(scores, axis=axes) - ll)
    xi_sum = np.zeros((S, S))
    for t in range(T - 1):
        axes = tuple(a for a in range(T) if a not in (t, t + 1))
        xi_sum += np.exp(logsumexp(scores, axis=axes) - ll)
    return ll, gamma, xi_sum


def enumerate_best_path(chain, log_emis, log_clamp=None):
    """Exact MAP state sequence score and one maximizing path."""
    scores = _sequence_scores(chain, log_emis, log_clamp)
    flat = np.argmax(scores)
    best = np.unravel_index(flat, scores.shape)
    return float(scores[best]), np.array(best)
