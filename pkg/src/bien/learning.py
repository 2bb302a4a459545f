"""EM training. Tags are observed from gold spans; the segment chain is hidden.

Two E-step implementations produce identical expected counts: a generic
one running forward-backward on the compiled product chain with the tags
clamped, and a factored one that exploits the clamping to reduce each
document to a two-state segment chain, batched across documents. The
factored path is the default; the generic path remains as the reference
and handles any clamping pattern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyCorpus,
    InconsistentGold,
    InvalidSpec,
    MissingColumn,
    OverlappingSpans,
    UnknownField,
    ZeroProbabilityEvidence,
)
from .features import featurize
from .inference import Evidence, _logsumexp, forward_backward
from .model import DS_NAMES, LT_NONE, compile_chain


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.1       # Dirichlet pseudo-count per allowed cell
    max_iter: int = 30
    tol: float = 1e-4        # relative log-likelihood change at convergence
    seed: int = 0
    jitter: float = 1e-3     # emission symmetry breaking; 0 disables
    estep: str = "auto"      # auto | factored | chain
    observe_ds: bool = False


@dataclass
class TrainResult:
    model: object
    log_likelihood: list
    iterations: int
    converged: bool


@dataclass(frozen=True)
class TrainExample:
    doc_id: str
    obs: np.ndarray           # (T, K) feature codes
    tags: np.ndarray          # (T,) gold tag values
    ds: np.ndarray | None = None  # (T,) observed segments, when annotated


def encode_tags(doc, tag_space):
    """Gold spans to a per-token tag sequence (begin/inside/end/single)."""
    T = len(doc.tokens)
    out = np.zeros(T, dtype=np.int64)
    prev_end = -1
    for span in sorted(doc.gold_spans, key=lambda s: s.start_token):
        if span.field not in tag_space.fields:
            raise UnknownField(f"{doc.id}: span field {span.field!r} not modeled")
        if span.start_token <= prev_end:
            raise OverlappingSpans(f"{doc.id}: spans overlap at token {span.start_token}")
        if span.end_token >= T:
            raise InconsistentGold(
                f"{doc.id}: span ends past the document",
                doc_id=doc.id,
                step=span.end_token,
            )
        fi = tag_space.fields.index(span.field)
        if span.start_token == span.end_token:
            out[span.start_token] = tag_space.single(fi)
        else:
            out[span.start_token] = tag_space.begin(fi)
            out[span.start_token + 1 : span.end_token] = tag_space.inside(fi)
            out[span.end_token] = tag_space.end(fi)
        prev_end = span.end_token
    return out


def make_examples(docs, gazetteer, lexicons, model, mask=()):
    """Featurize and tag-encode documents into training examples.

    Documents are keyed and sorted by id, so example order (and therefore
    training) is invariant to the order documents arrive in. A "ds" column
    on a document becomes an observed segment sequence.
    """
    examples = []
    for doc in docs:
        if len(doc.tokens) == 0:
            continue
        obs = featurize(doc, gazetteer, lexicons, mask=mask)
        tags = encode_tags(doc, model.tags)
        ds = None
        if "ds" in doc.columns:
            ds = np.array(
                [DS_NAMES.index(v) for v in doc.columns["ds"]], dtype=np.int64
            )
        examples.append(TrainExample(doc.id, obs, tags, ds))
    if not examples:
        raise EmptyCorpus("no non-empty documents to train on")
    return sorted(examples, key=lambda e: e.doc_id)


# ---------------------------------------------------------------------------
# E-step: generic path on the compiled chain
# ---------------------------------------------------------------------------

def _zero_counts(model):
    return {name: np.zeros(cpt.shape) for name, cpt in model.cpts.items()}


def _ds_clamp(example, observe_ds):
    if not observe_ds:
        return None
    if example.ds is None:
        raise MissingColumn(
            f"{example.doc_id}: segment observation requested but no ds column"
        )
    T = len(example.tags)
    allowed = np.zeros((T, 2), dtype=bool)
    allowed[np.arange(T), example.ds] = True
    return allowed


def _chain_estep(model, examples, observe_ds):
    chain = compile_chain(model)
    counts = _zero_counts(model)
    tag_of, lt_of, ds_of = chain.tag_of, chain.lt_of, chain.ds_of
    total_ll = 0.0
    for ex in examples:
        ev = Evidence.from_tags(ex.obs, ex.tags, model.tags.size, _ds_clamp(ex, observe_ds))
        try:
            post = forward_backward(chain, ev)
        except ZeroProbabilityEvidence as exc:
            raise InconsistentGold(
                f"{ex.doc_id}: gold tags impossible at token {exc.step}",
                doc_id=ex.doc_id,
                step=exc.step,
            ) from exc
        total_ll += post.log_likelihood
        gamma, xi = post.gamma, post.xi_sum
        np.add.at(counts["ds_init"], ds_of, gamma[0])
        np.add.at(counts["tag_init"], (ds_of, tag_of), gamma[0])
        np.add.at(counts["ds_trans"], (ds_of[:, None], ds_of[None, :]), xi)
        np.add.at(
            counts["tag_trans"],
            (tag_of[:, None], lt_of[:, None], ds_of[None, :], tag_of[None, :]),
            xi,
        )
        for k, spec in enumerate(model.observables):
            col = ex.obs[:, k]
            seen = col >= 0
            if not seen.any():
                continue
            np.add.at(
                counts[f"emit:{spec.name}"],
                (tag_of[None, :], ds_of[None, :], col[seen, None]),
                gamma[seen],
            )
    return counts, total_ll


# ---------------------------------------------------------------------------
# E-step: factored two-state path, batched over documents
# ---------------------------------------------------------------------------

class _FactoredBatch:
    """Precomputed index tensors for the segment-chain E-step.

    With tags observed, the product chain collapses per document to a
    two-state chain over segments whose step factors are tag-transition
    and emission probabilities evaluated at the gold tags.
    """

    def __init__(self, model, examples, observe_ds):
        D = len(examples)
        lengths = np.array([len(ex.tags) for ex in examples])
        Tmax = int(lengths.max())
        K = len(model.observables)
        self.examples = examples
        self.lengths = lengths
        self.fully_observed = bool(observe_ds)
        self.valid = np.arange(Tmax)[None, :] < lengths[:, None]
        self.g = np.zeros((D, Tmax), dtype=np.int64)
        self.obs = np.full((D, Tmax, K), -1, dtype=np.int64)
        self.ds_obs = np.full((D, Tmax), -1, dtype=np.int64)
        for d, ex in enumerate(examples):
            T = lengths[d]
            self.g[d, :T] = ex.tags
            self.obs[d, :T] = ex.obs
            clamp = _ds_clamp(ex, observe_ds)
            if clamp is not None:
                self.ds_obs[d, :T] = ex.ds
        # last-target memory after each token, deterministic given gold tags
        lt = np.zeros((D, Tmax), dtype=np.int64)
        running = np.zeros(D, dtype=np.int64)
        fi_of = np.array(
            [-1] + [model.tags.field_index(t) for t in range(1, model.tags.size)]
        )
        for t in range(Tmax):
            tag_fi = fi_of[self.g[:, t]]
            if model.memory:
                running = np.where(self.valid[:, t] & (tag_fi >= 0), tag_fi + 1, running)
            lt[:, t] = running
        self.lt = lt

    def _log_factors(self, model):
        """A[d, t, ds]: log P(tag_t | history, ds) + log P(obs_t | tag_t, ds)."""
        D, Tmax = self.g.shape
        with np.errstate(divide="ignore"):
            log_tag_init = np.log(model.cpts["tag_init"].table)
            log_tt = np.log(model.cpts["tag_trans"].table)
        A = np.zeros((D, Tmax, 2))
        A[:, 0, :] = log_tag_init[:, self.g[:, 0]].T
        if Tmax > 1:
            d_idx, t_idx = np.nonzero(self.valid[:, 1:])
            t_idx = t_idx + 1
            rows = log_tt[
                self.g[d_idx, t_idx - 1], self.lt[d_idx, t_idx - 1], :, self.g[d_idx, t_idx]
            ]
            A[d_idx, t_idx, :] = rows
        for k, spec in enumerate(model.observables):
            with np.errstate(divide="ignore"):
                log_emit = np.log(model.cpts[f"emit:{spec.name}"].table)
            d_idx, t_idx = np.nonzero(self.valid & (self.obs[:, :, k] >= 0))
            A[d_idx, t_idx, :] += log_emit[
                self.g[d_idx, t_idx], :, self.obs[d_idx, t_idx, k]
            ]
        observed = self.ds_obs >= 0
        if observed.any():
            d_idx, t_idx = np.nonzero(observed)
            A[d_idx, t_idx, 1 - self.ds_obs[d_idx, t_idx]] = -np.inf
        return A

    def estep(self, model):
        A = self._log_factors(model)
        if self.fully_observed:
            gamma, pair_counts, ll_total = self._observed_posteriors(model, A)
        else:
            gamma, pair_counts, ll_total = self._hidden_posteriors(model, A)

        counts = _zero_counts(model)
        counts["ds_init"] += gamma[:, 0].sum(axis=0)
        counts["ds_trans"] += pair_counts
        np.add.at(counts["tag_init"].T, self.g[:, 0], gamma[:, 0])

        Tmax = self.g.shape[1]
        d_idx, t_idx = (
            np.nonzero(self.valid[:, 1:]) if Tmax > 1 else (np.array([], int),) * 2
        )
        if d_idx.size:
            t_idx = t_idx + 1
            np.add.at(
                counts["tag_trans"],
                (
                    self.g[d_idx, t_idx - 1][:, None],
                    self.lt[d_idx, t_idx - 1][:, None],
                    np.arange(2)[None, :],
                    self.g[d_idx, t_idx][:, None],
                ),
                gamma[d_idx, t_idx],
            )
        for k, spec in enumerate(model.observables):
            d_idx, t_idx = np.nonzero(self.valid & (self.obs[:, :, k] >= 0))
            if not d_idx.size:
                continue
            np.add.at(
                counts[f"emit:{spec.name}"],
                (
                    self.g[d_idx, t_idx][:, None],
                    np.arange(2)[None, :],
                    self.obs[d_idx, t_idx, k][:, None],
                ),
                gamma[d_idx, t_idx],
            )
        return counts, ll_total

    def _hidden_posteriors(self, model, A):
        """Forward-backward on the two-state segment chain, batched over docs."""
        D, Tmax = self.g.shape
        with np.errstate(divide="ignore"):
            log_ds_init = np.log(model.cpts["ds_init"].table)
            log_ds_trans = np.log(model.cpts["ds_trans"].table)

        la = np.zeros((D, Tmax, 2))
        la[:, 0] = log_ds_init[None, :] + A[:, 0]
        self._check_alive(la[:, 0], 0, np.ones(D, dtype=bool))
        for t in range(1, Tmax):
            prop = (
                _logsumexp(la[:, t - 1, :, None] + log_ds_trans[None, :, :], axis=1)
                + A[:, t]
            )
            live = self.valid[:, t]
            la[:, t] = np.where(live[:, None], prop, la[:, t - 1])
            self._check_alive(la[:, t], t, live)
        ll_doc = _logsumexp(la[:, -1, :], axis=1)

        lb = np.zeros((D, Tmax, 2))
        for t in range(Tmax - 2, -1, -1):
            forward_part = A[:, t + 1] + lb[:, t + 1]
            prop = _logsumexp(log_ds_trans[None, :, :] + forward_part[:, None, :], axis=2)
            lb[:, t] = np.where(self.valid[:, t + 1, None], prop, 0.0)

        gamma = np.exp(la + lb - ll_doc[:, None, None]) * self.valid[:, :, None]

        pair_counts = np.zeros((2, 2))
        for t in range(1, Tmax):
            live = self.valid[:, t]
            if not live.any():
                continue
            xi = np.exp(
                la[live, t - 1, :, None]
                + log_ds_trans[None, :, :]
                + (A[live, t] + lb[live, t])[:, None, :]
                - ll_doc[live, None, None]
            )
            pair_counts += xi.sum(axis=0)
        return gamma, pair_counts, float(ll_doc.sum())

    def _observed_posteriors(self, model, A):
        """With segments observed nothing is hidden: posteriors are exact
        one-hot indicators and counts tabulate to integer-valued floats."""
        D, Tmax = self.g.shape
        ds = self.ds_obs
        with np.errstate(divide="ignore"):
            log_ds_init = np.log(model.cpts["ds_init"].table)
            log_ds_trans = np.log(model.cpts["ds_trans"].table)

        d_idx, t_idx = np.nonzero(self.valid)
        step_ll = A[d_idx, t_idx, ds[d_idx, t_idx]]
        if np.isinf(step_ll).any():
            k = int(np.nonzero(np.isinf(step_ll))[0][0])
            self._raise_dead(int(d_idx[k]), int(t_idx[k]))

        gamma = np.zeros((D, Tmax, 2))
        gamma[d_idx, t_idx, ds[d_idx, t_idx]] = 1.0

        pair_counts = np.zeros((2, 2))
        ll = float(step_ll.sum()) + float(log_ds_init[ds[:, 0]].sum())
        if Tmax > 1:
            d2, t2 = np.nonzero(self.valid[:, 1:])
            t2 = t2 + 1
            np.add.at(pair_counts, (ds[d2, t2 - 1], ds[d2, t2]), 1.0)
            ll += float(log_ds_trans[ds[d2, t2 - 1], ds[d2, t2]].sum())
        return gamma, pair_counts, ll

    def _raise_dead(self, d, t):
        raise InconsistentGold(
            f"{self.examples[d].doc_id}: gold tags impossible at token {t}",
            doc_id=self.examples[d].doc_id,
            step=t,
        )

    def _check_alive(self, la_t, t, live):
        dead = live & ~np.isfinite(la_t).any(axis=1)
        if dead.any():
            self._raise_dead(int(np.nonzero(dead)[0][0]), t)


# ---------------------------------------------------------------------------
# M-step and the EM loop
# ---------------------------------------------------------------------------

def _m_step_cpt(cpt, counts, alpha):
    if cpt.frozen:
        return
    free = cpt.allowed & ~cpt.pinned
    c = np.where(free, counts + alpha, 0.0)
    tot = c.sum(axis=-1, keepdims=True)
    pinned_mass = np.where(cpt.pinned, cpt.table, 0.0).sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        fresh = c / tot * (1.0 - pinned_mass)
    # rows that saw no evidence (possible only at alpha=0) keep their values
    new = np.where(tot > 0, np.where(free, fresh, cpt.table), cpt.table)
    new = np.where(cpt.allowed, new, 0.0)
    new = np.where(cpt.pinned, cpt.table, new)
    cpt.table = new


def _apply_jitter(model, config):
    if config.jitter <= 0:
        return
    rng = np.random.default_rng(np.random.SeedSequence(config.seed & (2**64 - 1)))
    for name, cpt in model.cpts.items():
        if not name.startswith("emit:") or cpt.frozen:
            continue
        noise = 1.0 + rng.uniform(-config.jitter, config.jitter, size=cpt.shape)
        free = cpt.allowed & ~cpt.pinned
        perturbed = np.where(free, cpt.table * noise, 0.0)
        pinned_mass = np.where(cpt.pinned, cpt.table, 0.0).sum(axis=-1, keepdims=True)
        tot = perturbed.sum(axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            scaled = np.where(tot > 0, perturbed / tot * (1.0 - pinned_mass), 0.0)
        cpt.table = np.where(cpt.pinned, cpt.table, scaled)


def train(model, examples, config=TrainConfig()):
    """Fit the unfrozen CPTs by EM; returns the trained copy and the
    per-iteration data log-likelihood trace (likelihood of each iteration's
    starting model, so at ``alpha=0`` the trace never decreases)."""
    if config.estep not in ("auto", "factored", "chain"):
        raise InvalidSpec(f"unknown estep {config.estep!r}")
    if not examples:
        raise EmptyCorpus("no training examples")
    examples = sorted(examples, key=lambda e: e.doc_id)
    model = model.copy()
    model.validate()
    _apply_jitter(model, config)

    # under full observation both routes collapse to exact tabulation
    factored = config.estep in ("auto", "factored") or config.observe_ds
    batch = _FactoredBatch(model, examples, config.observe_ds) if factored else None

    trace = []
    converged = False
    for _ in range(config.max_iter):
        if factored:
            counts, ll = batch.estep(model)
        else:
            counts, ll = _chain_estep(model, examples, observe_ds=False)
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= config.tol * max(
            1.0, abs(trace[-2])
        ):
            converged = True
            break
        for name, cpt in model.cpts.items():
            _m_step_cpt(cpt, counts[name], config.alpha)
        model.validate()
    return TrainResult(model, trace, len(trace), converged)


# ---------------------------------------------------------------------------
# Sampling from the generative story
# ---------------------------------------------------------------------------

def sample_example(model, T, rng, doc_id="sample"):
    """Ancestral sample of (tags, segments, observations) for T tokens."""
    ds_init = model.cpts["ds_init"].table
    ds_trans = model.cpts["ds_trans"].table
    tag_init = model.cpts["tag_init"].table
    tag_trans = model.cpts["tag_trans"].table
    tags = np.zeros(T, dtype=np.int64)
    ds = np.zeros(T, dtype=np.int64)
    obs = np.zeros((T, len(model.observables)), dtype=np.int64)
    lt = LT_NONE
    for t in range(T):
        if t == 0:
            ds[t] = rng.choice(2, p=ds_init)
            tags[t] = rng.choice(model.tags.size, p=tag_init[ds[t]])
        else:
            ds[t] = rng.choice(2, p=ds_trans[ds[t - 1]])
            tags[t] = rng.choice(model.tags.size, p=tag_trans[tags[t - 1], lt, ds[t]])
        lt = model.lt_update(lt, tags[t])
        for k, spec in enumerate(model.observables):
            emit = model.cpts[f"emit:{spec.name}"].table
            obs[t, k] = rng.choice(spec.cardinality, p=emit[tags[t], ds[t]])
    return TrainExample(doc_id, obs.astype(np.int16), tags, ds)


def sample_corpus(model, n_docs, rng, t_range=(4, 12)):
    lo, hi = t_range
    return [
        sample_example(model, int(rng.integers(lo, hi + 1)), rng, doc_id=f"s{i:05d}")
        for i in range(n_docs)
    ]
