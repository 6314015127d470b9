"""Log-space dynamic programming over edge-list state spaces.

The latent chains built in :mod:`rhythmscribe.models` all share one shape: a
slot of boundary states (possibly a single virtual one), a set of emitting
states, first-step edges (boundary -> state) and transition edges
(state -> state).  Every edge carries an integer output value in
``[1, bar_length]``, and every observation attaches to the edge producing it.
That makes one forward/Viterbi/FFBS implementation serve every model family,
whether the original formulation emits on states or on transitions.

Emissions enter as a matrix ``em`` of shape ``(N, bar_length)``:
``em[n-1, v-1]`` is the log emission weight of output value ``v`` at step
``n``.  Indicator rows (0 / -inf) recover score probabilities; Gaussian
log-densities give performance likelihoods.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NEG_INF = -np.inf


class InferenceError(RuntimeError):
    """No feasible latent path (or an emptied beam) for the given data."""


class EdgeSet:
    """Weighted edges between two state slots, indexed for DP sweeps.

    Stored sorted by (dst, src) so per-destination reductions are contiguous
    and ties resolve toward the lowest source index.  A src-sorted view is
    built lazily for path sampling.
    """

    def __init__(self, src, dst, logp, out, n_src: int, n_dst: int):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        logp = np.asarray(logp, dtype=np.float64)
        out = np.asarray(out, dtype=np.int64)
        order = np.lexsort((src, dst))
        self.src = src[order]
        self.dst = dst[order]
        self.logp = logp[order]
        self.out = out[order]
        self.n_src = int(n_src)
        self.n_dst = int(n_dst)
        self.n_edges = len(self.src)
        self.dst_indptr = np.searchsorted(self.dst, np.arange(self.n_dst + 1))
        # contiguous nonempty segments for reduceat
        counts = np.diff(self.dst_indptr)
        self._rows = np.flatnonzero(counts)
        self._starts = self.dst_indptr[self._rows]
        self._seg_counts = counts[self._rows]
        self._src_view = None

    def src_view(self):
        """(order, indptr) of edges grouped by source state."""
        if self._src_view is None:
            order = np.lexsort((self.dst, self.src))
            indptr = np.searchsorted(self.src[order], np.arange(self.n_src + 1))
            self._src_view = (order, indptr)
        return self._src_view

    def in_slice(self, state: int) -> slice:
        """Slice of edges entering `state` (arrays are dst-sorted)."""
        return slice(self.dst_indptr[state], self.dst_indptr[state + 1])

    def step_scores(self, alpha: np.ndarray, em_row: np.ndarray) -> np.ndarray:
        """Per-edge score alpha[src] + logp + em(out)."""
        return alpha[self.src] + self.logp + em_row[self.out - 1]

    def reduce_logsumexp(self, scores: np.ndarray) -> np.ndarray:
        """Per-destination logsumexp of edge scores; -inf where no edge."""
        new = np.full(self.n_dst, NEG_INF)
        if self.n_edges == 0:
            return new
        m = np.maximum.reduceat(scores, self._starts)
        m_safe = np.where(np.isfinite(m), m, 0.0)
        sums = np.add.reduceat(np.exp(scores - np.repeat(m_safe, self._seg_counts)), self._starts)
        ok = np.isfinite(m)
        new[self._rows[ok]] = m[ok] + np.log(sums[ok])
        return new

    def reduce_max(self, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-destination max score and the (lowest-index) achieving edge."""
        best = np.full(self.n_dst, NEG_INF)
        argbest = np.full(self.n_dst, -1, dtype=np.int64)
        if self.n_edges == 0:
            return best, argbest
        m = np.maximum.reduceat(scores, self._starts)
        hit = scores == np.repeat(m, self._seg_counts)
        cand = np.where(hit, np.arange(self.n_edges), self.n_edges)
        arg = np.minimum.reduceat(cand, self._starts)
        best[self._rows] = m
        argbest[self._rows] = arg
        return best, argbest


def _next_pow2(width: int) -> int:
    eff = 1
    while eff < width:
        eff *= 2
    return eff


def _effective_width(width: int | None, space, n_init: int) -> int | None:
    """Internal beam width, or None for exact inference.

    Widths round up to the next power of two: the tiered sweep below builds
    survivor sets level by level over exactly those widths, which is what
    keeps the sets nested (and scores monotone) across different requests.
    """
    if width is None:
        return None
    if width < 1:
        raise ValueError("beam width must be >= 1")
    eff = _next_pow2(width)
    if eff >= max(space.trans.n_dst, n_init):
        return None
    return eff


def _out_edge_ids(edges: EdgeSet, srcs: np.ndarray) -> np.ndarray:
    """Edge ids (in dst-sorted numbering) leaving the given source states."""
    order, indptr = edges.src_view()
    counts = indptr[srcs + 1] - indptr[srcs]
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    starts = np.repeat(indptr[srcs], counts)
    offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    return order[starts + offsets]


def _relax(edges: EdgeSet, alpha, srcs, em_row, use_max):
    """One pruned DP step: propagate scores along the survivors' out-edges.

    Returns per-destination values (max or logsumexp over incoming edge
    scores, -inf where nothing arrives) and, in max mode, the achieving edge
    id per destination (lowest id on ties, i.e. lowest source).  Cost scales
    with the survivors' out-degree, not the full edge count.
    """
    val = np.full(edges.n_dst, NEG_INF)
    arg = np.full(edges.n_dst, edges.n_edges, dtype=np.int64) if use_max else None
    eids = _out_edge_ids(edges, srcs)
    if eids.size == 0:
        return val, arg
    sc = alpha[edges.src[eids]] + edges.logp[eids] + em_row[edges.out[eids] - 1]
    dst = edges.dst[eids]
    np.maximum.at(val, dst, sc)
    if use_max:
        hit = sc == val[dst]
        np.minimum.at(arg, dst[hit], eids[hit])
        return val, arg
    shift = np.where(np.isfinite(val), val, 0.0)
    tot = np.zeros(edges.n_dst)
    np.add.at(tot, dst, np.exp(sc - shift[dst]))
    ok = np.isfinite(val)
    lse = np.full(edges.n_dst, NEG_INF)
    lse[ok] = val[ok] + np.log(tot[ok])
    return lse, None


_NO_SURVIVORS = np.empty(0, dtype=np.int64)


def _extend_survivors(locked: np.ndarray, values: np.ndarray, width: int) -> np.ndarray:
    """Grow a survivor set to `width` states, keeping `locked` as a prefix.

    Extra slots go to the highest remaining finite values (ties to the
    lowest index), so the sets produced for increasing widths form a chain.
    """
    if locked.size:
        locked = locked[np.isfinite(values[locked])]
    need = width - locked.size
    if need <= 0:
        return locked
    mask = np.isfinite(values)
    if locked.size:
        mask[locked] = False
    cand = np.flatnonzero(mask)
    if cand.size > need:
        cand = cand[np.lexsort((cand, -values[cand]))[:need]]
    if not locked.size:
        return cand
    return np.concatenate([locked, cand]) if cand.size else locked


def _tiered_sweep(space, em, eff: int, init: np.ndarray, use_max: bool,
                  keep_tables: bool):
    """Beam recursion whose survivor sets are nested across widths.

    Sweeps widths 1, 2, 4, ..., `eff` in turn; each level's per-step
    survivors extend the previous level's, and only the survivors' out-edges
    are relaxed.  Because a narrower request's final level is one of a wider
    request's intermediate levels, survivor sets never reshuffle as the
    width grows: path sets only gain members, so beam scores are
    non-decreasing in the width and reach the exact values once every state
    fits.  The doubling ladder costs at most twice the widest level's work.

    Returns ``(final_values, backptrs, tables)`` where `final_values` is the
    last step's values masked to its survivors, `backptrs` (max mode) holds
    per-step achieving-edge ids, and `tables` (when kept) holds per-step
    survivor-masked value vectors, ``tables[0]`` over the boundary slot.
    """
    n_steps = em.shape[0]
    widths = []
    w = 1
    while w < eff:
        widths.append(w)
        w *= 2
    widths.append(eff)
    prev: list[np.ndarray] | None = None
    for width in widths:
        locked = prev[0] if prev is not None else _NO_SURVIVORS
        survivors = [_extend_survivors(locked, init, width)]
        backptrs: list[np.ndarray] = []
        tables: list[np.ndarray] = []
        if keep_tables:
            masked = np.full(init.size, NEG_INF)
            masked[survivors[0]] = init[survivors[0]]
            tables.append(masked)
        alpha = init
        edges = space.first
        died_at = None
        for n in range(n_steps):
            if survivors[-1].size == 0:
                died_at = n if died_at is None else died_at
                survivors.append(_NO_SURVIVORS)
                continue
            val, arg = _relax(edges, alpha, survivors[-1], em[n], use_max)
            locked = prev[n + 1] if prev is not None else _NO_SURVIVORS
            survivors.append(_extend_survivors(locked, val, width))
            if survivors[-1].size == 0 and died_at is None:
                died_at = n + 1
            alpha = val
            if use_max:
                backptrs.append(arg)
            if keep_tables:
                masked = np.full(edges.n_dst, NEG_INF)
                masked[survivors[-1]] = val[survivors[-1]]
                tables.append(masked)
            edges = space.trans
        prev = survivors
    if died_at is not None or survivors[-1].size == 0:
        step = died_at if died_at is not None else n_steps
        raise InferenceError(f"beam emptied at step {step}: no feasible state retained")
    final = np.full(space.trans.n_dst, NEG_INF)
    final[survivors[-1]] = alpha[survivors[-1]]
    return final, backptrs, tables


@dataclass
class PathSample:
    """A decoded or sampled latent path through a state space."""

    boundary_index: int | None
    state_indices: list[int]
    output_values: list[int]
    log_prob: float


def _emission_steps(em: np.ndarray):
    em = np.asarray(em, dtype=np.float64)
    if em.ndim != 2 or em.shape[0] < 1:
        raise ValueError("emission matrix must be (n_steps, bar_length) with n_steps >= 1")
    return em


def forward(
    space,
    em,
    beam_width: int | None = None,
    return_table: bool = False,
    log_init=None,
):
    """Forward recursion: log P(observations) summed over latent paths.

    Returns the total log probability, or ``(total, alphas)`` when
    `return_table` is set; ``alphas[n]`` is the log joint of the first n
    observations and the slot-n state.  Returns -inf when no path is
    feasible (the beam variant raises instead, since an emptied beam is a
    search failure rather than a model statement).  Beam widths round up to
    the next power of two and prune through nested survivor sets (see
    `_tiered_sweep`), so totals never decrease as the width grows.
    `log_init` replaces the space's boundary distribution, e.g. to condition
    on an observed initial metrical position.
    """
    em = _emission_steps(em)
    n_steps = em.shape[0]
    init = space.log_initial if log_init is None else np.asarray(log_init, dtype=np.float64)
    if not np.isfinite(init).any():
        return (NEG_INF, None) if return_table else NEG_INF
    eff = _effective_width(beam_width, space, init.size)
    if eff is not None:
        final, _, tables = _tiered_sweep(
            space, em, eff, init, use_max=False, keep_tables=return_table
        )
        finite = final[np.isfinite(final)]
        total = float(np.max(finite) + np.log(np.sum(np.exp(finite - np.max(finite)))))
        return (total, tables) if return_table else total
    alpha = init.copy()
    table = [alpha]
    edges = space.first
    for n in range(n_steps):
        alpha = edges.reduce_logsumexp(edges.step_scores(alpha, em[n]))
        if not np.isfinite(alpha).any():
            return (NEG_INF, None) if return_table else NEG_INF
        if return_table:
            table.append(alpha)
        edges = space.trans
    finite = alpha[np.isfinite(alpha)]
    total = float(np.max(finite) + np.log(np.sum(np.exp(finite - np.max(finite)))))
    return (total, table) if return_table else total


def _recover_path(space, backptr, delta) -> PathSample:
    """Backtrack per-step achieving-edge ids into a PathSample."""
    n_steps = len(backptr)
    last = int(np.argmax(delta))
    log_prob = float(delta[last])
    states = [last]
    outs = []
    state = last
    for n in range(n_steps - 1, 0, -1):
        e = int(backptr[n][state])
        outs.append(int(space.trans.out[e]))
        state = int(space.trans.src[e])
        states.append(state)
    e = int(backptr[0][state])
    outs.append(int(space.first.out[e]))
    boundary = int(space.first.src[e])
    states.reverse()
    outs.reverse()
    return PathSample(
        boundary_index=None if space.virtual_boundary else boundary,
        state_indices=states,
        output_values=outs,
        log_prob=log_prob,
    )


def viterbi(space, em, beam_width: int | None = None, log_init=None) -> PathSample:
    """Most probable latent path; ties break toward the lowest state index.

    The tie rule is applied stepwise during backtracking: the final state is
    the lowest-index argmax, and each backward step picks the lowest-index
    best predecessor.  Beam widths round up to the next power of two and
    prune through nested survivor sets (see `_tiered_sweep`), so decoded
    scores never decrease as the width grows and the decode is exact once
    the effective width covers the whole space.
    """
    em = _emission_steps(em)
    n_steps = em.shape[0]
    init = space.log_initial if log_init is None else np.asarray(log_init, dtype=np.float64)
    eff = _effective_width(beam_width, space, init.size)
    if eff is not None:
        final, backptrs, _ = _tiered_sweep(
            space, em, eff, init, use_max=True, keep_tables=False
        )
        return _recover_path(space, backptrs, final)
    delta = init.copy()
    backptr = []
    edges = space.first
    for n in range(n_steps):
        delta, arg = edges.reduce_max(edges.step_scores(delta, em[n]))
        if not np.isfinite(delta).any():
            raise InferenceError(f"no feasible path at step {n + 1}")
        backptr.append(arg)
        edges = space.trans
    return _recover_path(space, backptr, delta)


def _sample_index(logw: np.ndarray, rng: np.random.Generator) -> int:
    m = np.max(logw)
    if not np.isfinite(m):
        raise InferenceError("degenerate posterior: all weights zero")
    w = np.exp(logw - m)
    w /= w.sum()
    return int(rng.choice(len(w), p=w))


def ffbs(
    space,
    em,
    rng: np.random.Generator,
    beam_width: int | None = None,
    log_init=None,
) -> PathSample:
    """Forward filtering, backward sampling: one exact posterior path draw.

    The backward kernel weights each incoming edge by
    ``alpha[src] + logp + em(out)``; for models whose emission depends only
    on the destination state the emission factor is constant over sources
    and the kernel reduces to the state-emission form.
    """
    em = _emission_steps(em)
    n_steps = em.shape[0]
    total, table = forward(
        space, em, beam_width=beam_width, return_table=True, log_init=log_init
    )
    if table is None or not np.isfinite(total):
        raise InferenceError("zero data likelihood: nothing to sample")
    state = _sample_index(table[n_steps], rng)
    states = [state]
    outs = []
    log_prob = 0.0
    for n in range(n_steps - 1, 0, -1):
        sl = space.trans.in_slice(state)
        logw = (
            table[n][space.trans.src[sl]]
            + space.trans.logp[sl]
            + em[n, space.trans.out[sl] - 1]
        )
        e = sl.start + _sample_index(logw, rng)
        outs.append(int(space.trans.out[e]))
        log_prob += float(space.trans.logp[e] + em[n, space.trans.out[e] - 1])
        state = int(space.trans.src[e])
        states.append(state)
    sl = space.first.in_slice(state)
    logw = table[0][space.first.src[sl]] + space.first.logp[sl] + em[0, space.first.out[sl] - 1]
    e = sl.start + _sample_index(logw, rng)
    outs.append(int(space.first.out[e]))
    log_prob += float(space.first.logp[e] + em[0, space.first.out[e] - 1])
    boundary = int(space.first.src[e])
    init = space.log_initial if log_init is None else np.asarray(log_init, dtype=np.float64)
    log_prob += float(init[boundary])
    states.reverse()
    outs.reverse()
    return PathSample(
        boundary_index=None if space.virtual_boundary else boundary,
        state_indices=states,
        output_values=outs,
        log_prob=log_prob,
    )


def sample_generative(space, n_steps: int, rng: np.random.Generator) -> PathSample:
    """Sample a latent path (and its output values) from the prior."""
    logp0 = space.log_initial
    p0 = np.exp(logp0 - np.max(logp0[np.isfinite(logp0)]))
    p0[~np.isfinite(logp0)] = 0.0
    p0 /= p0.sum()
    boundary = int(rng.choice(len(p0), p=p0))
    log_prob = float(space.log_initial[boundary])
    states = []
    outs = []
    state = boundary
    edges = space.first
    for _ in range(n_steps):
        order, indptr = edges.src_view()
        sel = order[indptr[state]: indptr[state + 1]]
        if len(sel) == 0:
            raise InferenceError("dead-end state during generative sampling")
        e = sel[_sample_index(edges.logp[sel], rng)]
        log_prob += float(edges.logp[e])
        outs.append(int(edges.out[e]))
        state = int(edges.dst[e])
        states.append(state)
        edges = space.trans
    return PathSample(
        boundary_index=None if space.virtual_boundary else boundary,
        state_indices=states,
        output_values=outs,
        log_prob=log_prob,
    )


def ffbs_batch(space, em, rng: np.random.Generator, size: int,
               beam_width: int | None = None, log_init=None):
    """Many exact posterior path draws sharing one forward pass.

    Returns ``(boundary, states, outputs)`` int arrays of shapes (size,),
    (size, n_steps), (size, n_steps).  Backward draws are grouped by state,
    whose incoming-edge posterior is shared by every sample currently there,
    so the cost beyond the forward pass is linear in size and n_steps.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    em = _emission_steps(em)
    n_steps = em.shape[0]
    total, table = forward(
        space, em, beam_width=beam_width, return_table=True, log_init=log_init
    )
    if table is None or not np.isfinite(total):
        raise InferenceError("zero data likelihood: nothing to sample")
    final = table[n_steps]
    m = np.max(final[np.isfinite(final)])
    w = np.exp(final - m)
    w[~np.isfinite(final)] = 0.0
    w /= w.sum()
    cur = rng.choice(len(w), p=w, size=size)
    states = np.empty((size, n_steps), dtype=np.int64)
    outs = np.empty((size, n_steps), dtype=np.int64)
    states[:, n_steps - 1] = cur
    for n in range(n_steps - 1, -1, -1):
        edges = space.first if n == 0 else space.trans
        nxt = np.empty(size, dtype=np.int64)
        for s in np.unique(cur):
            members = np.flatnonzero(cur == s)
            sl = edges.in_slice(int(s))
            logw = table[n][edges.src[sl]] + edges.logp[sl] + em[n, edges.out[sl] - 1]
            mw = np.max(logw)
            if not np.isfinite(mw):
                raise InferenceError("degenerate posterior: all weights zero")
            pw = np.exp(logw - mw)
            pw /= pw.sum()
            draws = rng.choice(sl.stop - sl.start, p=pw, size=len(members)) + sl.start
            outs[members, n] = edges.out[draws]
            nxt[members] = edges.src[draws]
        cur = nxt
        if n > 0:
            states[:, n - 1] = cur
    return cur, states, outs
