"""Sampling designs with exact first- and second-order inclusion probabilities.

Two designs are implemented: simple random sampling without replacement
and stratified SRSWOR.  Both expose closed-form joint probabilities, so
the general variance machinery stays exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._rng import rng_from


class DesignError(Exception):
    """Invalid design specification."""


@dataclass(frozen=True, eq=False)
class SampleIndex:
    """A drawn sample: sorted member indices into the population (0-based)."""

    members: np.ndarray
    n_population: int

    def __post_init__(self):
        m = np.asarray(self.members, dtype=np.int64)
        if m.size and (m.min() < 0 or m.max() >= self.n_population):
            raise DesignError("sample members out of range")
        if np.unique(m).size != m.size:
            raise DesignError("sample members must be distinct")
        object.__setattr__(self, "members", np.sort(m))

    @property
    def n(self) -> int:
        return int(self.members.size)

    @property
    def indicator(self) -> np.ndarray:
        ind = np.zeros(self.n_population, dtype=np.int8)
        ind[self.members] = 1
        return ind


def _fisher_yates_take(n_total: int, n_take: int, rng: np.random.Generator) -> np.ndarray:
    """First ``n_take`` entries of a partial Fisher-Yates shuffle: exactly
    uniform over size-``n_take`` subsets."""
    arr = np.arange(n_total, dtype=np.int64)
    if n_take == 0:
        return arr[:0]
    highs = np.arange(n_total, n_total - n_take, -1, dtype=np.int64)
    js = rng.integers(0, highs)  # j uniform on [0, n_total - i)
    for i in range(n_take):
        j = i + int(js[i])
        arr[i], arr[j] = arr[j], arr[i]
    return arr[:n_take]


@dataclass(frozen=True, eq=False)
class DesignSpec:
    """A fixed-size sampling design over a population of N units.

    ``kind`` is "srswor" or "stratified".  ``strata`` holds 0-based
    stratum codes (length N) and ``n_h`` the per-stratum sample sizes,
    both None for SRSWOR.
    """

    kind: str
    n_population: int
    n_sample: int
    strata: np.ndarray | None = None
    n_h: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("srswor", "stratified"):
            raise DesignError(f"unknown design kind {self.kind!r}")
        N, n = self.n_population, self.n_sample
        if not 1 <= n <= N:
            raise DesignError(f"need 1 <= n <= N, got n={n}, N={N}")
        if self.kind == "stratified":
            strata = np.asarray(self.strata, dtype=np.int64)
            n_h = np.asarray(self.n_h, dtype=np.int64)
            if strata.shape != (N,):
                raise DesignError("strata labels must have length N")
            counts = np.bincount(strata, minlength=n_h.size)
            if strata.min() < 0 or strata.max() >= n_h.size:
                raise DesignError("stratum codes out of range")
            if (counts == 0).any():
                raise DesignError("empty stratum")
            if (n_h < 1).any():
                raise DesignError("every stratum needs n_h >= 1")
            if (n_h > counts).any():
                raise DesignError("n_h exceeds stratum size")
            if n_h.sum() != n:
                raise DesignError("sum of n_h must equal n")
            object.__setattr__(self, "strata", strata)
            object.__setattr__(self, "n_h", n_h)
            object.__setattr__(self, "_N_h", counts)

    @property
    def pi(self) -> np.ndarray:
        """First-order inclusion probabilities, length N."""
        if self.kind == "srswor":
            return np.full(self.n_population, self.n_sample / self.n_population)
        f_h = self.n_h / self._N_h
        return f_h[self.strata]

    def pi_joint(self, k: int, ell: int) -> float:
        """pi_kl for any pair of unit indices (0-based); pi_kk = pi_k."""
        if k == ell:
            return float(self.pi[k])
        if self.kind == "srswor":
            N, n = self.n_population, self.n_sample
            return n * (n - 1) / (N * (N - 1))
        hk, hl = int(self.strata[k]), int(self.strata[ell])
        if hk != hl:
            return float(self.pi[k] * self.pi[ell])
        Nh = int(self._N_h[hk])
        nh = int(self.n_h[hk])
        return nh * (nh - 1) / (Nh * (Nh - 1))

    def pi_joint_matrix(self, members: np.ndarray) -> np.ndarray:
        """Dense pi_kl matrix for the given unit indices."""
        members = np.asarray(members, dtype=np.int64)
        pi = self.pi[members]
        if self.kind == "srswor":
            N, n = self.n_population, self.n_sample
            off = n * (n - 1) / (N * (N - 1))
            mat = np.full((members.size, members.size), off)
        else:
            h = self.strata[members]
            same = h[:, None] == h[None, :]
            Nh = self._N_h[h].astype(np.float64)
            nh = self.n_h[h].astype(np.float64)
            within = nh * (nh - 1) / (Nh * (Nh - 1))
            mat = np.where(same, within[:, None], pi[:, None] * pi[None, :])
        np.fill_diagonal(mat, pi)
        return mat

    def draw(self, seed: int) -> SampleIndex:
        """Draw one sample; deterministic given the seed."""
        rng = rng_from(seed)
        if self.kind == "srswor":
            members = _fisher_yates_take(self.n_population, self.n_sample, rng)
            return SampleIndex(members, self.n_population)
        parts = []
        for h in range(self.n_h.size):
            units = np.nonzero(self.strata == h)[0]
            take = _fisher_yates_take(units.size, int(self.n_h[h]), rng)
            parts.append(units[take])
        return SampleIndex(np.concatenate(parts), self.n_population)


def proportional_allocation(strata: np.ndarray, n: int) -> np.ndarray:
    """Per-stratum sizes n_h ~ n * N_h / N: round, then repair the total
    largest-remainder style, keeping every stratum at n_h >= 1."""
    strata = np.asarray(strata, dtype=np.int64)
    counts = np.bincount(strata)
    if (counts == 0).any():
        raise DesignError("empty stratum")
    H = counts.size
    if n < H:
        raise DesignError(f"n={n} cannot allocate >=1 unit to {H} strata")
    if n > strata.size:
        raise DesignError("n exceeds N")
    raw = n * counts / strata.size
    n_h = np.maximum(np.rint(raw).astype(np.int64), 1)
    n_h = np.minimum(n_h, counts)
    while n_h.sum() != n:
        gap = n - n_h.sum()
        under = raw - n_h
        if gap > 0:
            order = np.lexsort((np.arange(H), -under))
            for h in order:
                if n_h[h] < counts[h]:
                    n_h[h] += 1
                    break
        else:
            order = np.lexsort((np.arange(H), under))
            for h in order:
                if n_h[h] > 1:
                    n_h[h] -= 1
                    break
    return n_h


def make_design(
    kind: str,
    n_population: int,
    n_sample: int | None = None,
    *,
    strata: np.ndarray | None = None,
    n_h=None,
) -> DesignSpec:
    """Build a validated design.

    For "stratified", pass stratum labels (any hashable codes) plus either
    explicit per-stratum sizes ``n_h`` (in sorted-label order) or a total
    ``n_sample`` to allocate proportionally.
    """
    if kind == "srswor":
        if n_sample is None:
            raise DesignError("srswor needs n_sample")
        return DesignSpec("srswor", n_population, int(n_sample))
    if kind != "stratified":
        raise DesignError(f"unknown design kind {kind!r}")
    if strata is None:
        raise DesignError("stratified design needs stratum labels")
    labels = np.asarray(strata)
    if labels.shape != (n_population,):
        raise DesignError("strata labels must have length N")
    uniq, codes = np.unique(labels, return_inverse=True)
    if n_h is not None:
        n_h = np.asarray(n_h, dtype=np.int64)
        if n_h.size != uniq.size:
            raise DesignError(f"{uniq.size} strata but {n_h.size} sizes")
    else:
        if n_sample is None:
            raise DesignError("stratified design needs n_h or a total n_sample")
        n_h = proportional_allocation(codes, int(n_sample))
    return DesignSpec("stratified", n_population, int(n_h.sum()), strata=codes, n_h=n_h)


def draw_sample(design: DesignSpec, rng_seed: int) -> SampleIndex:
    """Draw one sample from the design (see DesignSpec.draw)."""
    return design.draw(rng_seed)
