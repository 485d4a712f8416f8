"""Uniform sampling box over the parameter vector and its block layout."""

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, ParameterError

__all__ = ["SamplingBox"]


@dataclass(frozen=True)
class SamplingBox:
    """Independent uniform sampling density on ``prod_j [lo_j, hi_j]``.

    Parameters
    ----------
    lo, hi : array_like of shape (m,)
    names : sequence of str, optional
    blocks : sequence, optional
        Contiguous partition of the coordinates, in order. Either block
        sizes (``[2, 1, 1, 1]``) or tuples of names. Defaults to one block
        per coordinate.
    """

    lo: np.ndarray
    hi: np.ndarray
    names: tuple = None
    blocks: tuple = None

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float, ndmin=1)
        hi = np.array(self.hi, dtype=float, ndmin=1)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ParameterError("lo and hi must be 1-D arrays of equal length")
        if not np.all(np.isfinite(lo) & np.isfinite(hi)) or np.any(lo >= hi):
            raise ParameterError("need finite lo < hi for every coordinate")
        m = lo.size
        names = tuple(self.names) if self.names is not None else tuple(f"theta{j}" for j in range(m))
        if len(names) != m or len(set(names)) != m:
            raise ParameterError("names must be unique, one per coordinate")
        blocks = self.blocks if self.blocks is not None else [1] * m
        spans = []
        start = 0
        for b in blocks:
            if isinstance(b, (int, np.integer)):
                size = int(b)
                if size < 1:
                    raise ParameterError("block sizes must be >= 1")
                spans.append((start, start + size))
            else:
                idx = [names.index(n) for n in b]
                if idx != list(range(start, start + len(idx))) or not idx:
                    raise ParameterError(f"block {tuple(b)} is not the next contiguous run of coordinates")
                spans.append((start, start + len(idx)))
            start = spans[-1][1]
        if start != m:
            raise ParameterError("blocks must cover every coordinate exactly once")
        for arr in (lo, hi):
            arr.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "blocks", tuple(spans))

    @property
    def m(self):
        return self.lo.size

    @property
    def n_blocks(self):
        return len(self.blocks)

    @property
    def width(self):
        return self.hi - self.lo

    def log_density(self):
        """``-sum_j log(hi_j - lo_j)``."""
        return float(-np.sum(np.log(self.width)))

    def block_log_density(self, i):
        s, e = self.blocks[i]
        return float(-np.sum(np.log(self.width[s:e])))

    def sample(self, rng, n, start=0, end=None):
        """Uniform draws of coordinates ``start:end``, shape (n, end - start)."""
        end = self.m if end is None else end
        return self.lo[start:end] + self.width[start:end] * rng.random((n, end - start))

    def contains(self, theta, end=None, rtol=1e-9):
        theta = np.asarray(theta, dtype=float)
        end = theta.shape[-1] if end is None else end
        slack = rtol * self.width[:end]
        t = theta[..., :end]
        return np.all((t >= self.lo[:end] - slack) & (t <= self.hi[:end] + slack), axis=-1)

    def check(self, theta, end=None):
        if not np.all(self.contains(theta, end)):
            raise DomainError("parameter outside the sampling box; the learned ratio is undefined there")

    def to_unit(self, theta, end=None):
        """Affine map of coordinates ``0:end`` onto ``[-1, 1]``."""
        theta = np.asarray(theta, dtype=float)
        end = theta.shape[-1] if end is None else end
        return 2.0 * (theta[..., :end] - self.lo[:end]) / self.width[:end] - 1.0

    def index(self, name):
        return self.names.index(name)

    def to_dict(self):
        return {
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "names": list(self.names),
            "blocks": [e - s for s, e in self.blocks],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["lo"], d["hi"], d.get("names"), d.get("blocks"))
