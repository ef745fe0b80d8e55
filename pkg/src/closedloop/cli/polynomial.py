"""Polynomials in (x, u, t) for inline problems; partials are exact."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_DEGREE = 4


@dataclass(frozen=True)
class Polynomial:
    """Sum of ``coef * x**px * u**pu * t**pt`` terms."""

    terms: tuple

    @classmethod
    def from_terms(cls, raw, variables: int = 3) -> "Polynomial":
        """``raw`` is a list of ``[coef, px, pu, pt]`` (missing powers are zero)."""
        if raw is None:
            return cls(())
        if not isinstance(raw, (list, tuple)):
            raise ValueError("polynomial must be a list of [coef, powers...] terms")
        terms = []
        for item in raw:
            if not isinstance(item, (list, tuple)) or not 1 <= len(item) <= variables + 1:
                raise ValueError(f"term {item!r} must be [coef] followed by up to {variables} powers")
            coef = float(item[0])
            powers = [int(p) for p in item[1:]]
            if any(p < 0 or p != q for p, q in zip(powers, item[1:])):
                raise ValueError(f"term {item!r} has a negative or non-integer power")
            powers += [0] * (3 - len(powers))
            if sum(powers) > MAX_DEGREE:
                raise ValueError(f"term {item!r} exceeds degree {MAX_DEGREE}")
            terms.append((coef, *powers))
        return cls(tuple(terms))

    def __call__(self, x, u=0.0, t=0.0):
        if np.ndim(x) == 0 and np.ndim(u) == 0 and np.ndim(t) == 0:
            # scalar path; the shooting integrator calls this a great many times
            x, u, t = float(x), float(u), float(t)
            return float(sum(c * x ** px * u ** pu * t ** pt for c, px, pu, pt in self.terms))
        x, u, t = np.asarray(x, dtype=float), np.asarray(u, dtype=float), np.asarray(t, dtype=float)
        out = np.zeros(np.broadcast(x, u, t).shape)
        for c, px, pu, pt in self.terms:
            out = out + c * x ** px * u ** pu * t ** pt
        return out if out.ndim else float(out)

    def partial(self, var: str) -> "Polynomial":
        k = {"x": 1, "u": 2, "t": 3}[var]
        out = []
        for term in self.terms:
            if term[k] == 0:
                continue
            new = list(term)
            new[0] = term[0] * term[k]
            new[k] = term[k] - 1
            out.append(tuple(new))
        return Polynomial(tuple(out))

    def degree(self) -> int:
        return max((sum(t[1:]) for t in self.terms), default=0)
