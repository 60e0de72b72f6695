"""Parametric density families with closed-form Hellinger affinities.

Three families are supported, each a product of independent components:

* ``Discrete``    -- a categorical law on ``{0, ..., n-1}`` parameterized by a
  point of the open probability simplex (counting reference measure).
* ``PoissonVec``  -- independent Poisson counts with positive rates.
* ``GaussianVec`` -- independent normals with unknown means and known
  standard deviations (Lebesgue reference measure).

Besides the affinity ``AffH(mu, nu) = int sqrt(p_mu p_nu)`` every family
provides the *tilted* affinity ``T(lam; mu, nu) = E_lam[sqrt(p_nu / p_mu)]``,
which is what the estimator certification integrates. ``T(mu; mu, nu)``
equals ``AffH(mu, nu)``.

The ``*_oracle`` functions recompute the affinity without closed forms
(direct summation, truncated series, adaptive quadrature) and exist only to
check the fast path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import integrate
from scipy.special import gammaln

SIMPLEX_SUM_TOL = 1e-9


class DomainError(ValueError):
    """A parameter or outcome lies outside the family's domain."""


class OracleError(RuntimeError):
    """An independent oracle failed to converge."""


def _as_param(x, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape != (dim,):
        raise DomainError(f"{name} must have shape ({dim},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class Discrete:
    """Categorical distribution on ``n_outcomes`` points."""

    n_outcomes: int

    def __post_init__(self):
        if int(self.n_outcomes) != self.n_outcomes or self.n_outcomes < 2:
            raise ValueError("Discrete family needs n_outcomes >= 2")

    @property
    def param_dim(self) -> int:
        return self.n_outcomes

    def check(self, mu, name: str = "mu", normalized: bool = True) -> np.ndarray:
        mu = _as_param(mu, self.n_outcomes, name)
        if np.any(mu <= 0):
            raise DomainError(f"{name} has non-positive entries: {mu.tolist()}")
        if normalized and abs(mu.sum() - 1.0) > SIMPLEX_SUM_TOL:
            raise DomainError(f"{name} does not sum to 1 (sum={mu.sum():.17g})")
        return mu

    def check_outcome(self, omega) -> int:
        k = int(omega)
        if k != omega or not 0 <= k < self.n_outcomes:
            raise DomainError(f"discrete outcome {omega!r} not in [0, {self.n_outcomes})")
        return k

    def log_density(self, mu, omega) -> float:
        mu = self.check(mu)
        return float(np.log(mu[self.check_outcome(omega)]))

    def _pos(self, mu, name: str = "mu") -> np.ndarray:
        return self.check(mu, name, normalized=False)

    # Affinity formulas are evaluated on the positive orthant (Bhattacharyya sum
    # of unnormalized measures) so gradients can be checked off the simplex.

    def affinity(self, mu, nu) -> float:
        mu, nu = self._pos(mu), self._pos(nu, "nu")
        return float(np.sum(np.sqrt(mu * nu)))

    def log_affinity_grad(self, mu, nu):
        mu, nu = self._pos(mu), self._pos(nu, "nu")
        root = np.sqrt(mu * nu)
        aff = root.sum()
        return root / mu / (2 * aff), root / nu / (2 * aff)

    def tilted_affinity_log(self, lam, mu, nu) -> float:
        lam, mu, nu = self._pos(lam, "lambda"), self._pos(mu), self._pos(nu, "nu")
        return float(np.log(np.dot(lam, np.sqrt(nu / mu))))

    def tilted_affinity_grad(self, lam, mu, nu) -> np.ndarray:
        lam, mu, nu = self._pos(lam, "lambda"), self._pos(mu), self._pos(nu, "nu")
        w = np.sqrt(nu / mu)
        return w / np.dot(lam, w)

    def sample(self, mu, rng: np.random.Generator) -> int:
        return int(self.sample_many(mu, rng, 1)[0])

    def sample_many(self, mu, rng: np.random.Generator, size: int) -> np.ndarray:
        mu = self.check(mu)
        # inverse-CDF keeps draws reproducible regardless of numpy's choice() internals
        cdf = np.cumsum(mu)
        cdf[-1] = 1.0
        return np.searchsorted(cdf, rng.random(size), side="right").astype(np.int64)

    def log_ratio_many(self, mu, nu, outcomes: np.ndarray) -> np.ndarray:
        """``ln p_mu(w) - ln p_nu(w)`` for an array of outcome indices."""
        mu, nu = self.check(mu), self.check(nu, "nu")
        return (np.log(mu) - np.log(nu))[np.asarray(outcomes, dtype=np.int64)]

    def to_dict(self) -> dict:
        return {"kind": "discrete", "n_outcomes": self.n_outcomes}


@dataclass(frozen=True)
class PoissonVec:
    """Vector of independent Poisson counts."""

    dim: int

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError("PoissonVec needs dim >= 1")

    @property
    def param_dim(self) -> int:
        return self.dim

    def check(self, mu, name: str = "mu") -> np.ndarray:
        mu = _as_param(mu, self.dim, name)
        if np.any(mu <= 0):
            raise DomainError(f"{name} has non-positive rates: {mu.tolist()}")
        return mu

    def check_outcome(self, omega) -> np.ndarray:
        k = np.asarray(omega)
        if k.ndim == 0:
            k = k.reshape(1)
        if k.shape != (self.dim,) or np.any(k < 0) or np.any(k != np.floor(k)):
            raise DomainError(f"Poisson outcome {omega!r} must be {self.dim} non-negative integers")
        return k.astype(np.int64)

    def log_density(self, mu, omega) -> float:
        mu = self.check(mu)
        k = self.check_outcome(omega)
        return float(np.sum(k * np.log(mu) - mu - gammaln(k + 1.0)))

    def affinity(self, mu, nu) -> float:
        mu, nu = self.check(mu), self.check(nu, "nu")
        return float(np.exp(-0.5 * np.sum((np.sqrt(mu) - np.sqrt(nu)) ** 2)))

    def log_affinity_grad(self, mu, nu):
        mu, nu = self.check(mu), self.check(nu, "nu")
        ratio = np.sqrt(nu / mu)
        return -0.5 * (1.0 - ratio), -0.5 * (1.0 - 1.0 / ratio)

    def tilted_affinity_log(self, lam, mu, nu) -> float:
        lam, mu, nu = self.check(lam, "lambda"), self.check(mu), self.check(nu, "nu")
        return float(np.sum(lam * (np.sqrt(nu / mu) - 1.0) + 0.5 * (mu - nu)))

    def tilted_affinity_grad(self, lam, mu, nu) -> np.ndarray:
        self.check(lam, "lambda")
        mu, nu = self.check(mu), self.check(nu, "nu")
        return np.sqrt(nu / mu) - 1.0

    def sample(self, mu, rng: np.random.Generator) -> np.ndarray:
        return self.sample_many(mu, rng, 1)[0]

    def sample_many(self, mu, rng: np.random.Generator, size: int) -> np.ndarray:
        mu = self.check(mu)
        return rng.poisson(mu, size=(size, self.dim)).astype(np.int64)

    def log_ratio_many(self, mu, nu, outcomes: np.ndarray) -> np.ndarray:
        mu, nu = self.check(mu), self.check(nu, "nu")
        k = np.asarray(outcomes, dtype=float).reshape(-1, self.dim)
        return k @ (np.log(mu) - np.log(nu)) - np.sum(mu - nu)

    def to_dict(self) -> dict:
        return {"kind": "poisson", "dim": self.dim}


@dataclass(frozen=True)
class GaussianVec:
    """Independent normals with known standard deviations ``sigmas``."""

    dim: int
    sigmas: tuple

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError("GaussianVec needs dim >= 1")
        sig = tuple(float(s) for s in np.atleast_1d(self.sigmas))
        if len(sig) != self.dim:
            raise ValueError(f"GaussianVec needs {self.dim} sigmas, got {len(sig)}")
        if not all(s > 0 and math.isfinite(s) for s in sig):
            raise ValueError("GaussianVec sigmas must be positive and finite")
        object.__setattr__(self, "sigmas", sig)

    @property
    def param_dim(self) -> int:
        return self.dim

    @property
    def _var(self) -> np.ndarray:
        return np.asarray(self.sigmas) ** 2

    def check(self, mu, name: str = "mu") -> np.ndarray:
        return _as_param(mu, self.dim, name)

    def check_outcome(self, omega) -> np.ndarray:
        w = np.asarray(omega, dtype=float)
        if w.ndim == 0:
            w = w.reshape(1)
        if w.shape != (self.dim,) or not np.all(np.isfinite(w)):
            raise DomainError(f"Gaussian outcome {omega!r} must be {self.dim} finite reals")
        return w

    def log_density(self, mu, omega) -> float:
        mu = self.check(mu)
        w = self.check_outcome(omega)
        var = self._var
        return float(np.sum(-0.5 * np.log(2 * np.pi * var) - (w - mu) ** 2 / (2 * var)))

    def affinity(self, mu, nu) -> float:
        mu, nu = self.check(mu), self.check(nu, "nu")
        return float(np.exp(-np.sum((mu - nu) ** 2 / (8 * self._var))))

    def log_affinity_grad(self, mu, nu):
        mu, nu = self.check(mu), self.check(nu, "nu")
        g = -(mu - nu) / (4 * self._var)
        return g, -g

    def tilted_affinity_log(self, lam, mu, nu) -> float:
        lam, mu, nu = self.check(lam, "lambda"), self.check(mu), self.check(nu, "nu")
        var = self._var
        d = nu - mu
        return float(np.sum(d * lam / (2 * var) + d**2 / (8 * var) + (mu**2 - nu**2) / (4 * var)))

    def tilted_affinity_grad(self, lam, mu, nu) -> np.ndarray:
        self.check(lam, "lambda")
        mu, nu = self.check(mu), self.check(nu, "nu")
        return (nu - mu) / (2 * self._var)

    def sample(self, mu, rng: np.random.Generator) -> np.ndarray:
        return self.sample_many(mu, rng, 1)[0]

    def sample_many(self, mu, rng: np.random.Generator, size: int) -> np.ndarray:
        mu = self.check(mu)
        return mu + np.asarray(self.sigmas) * rng.standard_normal((size, self.dim))

    def log_ratio_many(self, mu, nu, outcomes: np.ndarray) -> np.ndarray:
        mu, nu = self.check(mu), self.check(nu, "nu")
        w = np.asarray(outcomes, dtype=float).reshape(-1, self.dim)
        var = self._var
        return np.sum(((w - nu) ** 2 - (w - mu) ** 2) / (2 * var), axis=1)

    def to_dict(self) -> dict:
        return {"kind": "gaussian", "dim": self.dim, "sigmas": list(self.sigmas)}


FamilyKind = Union[Discrete, PoissonVec, GaussianVec]


def family_from_dict(d: dict) -> FamilyKind:
    kind = d.get("kind")
    if kind == "discrete":
        return Discrete(int(d["n_outcomes"]))
    if kind == "poisson":
        return PoissonVec(int(d["dim"]))
    if kind == "gaussian":
        return GaussianVec(int(d["dim"]), tuple(d["sigmas"]))
    raise ValueError(f"unknown family kind {kind!r}")


# Functional API mirroring the methods.


def log_density(family: FamilyKind, mu, omega) -> float:
    return family.log_density(mu, omega)


def affinity(family: FamilyKind, mu, nu) -> float:
    """Hellinger affinity (Bhattacharyya coefficient) in ``(0, 1]``."""
    return family.affinity(mu, nu)


def log_affinity_grad(family: FamilyKind, mu, nu):
    """Gradients of ``ln AffH`` with respect to ``mu`` and ``nu``.

    Discrete parameters are differentiated as points of the positive
    orthant, i.e. the gradient is not projected onto the simplex.
    """
    return family.log_affinity_grad(mu, nu)


def tilted_affinity_log(family: FamilyKind, lam, mu, nu) -> float:
    return family.tilted_affinity_log(lam, mu, nu)


def tilted_affinity_grad(family: FamilyKind, lam, mu, nu) -> np.ndarray:
    return family.tilted_affinity_grad(lam, mu, nu)


def sample(family: FamilyKind, mu, rng: np.random.Generator):
    return family.sample(mu, rng)


# Independent oracles.

POISSON_TAIL_REL = 1e-16


def _poisson_bc_series(a: float, b: float) -> tuple[float, int]:
    """sum_k sqrt(Pois(k; a) Pois(k; b)) by direct summation.

    Terms are ``exp(-(a+b)/2) s^k / k!`` with ``s = sqrt(ab)``; once
    ``k + 1 > s`` the remaining tail is bounded by a geometric series and the
    loop stops when that bound drops below ``POISSON_TAIL_REL`` of the sum.
    """
    s = math.sqrt(a * b)
    log_pref = -(a + b) / 2
    total = 0.0
    k = 0
    while True:
        term = math.exp(log_pref + k * math.log(s) - math.lgamma(k + 1))
        total += term
        k += 1
        q = s / (k + 1)
        if q < 1 and term * q / (1 - q) < POISSON_TAIL_REL * total:
            return total, k
        if k > 100_000:
            raise OracleError(f"Poisson series did not converge for rates {a}, {b}")


def affinity_oracle(family: FamilyKind, mu, nu, *, return_info: bool = False):
    """Affinity computed without closed forms.

    With ``return_info=True`` a second value describes the truncation or
    quadrature error estimate.
    """
    if isinstance(family, Discrete):
        mu, nu = family.check(mu), family.check(nu, "nu")
        val = math.fsum(
            math.sqrt(math.exp(family.log_density(mu, w) + family.log_density(nu, w)))
            for w in range(family.n_outcomes)
        )
        info = {"method": "direct summation", "terms": family.n_outcomes}
    elif isinstance(family, PoissonVec):
        mu, nu = family.check(mu), family.check(nu, "nu")
        val, terms = 1.0, []
        for a, b in zip(mu, nu):
            part, k = _poisson_bc_series(float(a), float(b))
            val *= part
            terms.append(k)
        info = {"method": "truncated series", "terms": terms, "tail_rel": POISSON_TAIL_REL}
    elif isinstance(family, GaussianVec):
        mu, nu = family.check(mu), family.check(nu, "nu")
        val, errs = 1.0, []
        for m, n, s in zip(mu, nu, family.sigmas):

            def integrand(w, m=m, n=n, s=s):
                return math.exp(-((w - m) ** 2 + (w - n) ** 2) / (4 * s * s)) / (math.sqrt(2 * math.pi) * s)

            centre = 0.5 * (m + n)
            # split at the mode so quad sees the peak
            left, e1 = integrate.quad(integrand, -np.inf, centre, epsabs=0, epsrel=1e-13, limit=200)
            right, e2 = integrate.quad(integrand, centre, np.inf, epsabs=0, epsrel=1e-13, limit=200)
            part = left + right
            if not part > 0 or (e1 + e2) > 1e-10 * part:
                raise OracleError(f"quadrature did not converge (estimate {part}, error {e1 + e2})")
            val *= part
            errs.append(e1 + e2)
        info = {"method": "adaptive quadrature", "abs_error": errs}
    else:
        raise TypeError(f"unsupported family {family!r}")
    return (val, info) if return_info else val
