"""Problem specification and construction parameters.

``derive_parameters`` follows the asymptotic recipe for the coupled design
(compartment count, window, pool size, test count, threshold).  At desk
scale those formulas are frequently infeasible, in which case
``validate_overrides`` accepts hand-picked ``ell``/``s``/``Gamma``/``m``/``alpha``
and fills in the rest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

OVERRIDE_KEYS = ("ell", "s", "Gamma", "m", "alpha")


class ParameterError(ValueError):
    """Invalid or infeasible parameter set.

    ``code`` is a stable short name for the violated invariant, e.g.
    ``"Gamma-not-divisible-by-s"``.
    """

    def __init__(self, code: str, message: str | None = None):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


def _floor_power(n: int, exponent: float) -> int:
    # guards against 1000 ** (1/3) == 9.999999999999998
    return int(math.floor(n**exponent + 1e-9))


@dataclass(frozen=True)
class ProblemSpec:
    """User-level description of an instance.

    ``theta`` holds one sparsity exponent per non-zero label; ``explicit_k``
    optionally replaces ``floor(n ** theta_i)`` by given counts.
    """

    n: int
    theta: tuple[float, ...]
    delta: float = 0.2
    explicit_k: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(t) for t in _as_tuple(self.theta)))
        if self.explicit_k is not None:
            object.__setattr__(self, "explicit_k", tuple(int(k) for k in _as_tuple(self.explicit_k)))
        if self.n < 2:
            raise ParameterError("n-too-small", f"n={self.n} < 2")
        if not self.theta:
            raise ParameterError("theta-missing", "at least one label is required")
        for t in self.theta:
            if not 0.0 < t < 1.0:
                raise ParameterError("theta-out-of-range", f"θ out of (0,1): {t}")
        if not self.delta > 0:
            raise ParameterError("delta-nonpositive", f"δ must be > 0, got {self.delta}")
        if self.explicit_k is not None:
            if len(self.explicit_k) != len(self.theta):
                raise ParameterError("k-length-mismatch", "one count per label is required")
            if any(k < 0 or k >= self.n for k in self.explicit_k):
                raise ParameterError("k-out-of-range", f"counts must lie in [0, n): {self.explicit_k}")
            if sum(self.explicit_k) >= self.n:
                raise ParameterError("k-sum-too-large", "total non-zero count must be < n")

    @property
    def d(self) -> int:
        return len(self.theta)

    @property
    def k_i(self) -> tuple[int, ...]:
        if self.explicit_k is not None:
            return self.explicit_k
        return tuple(_floor_power(self.n, t) for t in self.theta)

    @property
    def k(self) -> int:
        return max(self.k_i)

    @property
    def theta_max(self) -> float:
        return max(self.theta)


def _as_tuple(value) -> tuple:
    if isinstance(value, (int, float)):
        return (value,)
    return tuple(value)


@dataclass(frozen=True)
class Params:
    """Every scalar of the pooling scheme and the threshold decoder."""

    n: int
    theta: float
    delta: float
    k: int
    m: int
    ell: int
    s: int
    Gamma: int
    alpha: float
    eps1: float
    eps2: float
    eps3: float
    c_theta: float

    @property
    def L(self) -> int:
        """Number of item (and pool) compartments, ``ell + s - 1``."""
        return self.ell + self.s - 1

    @property
    def draws(self) -> int:
        """Items each pool takes from each compartment of its window."""
        return self.Gamma // self.s

    @property
    def pools_per_compartment(self) -> int:
        return self.m // self.L

    @property
    def bulk_floor(self) -> int:
        return self.n // self.ell

    @property
    def n_prime(self) -> int:
        return (self.s - 1) * math.ceil(self.n / self.ell)

    @property
    def k_prime(self) -> int:
        return math.ceil((self.s - 1) * self.k / self.ell)

    @property
    def Delta(self) -> float:
        return self.Gamma * self.m / (self.L * self.bulk_floor)

    @property
    def k_scale(self) -> int:
        # k = 0 instances still need a positive normalisation
        return max(self.k, 1)

    @property
    def T_alpha(self) -> float:
        return self.alpha * math.sqrt(self.m / self.k_scale) * math.log(self.s)

    @property
    def m_inf(self) -> float:
        return information_threshold(self.theta, self.k)

    @property
    def score_scale(self) -> float:
        """``(Delta / s) * sqrt(k / m)``, the per-window score denominator before ``(j + 1)``."""
        return (self.Delta / self.s) * math.sqrt(self.k_scale / self.m)

    def as_dict(self) -> dict[str, float | int]:
        return {
            "n": self.n,
            "theta": self.theta,
            "delta": self.delta,
            "k": self.k,
            "ell": self.ell,
            "s": self.s,
            "gamma": self.Gamma,
            "m": self.m,
            "alpha": self.alpha,
            "n_prime": self.n_prime,
            "k_prime": self.k_prime,
            "Delta": self.Delta,
            "T_alpha": self.T_alpha,
            "eps1": self.eps1,
            "eps2": self.eps2,
            "eps3": self.eps3,
            "c_theta": self.c_theta,
        }


def information_threshold(theta: float, k: int) -> float:
    """Test count ``2 (1 - theta) / theta * k`` below which exact recovery fails."""
    return 2.0 * (1.0 - theta) / theta * k


def optimal_multiplier(theta: float) -> float:
    return (1.0 + math.sqrt(theta)) / (1.0 - math.sqrt(theta))


def optimal_alpha(theta: float) -> float:
    return 1.0 / (1.0 + math.sqrt(theta))


def exponents(theta: float, delta: float) -> tuple[float, float, float]:
    """``(eps1, eps2, eps3)`` for slack ``delta`` (half of it is used inside compartments)."""
    dp = delta / 2.0
    eps1 = theta * 3.0 * dp / (8.0 * (1.0 + dp))
    eps2 = dp / (4.0 * (1.0 + dp))
    eps3 = dp / (2.0 * (1.0 + dp))
    return eps1, eps2, eps3


def _round_up(value: float, multiple: int) -> int:
    return multiple * math.ceil(value / multiple - 1e-12)


def _default_gamma(n: int, ell: int, s: int, eps1: float) -> int:
    target = n ** (1.0 - eps1) / 2.0
    gamma = s * round(target / s)
    return min(max(gamma, s), s * (n // ell))


def target_test_count(theta: float, delta: float, k: int) -> float:
    """Unrounded test count ``(1 + delta / 2) * c_theta * m_inf``."""
    return (1.0 + delta / 2.0) * optimal_multiplier(theta) * information_threshold(theta, k)


def _default_m(theta: float, delta: float, k: int, L: int) -> int:
    return _round_up(target_test_count(theta, delta, k), L)


def check_invariants(p: Params) -> None:
    """Raise ``ParameterError`` naming the first violated invariant."""
    if p.s < 2:
        raise ParameterError("s-below-minimum", f"s={p.s} < 2")
    if p.s >= p.ell:
        raise ParameterError("s-not-below-ell", f"s={p.s} >= ell={p.ell}")
    if p.bulk_floor < 2:
        raise ParameterError("compartment-too-small", f"floor(n/ell)={p.bulk_floor} < 2")
    if p.Gamma % p.s:
        raise ParameterError("Gamma-not-divisible-by-s", f"Gamma={p.Gamma}, s={p.s}")
    if p.Gamma < p.s:
        raise ParameterError("Gamma-below-s", f"Gamma={p.Gamma} < s={p.s}")
    if p.draws > p.bulk_floor:
        raise ParameterError(
            "Gamma-exceeds-window", f"Gamma/s={p.draws} > floor(n/ell)={p.bulk_floor}"
        )
    if p.m <= 0 or p.m % p.L:
        raise ParameterError(
            "m-not-divisible-by-compartments", f"m={p.m} is not a positive multiple of {p.L}"
        )
    if not 0.0 < p.alpha < 1.0:
        raise ParameterError("alpha-out-of-range", f"alpha={p.alpha}")
    if not p.eps2 < p.eps3:
        raise ParameterError("eps-window-order", "need eps2 < eps3")
    if p.theta * (p.eps2 - p.eps3) + p.eps1 < -1e-15:
        raise ParameterError("eps-pool-size", "need theta (eps2 - eps3) + eps1 >= 0")
    if not p.eps3 > p.eps1 / p.theta:
        raise ParameterError("eps-degree-growth", "need eps3 > eps1 / theta")


def derive_parameters(spec: ProblemSpec) -> Params:
    """Derived parameters for ``spec``.

    Raises ``ParameterError("infeasible-at-this-n")`` when the rounded formulas
    break an invariant; use ``validate_overrides`` in that case.
    """
    theta, delta, k = spec.theta_max, spec.delta, spec.k
    eps1, eps2, eps3 = exponents(theta, delta)
    ell = _floor_power(k, 1.0 - eps2) if k > 0 else 0
    s = max(2, _floor_power(k, 1.0 - eps3) if k > 0 else 0)
    if ell <= s or spec.n // ell < 2:
        raise ParameterError(
            "infeasible-at-this-n", f"ell={ell}, s={s} for n={spec.n}, k={k}"
        )
    params = Params(
        n=spec.n,
        theta=theta,
        delta=delta,
        k=k,
        m=_default_m(theta, delta, k, ell + s - 1),
        ell=ell,
        s=s,
        Gamma=_default_gamma(spec.n, ell, s, eps1),
        alpha=optimal_alpha(theta),
        eps1=eps1,
        eps2=eps2,
        eps3=eps3,
        c_theta=optimal_multiplier(theta),
    )
    try:
        check_invariants(params)
    except ParameterError as err:
        raise ParameterError("infeasible-at-this-n", str(err)) from err
    return params


def validate_overrides(spec: ProblemSpec, manual: Mapping[str, float | int]) -> Params:
    """Params built from ``manual`` values, with unspecified fields derived.

    ``manual`` may hold any subset of ``ell``, ``s``, ``Gamma`` (or ``gamma``),
    ``m`` and ``alpha``.
    """
    manual = dict(manual)
    if "gamma" in manual:
        manual["Gamma"] = manual.pop("gamma")
    unknown = set(manual) - set(OVERRIDE_KEYS)
    if unknown:
        raise ParameterError("unknown-override", ", ".join(sorted(unknown)))

    theta, delta, k = spec.theta_max, spec.delta, spec.k
    eps1, eps2, eps3 = exponents(theta, delta)
    ell = int(manual["ell"]) if "ell" in manual else (_floor_power(k, 1.0 - eps2) if k else 0)
    if "s" in manual:
        s = int(manual["s"])
    else:
        s = max(2, _floor_power(k, 1.0 - eps3) if k else 0)
    if s < 2:
        raise ParameterError("s-below-minimum", f"s={s} < 2")
    if ell <= s:
        raise ParameterError("s-not-below-ell", f"s={s} >= ell={ell}")
    if spec.n // ell < 2:
        raise ParameterError("compartment-too-small", f"floor(n/ell)={spec.n // ell} < 2")
    L = ell + s - 1
    gamma = int(manual["Gamma"]) if "Gamma" in manual else _default_gamma(spec.n, ell, s, eps1)
    m = int(manual["m"]) if "m" in manual else _default_m(theta, delta, max(k, 1), L)
    params = Params(
        n=spec.n,
        theta=theta,
        delta=delta,
        k=k,
        m=m,
        ell=ell,
        s=s,
        Gamma=gamma,
        alpha=float(manual.get("alpha", optimal_alpha(theta))),
        eps1=eps1,
        eps2=eps2,
        eps3=eps3,
        c_theta=optimal_multiplier(theta),
    )
    check_invariants(params)
    return params


def make_params(spec: ProblemSpec, manual: Mapping[str, float | int] | None = None) -> Params:
    if manual:
        return validate_overrides(spec, manual)
    return derive_parameters(spec)


def label_groups(spec: ProblemSpec) -> list[tuple[int, ...]]:
    """Labels sharing a pooling scheme, dominant-sparsity labels first.

    All labels whose exponent equals the maximum share the first scheme; every
    other label gets a scheme of its own.
    """
    top = spec.theta_max
    groups = [tuple(i + 1 for i, t in enumerate(spec.theta) if t == top)]
    groups += [(i + 1,) for i, t in enumerate(spec.theta) if t != top]
    return groups


def group_spec(spec: ProblemSpec, labels: Sequence[int]) -> ProblemSpec:
    """Single-label spec driving the parameters of the scheme serving ``labels``."""
    i = labels[0] - 1
    k = None if spec.explicit_k is None else (max(spec.explicit_k[l - 1] for l in labels),)
    return ProblemSpec(n=spec.n, theta=(spec.theta[i],), delta=spec.delta, explicit_k=k)
