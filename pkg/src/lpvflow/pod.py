"""Nested POD bases and the two-level affine LPV approximation.

With POD modes ``v_1..v_k`` (the first ``r`` of which define the scheduling
parameter ``rho = V_r^T x``) the reduced model is

    z' = [Abar_0 + sum_{i<=r} z_i Abar_i] z + Bbar u,     y = Cbar z,

where ``Abar_0 = V_k^T A0 V_k`` and ``Abar_i = V_k^T L(v_i) V_k``.  Since
``V_r`` is the leading block of ``V_k`` the parameter is the first ``r``
components of the reduced state.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import DimensionError, ParameterOrderError, RankDeficientWarning
from .sdc import QuadraticSystem, coefficient_operator

logger = logging.getLogger(__name__)

__all__ = [
    "PodBasis",
    "pod_basis",
    "encode",
    "decode",
    "projection_error",
    "AffineLpvModel",
    "build_affine_lpv",
    "lti_model",
    "lpv_rhs",
    "lpv_jacobian",
    "rotate_parameters",
    "save_model",
    "load_model",
]

FULL_AI_CAP = 512


def _sign_normalize(U: np.ndarray) -> np.ndarray:
    """Flip columns so each column's largest-magnitude entry is positive."""
    if U.size == 0:
        return U
    pivots = U[np.argmax(np.abs(U), axis=0), np.arange(U.shape[1])]
    return U * np.where(pivots < 0, -1.0, 1.0)


@dataclass(frozen=True, eq=False)
class PodBasis:
    V: np.ndarray
    singular_values: np.ndarray
    rank_deficient: bool = False

    def __post_init__(self):
        V = np.array(self.V, dtype=float)
        s = np.array(self.singular_values, dtype=float).ravel()
        if V.ndim != 2:
            raise DimensionError("basis must be a matrix")
        V.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "singular_values", s)

    @property
    def k(self) -> int:
        return self.V.shape[1]

    @property
    def n(self) -> int:
        return self.V.shape[0]

    def leading(self, m: int) -> np.ndarray:
        if m > self.k:
            raise DimensionError(f"basis has only {self.k} modes, asked for {m}")
        return self.V[:, :m]

    @classmethod
    def identity(cls, n: int) -> "PodBasis":
        """Trivial basis ``V = I`` (the exact embedding ``rho = x``)."""
        return cls(np.eye(n), np.ones(n))


def pod_basis(S, k: int) -> PodBasis:
    """Leading ``k`` left singular vectors of the snapshot matrix ``S``.

    If ``k`` exceeds the numerical rank a :class:`RankDeficientWarning` is
    issued and the basis of attained rank is returned with
    ``rank_deficient=True``.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2:
        raise DimensionError("snapshot matrix must be two-dimensional")
    n, N = S.shape
    if k < 1 or k > min(n, N):
        raise DimensionError(f"k={k} must lie in [1, min(n, N)={min(n, N)}]")
    if not np.any(S):
        raise DimensionError("snapshot matrix is zero")
    U, s, _ = np.linalg.svd(S, full_matrices=False)
    rank = int(np.sum(s > max(n, N) * np.finfo(float).eps * s[0]))
    deficient = k > rank
    if deficient:
        warnings.warn(f"requested k={k} exceeds numerical rank {rank}; returning {rank} modes",
                      RankDeficientWarning, stacklevel=2)
        k = rank
    return PodBasis(_sign_normalize(U[:, :k]), s, deficient)


def encode(V, x) -> np.ndarray:
    V = np.asarray(V)
    x = np.asarray(x, dtype=float)
    if x.shape[0] != V.shape[0]:
        raise DimensionError(f"state length {x.shape[0]} does not match basis rows {V.shape[0]}")
    return V.T @ x


def decode(V, rho) -> np.ndarray:
    V = np.asarray(V)
    rho = np.asarray(rho, dtype=float)
    if rho.shape[0] != V.shape[1]:
        raise DimensionError(f"coefficient length {rho.shape[0]} does not match basis columns {V.shape[1]}")
    return V @ rho


def projection_error(S, V) -> float:
    """Squared Frobenius norm of ``S - V V^T S``."""
    S = np.asarray(S, dtype=float)
    return float(np.linalg.norm(S - V @ (V.T @ S), "fro") ** 2)


@dataclass(frozen=True, eq=False)
class AffineLpvModel:
    """Reduced self-scheduled LPV model.

    ``Abar`` has shape ``(r + 1, k, k)`` with ``Abar[0]`` the constant part.
    """

    Abar: np.ndarray
    Bbar: np.ndarray
    Cbar: np.ndarray
    V_r: np.ndarray
    V_k: np.ndarray
    full_Ai: np.ndarray | None = None
    singular_values: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        Abar = np.array(self.Abar, dtype=float)
        if Abar.ndim != 3 or Abar.shape[1] != Abar.shape[2]:
            raise DimensionError("Abar must have shape (r + 1, k, k)")
        r, k = Abar.shape[0] - 1, Abar.shape[1]
        if r > k:
            raise ParameterOrderError(f"r={r} exceeds k={k}")
        V_r = np.array(self.V_r, dtype=float)
        V_k = np.array(self.V_k, dtype=float)
        if V_r.shape[1] != r or V_k.shape[1] != k or V_r.shape[0] != V_k.shape[0]:
            raise DimensionError("basis shapes inconsistent with Abar")
        if not np.array_equal(V_k[:, :r], V_r):
            raise DimensionError("V_r must equal the leading columns of V_k")
        Bbar = np.array(self.Bbar, dtype=float).reshape(k, -1)
        Cbar = np.array(self.Cbar, dtype=float).reshape(-1, k)
        arrays = {"Abar": Abar, "Bbar": Bbar, "Cbar": Cbar, "V_r": V_r, "V_k": V_k}
        if self.full_Ai is not None:
            arrays["full_Ai"] = np.array(self.full_Ai, dtype=float)
        if self.singular_values is not None:
            arrays["singular_values"] = np.array(self.singular_values, dtype=float)
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def r(self) -> int:
        return self.Abar.shape[0] - 1

    @property
    def k(self) -> int:
        return self.Abar.shape[1]

    @property
    def n(self) -> int:
        return self.V_k.shape[0]

    @property
    def p(self) -> int:
        return self.Bbar.shape[1]

    @property
    def q(self) -> int:
        return self.Cbar.shape[0]

    def A_of(self, rho) -> np.ndarray:
        """System matrix ``Abar_0 + sum_i rho_i Abar_i`` at a frozen parameter."""
        rho = np.asarray(rho, dtype=float)
        if rho.shape != (self.r,):
            raise DimensionError(f"parameter must have shape ({self.r},)")
        return self.Abar[0] + np.tensordot(rho, self.Abar[1:], axes=1)

    def scheduling(self, z) -> np.ndarray:
        return np.asarray(z)[: self.r]


def build_affine_lpv(sys: QuadraticSystem, basis: PodBasis, r: int, k: int, *, full_cap: int = FULL_AI_CAP) -> AffineLpvModel:
    """Assemble ``Abar_0..Abar_r``, ``Bbar`` and ``Cbar`` from a nested basis.

    ``A_i = L(v_i)`` is formed from the sparse tensor; the dense full-order
    coefficients are kept only when ``n <= full_cap``.
    """
    if r > k:
        raise ParameterOrderError(f"r={r} must not exceed k={k}")
    if r < 1:
        raise ParameterOrderError("r must be at least 1")
    if k > basis.k:
        raise DimensionError(f"basis has {basis.k} modes, k={k} requested")
    if basis.n != sys.n:
        raise DimensionError("basis rows do not match the system dimension")
    V_k = basis.leading(k)
    V_r = V_k[:, :r]
    Abar = np.empty((r + 1, k, k))
    Abar[0] = V_k.T @ sys.A0 @ V_k
    keep_full = sys.n <= full_cap
    full = np.empty((r, sys.n, sys.n)) if keep_full else None
    for i in range(r):
        L = coefficient_operator(sys, V_r[:, i])
        Abar[i + 1] = V_k.T @ (L @ V_k)
        if keep_full:
            full[i] = L.toarray()
    return AffineLpvModel(
        Abar=Abar,
        Bbar=V_k.T @ sys.B,
        Cbar=sys.C @ V_k,
        V_r=V_r,
        V_k=V_k,
        full_Ai=full,
        singular_values=basis.singular_values,
        meta={"source": sys.name, "n": sys.n},
    )


def lti_model(A, B, C) -> AffineLpvModel:
    """Wrap an LTI system as a one-parameter model whose parameter has no effect."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    k = A.shape[0]
    Abar = np.stack([A, np.zeros((k, k))])
    V = np.eye(k)
    return AffineLpvModel(Abar=Abar, Bbar=B, Cbar=C, V_r=V[:, :1], V_k=V, meta={"source": "lti"})


def lpv_rhs(model: AffineLpvModel, z, u=None) -> np.ndarray:
    """Evaluate the self-scheduled reduced right-hand side."""
    z = np.asarray(z, dtype=float)
    if z.shape != (model.k,):
        raise DimensionError(f"reduced state must have shape ({model.k},), got {z.shape}")
    out = model.A_of(z[: model.r]) @ z
    if u is not None:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if u.shape != (model.p,):
            raise DimensionError(f"input must have shape ({model.p},)")
        out = out + model.Bbar @ u
    return out


def lpv_jacobian(model: AffineLpvModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    J = model.A_of(z[: model.r]).copy()
    J[:, : model.r] += np.einsum("ijk,k->ji", model.Abar[1:], z)
    return J


def rotate_parameters(model: AffineLpvModel, U) -> AffineLpvModel:
    """Re-express ``model`` in rotated parameter coordinates ``rho' = U^T rho``.

    The reduced basis becomes ``V_k diag(U, I)``, the coefficients become
    ``Abar'_i = sum_j U_ji Abar_j`` (then congruence-transformed).
    """
    U = np.asarray(U, dtype=float)
    r, k = model.r, model.k
    if U.shape != (r, r):
        raise DimensionError(f"rotation must be {r}x{r}")
    T = np.eye(k)
    T[:r, :r] = U
    mixed = np.tensordot(U.T, model.Abar[1:], axes=1)
    Abar = np.empty_like(model.Abar)
    Abar[0] = T.T @ model.Abar[0] @ T
    for i in range(r):
        Abar[i + 1] = T.T @ mixed[i] @ T
    full = None
    if model.full_Ai is not None:
        full = np.tensordot(U.T, model.full_Ai, axes=1)
    V_k = model.V_k @ T
    return AffineLpvModel(
        Abar=Abar,
        Bbar=T.T @ model.Bbar,
        Cbar=model.Cbar @ T,
        V_r=V_k[:, :r].copy(),
        V_k=V_k,
        full_Ai=full,
        singular_values=model.singular_values,
        meta={**model.meta, "rotated": True},
    )


def save_model(model: AffineLpvModel, directory) -> dict:
    """Write a bundle: JSON manifest plus one Matrix Market file per matrix."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    for i in range(model.r + 1):
        files[f"Abar_{i}"] = io.write_mtx(d / f"Abar_{i}.mtx", model.Abar[i]).name
    for name in ("Bbar", "Cbar", "V_r", "V_k"):
        files[name] = io.write_mtx(d / f"{name}.mtx", getattr(model, name)).name
    manifest = {
        "type": "AffineLpvModel",
        "n": model.n,
        "p": model.p,
        "q": model.q,
        "r": model.r,
        "k": model.k,
        "singular_values": model.singular_values if model.singular_values is not None else [],
        "meta": model.meta,
        "files": files,
    }
    io.write_json(d / "manifest.json", manifest)
    return manifest


def load_model(directory) -> AffineLpvModel:
    d = Path(directory)
    man = io.read_json(d / "manifest.json")
    f = man["files"]
    Abar = np.stack([io.read_mtx(d / f[f"Abar_{i}"]) for i in range(man["r"] + 1)])
    sv = np.array(man.get("singular_values") or [], dtype=float)
    return AffineLpvModel(
        Abar=Abar,
        Bbar=io.read_mtx(d / f["Bbar"]),
        Cbar=io.read_mtx(d / f["Cbar"]),
        V_r=io.read_mtx(d / f["V_r"]),
        V_k=io.read_mtx(d / f["V_k"]),
        singular_values=sv if sv.size else None,
        meta=man.get("meta", {}),
    )
