"""Operating points, policy evaluation, and heuristic rate minimization.

A policy is a pair of conditional kernels: the forward side picks the action
and the index sent ahead of the channel use, p(a, u | z) (plus the third
node's reconstruction in heegard-berger mode), and the backward side picks
the reply index, p(v | a, u, y[, xhat3]).  ``evaluate_point`` turns a policy
into the rate pair it earns together with the Bayes-optimal distortions and
the expected action cost.  ``minimize_r1`` searches policy space for the
smallest forward rate meeting distortion and cost targets.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ProblemSpec
from .probability import Alphabet, JointPmf, Kernel, TableError, product_joint

FEASIBILITY_TOL = 1e-7
_SEED_FLOOR = 1e-12
_SNAP_THRESHOLD = 1e-8
_SNAP_THRESHOLDS = (1e-8, 1e-5, 1e-3, 2e-2)
_INF_MASS_WEIGHT = 1e3


@dataclass(frozen=True)
class Policy:
    """Forward and backward kernels of one coding strategy."""

    forward: Kernel
    backward: Kernel
    enforce_cardinality: bool = False

    def __post_init__(self) -> None:
        n_out = len(self.forward.outputs)
        if len(self.forward.inputs) != 1 or n_out not in (2, 3):
            raise TableError("policy forward kernel must map z to (a, u) or (a, u, xhat3)")
        expected_back = (self.forward.outputs[0], self.forward.outputs[1])
        if len(self.backward.inputs) != n_out + 1 or len(self.backward.outputs) != 1:
            raise TableError("policy backward kernel must map (a, u, y[, xhat3]) to v")
        if self.backward.inputs[:2] != expected_back:
            raise TableError("policy backward kernel must condition on the forward (a, u) alphabets")
        if n_out == 3 and self.backward.inputs[3] != self.forward.outputs[2]:
            raise TableError("policy backward kernel must condition on the forward xhat3 alphabet")
        if self.enforce_cardinality:
            nz, na = len(self.z_alpha), len(self.a_alpha)
            ny = len(self.y_alpha)
            if len(self.u_alpha) > nz * na + 3:
                raise TableError(
                    f"|U| = {len(self.u_alpha)} exceeds the sufficient size {nz * na + 3}"
                )
            if len(self.v_alpha) > len(self.u_alpha) * ny * na + 1:
                raise TableError(
                    f"|V| = {len(self.v_alpha)} exceeds the sufficient size "
                    f"{len(self.u_alpha) * ny * na + 1}"
                )

    @property
    def z_alpha(self) -> Alphabet:
        return self.forward.inputs[0]

    @property
    def a_alpha(self) -> Alphabet:
        return self.forward.outputs[0]

    @property
    def u_alpha(self) -> Alphabet:
        return self.forward.outputs[1]

    @property
    def y_alpha(self) -> Alphabet:
        return self.backward.inputs[2]

    @property
    def v_alpha(self) -> Alphabet:
        return self.backward.outputs[0]

    @property
    def hb(self) -> bool:
        return len(self.forward.outputs) == 3


@dataclass(frozen=True)
class OperatingPoint:
    """Rates, Bayes distortions, and expected action cost of one policy."""

    r1: float
    r2: float
    d1: float
    d2: float
    gamma: float
    d3: float | None = None

    def __post_init__(self) -> None:
        if self.r1 < -1e-9 or self.r2 < -1e-9:
            raise ValueError(f"negative rate in operating point: r1={self.r1}, r2={self.r2}")
        if self.gamma < -1e-12:
            raise ValueError(f"negative action cost {self.gamma}")

    @property
    def feasible(self) -> bool:
        """False when some distortion average touched a forbidden (+inf) cell."""
        values = [self.d1, self.d2] + ([] if self.d3 is None else [self.d3])
        return all(np.isfinite(v) for v in values)


@dataclass(frozen=True)
class Targets:
    """Constraint levels for the search: distortions and action-cost budget."""

    d1: float
    d2: float
    d3: float | None = None
    gamma: float | None = None

    def __post_init__(self) -> None:
        if self.d1 < 0.0 or self.d2 < 0.0 or (self.d3 is not None and self.d3 < 0.0):
            raise ValueError("distortion targets must be nonnegative")
        if self.gamma is not None and self.gamma < 0.0:
            raise ValueError("cost budget must be nonnegative")


@dataclass(frozen=True)
class OptimizerConfig:
    restarts: int = 8
    max_iters: int = 40
    penalty_schedule: tuple[float, ...] = (1e2, 1e4, 1e6, 1e8)
    step_tolerance: float = 1e-9
    rng_seed: int = 0
    hops: int = 2
    cardinality_override: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.hops < 0:
            raise ValueError("hops must be nonnegative")
        sched = tuple(float(w) for w in self.penalty_schedule)
        if not sched or any(w <= 0 for w in sched) or any(
            b <= a for a, b in zip(sched, sched[1:])
        ):
            raise ValueError("penalty_schedule must be positive and strictly increasing")
        object.__setattr__(self, "penalty_schedule", sched)
        if self.cardinality_override is not None:
            nu, nv = self.cardinality_override
            if nu < 1 or nv < 1:
                raise ValueError("cardinality override sizes must be positive")


@dataclass(frozen=True)
class MinimizeResult:
    """Best policy found by minimize_r1 with its constraint residuals."""

    point: OperatingPoint
    policy: Policy
    residuals: dict
    feasible: bool


@dataclass(frozen=True)
class SweepEntry:
    gamma: float
    result: MinimizeResult


def aux_alphabet(prefix: str, size: int) -> Alphabet:
    return Alphabet(prefix, tuple(f"{prefix}{i}" for i in range(size)))


def default_cardinalities(spec: ProblemSpec) -> tuple[int, int]:
    """Sufficient index-set sizes: |U| = |Z||A|+3 and |V| = |U||Y||A|+1, capped at 16."""
    nu = len(spec.z_alpha) * len(spec.a_alpha) + 3
    nv = min(nu * len(spec.y_alpha) * len(spec.a_alpha) + 1, 16)
    return nu, nv


def random_policy(spec: ProblemSpec, nu: int, nv: int, rng: np.random.Generator) -> Policy:
    """A fully random policy with Dirichlet(1) rows at the given index sizes."""
    f_table, b_table = _random_arrays(spec, nu, nv, rng)
    return _policy_from_arrays(spec, f_table, b_table)


def _forward_shape(spec: ProblemSpec, nu: int) -> tuple[int, ...]:
    shape = (len(spec.z_alpha), len(spec.a_alpha), nu)
    if spec.mode == "heegard-berger":
        shape += (len(spec.xhat3_alpha),)
    return shape


def _backward_shape(spec: ProblemSpec, nu: int, nv: int) -> tuple[int, ...]:
    shape = (len(spec.a_alpha), nu, len(spec.y_alpha))
    if spec.mode == "heegard-berger":
        shape += (len(spec.xhat3_alpha),)
    return shape + (nv,)


def _random_arrays(spec, nu, nv, rng):
    f_shape = _forward_shape(spec, nu)
    b_shape = _backward_shape(spec, nu, nv)
    f_cols = int(np.prod(f_shape[1:]))
    b_rows = int(np.prod(b_shape[:-1]))
    f_table = rng.dirichlet(np.ones(f_cols), size=f_shape[0]).reshape(f_shape)
    b_table = rng.dirichlet(np.ones(nv), size=b_rows).reshape(b_shape)
    return f_table, b_table


def _skeleton_forward(spec, nu, rng):
    """A random start whose description letter is a function of Z.

    Frontier policies tend to use U as a (possibly merging) quantizer of
    Z with only the action mixed.  Seeding half the restarts this way
    lets the smooth action parameters settle by descent instead of
    hoping a fully random table falls into the right corner pattern.
    """
    shape = _forward_shape(spec, nu)
    nz, na = shape[0], shape[1]
    table = np.full(shape, 1e-6)
    actions = rng.dirichlet(np.ones(na), size=nz)
    for z in range(nz):
        sel = (z, slice(None)) + tuple(int(rng.integers(n)) for n in shape[2:])
        table[sel] = actions[z]
    return table / table.sum(axis=tuple(range(1, table.ndim)), keepdims=True)


def _identity_backward(spec, nu, nv):
    """The backward kernel that relays Y verbatim, padded to nv letters.

    For any forward kernel this attains the smallest achievable d1: every
    other backward choice hands the decoder a garbling of (A, U, Y).
    Only valid when nv is at least the size of the Y alphabet.
    """
    ny = len(spec.y_alpha.symbols)
    shape = _backward_shape(spec, nu, nv)
    eye = np.zeros((ny, nv))
    eye[np.arange(ny), np.arange(ny)] = 1.0
    expand = (1, 1, ny) + (1,) * (len(shape) - 4) + (nv,)
    return np.broadcast_to(eye.reshape(expand), shape).copy()


def _policy_from_arrays(spec: ProblemSpec, f_table, b_table) -> Policy:
    nu = f_table.shape[2]
    nv = b_table.shape[-1]
    u = aux_alphabet("u", nu)
    v = aux_alphabet("v", nv)
    fwd_outs = (spec.a_alpha, u)
    back_ins = (spec.a_alpha, u, spec.y_alpha)
    if spec.mode == "heegard-berger":
        fwd_outs += (spec.xhat3_alpha,)
        back_ins += (spec.xhat3_alpha,)
    return Policy(
        forward=Kernel((spec.z_alpha,), fwd_outs, f_table),
        backward=Kernel(back_ins, (v,), b_table),
    )


def _check_compatible(spec: ProblemSpec, policy: Policy) -> None:
    hb = spec.mode == "heegard-berger"
    if policy.hb != hb:
        raise TableError(f"policy shape does not match spec mode {spec.mode!r}")
    pairs = [
        ("z", policy.z_alpha, spec.z_alpha),
        ("a", policy.a_alpha, spec.a_alpha),
        ("y", policy.y_alpha, spec.y_alpha),
    ]
    if hb:
        pairs.append(("xhat3", policy.forward.outputs[2], spec.xhat3_alpha))
    for name, got, want in pairs:
        if got.symbols != want.symbols:
            raise TableError(f"policy {name} alphabet {got.symbols} != spec {want.symbols}")


def assemble_joint(spec: ProblemSpec, policy: Policy) -> JointPmf:
    """The joint law of (X, Z, A, U[, Xhat3], Y, V) under the spec and policy."""
    _check_compatible(spec, policy)
    hb = policy.hb
    variables = [
        ("x", spec.x_alpha),
        ("z", spec.z_alpha),
        ("a", spec.a_alpha),
        ("u", policy.u_alpha),
    ]
    fwd_axes = ["z", "a", "u"]
    back_axes = ["a", "u", "y"]
    if hb:
        variables.append(("xhat3", spec.xhat3_alpha))
        fwd_axes.append("xhat3")
        back_axes.append("xhat3")
    variables += [("y", spec.y_alpha), ("v", policy.v_alpha)]
    factors = [
        (spec.source.table, ["x", "z"]),
        (policy.forward.table, fwd_axes),
        (spec.vending.table, ["a", "x", "z", "y"]),
        (policy.backward.table, back_axes + ["v"]),
    ]
    return product_joint(tuple(variables), factors)


def markov_chains(spec: ProblemSpec) -> list[tuple[list, list, list]]:
    """The conditional-independence chains the factorization must satisfy."""
    if spec.mode == "heegard-berger":
        return [
            (["u", "xhat3"], ["z", "a"], ["y"]),
            (["v"], ["a", "u", "y", "xhat3"], ["z"]),
        ]
    return [(["u"], ["z", "a"], ["y"]), (["v"], ["a", "u", "y"], ["x"])]


def bayes_decoder(
    joint: JointPmf,
    observed: Sequence[str],
    metric: np.ndarray,
    recon: Alphabet,
) -> tuple[dict, float]:
    """Optimal deterministic decoder from the observed variables.

    Returns the decoding map {observed symbols -> reconstruction symbol} and
    the distortion it achieves.  Ties pick the earliest reconstruction symbol;
    observation tuples with zero probability are left out of the map.  The
    achieved distortion is +inf when some positive-probability observation
    only has forbidden reconstructions.
    """
    from .probability import marginalize

    obs = tuple(observed)
    uniq = tuple(dict.fromkeys(("x", "y", "z") + obs))
    marg = marginalize(joint, uniq)
    p = marg.table.transpose(tuple(marg.names.index(n) for n in uniq))
    # give every observed variable its own trailing axis; the indicator copy
    # keeps observations that are themselves x, y, or z consistent
    for name in obs:
        src = uniq.index(name)
        k = p.shape[src]
        shape = [1] * (p.ndim + 1)
        shape[src] = k
        shape[-1] = k
        p = p[..., None] * np.eye(k).reshape(shape)
    p = p.sum(axis=tuple(range(3, len(uniq))))
    obs_sizes = p.shape[3:]
    p2 = p.reshape(p.shape[0], p.shape[1], p.shape[2], -1)
    metric = np.asarray(metric, dtype=float)
    finite = np.isfinite(metric)
    w_fin = np.einsum("xyzo,xyzk->ok", p2, np.where(finite, metric, 0.0))
    w_inf = np.einsum("xyzo,xyzk->ok", p2, (~finite).astype(float))
    w = np.where(w_inf > 0.0, np.inf, w_fin)
    p_obs = p2.sum(axis=(0, 1, 2))
    choice = np.argmin(w, axis=1)
    total = float(np.where(p_obs > 0.0, w[np.arange(w.shape[0]), choice], 0.0).sum())
    mapping = {}
    alphas = [joint.alphabet(n) for n in obs]
    for flat in np.nonzero(p_obs > 0.0)[0]:
        idx = np.unravel_index(flat, obs_sizes)
        key = tuple(al.symbols[i] for al, i in zip(alphas, idx))
        mapping[key] = recon.symbols[int(choice[flat])]
    return mapping, total


def _entropy_of(p: np.ndarray) -> float:
    # Hot path; the additive floor keeps 0 log 0 = 0 without masking.
    return float(-np.sum(p * np.log2(p + 1e-300)))


class _EvalContext:
    """Precompiled tables for fast repeated policy evaluation on one spec."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.hb = spec.mode == "heegard-berger"
        S = spec.source.table
        self.pz = S.sum(axis=0)
        self.hz = _entropy_of(self.pz)
        self.cost = spec.cost
        SV = S[None, :, :, None] * spec.vending.table
        self.SV = SV
        self.c1_fin, self.c1_inf = self._metric_terms(SV, spec.d1)
        self.c2_fin, self.c2_inf = self._metric_terms(SV, spec.d2)
        if self.hb:
            d3 = spec.d3
            fin = np.isfinite(d3)
            # collapse x and y straight away: d3 is averaged, not decoded
            self.c3_fin = np.einsum("axzy,xyzw->azw", SV, np.where(fin, d3, 0.0))
            self.c3_inf = np.einsum("axzy,xyzw->azw", SV, (~fin).astype(float))

    @staticmethod
    def _metric_terms(SV, metric):
        fin = np.isfinite(metric)
        c_fin = np.einsum("axzy,xyzk->azyk", SV, np.where(fin, metric, 0.0))
        c_inf = np.einsum("axzy,xyzk->azyk", SV, (~fin).astype(float))
        if not c_inf.any():
            c_inf = None
        return c_fin, c_inf

    def evaluate(self, f_table: np.ndarray, b_table: np.ndarray) -> dict:
        if self.hb:
            return self._evaluate_hb(f_table, b_table)
        F, B = f_table, b_table
        pzau = self.pz[:, None, None] * F
        pza = pzau.sum(axis=2)
        gamma = float((pza.sum(axis=0) * self.cost).sum())
        pzauy = np.einsum("axzy,zau->zauy", self.SV, F)
        pzay = pzauy.sum(axis=2)
        pay = pzay.sum(axis=0)
        r1 = (
            self.hz
            + _entropy_of(pza.sum(axis=0))
            - _entropy_of(pza)
            + _entropy_of(pzay)
            + _entropy_of(pzauy.sum(axis=0))
            - _entropy_of(pzauy)
            - _entropy_of(pay)
        )
        pzauyv = np.einsum("zauy,auyv->zauyv", pzauy, B)
        r2 = (
            _entropy_of(pzauy)
            + _entropy_of(pzauyv.sum(axis=3))
            - _entropy_of(pzauyv)
            - _entropy_of(pzau)
        )
        fb = np.einsum("zau,auyv->zayv", F, B)
        d1_fin, d1_inf = self._decode(np.einsum("zayv,azyk->vzk", fb, self.c1_fin), fb, self.c1_inf, "zayv,azyk->vzk")
        d2_fin, d2_inf = self._decode(np.einsum("zau,azyk->uyk", F, self.c2_fin), F, self.c2_inf, "zau,azyk->uyk")
        return {
            "r1": max(r1, 0.0),
            "r2": max(r2, 0.0),
            "gamma": gamma,
            "d1": d1_fin,
            "d1_inf_mass": d1_inf,
            "d2": d2_fin,
            "d2_inf_mass": d2_inf,
        }

    def _evaluate_hb(self, F: np.ndarray, B: np.ndarray) -> dict:
        pzauw = self.pz[:, None, None, None] * F
        pzaw = pzauw.sum(axis=2)
        pza = pzaw.sum(axis=2)
        pa = pza.sum(axis=0)
        gamma = float((pa * self.cost).sum())
        pzauwy = np.einsum("axzy,zauw->zauwy", self.SV, F)
        pzawy = pzauwy.sum(axis=2)
        h_pza = _entropy_of(pza)
        i_za = self.hz + _entropy_of(pa) - h_pza
        i_zw_a = h_pza + _entropy_of(pzaw.sum(axis=0)) - _entropy_of(pzaw) - _entropy_of(pa)
        i_zu_ayw = (
            _entropy_of(pzawy)
            + _entropy_of(pzauwy.sum(axis=0))
            - _entropy_of(pzauwy)
            - _entropy_of(pzawy.sum(axis=0))
        )
        r1 = i_za + i_zw_a + i_zu_ayw
        pzauwyv = np.einsum("zauwy,auywv->zauwyv", pzauwy, B)
        r2 = (
            _entropy_of(pzauwy)
            + _entropy_of(pzauwyv.sum(axis=4))
            - _entropy_of(pzauwyv)
            - _entropy_of(pzauw)
        )
        fb = np.einsum("zauw,auywv->zayv", F, B)
        d1_fin, d1_inf = self._decode(np.einsum("zayv,azyk->vzk", fb, self.c1_fin), fb, self.c1_inf, "zayv,azyk->vzk")
        Fu = F.sum(axis=3)
        d2_fin, d2_inf = self._decode(np.einsum("zau,azyk->uyk", Fu, self.c2_fin), Fu, self.c2_inf, "zau,azyk->uyk")
        Fw = F.sum(axis=2)
        d3_fin = float(np.einsum("zaw,azw->", Fw, self.c3_fin))
        d3_inf = float(np.einsum("zaw,azw->", Fw, self.c3_inf))
        return {
            "r1": max(r1, 0.0),
            "r2": max(r2, 0.0),
            "gamma": gamma,
            "d1": d1_fin,
            "d1_inf_mass": d1_inf,
            "d2": d2_fin,
            "d2_inf_mass": d2_inf,
            "d3": d3_fin,
            "d3_inf_mass": d3_inf,
        }

    @staticmethod
    def _decode(w_fin, left, c_inf, subscript) -> tuple[float, float]:
        """Sum of per-observation minima, tracking mass on forbidden cells."""
        if c_inf is None:
            flat = w_fin.reshape(-1, w_fin.shape[-1])
            return float(flat.min(axis=1).sum()), 0.0
        w_inf = np.einsum(subscript, left, c_inf)
        w = np.where(w_inf > 0.0, np.inf, w_fin).reshape(-1, w_fin.shape[-1])
        mins = w.min(axis=1)
        bad = ~np.isfinite(mins)
        inf_mass = float(w_inf.reshape(-1, w_inf.shape[-1]).min(axis=1)[bad].sum()) if bad.any() else 0.0
        return float(mins[~bad].sum()), inf_mass


def _point_from_metrics(m: dict, hb: bool) -> OperatingPoint:
    d1 = np.inf if m["d1_inf_mass"] > 0.0 else m["d1"]
    d2 = np.inf if m["d2_inf_mass"] > 0.0 else m["d2"]
    d3 = None
    if hb:
        d3 = np.inf if m["d3_inf_mass"] > 0.0 else m["d3"]
    return OperatingPoint(r1=m["r1"], r2=m["r2"], d1=d1, d2=d2, gamma=m["gamma"], d3=d3)


def evaluate_point(spec: ProblemSpec, policy: Policy) -> OperatingPoint:
    """Rates, Bayes-decoded distortions, and action cost of one policy."""
    _check_compatible(spec, policy)
    ctx = _EvalContext(spec)
    metrics = ctx.evaluate(policy.forward.table, policy.backward.table)
    return _point_from_metrics(metrics, ctx.hb)


# --- policy serialization ---------------------------------------------------

def policy_to_document(policy: Policy) -> dict:
    from .model import _fmt

    doc = {
        "kind": "policy",
        "mode": "heegard-berger" if policy.hb else "indirect",
        "alphabets": {
            "z": list(policy.z_alpha.symbols),
            "a": list(policy.a_alpha.symbols),
            "u": list(policy.u_alpha.symbols),
            "y": list(policy.y_alpha.symbols),
            "v": list(policy.v_alpha.symbols),
        },
    }
    if policy.hb:
        doc["alphabets"]["xhat3"] = list(policy.forward.outputs[2].symbols)
    fwd = {}
    f = policy.forward.table
    out_alphas = policy.forward.outputs
    for zi, zsym in enumerate(policy.z_alpha.symbols):
        row = {}
        block = f[zi]
        for idx in np.argwhere(block != 0.0):
            key = ",".join(al.symbols[i] for al, i in zip(out_alphas, idx))
            row[key] = _fmt(block[tuple(idx)])
        fwd[zsym] = row
    back = {}
    b = policy.backward.table
    in_alphas = policy.backward.inputs
    flat = b.reshape(-1, b.shape[-1])
    for r in range(flat.shape[0]):
        idx = np.unravel_index(r, b.shape[:-1])
        key = ",".join(al.symbols[i] for al, i in zip(in_alphas, idx))
        row = {
            policy.v_alpha.symbols[c]: _fmt(flat[r, c])
            for c in range(flat.shape[1])
            if flat[r, c] != 0.0
        }
        back[key] = row
    doc["forward"] = fwd
    doc["backward"] = back
    return doc


def policy_from_document(doc: dict) -> Policy:
    from .model import SpecFormatError, _key_to_indices, _parse_number, _require

    if doc.get("kind") != "policy":
        raise SpecFormatError("kind: expected a policy document")
    mode = _require(doc, "mode", "policy")
    hb = mode == "heegard-berger"
    raw = _require(doc, "alphabets", "policy")
    names = ["z", "a", "u", "y", "v"] + (["xhat3"] if hb else [])
    alphas = {}
    for name in names:
        syms = _require(raw, name, "policy.alphabets")
        if not isinstance(syms, list) or not all(isinstance(s, str) for s in syms):
            raise SpecFormatError(f"policy.alphabets.{name}: expected a list of strings")
        alphas[name] = Alphabet(name, tuple(syms))
    fwd_outs = (alphas["a"], alphas["u"]) + ((alphas["xhat3"],) if hb else ())
    f_shape = (len(alphas["z"]),) + tuple(len(al) for al in fwd_outs)
    f_table = np.zeros(f_shape)
    for zsym, row in _require(doc, "forward", "policy").items():
        zi = alphas["z"].index(zsym)
        for key, val in row.items():
            idx = _key_to_indices(key, fwd_outs, "policy.forward")
            f_table[(zi,) + idx] = _parse_number(val, f"policy.forward[{zsym!r}][{key!r}]")
    back_ins = (alphas["a"], alphas["u"], alphas["y"]) + ((alphas["xhat3"],) if hb else ())
    b_shape = tuple(len(al) for al in back_ins) + (len(alphas["v"]),)
    b_table = np.zeros(b_shape)
    for key, row in _require(doc, "backward", "policy").items():
        idx = _key_to_indices(key, back_ins, "policy.backward")
        for vsym, val in row.items():
            b_table[idx + (alphas["v"].index(vsym),)] = _parse_number(
                val, f"policy.backward[{key!r}][{vsym!r}]"
            )
    try:
        return Policy(
            forward=Kernel((alphas["z"],), fwd_outs, f_table),
            backward=Kernel(back_ins, (alphas["v"],), b_table),
        )
    except TableError as exc:
        raise SpecFormatError(str(exc)) from None


def save_policy(policy: Policy, path) -> None:
    import json
    from pathlib import Path

    Path(path).write_text(json.dumps(policy_to_document(policy), indent=2) + "\n")


def load_policy(path) -> Policy:
    import json
    from pathlib import Path

    from .model import SpecFormatError

    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SpecFormatError(
            f"policy: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from None
    return policy_from_document(doc)


# --- penalty-descent search -------------------------------------------------

def _worker_count(n_tasks: int) -> int:
    cap_raw = os.environ.get("VENDINGRD_THREADS")
    workers = min(os.cpu_count() or 1, n_tasks)
    if cap_raw:
        try:
            workers = min(workers, int(cap_raw))
        except ValueError:
            raise ValueError(f"VENDINGRD_THREADS must be an integer, got {cap_raw!r}") from None
    return max(1, workers)


def _softmax(theta: np.ndarray, n_in_axes: int) -> np.ndarray:
    out_axes = tuple(range(n_in_axes, theta.ndim))
    shifted = theta - theta.max(axis=out_axes, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=out_axes, keepdims=True)


def _violations(m: dict, targets: Targets, hb: bool) -> dict:
    res = {
        "d1": max(0.0, m["d1"] - targets.d1) + _INF_MASS_WEIGHT * m["d1_inf_mass"],
        "d2": max(0.0, m["d2"] - targets.d2) + _INF_MASS_WEIGHT * m["d2_inf_mass"],
        "gamma": max(0.0, m["gamma"] - targets.gamma),
    }
    if hb and targets.d3 is not None:
        res["d3"] = max(0.0, m["d3"] - targets.d3) + _INF_MASS_WEIGHT * m["d3_inf_mass"]
    return res


def _true_residuals(point: OperatingPoint, targets: Targets) -> dict:
    res = {
        "d1": max(0.0, point.d1 - targets.d1),
        "d2": max(0.0, point.d2 - targets.d2),
        "gamma": max(0.0, point.gamma - targets.gamma),
    }
    if point.d3 is not None and targets.d3 is not None:
        res["d3"] = max(0.0, point.d3 - targets.d3)
    return res


def _snap_rows(table: np.ndarray, n_in_axes: int, cutoff: float = _SNAP_THRESHOLD) -> np.ndarray:
    out_axes = tuple(range(n_in_axes, table.ndim))
    snapped = np.where(table < cutoff, 0.0, table)
    sums = snapped.sum(axis=out_axes, keepdims=True)
    ok = sums > 0.0
    snapped = np.where(ok, snapped / np.where(ok, sums, 1.0), table)
    return snapped


class _Search:
    """One seeded restart of coordinate penalty descent."""

    def __init__(self, ctx, targets, config, theta_f, theta_b, skip_backward, b_exact=None):
        self.ctx = ctx
        self.targets = targets
        self.config = config
        self.theta_f = theta_f
        self.theta_b = theta_b
        self.b_exact = b_exact
        self.skip_backward = skip_backward or b_exact is not None
        self.weight = config.penalty_schedule[0]
        self.f_steps = np.ones(theta_f.shape[0])
        b_rows = int(np.prod(theta_b.shape[:-1]))
        self.b_steps = np.ones(b_rows)
        self.joint_step = 1.0

    def objective(self) -> float:
        m = self.metrics()
        viol = _violations(m, self.targets, self.ctx.hb)
        return m["r1"] + self.weight * sum(v * v for v in viol.values())

    def current_backward(self) -> np.ndarray:
        if self.b_exact is not None:
            return self.b_exact
        return _softmax(self.theta_b, self.theta_b.ndim - 1)

    def metrics(self) -> dict:
        F = _softmax(self.theta_f, 1)
        return self.ctx.evaluate(F, self.current_backward())

    def _improve_row(self, theta, row_sel, base, step):
        row = theta[row_sel]
        grad = np.empty(row.size)
        h = 1e-4
        flat = row.reshape(-1)
        for c in range(flat.size):
            old = flat[c]
            flat[c] = old + h
            grad[c] = (self.objective() - base) / h
            flat[c] = old
        direction = -(grad - grad.mean())
        norm = np.abs(direction).max()
        if norm < 1e-13:
            return base, step
        direction = (direction / norm).reshape(row.shape)
        best_val, best_s = base, 0.0
        s = step
        start = row.copy()
        tried_expand = False
        for _ in range(24):
            np.copyto(row, start + s * direction)
            val = self.objective()
            if val < best_val - 1e-15:
                best_val, best_s = val, s
                s *= 2.0
                tried_expand = True
            else:
                if tried_expand or s <= step * 2 ** -6:
                    break
                s *= 0.5
        if best_s == 0.0:
            np.copyto(row, start)
            return base, max(step * 0.5, 1e-4)
        np.copyto(row, start + best_s * direction)
        row -= row.max()
        return best_val, best_s

    def _improve_joint(self, base, step):
        """One full-gradient step over every row at once.

        Row-at-a-time descent stalls in valleys that need compensating
        moves across rows (raise one action probability, lower another,
        keep the expected cost fixed).  A joint step slides along them.
        """
        tensors = [self.theta_f]
        if not self.skip_backward:
            tensors.append(self.theta_b)
        h = 1e-4
        dirs = []
        for t in tensors:
            flat = t.reshape(-1)
            g = np.empty(flat.size)
            for c in range(flat.size):
                old = flat[c]
                flat[c] = old + h
                g[c] = (self.objective() - base) / h
                flat[c] = old
            if t is self.theta_f:
                rows = g.reshape(t.shape[0], -1)
            else:
                rows = g.reshape(-1, t.shape[-1])
            rows = rows - rows.mean(axis=1, keepdims=True)
            dirs.append(-rows.reshape(t.shape))
        norm = max(np.abs(d).max() for d in dirs)
        if norm < 1e-13:
            return base, step
        dirs = [d / norm for d in dirs]
        starts = [t.copy() for t in tensors]
        best_val, best_s = base, 0.0
        s = step
        tried_expand = False
        for _ in range(24):
            for t, st, d in zip(tensors, starts, dirs):
                np.copyto(t, st + s * d)
            val = self.objective()
            if val < best_val - 1e-15:
                best_val, best_s = val, s
                s *= 2.0
                tried_expand = True
            else:
                if tried_expand or s <= step * 2 ** -6:
                    break
                s *= 0.5
        if best_s == 0.0:
            for t, st in zip(tensors, starts):
                np.copyto(t, st)
            return base, max(step * 0.5, 1e-4)
        for t, st, d in zip(tensors, starts, dirs):
            np.copyto(t, st + best_s * d)
        self.theta_f -= self.theta_f.max(axis=tuple(range(1, self.theta_f.ndim)), keepdims=True)
        self.theta_b -= self.theta_b.max(axis=self.theta_b.ndim - 1, keepdims=True)
        return best_val, best_s

    def run(self, schedule: tuple[float, ...] | None = None) -> None:
        if schedule is None:
            schedule = self.config.penalty_schedule
        for weight in schedule:
            self.weight = weight
            base = self.objective()
            for _ in range(self.config.max_iters):
                before = base
                for r in range(self.theta_f.shape[0]):
                    base, self.f_steps[r] = self._improve_row(
                        self.theta_f, (r,), base, self.f_steps[r]
                    )
                if not self.skip_backward:
                    flat_b = self.theta_b.reshape(-1, self.theta_b.shape[-1])
                    for r in range(flat_b.shape[0]):
                        base, self.b_steps[r] = self._improve_row(
                            flat_b, (r,), base, self.b_steps[r]
                        )
                if before - base < self.config.step_tolerance:
                    break
            for _ in range(self.config.max_iters):
                before = base
                base, self.joint_step = self._improve_joint(base, self.joint_step)
                if before - base < self.config.step_tolerance:
                    break


def _run_restart(payload):
    ctx, targets, config, restart_idx, seed_arrays, skip_backward = payload
    spec = ctx.spec
    rng = np.random.default_rng(np.random.SeedSequence((config.rng_seed, restart_idx)))
    nu = _nu_from_ctx(ctx, config)
    nv = _nv_from_ctx(ctx, config)
    if seed_arrays is not None:
        F0, B0 = seed_arrays
        nu = F0.shape[2]
        nv = B0.shape[-1]
    else:
        F0, B0 = _random_arrays(spec, nu, nv, rng)
        if restart_idx % 2 == 0:
            F0 = _skeleton_forward(spec, nu, rng)
    b_exact = None
    if nv >= len(spec.y_alpha.symbols):
        b_exact = _identity_backward(spec, nu, nv)
    theta_f = np.log(np.maximum(F0, _SEED_FLOOR))
    theta_b = np.log(np.maximum(B0, _SEED_FLOOR))
    search = _Search(ctx, targets, config, theta_f, theta_b, skip_backward, b_exact)
    search.run()
    best = _judge_snapped(ctx, targets, search)
    sched = config.penalty_schedule
    # Re-descend from a mid weight so the kicked policy can restructure
    # before the top weight freezes it onto the feasible set.
    hop_sched = (sched[1], sched[-1]) if len(sched) > 2 else sched
    for hop_idx in range(config.hops):
        # Basin hop: soften the saturated logits, kick them, re-descend
        # through the upper penalty stages.  Row descent cannot move
        # action mass between observation symbols once a row has locked
        # in; a kick can.  Alternate between a plain noise kick and one
        # that keeps each row's description profile but redraws how the
        # actions attach to it.
        if hop_idx % 2 == 0:
            tf = _tempered(search.theta_f, 1) + rng.normal(0.0, 1.5, search.theta_f.shape)
        else:
            profile = _tempered(search.theta_f, 1).max(axis=1, keepdims=True)
            noise_shape = search.theta_f.shape[:2] + (1,) * (search.theta_f.ndim - 2)
            tf = profile + rng.normal(0.0, 2.0, noise_shape)
        tb = _tempered(search.theta_b, search.theta_b.ndim - 1) + rng.normal(
            0.0, 1.5, search.theta_b.shape
        )
        hop = _Search(ctx, targets, config, tf, tb, skip_backward, b_exact)
        hop.run(hop_sched)
        cand = _judge_snapped(ctx, targets, hop)
        if _better(cand, best):
            best = cand
            search = hop
    if seed_arrays is not None:
        # The penalty stages may wander off a hand-crafted start; never
        # return anything worse than the seed itself.
        as_given = _judge(ctx, targets, F0, B0)
        if _better(as_given, best):
            best = as_given
    return restart_idx, best


def _tempered(theta: np.ndarray, n_in_axes: int) -> np.ndarray:
    out_axes = tuple(range(n_in_axes, theta.ndim))
    shifted = theta - theta.max(axis=out_axes, keepdims=True)
    return np.clip(shifted, -6.0, 0.0)


def _judge_snapped(ctx, targets, search: "_Search"):
    F = _softmax(search.theta_f, 1)
    B = search.current_backward()
    best = _judge(ctx, targets, F, B)
    # Finite-difference descent cannot drive stray row mass much below
    # ~1e-5, which is enough to miss hard distortion targets.  Rounding
    # small entries away restores exact corners; try a few thresholds and
    # keep whichever evaluation judges best.
    for cutoff in _SNAP_THRESHOLDS:
        snapped = _judge(
            ctx,
            targets,
            _snap_rows(F, 1, cutoff),
            _snap_rows(B, B.ndim - 1, cutoff),
        )
        if _better(snapped, best):
            best = snapped
    return best


def _nu_from_ctx(ctx, config):
    if config.cardinality_override is not None:
        return config.cardinality_override[0]
    return default_cardinalities(ctx.spec)[0]


def _nv_from_ctx(ctx, config):
    if config.cardinality_override is not None:
        return config.cardinality_override[1]
    return default_cardinalities(ctx.spec)[1]


def _judge(ctx, targets, F, B):
    m = ctx.evaluate(F, B)
    point = _point_from_metrics(m, ctx.hb)
    residuals = _true_residuals(point, targets)
    worst = max(residuals.values())
    return {
        "F": F,
        "B": B,
        "point": point,
        "residuals": residuals,
        "worst": worst,
        "feasible": worst <= FEASIBILITY_TOL,
    }


def _better(cand, incumbent) -> bool:
    if cand["feasible"] != incumbent["feasible"]:
        return cand["feasible"]
    if not cand["feasible"]:
        return cand["worst"] < incumbent["worst"]
    gap = cand["point"].r1 - incumbent["point"].r1
    if abs(gap) > 1e-12:
        return gap < 0.0
    return cand["point"].r2 < incumbent["point"].r2 - 1e-12


def _slack_distortion_bound(spec: ProblemSpec, metric: np.ndarray) -> float:
    """A policy-independent upper bound on the Bayes distortion of a metric."""
    fin = np.isfinite(metric)
    risk = np.einsum(
        "xz,axzy,xyzk->ak",
        spec.source.table,
        spec.vending.table,
        np.where(fin, metric, 0.0),
    )
    mass_inf = np.einsum(
        "xz,axzy,xyzk->ak", spec.source.table, spec.vending.table, (~fin).astype(float)
    )
    risk = np.where(mass_inf > 0.0, np.inf, risk)
    return float(risk.max(axis=0).min())


def minimize_r1(
    spec: ProblemSpec,
    targets: Targets,
    config: OptimizerConfig = OptimizerConfig(),
    seeds: Sequence[Policy] = (),
) -> MinimizeResult:
    """Search for the cheapest forward rate meeting the targets.

    Exterior-penalty descent on softmax-parameterized kernels: the objective
    is r1 plus weighted squared constraint violations, with the weight swept
    over ``penalty_schedule``.  Restarts begin at the supplied seed policies
    and continue from Dirichlet-random ones; every restart is deterministic
    given (rng_seed, restart index) and the best feasible result wins, with
    ties broken by restart index.  When no restart lands within the
    feasibility tolerance the result carries ``feasible=False`` and the
    smallest constraint residual seen.
    """
    if targets.gamma is None:
        raise ValueError("minimize_r1 needs a cost budget in targets.gamma")
    ctx = _EvalContext(spec)
    nu = _nu_from_ctx(ctx, config)
    nv = _nv_from_ctx(ctx, config)
    skip_backward = (
        not ctx.hb
        and _slack_distortion_bound(spec, spec.d1) <= targets.d1 + FEASIBILITY_TOL
    )
    seed_arrays = [_embed_seed(spec, s, nu, nv) for s in seeds[: config.restarts]]
    payloads = [
        (ctx, targets, config, i, seed_arrays[i] if i < len(seed_arrays) else None, skip_backward)
        for i in range(config.restarts)
    ]
    workers = _worker_count(len(payloads))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_restart, payloads))
    else:
        outcomes = [_run_restart(p) for p in payloads]
    outcomes.sort(key=lambda pair: pair[0])
    best = None
    for _, cand in outcomes:
        if best is None or _better(cand, best):
            best = cand
    policy = _policy_from_arrays(spec, best["F"], best["B"])
    return MinimizeResult(
        point=best["point"],
        policy=policy,
        residuals=best["residuals"],
        feasible=best["feasible"],
    )


def _embed_seed(spec: ProblemSpec, seed: Policy, nu: int, nv: int):
    """Pad a seed policy's index sets up to the search cardinalities."""
    _check_compatible(spec, seed)
    f0, b0 = seed.forward.table, seed.backward.table
    nu0, nv0 = f0.shape[2], b0.shape[-1]
    if nu0 > nu or nv0 > nv:
        raise ValueError(
            f"seed policy has |U|={nu0}, |V|={nv0}, larger than the search sizes ({nu}, {nv})"
        )
    f_shape = _forward_shape(spec, nu)
    b_shape = _backward_shape(spec, nu, nv)
    F = np.zeros(f_shape)
    B = np.zeros(b_shape)
    F[:, :, :nu0] = f0
    B[:, :nu0, ..., :nv0] = b0
    # unused padded rows of the backward kernel get a uniform placeholder
    row_sums = B.sum(axis=-1, keepdims=True)
    B = np.where(row_sums > 0.0, B, 1.0 / nv)
    return F, B


def sweep_gamma(
    spec: ProblemSpec,
    targets: Targets,
    gamma_grid: Sequence[float],
    config: OptimizerConfig = OptimizerConfig(),
    seeds: Sequence[Policy] = (),
) -> list[SweepEntry]:
    """minimize_r1 along an ascending cost-budget grid with warm starts.

    Each grid point is seeded with the previous point's best policy (any
    policy feasible at a smaller budget stays feasible at a larger one), and
    a final lower-envelope pass carries better earlier points forward so the
    reported r1 column is non-increasing.
    """
    if targets.gamma is not None:
        raise ValueError("sweep_gamma varies gamma; leave targets.gamma unset")
    grid = [float(g) for g in gamma_grid]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("gamma_grid must be ascending")
    entries: list[SweepEntry] = []
    carry: list[Policy] = []
    for g in grid:
        point_targets = Targets(d1=targets.d1, d2=targets.d2, d3=targets.d3, gamma=g)
        result = minimize_r1(spec, point_targets, config, seeds=tuple(carry) + tuple(seeds))
        entries.append(SweepEntry(gamma=g, result=result))
        if result.feasible:
            carry = [result.policy]
    best_so_far: MinimizeResult | None = None
    enveloped: list[SweepEntry] = []
    for entry in entries:
        result = entry.result
        if result.feasible:
            if best_so_far is not None and best_so_far.point.r1 < result.point.r1:
                result = best_so_far
            else:
                best_so_far = result
        enveloped.append(SweepEntry(gamma=entry.gamma, result=result))
    return enveloped
