"""Orthogonal transport hypothesis classes, projections, and fitting.

Three nested families of edge transports are supported:

* frozen identity, zero parameters per edge;
* products of R Householder reflections, R * d parameters per edge, dense in
  the determinant-(-1)^R component of the orthogonal group;
* orthogonal circulants, floor((d - 1) / 2) phase parameters per edge, kept
  in real arithmetic via the first-column cosine form.

All losses and plateaus here share one convention: the squared Frobenius
distance to the target divided by the matrix dimension d. That equals the
mean squared error per output coordinate when a candidate transport is
scored against the target on isotropic unit-variance test vectors, so a
loss of x means each coordinate of a transported vector is off by about
sqrt(x) on average. For each restricted class the distance from a target
has a closed-form minimizer (identity itself, the polar factor, or a
per-frequency phase alignment), which makes the population loss plateau of
a fit computable exactly. The iterative fitter below is plain gradient
descent with analytic gradients through the parametrizations, batched
across edges.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .rng import as_generator


@dataclass(frozen=True)
class TransportClass:
    """Tag for a transport hypothesis class.

    kind is one of "frozen", "free", "circulant"; ``reflections`` is the
    Householder count R for the free class and None otherwise.
    """

    kind: str
    reflections: int | None = None

    @classmethod
    def frozen_identity(cls) -> "TransportClass":
        return cls(kind="frozen")

    @classmethod
    def free_orthogonal(cls, reflections: int) -> "TransportClass":
        if reflections < 1:
            raise ValueError("reflection count must be positive")
        return cls(kind="free", reflections=int(reflections))

    @classmethod
    def circulant(cls) -> "TransportClass":
        return cls(kind="circulant")

    def param_count(self, d: int) -> int:
        """Parameters per edge: 0, R * d, or floor((d - 1) / 2)."""
        if self.kind == "frozen":
            return 0
        if self.kind == "free":
            return self.reflections * d
        if self.kind == "circulant":
            return (d - 1) // 2
        raise ValueError(f"unknown transport class kind {self.kind!r}")


@dataclass(frozen=True)
class HouseholderTransport:
    """Product of Householder reflections H(v_R) ... H(v_1).

    Reflection 1 is applied first. Each factor is
    I - 2 v v^T / (||v||^2 + epsilon); with epsilon = 0 and non-degenerate
    vectors the product is orthogonal with determinant (-1)^R.
    """

    vectors: np.ndarray
    epsilon: float = 0.0

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    @property
    def reflections(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class CirculantTransport:
    """Real orthogonal circulant given by floor((d - 1) / 2) phases.

    The zero-frequency Fourier multiplier is pinned to 1, as is the Nyquist
    multiplier for even d; the remaining multipliers are exp(i phase_k) with
    conjugate symmetry, so the matrix is real.
    """

    d: int
    phases: np.ndarray

    def __post_init__(self):
        if self.phases.shape != ((self.d - 1) // 2,):
            raise ValueError("wrong number of circulant phases for this d")


def _hh_factors(vectors: np.ndarray, epsilon: float) -> np.ndarray:
    """Householder factors for stacked vectors (..., R, d) -> (..., R, d, d)."""
    d = vectors.shape[-1]
    norms = (vectors * vectors).sum(-1) + epsilon
    outer = vectors[..., :, None] * vectors[..., None, :]
    return np.eye(d) - 2.0 * outer / norms[..., None, None]


def householder_materialize(h: HouseholderTransport) -> np.ndarray:
    """Dense matrix of the reflection product (reflection 1 applied first)."""
    factors = _hh_factors(h.vectors, h.epsilon)
    out = np.eye(h.d)
    for r in range(h.reflections):
        out = factors[r] @ out
    return out


def _circulant_column(phases: np.ndarray, d: int) -> np.ndarray:
    """First column c[r] of the circulant with the given phases."""
    r = np.arange(d)
    col = np.ones(d)
    if d % 2 == 0:
        col = col + (-1.0) ** r
    m = (d - 1) // 2
    if m:
        k = np.arange(1, m + 1)
        angles = phases[..., :, None] + 2.0 * np.pi * k[:, None] * r[None, :] / d
        col = col + 2.0 * np.cos(angles).sum(-2)
    return col / d


def _column_to_circulant(col: np.ndarray) -> np.ndarray:
    d = col.shape[-1]
    idx = (np.arange(d)[:, None] - np.arange(d)[None, :]) % d
    return col[..., idx]


def circulant_materialize(c: CirculantTransport) -> np.ndarray:
    """Dense matrix; entry (a, b) is the first-column value at (a - b) mod d."""
    return _column_to_circulant(_circulant_column(np.asarray(c.phases, dtype=float), c.d))


def project_orthogonal(target: np.ndarray) -> np.ndarray:
    """Frobenius-nearest orthogonal matrix: the polar factor of the target."""
    target = np.asarray(target, dtype=float)
    if not np.all(np.isfinite(target)):
        raise ValueError("target must be finite")
    u, s, vt = np.linalg.svd(target)
    if s[-1] <= 1e-12 * max(s[0], 1e-300):
        raise ValueError("target is rank deficient; polar factor is ambiguous")
    return u @ vt


def _circulant_diag_sums(target: np.ndarray) -> np.ndarray:
    """tau[r] = sum of target entries with (row - col) mod d == r."""
    d = target.shape[0]
    idx = (np.arange(d)[:, None] - np.arange(d)[None, :]) % d
    return np.bincount(idx.reshape(-1), weights=target.reshape(-1), minlength=d)


def project_circulant(target: np.ndarray) -> CirculantTransport:
    """Frobenius-nearest orthogonal circulant via per-frequency phase alignment.

    With tau the circulant diagonal sums of the target, the optimal phase at
    frequency k is the argument of the k-th DFT coefficient of tau (the
    diagonal entries of the target conjugated into the Fourier basis). The
    zero-frequency and Nyquist multipliers stay pinned at 1. A frequency
    whose coefficient has magnitude below 1e-12 leaves the phase undefined;
    it is set to 0 and a warning is emitted.
    """
    target = np.asarray(target, dtype=float)
    if not np.all(np.isfinite(target)):
        raise ValueError("target must be finite")
    d = target.shape[0]
    m = (d - 1) // 2
    if m == 0:
        return CirculantTransport(d=d, phases=np.zeros(0))
    coeffs = np.fft.fft(_circulant_diag_sums(target))[1:m + 1] / d
    degenerate = np.abs(coeffs) < 1e-12
    phases = np.where(degenerate, 0.0, np.angle(coeffs))
    if degenerate.any():
        warnings.warn("circulant projection: phase undefined at some "
                      "frequencies; set to 0", stacklevel=2)
    return CirculantTransport(d=d, phases=phases)


def _as_edge_stack(transports: dict):
    keys = sorted(transports)
    stack = np.stack([np.asarray(transports[k], dtype=float) for k in keys])
    return keys, stack


def plateau_frozen(transports: dict) -> float:
    """Edge-averaged per-coordinate squared distance to the identity.

    Each edge contributes its squared Frobenius distance to the identity
    divided by the matrix dimension (the module-wide loss convention).
    """
    if not transports:
        raise ValueError("empty edge set")
    _, stack = _as_edge_stack(transports)
    eye = np.eye(stack.shape[-1])
    return float(((stack - eye) ** 2).sum((-2, -1)).mean() / stack.shape[-1])


def _circulant_residual(stack: np.ndarray) -> np.ndarray:
    """Per-edge per-coordinate squared distance to the circulant class."""
    residuals = np.empty(stack.shape[0])
    for e in range(stack.shape[0]):
        proj = circulant_materialize(project_circulant(stack[e]))
        residuals[e] = ((stack[e] - proj) ** 2).sum() / stack.shape[-1]
    return residuals


def plateau_circulant(transports: dict) -> float:
    """Edge-averaged per-coordinate squared distance to the circulant class."""
    if not transports:
        raise ValueError("empty edge set")
    _, stack = _as_edge_stack(transports)
    return float(_circulant_residual(stack).mean())


def per_edge_plateau(target: np.ndarray, tclass: TransportClass) -> float:
    """Closed-form minimum loss for one edge (per-coordinate convention)."""
    target = np.asarray(target, dtype=float)
    d = target.shape[0]
    if tclass.kind == "frozen":
        return float(((target - np.eye(d)) ** 2).sum() / d)
    if tclass.kind == "circulant":
        proj = circulant_materialize(project_circulant(target))
        return float(((target - proj) ** 2).sum() / d)
    proj = project_orthogonal(target)
    return float(((target - proj) ** 2).sum() / d)


@dataclass
class FitResult:
    """Outcome of a per-edge transport fit.

    ``transports`` maps each edge to its fitted dense matrix,
    ``final_losses`` to its final loss (per-coordinate convention, see the
    module docstring), ``iterations`` to the number of gradient steps the
    edge actually took (edges stop early once they reach their plateau,
    see :func:`fit_transports`).
    ``loss_history`` is the edge-averaged loss per iteration, starting at
    the initial point and ending when the last active edge stops; retired
    edges contribute their frozen final loss. ``parity_mismatch`` lists
    edges whose target determinant sign cannot be reached by the
    reflection count.
    """

    tclass: TransportClass
    transports: dict
    final_losses: dict
    loss_history: np.ndarray
    iterations: dict = field(default_factory=dict)
    parity_mismatch: list = field(default_factory=list)


def _fit_free(keys, targets, reflections, iters, step, epsilon, rng, thresholds):
    # Reflections are applied as rank-one updates (H M = M - 2 v (v^T M)/s)
    # rather than materialized d x d factors, and the chain-rule term for
    # each factor is reduced to matrix-vector products, which keeps the cost
    # per iteration at O(R d^2) per edge. Edges whose loss has reached their
    # threshold retire from the batch; the per-edge problems are decoupled,
    # so the survivors' trajectories are unaffected.
    e_cnt, d = targets.shape[0], targets.shape[-1]
    vectors = rng.standard_normal((e_cnt, reflections, d))
    vectors /= np.linalg.norm(vectors, axis=-1, keepdims=True)
    eye = np.eye(d)
    prefix = np.empty((e_cnt, reflections + 1, d, d))
    suffix = np.empty((e_cnt, reflections + 1, d, d))
    active = np.arange(e_cnt)
    act_targets = targets
    final_mats = np.empty_like(targets)
    final_losses = np.empty(e_cnt)
    iter_counts = np.full(e_cnt, iters, dtype=np.int64)
    snapshot = np.empty(e_cnt)
    history = []
    for it in range(iters + 1):
        a = active.size
        pre = prefix[:a]
        norms = (vectors * vectors).sum(-1) + epsilon
        coef = 2.0 / norms
        pre[:, 0] = eye
        for r in range(reflections):
            v_r = vectors[:, r]
            row = np.einsum("ed,edk->ek", v_r, pre[:, r])
            pre[:, r + 1] = pre[:, r] \
                - (coef[:, r, None] * v_r)[:, :, None] * row[:, None, :]
        current = pre[:, reflections]
        diff = current - act_targets
        losses = (diff ** 2).sum((-2, -1)) / d
        snapshot[active] = losses
        history.append(snapshot.mean())
        if it == iters:
            final_mats[active] = current
            final_losses[active] = losses
            break
        done = losses <= thresholds[active]
        if done.any():
            retired = active[done]
            final_mats[retired] = current[done]
            final_losses[retired] = losses[done]
            iter_counts[retired] = it
            keep = ~done
            active = active[keep]
            if active.size == 0:
                break
            a = active.size
            vectors = vectors[keep]
            act_targets = act_targets[keep]
            prefix[:a] = pre[keep]
            pre = prefix[:a]
            current = pre[:, reflections]
            diff = current - act_targets
            norms = norms[keep]
            coef = coef[keep]
        suf = suffix[:a]
        suf[:, reflections] = eye
        for r in range(reflections - 1, -1, -1):
            v_r = vectors[:, r]
            col = np.einsum("eik,ek->ei", suf[:, r + 1], v_r)
            suf[:, r] = suf[:, r + 1] \
                - col[:, :, None] * (coef[:, r, None] * v_r)[:, None, :]
        diff2 = (2.0 / d) * diff
        # With G_r = S_{r+1}^T diff2 P_r^T, only G_r v_r and v_r^T G_r v_r
        # enter the chain rule, so the whole gradient reduces to batched
        # matrix-vector products over the reflection axis.
        pre_r = pre[:, :reflections]
        suf_r = suf[:, 1:]
        col = vectors[..., None]
        pt_v = np.matmul(np.swapaxes(pre_r, -1, -2), col)
        s_v = np.matmul(suf_r, col)
        g_v = np.matmul(np.swapaxes(suf_r, -1, -2),
                        np.matmul(diff2[:, None], pt_v))[..., 0]
        gt_v = np.matmul(pre_r, np.matmul(
            np.swapaxes(diff2, -1, -2)[:, None], s_v))[..., 0]
        v_g_v = (vectors * g_v).sum(-1)
        grad = -2.0 * (g_v + gt_v) / norms[..., None] \
            + 4.0 * (v_g_v / norms ** 2)[..., None] * vectors
        vectors = vectors - step * grad
    fitted = {k: final_mats[e] for e, k in enumerate(keys)}
    final = {k: float(final_losses[e]) for e, k in enumerate(keys)}
    counts = {k: int(iter_counts[e]) for e, k in enumerate(keys)}
    return fitted, final, np.array(history), counts


def _fit_circulant(keys, targets, iters, step, thresholds):
    e_cnt, d = targets.shape[0], targets.shape[-1]
    m = (d - 1) // 2
    tau = np.stack([_circulant_diag_sums(targets[e]) for e in range(e_cnt)])
    t_sq = (targets ** 2).sum((-2, -1))
    phases = np.zeros((e_cnt, m))
    r = np.arange(d)
    k = np.arange(1, m + 1)
    grid = 2.0 * np.pi * k[:, None] * r[None, :] / d
    active = np.arange(e_cnt)
    act_tau, act_tsq = tau, t_sq
    final_cols = np.empty((e_cnt, d))
    final_losses = np.empty(e_cnt)
    iter_counts = np.full(e_cnt, iters, dtype=np.int64)
    snapshot = np.empty(e_cnt)
    history = []
    for it in range(iters + 1):
        col = _circulant_column(phases, d)
        losses = (d * (col ** 2).sum(-1) - 2.0 * (col * act_tau).sum(-1)
                  + act_tsq) / d
        snapshot[active] = losses
        history.append(snapshot.mean())
        if it == iters:
            final_cols[active] = col
            final_losses[active] = losses
            break
        done = losses <= thresholds[active]
        if done.any():
            retired = active[done]
            final_cols[retired] = col[done]
            final_losses[retired] = losses[done]
            iter_counts[retired] = it
            keep = ~done
            active = active[keep]
            if active.size == 0:
                break
            phases = phases[keep]
            act_tau = act_tau[keep]
            act_tsq = act_tsq[keep]
            col = col[keep]
        if m:
            dcol = -(2.0 / d) * np.sin(phases[:, :, None] + grid[None])
            grad = ((2.0 * col - (2.0 / d) * act_tau)[:, None, :]
                    * dcol).sum(-1)
            phases = phases - step * grad
    fitted = {k_: _column_to_circulant(final_cols[e]) for e, k_ in enumerate(keys)}
    final = {k_: float(final_losses[e]) for e, k_ in enumerate(keys)}
    counts = {k_: int(iter_counts[e]) for e, k_ in enumerate(keys)}
    return fitted, final, np.array(history), counts


def fit_transports(targets: dict, tclass: TransportClass, iters: int = 1500,
                   step: float = 0.5, seed=0, epsilon: float = 1e-12,
                   orth_tol: float = 0.05, flip_parity: bool = False,
                   stop_excess: float | None = 1e-7) -> FitResult:
    """Fit one transport per edge by gradient descent on the class parameters.

    Minimizes, independently per edge, the squared Frobenius distance to
    the target divided by the matrix dimension d: the deterministic
    population form of scoring the transport on isotropic unit-variance
    test vectors, averaged over output coordinates (drawing the vectors
    estimates the same objective with sampling noise). Householder fits
    start from unit-normalized Gaussian vectors seeded per call; circulant
    fits start from zero phases, i.e. at the identity. With ``flip_parity``
    a fixed extra reflection is appended so the free class reaches the
    opposite determinant component.

    ``iters`` caps the gradient steps per edge. An edge stops early once
    its loss is within ``stop_excess`` of its closed-form class minimum
    (polar distance for the free class, adjusted for determinant parity;
    circulant projection distance for the circulant class, both in the
    per-coordinate convention); the edges are decoupled, so stopping one
    leaves the others' trajectories unchanged. Pass ``stop_excess=None``
    to always run the full cap.

    Targets whose determinant sign is unreachable (det -1 with an even
    reflection count, or det +1 with an odd one) converge to the distance
    of the target's projection onto the reachable component; such edges are
    listed in ``parity_mismatch`` and trigger a warning.
    """
    if not targets:
        raise ValueError("empty edge set")
    if tclass.kind == "frozen":
        raise ValueError("the frozen identity class has no parameters to fit")
    keys, stack = _as_edge_stack(targets)
    d = stack.shape[-1]
    defect = np.linalg.norm(
        np.swapaxes(stack, -1, -2) @ stack - np.eye(d), axis=(-2, -1))
    if defect.max() > orth_tol:
        raise ValueError("a fit target is not orthogonal within tolerance")
    if iters < 1:
        raise ValueError("iters must be positive")
    if stop_excess is not None and stop_excess <= 0.0:
        raise ValueError("stop_excess must be positive or None")
    never = np.full(len(keys), -np.inf)
    mismatch = []
    if tclass.kind == "free":
        reflections = tclass.reflections
        flip = np.eye(d)
        if flip_parity:
            flip[0, 0] = -1.0
            stack = flip[None] @ stack
        parity = -1.0 if reflections % 2 else 1.0
        dets = np.linalg.det(stack)
        match = np.sign(dets) == parity
        mismatch = [keys[e] for e in range(len(keys)) if not match[e]]
        if mismatch:
            warnings.warn(
                f"{len(mismatch)} target(s) have determinant parity "
                "unreachable by this reflection count", stacklevel=2)
        if stop_excess is None:
            thresholds = never
        else:
            # reachable minimum over the det-constrained component: sum of
            # (sigma_i - 1)^2, with the smallest singular direction flipped
            # when the parity disagrees, which adds 4 * sigma_min; divided
            # by d per the loss convention
            svals = np.linalg.svd(stack, compute_uv=False)
            base = ((svals - 1.0) ** 2).sum(-1)
            thresholds = np.where(match, base, base + 4.0 * svals[:, -1]) / d \
                + stop_excess
        rng = as_generator(seed)
        fitted, final, history, counts = _fit_free(
            keys, stack, reflections, iters, step, epsilon, rng, thresholds)
        if flip_parity:
            fitted = {k: flip @ v for k, v in fitted.items()}
    elif tclass.kind == "circulant":
        thresholds = never if stop_excess is None \
            else _circulant_residual(stack) + stop_excess
        fitted, final, history, counts = _fit_circulant(
            keys, stack, iters, step, thresholds)
    else:
        raise ValueError(f"unknown transport class kind {tclass.kind!r}")
    return FitResult(tclass=tclass, transports=fitted, final_losses=final,
                     loss_history=history, iterations=counts,
                     parity_mismatch=mismatch)


def write_fit_csv(path, result: FitResult, targets: dict) -> None:
    """Per-edge fit summary: edge_i, edge_j, class, final_loss, plateau, iterations.

    The plateau column is the closed-form projection distance of each
    target onto the fitted class; iterations is the number of gradient
    steps that edge took before stopping.
    """
    from ._csvio import write_csv

    rows = []
    for (i, j) in sorted(result.transports):
        rows.append([i, j, result.tclass.kind,
                     result.final_losses[(i, j)],
                     per_edge_plateau(targets[(i, j)], result.tclass),
                     result.iterations[(i, j)]])
    write_csv(path, comment="per-edge transport fit",
              header=["edge_i", "edge_j", "class", "final_loss", "plateau",
                      "iterations"],
              rows=rows)
