"""Linear state-space identification plus a kernel power regressor.

The predictor has two stages. Subspace identification (block-Hankel oblique
projection, SVD truncation) yields a linear innovation-form model of the
zone temperatures driven by setpoints and weather; a forward innovation
Kalman recursion initializes its state from recent history. Thermal electric
power, which is strongly non-linear in the commands, is regressed separately
with radial-basis-function kernel ridge regression on (input, output) pairs.
Both stages expose closed-form derivatives for use inside an optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class IdentificationError(ValueError):
    """Raised when the data cannot support the requested identification."""


# --------------------------------------------------------------------------
# linear state-space model


@dataclass(frozen=True)
class StateSpaceModel:
    """Innovation-form linear model x+ = Ax + Bu + Ke, y = Cx + Du + e."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    k: np.ndarray
    innovation_cov: np.ndarray
    fit_rmse: float = float("nan")

    def __post_init__(self):
        # Canonical C-contiguous float layout keeps downstream matrix
        # products bit-reproducible whether the model was fit or loaded.
        for name in ("a", "b", "c", "d", "k", "innovation_cov"):
            object.__setattr__(
                self, name, np.ascontiguousarray(getattr(self, name), dtype=float))
        h = self.a.shape[0]
        m = self.b.shape[1]
        l = self.c.shape[0]
        expected = {
            "a": (h, h), "b": (h, m), "c": (l, h), "d": (l, m),
            "k": (h, l), "innovation_cov": (l, l),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise IdentificationError(
                    f"matrix {name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise IdentificationError(f"matrix {name} contains non-finite entries")
        radius = spectral_radius(self.a)
        if radius >= 1.0:
            raise IdentificationError(
                f"identified transition matrix is unstable (spectral radius {radius:.4f})")

    @property
    def order(self) -> int:
        return self.a.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.b.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.c.shape[0]


def spectral_radius(a: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(a)))) if a.size else 0.0


def _block_hankel(series: np.ndarray, first_row: int, n_rows: int,
                  n_cols: int) -> np.ndarray:
    """Stack `n_rows` block rows of a (N, d) series starting at `first_row`."""
    d = series.shape[1]
    out = np.empty((n_rows * d, n_cols))
    for r in range(n_rows):
        out[r * d:(r + 1) * d, :] = series[first_row + r:first_row + r + n_cols].T
    return out


def _lq(mat: np.ndarray) -> np.ndarray:
    """Lower-triangular factor of mat = L Q^T with orthonormal Q columns."""
    r = np.linalg.qr(mat.T, mode="r")
    return r.T


def _oblique_projection(u: np.ndarray, y: np.ndarray, past: int,
                        future: int, j: int):
    """Oblique projection of future outputs onto past data along future inputs.

    Returns the projection in data coordinates (columns aligned with the j
    Hankel columns) together with the future-input and joint-past blocks.
    """
    m, l = u.shape[1], y.shape[1]
    up = _block_hankel(u, 0, past, j)
    uf = _block_hankel(u, past, future, j)
    yp = _block_hankel(y, 0, past, j)
    yf = _block_hankel(y, past, future, j)
    wp = np.vstack([up, yp])

    scale = 1.0 / np.sqrt(j)
    h = np.vstack([uf, wp, yf]) * scale
    lfull = _lq(h)
    n_uf = uf.shape[0]
    n_wp = wp.shape[0]
    l22 = lfull[n_uf:n_uf + n_wp, n_uf:n_uf + n_wp]
    l32 = lfull[n_uf + n_wp:, n_uf:n_uf + n_wp]
    # O = L32 pinv(L22) Wp; the 1/sqrt(j) factor cancels inside the
    # coefficient so the projection stays in raw data coordinates. The pinv
    # is rank-truncated: band-limited excitation leaves the past-data block
    # nearly rank-deficient and untruncated near-null directions would blow
    # up the projection.
    coeff = l32 @ np.linalg.pinv(l22, rcond=1e-5)
    proj = coeff @ wp
    return proj, uf, yf


def _pick_horizon(n_samples: int, order: int, m: int, l: int,
                  horizon: int | None) -> int:
    """Hankel block depth: the classical 2h+2 shrunk to what the record affords."""
    i_min = max(2, int(np.ceil(order / l)) + 1)
    if horizon is not None:
        i = int(horizon)
    else:
        affordable = (n_samples + 1) // (4 * (m + l) + 2)
        i = min(2 * order + 2, affordable)
    if i < i_min or n_samples - 2 * i + 1 < 2 * i * (m + l):
        raise IdentificationError(
            f"series of length {n_samples} too short to identify order {order} "
            f"with {m} inputs and {l} outputs")
    return i


def fit_n4sid(inputs: np.ndarray, outputs: np.ndarray, order: int = 8,
              horizon: int | None = None) -> StateSpaceModel:
    """Identify a stable innovation-form model by subspace projection.

    The extended observability matrix comes from the SVD of the oblique
    projection of future outputs onto joint past along future inputs; A and C
    follow from shift invariance, B, D and the initial state from a global
    simulation least squares, and the Kalman gain from the state/output
    residual covariances through the filter Riccati fixed point.
    """
    u = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.atleast_2d(np.asarray(outputs, dtype=float))
    if u.ndim != 2 or y.ndim != 2 or len(u) != len(y):
        raise IdentificationError("inputs and outputs must be equal-length 2d series")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
        raise IdentificationError("identification data contains non-finite samples")
    n, m = u.shape
    l = y.shape[1]
    i = _pick_horizon(n, order, m, l, horizon)
    j = n - 2 * i + 1

    u_hankel = np.vstack([_block_hankel(u, 0, i, j), _block_hankel(u, i, i, j)])
    u_norm = np.linalg.norm(u_hankel)
    if u_norm < 1e-12:
        raise IdentificationError("input is identically zero (no excitation)")

    proj, uf, yf = _oblique_projection(u, y, i, i, j)
    yf_norm = np.linalg.norm(yf)
    # Per-sample normalization keeps the observability factor and the state
    # sequence on the same numeric scale as the outputs.
    left, svals_all, _ = np.linalg.svd(proj / np.sqrt(j), full_matrices=False)
    if svals_all[0] <= max(1e-8 * yf_norm / np.sqrt(j), 1e-12):
        # No dynamic content: the record is explained by feedthrough alone.
        return _fit_static(u, y, order, m, l)

    svals = svals_all[:order]
    if svals[-1] <= 1e-10 * svals[0]:
        raise IdentificationError(
            "insufficient excitation for the requested order: projection "
            f"singular values {svals_all[:order + 1].round(12).tolist()}")
    gamma = left[:, :order] * np.sqrt(svals)

    gamma_up = gamma[:(i - 1) * l, :]
    gamma_down = gamma[l:, :]
    a = np.linalg.lstsq(gamma_up, gamma_down, rcond=None)[0]
    c = gamma[:l, :]

    a = _stabilize(a)
    b, d, x0, fit_rmse = _fit_bd_simulation(a, c, u, y)
    k, lam = _innovation_gain(a, b, c, d, u, y, gamma, i, j, proj)
    return StateSpaceModel(a=a, b=b, c=c, d=d, k=k, innovation_cov=lam,
                           fit_rmse=fit_rmse)


def _fit_static(u, y, order, m, l) -> StateSpaceModel:
    d, *_ = np.linalg.lstsq(u, y, rcond=None)
    model = StateSpaceModel(
        a=np.zeros((order, order)), b=np.zeros((order, m)),
        c=np.zeros((l, order)), d=d.T, k=np.zeros((order, l)),
        innovation_cov=np.zeros((l, l)),
        fit_rmse=float(np.sqrt(np.mean((y - u @ d) ** 2))))
    return model


def _stabilize(a: np.ndarray) -> np.ndarray:
    """Contract marginally unstable eigenvalues back inside the unit circle.

    Subspace estimates of a stable plant can land slightly outside the
    circle on short or nonlinearity-polluted records; clipping the offending
    eigenvalue magnitudes is the usual remedy. Anything far outside the
    circle is a genuine identification failure.
    """
    radius = spectral_radius(a)
    if radius < 1.0:
        return a
    if radius > 1.25:
        raise IdentificationError(
            f"identified transition matrix is unstable (spectral radius {radius:.4f})")
    vals, vecs = np.linalg.eig(a)
    mags = np.abs(vals)
    vals = np.where(mags >= 1.0, vals * (0.999 / mags), vals)
    try:
        clipped = np.real(vecs @ np.diag(vals) @ np.linalg.inv(vecs))
    except np.linalg.LinAlgError:
        clipped = a * (0.999 / radius)
    if spectral_radius(clipped) >= 1.0:
        clipped = a * (0.999 / radius)
    return clipped


def _fit_bd_simulation(a, c, u, y):
    """Estimate B, D and the initial state by global simulation least squares.

    The simulated output is linear in (x0, B, D) once A and C are fixed, so
    one regressor column per parameter is built by simulating unit responses.
    """
    n, m = u.shape
    l, h = c.shape
    # Batch of unit systems: h columns for x0, h*m columns for entries of B.
    n_b = h * m
    x = np.zeros((h, h + n_b))
    x[:, :h] = np.eye(h)
    rows = np.tile(np.arange(h), m)
    cols = h + np.arange(n_b)
    reg = np.empty((n, l, h + n_b))
    for t in range(n):
        reg[t] = c @ x
        drive = np.zeros((h, h + n_b))
        drive[rows, cols] = np.repeat(u[t], h)
        x = a @ x + drive
    # Feedthrough columns close the regressor: y_t also contains D u_t.
    reg_flat = reg.reshape(n * l, h + n_b)
    d_block = np.zeros((n * l, l * m))
    for li in range(l):
        d_block[li::l, li * m:(li + 1) * m] = u
    big = np.hstack([reg_flat, d_block])
    theta, *_ = np.linalg.lstsq(big, y.reshape(-1), rcond=None)
    x0 = theta[:h]
    b = theta[h:h + n_b].reshape(m, h).T
    d = theta[h + n_b:].reshape(l, m)
    resid = big @ theta - y.reshape(-1)
    fit_rmse = float(np.sqrt(np.mean(resid ** 2)))
    return b, d, x0, fit_rmse


def _one_step_mse(a, b, c, d, gain, u, y) -> float:
    """Mean squared one-step innovation of the filter over a record."""
    x = np.zeros(a.shape[0])
    acc = 0.0
    for ut, yt in zip(u, y):
        innov = yt - c @ x - d @ ut
        acc += float(innov @ innov)
        x = a @ x + b @ ut + gain @ innov
    return acc / len(u)


def _innovation_gain(a, b, c, d, u, y, gamma, i, j, proj_i):
    """Kalman gain from subspace state-sequence residual covariances.

    The state and output equations are regressed jointly on the subspace
    state estimates; those least-squares residuals feed the filter Riccati
    fixed point. Regressing afresh (rather than reusing the reported B, D)
    keeps the residuals orthogonal to the regressors, which the covariance
    estimates require.
    """
    h = a.shape[0]
    l = c.shape[0]
    x_i = np.linalg.pinv(gamma) @ proj_i
    # Shifted projection: past grown by one block, future shrunk by one.
    proj_ip1, _, _ = _oblique_projection(u, y, i + 1, i - 1, j)
    x_ip1 = np.linalg.pinv(gamma[:(i - 1) * l, :]) @ proj_ip1
    lhs = np.vstack([x_ip1, y[i:i + j].T])
    rhs = np.vstack([x_i, u[i:i + j].T])
    theta = lhs @ np.linalg.pinv(rhs)
    resid = lhs - theta @ rhs
    cov = resid @ resid.T / j
    q = cov[:h, :h]
    s = cov[:h, h:]
    r = cov[h:, h:]
    r_reg = r + 1e-12 * max(np.trace(r) / l, 1.0) * np.eye(l)

    # Candidate gains: Riccati with and without the cross term, the
    # regression gain S R^{-1} (the large-window limit), and open loop.
    # Truncation bias in the state covariances can make any single formula
    # poor, so the gain is chosen by one-step innovation error on the
    # training record among the stabilizing candidates.
    candidates = []
    for s_try in (s, np.zeros_like(s)):
        try:
            candidates.append(_filter_gain_dare(a, c, q, r, s_try)[0])
        except Exception:
            pass
    candidates.append(np.linalg.solve(r_reg.T, s.T).T)
    candidates.append(np.zeros((h, l)))

    best_gain, best_mse = None, np.inf
    for gain in candidates:
        if spectral_radius(a - gain @ c) >= 1.0:
            continue
        mse = _one_step_mse(a, b, c, d, gain, u, y)
        if mse < best_mse:
            best_gain, best_mse = gain, mse
    if best_gain is None:
        best_gain = np.zeros((h, l))
    lam = 0.5 * (r + r.T)
    return best_gain, lam


def _filter_gain_dare(a, c, q, r, s, max_iter=2000, tol=1e-12):
    """Filter Riccati solution: scipy solver with fixed-point fallback.

    Degenerate covariances (noise-free data) make the symplectic pencil
    ill-conditioned, so the direct solver is allowed to fail onto a damped
    fixed-point iteration that tolerates semidefinite Q and R.
    """
    from scipy.linalg import solve_discrete_are

    l = c.shape[0]
    q = 0.5 * (q + q.T)
    r = 0.5 * (r + r.T)
    try:
        p = solve_discrete_are(a.T, c.T, q, r, s=s)
    except Exception:
        jitter = 1e-9 * max(np.trace(r) / l, 1e-3)
        reye = jitter * np.eye(l)
        p = q.copy()
        for _ in range(max_iter):
            lam = c @ p @ c.T + r + reye
            gain = np.linalg.lstsq(lam.T, (a @ p @ c.T + s).T, rcond=None)[0].T
            p_next = a @ p @ a.T + q - gain @ lam @ gain.T
            p_next = 0.5 * (p_next + p_next.T)
            if np.max(np.abs(p_next - p)) < tol:
                p = p_next
                break
            p = p_next
    lam = c @ p @ c.T + r
    lam = 0.5 * (lam + lam.T)
    solve_lam = lam + 1e-12 * max(np.trace(lam) / l, 1.0) * np.eye(l)
    gain = np.linalg.lstsq(solve_lam.T, (a @ p @ c.T + s).T, rcond=None)[0].T
    return gain, lam


def predict(model: StateSpaceModel, x0: np.ndarray, u_seq: np.ndarray) -> np.ndarray:
    """Noise-free rollout y_k = C x_k + D u_k, x_{k+1} = A x_k + B u_k."""
    u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
    if u_seq.shape[0] == 0:
        raise IdentificationError("input sequence must be nonempty")
    x = np.asarray(x0, dtype=float).reshape(model.order)
    out = np.empty((len(u_seq), model.n_outputs))
    for t, ut in enumerate(u_seq):
        out[t] = model.c @ x + model.d @ ut
        x = model.a @ x + model.b @ ut
    return out


def kalman_init(model: StateSpaceModel, u_hist: np.ndarray,
                y_hist: np.ndarray) -> np.ndarray:
    """Final state of the forward innovation recursion started from zero."""
    u_hist = np.atleast_2d(np.asarray(u_hist, dtype=float))
    y_hist = np.atleast_2d(np.asarray(y_hist, dtype=float))
    if len(u_hist) != len(y_hist) or len(u_hist) < 1:
        raise IdentificationError("history must contain matched (u, y) samples")
    if u_hist.shape[1] != model.n_inputs or y_hist.shape[1] != model.n_outputs:
        raise IdentificationError("history dimensions do not match the model")
    x = np.zeros(model.order)
    for ut, yt in zip(u_hist, y_hist):
        innov = yt - model.c @ x - model.d @ ut
        x = model.a @ x + model.b @ ut + model.k @ innov
    return x


def markov_parameters(model: StateSpaceModel, count: int) -> np.ndarray:
    """Impulse-response blocks [D, CB, CAB, ...], shape (count, l, m)."""
    out = np.empty((count, model.n_outputs, model.n_inputs))
    out[0] = model.d
    ap = np.eye(model.order)
    for k in range(1, count):
        out[k] = model.c @ ap @ model.b
        ap = model.a @ ap
    return out


# --------------------------------------------------------------------------
# kernel ridge regression of thermal electric power


@dataclass(frozen=True)
class KernelRegressor:
    """RBF kernel ridge model z(w) = z_offset + sum_i alpha_i k(w_i, w).

    Support points are stored in the regressor's feature space; `w_mean` and
    `w_scale` map raw queries into it (identity by default).
    """

    support: np.ndarray
    alpha: np.ndarray
    gamma: float
    ridge: float
    w_mean: np.ndarray = None
    w_scale: np.ndarray = None
    z_offset: float = 0.0

    def __post_init__(self):
        for name in ("support", "alpha"):
            object.__setattr__(
                self, name, np.ascontiguousarray(getattr(self, name), dtype=float))
        if self.support.ndim != 2 or len(self.support) < 1:
            raise ValueError("support must be a nonempty (n, d) array")
        if self.alpha.shape != (len(self.support),):
            raise ValueError("one coefficient per support point required")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        d = self.support.shape[1]
        if self.w_mean is None:
            object.__setattr__(self, "w_mean", np.zeros(d))
        if self.w_scale is None:
            object.__setattr__(self, "w_scale", np.ones(d))
        if self.w_mean.shape != (d,) or self.w_scale.shape != (d,):
            raise ValueError("feature scaling statistics must have length d")
        if np.any(self.w_scale <= 0):
            raise ValueError("feature scales must be positive")

    @property
    def n_support(self) -> int:
        return len(self.support)


def _gram(points: np.ndarray, gamma: float) -> np.ndarray:
    sq = np.sum(points ** 2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


def fit_kernel(w_points: np.ndarray, z_targets: np.ndarray, gamma: float = 0.1,
               ridge: float = 1.0, standardize: bool = False,
               center_targets: bool = False, max_support: int | None = None,
               seed: int = 0) -> KernelRegressor:
    """Solve (G + ridge*I) alpha = z on the (optionally subsampled) support.

    With `standardize` the features are shifted and scaled to unit variance
    before the Gram matrix is formed and queries are mapped the same way at
    prediction time; the plain call regresses in raw coordinates.
    """
    w = np.atleast_2d(np.asarray(w_points, dtype=float))
    z = np.asarray(z_targets, dtype=float).reshape(-1)
    if len(w) != len(z) or len(w) < 1:
        raise ValueError("need at least one (w, z) pair with matching lengths")
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(z))):
        raise ValueError("kernel training data must be finite")

    if max_support is not None and len(w) > max_support:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        keep = np.sort(rng.choice(len(w), size=max_support, replace=False))
        w, z = w[keep], z[keep]

    if standardize:
        w_mean = w.mean(axis=0)
        w_scale = w.std(axis=0)
        w_scale[w_scale < 1e-12] = 1.0
        w_std = (w - w_mean) / w_scale
    else:
        w_mean = np.zeros(w.shape[1])
        w_scale = np.ones(w.shape[1])
        w_std = w

    z_offset = float(z.mean()) if center_targets else 0.0
    g = _gram(w_std, gamma)
    system = g + ridge * np.eye(len(w))
    if ridge == 0.0:
        cond = np.linalg.cond(system)
        if cond > 1e12:
            raise ValueError(
                f"Gram matrix is singular without ridge (condition {cond:.2e}); "
                "duplicated support points need ridge > 0")
        alpha = np.linalg.solve(system, z - z_offset)
    else:
        cho = np.linalg.cholesky(system)
        alpha = np.linalg.solve(cho.T, np.linalg.solve(cho, z - z_offset))
    return KernelRegressor(support=w_std, alpha=alpha, gamma=gamma, ridge=ridge,
                           w_mean=w_mean, w_scale=w_scale, z_offset=z_offset)


def kernel_predict(reg: KernelRegressor, w: np.ndarray) -> np.ndarray:
    """Evaluate the regressor at one point (d,) or a batch (n, d)."""
    w = np.asarray(w, dtype=float)
    single = w.ndim == 1
    w2 = np.atleast_2d(w)
    ws = (w2 - reg.w_mean) / reg.w_scale
    d2 = (np.sum(ws ** 2, axis=1)[:, None]
          + np.sum(reg.support ** 2, axis=1)[None, :]
          - 2.0 * ws @ reg.support.T)
    np.maximum(d2, 0.0, out=d2)
    z = np.exp(-reg.gamma * d2) @ reg.alpha + reg.z_offset
    return float(z[0]) if single else z


def kernel_predict_with_grad(reg: KernelRegressor, w: np.ndarray):
    """Value and closed-form gradient with respect to the raw query.

    grad = sum_i alpha_i * (-2 gamma) (w_s - w_i) k(w_i, w_s) / w_scale
    where w_s is the query mapped into the regressor's feature space.
    The sum factors into two matrix products so no (query, support,
    feature) tensor is ever materialized.
    """
    w = np.asarray(w, dtype=float)
    single = w.ndim == 1
    w2 = np.atleast_2d(w)
    ws = (w2 - reg.w_mean) / reg.w_scale
    d2 = (np.sum(ws ** 2, axis=1)[:, None]
          + np.sum(reg.support ** 2, axis=1)[None, :]
          - 2.0 * ws @ reg.support.T)
    np.maximum(d2, 0.0, out=d2)
    phi = np.exp(-reg.gamma * d2)
    z = phi @ reg.alpha + reg.z_offset
    weighted = phi * reg.alpha
    grad = ws * np.sum(weighted, axis=1)[:, None] - weighted @ reg.support
    grad *= -2.0 * reg.gamma
    grad /= reg.w_scale
    if single:
        return float(z[0]), grad[0]
    return z, grad


# --------------------------------------------------------------------------
# combined predictor: linear temperatures + kernel power


@dataclass(frozen=True)
class LssNlConfig:
    order: int = 8
    horizon_rows: int | None = None
    gamma: float = 0.1
    ridge: float = 1.0
    max_support: int = 2000
    seed: int = 0


@dataclass(frozen=True)
class LssNl:
    """Frozen two-stage predictor with its normalization statistics."""

    model: StateSpaceModel
    regressor: KernelRegressor
    u_mean: np.ndarray
    u_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray

    @property
    def n_inputs(self) -> int:
        return self.model.n_inputs

    @property
    def n_outputs(self) -> int:
        return self.model.n_outputs


def fit_lss_nl(u: np.ndarray, y: np.ndarray, z: np.ndarray,
               cfg: LssNlConfig = LssNlConfig()) -> LssNl:
    """Fit the linear temperature model and the kernel power regressor.

    The linear stage is identified on standardized inputs and outputs; the
    power stage regresses on standardized (u, y) features with centered
    targets so the far-field prediction relaxes to the training mean.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    z = np.asarray(z, dtype=float).reshape(-1)
    if not (len(u) == len(y) == len(z)):
        raise IdentificationError("u, y, z must have equal length")
    u_mean, u_scale = u.mean(axis=0), u.std(axis=0)
    y_mean, y_scale = y.mean(axis=0), y.std(axis=0)
    u_scale = np.where(u_scale < 1e-12, 1.0, u_scale)
    y_scale = np.where(y_scale < 1e-12, 1.0, y_scale)
    model = fit_n4sid((u - u_mean) / u_scale, (y - y_mean) / y_scale,
                      order=cfg.order, horizon=cfg.horizon_rows)
    features = np.hstack([u, y])
    reg = fit_kernel(features, z, gamma=cfg.gamma, ridge=cfg.ridge,
                     standardize=True, center_targets=True,
                     max_support=cfg.max_support, seed=cfg.seed)
    return LssNl(model=model, regressor=reg, u_mean=u_mean, u_scale=u_scale,
                 y_mean=y_mean, y_scale=y_scale)


def lss_nl_init(lssnl: LssNl, u_hist: np.ndarray, y_hist: np.ndarray) -> np.ndarray:
    """Kalman state from raw history series."""
    u_std = (np.atleast_2d(u_hist) - lssnl.u_mean) / lssnl.u_scale
    y_std = (np.atleast_2d(y_hist) - lssnl.y_mean) / lssnl.y_scale
    return kalman_init(lssnl.model, u_std, y_std)


def lss_nl_forecast(lssnl: LssNl, u_hist: np.ndarray, y_hist: np.ndarray,
                    u_future: np.ndarray):
    """Forecast temperatures and power over a raw future input sequence."""
    x = lss_nl_init(lssnl, u_hist, y_hist)
    u_future = np.atleast_2d(np.asarray(u_future, dtype=float))
    y_std = predict(lssnl.model, x, (u_future - lssnl.u_mean) / lssnl.u_scale)
    y_pred = lssnl.y_mean + lssnl.y_scale * y_std
    feats = np.hstack([u_future, y_pred])
    z_pred = kernel_predict(lssnl.regressor, feats)
    return y_pred, np.atleast_1d(z_pred)


def lss_nl_forecast_with_jacobian(lssnl: LssNl, u_hist: np.ndarray,
                                  y_hist: np.ndarray, u_future: np.ndarray,
                                  wrt: np.ndarray | None = None):
    """Forecast plus derivatives with respect to selected future inputs.

    Returns (y_pred, z_pred, jac_y, jac_z) with jac_y indexed
    [step, output, step', channel] and jac_z [step, step', channel]; entries
    with step' > step are exactly zero by causality.
    """
    u_future = np.atleast_2d(np.asarray(u_future, dtype=float))
    hf = len(u_future)
    m = lssnl.n_inputs
    l = lssnl.n_outputs
    wrt = np.arange(m) if wrt is None else np.asarray(wrt, dtype=int)

    y_pred, z_pred = lss_nl_forecast(lssnl, u_hist, y_hist, u_future)

    # Linear-stage derivatives are time-invariant Markov blocks with the
    # normalization chain applied on both sides.
    markov = markov_parameters(lssnl.model, hf)
    markov = markov * lssnl.y_scale[:, None] / lssnl.u_scale[None, :]
    markov = markov[:, :, wrt]

    jac_y = np.zeros((hf, l, hf, len(wrt)))
    for t in range(hf):
        for tp in range(t + 1):
            jac_y[t, :, tp, :] = markov[t - tp]

    feats = np.hstack([u_future, y_pred])
    _, grad = kernel_predict_with_grad(lssnl.regressor, feats)
    gu = grad[:, :m][:, wrt]
    gy = grad[:, m:]

    jac_z = np.einsum("tl,tlpc->tpc", gy, jac_y)
    idx = np.arange(hf)
    jac_z[idx, idx, :] += gu
    return y_pred, np.atleast_1d(z_pred), jac_y, jac_z


# --------------------------------------------------------------------------
# serialization

_FORMAT_VERSION = 1


def save_lss_nl(path, lssnl: LssNl) -> None:
    """Write the predictor to a versioned binary container (bit-faithful)."""
    np.savez(
        Path(path),
        format_version=np.int64(_FORMAT_VERSION),
        a=lssnl.model.a, b=lssnl.model.b, c=lssnl.model.c, d=lssnl.model.d,
        k=lssnl.model.k, innovation_cov=lssnl.model.innovation_cov,
        fit_rmse=np.float64(lssnl.model.fit_rmse),
        support=lssnl.regressor.support, alpha=lssnl.regressor.alpha,
        gamma=np.float64(lssnl.regressor.gamma),
        ridge=np.float64(lssnl.regressor.ridge),
        w_mean=lssnl.regressor.w_mean, w_scale=lssnl.regressor.w_scale,
        z_offset=np.float64(lssnl.regressor.z_offset),
        u_mean=lssnl.u_mean, u_scale=lssnl.u_scale,
        y_mean=lssnl.y_mean, y_scale=lssnl.y_scale,
    )


def load_lss_nl(path) -> LssNl:
    with np.load(Path(path)) as data:
        version = int(data["format_version"])
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported container version {version}")
        model = StateSpaceModel(
            a=data["a"], b=data["b"], c=data["c"], d=data["d"], k=data["k"],
            innovation_cov=data["innovation_cov"],
            fit_rmse=float(data["fit_rmse"]))
        reg = KernelRegressor(
            support=data["support"], alpha=data["alpha"],
            gamma=float(data["gamma"]), ridge=float(data["ridge"]),
            w_mean=data["w_mean"], w_scale=data["w_scale"],
            z_offset=float(data["z_offset"]))
        return LssNl(model=model, regressor=reg,
                     u_mean=data["u_mean"], u_scale=data["u_scale"],
                     y_mean=data["y_mean"], y_scale=data["y_scale"])
