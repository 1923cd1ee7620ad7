"""Embedded-pilot channel estimation in the delay-Doppler domain.

A single pilot impulse of known amplitude sits at (delay_index,
doppler_index) inside a rectangle of guard zeros.  All estimators read the
received frame restricted to the guard window (data symbols outside it are
interference the observation model does not describe) and return the path
coefficients plus a full-grid reconstruction of the pilot response.

Off-grid model: an integer-delay path with fractional Doppler lands in the
window as the outer product of a delay kernel and a Doppler kernel, both
periodic-sinc (Dirichlet) interpolators

    w[v] = (1/n) * sum_u exp(-j*2*pi*(v - offset)*u/n),

which is a unit impulse at integer offsets.  The same kernel and its exact
derivative drive the variational estimator's off-grid refinement, so one
sign convention is used everywhere.

Coefficient convention: a path with delay l, Doppler kappa and coefficient
h produces a window response h * exp(j*2*pi*kappa*Lp/(N*M)) times the unit
kernel pattern, where Lp is the pilot delay row.  Estimators divide this
known phase back out, so reported coefficients estimate h itself; the
reconstructed response keeps the raw fitted values since it mirrors the
observed pattern.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import channel as chan
from . import otfs

log = logging.getLogger(__name__)


class NumericalFailure(RuntimeError):
    """Raised when a posterior covariance solve fails beyond jitter repair."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


@dataclass
class PilotConfig:
    delay_index: int
    doppler_index: int
    amplitude: float
    guard_delay: int
    guard_doppler: int

    def validate(self, m: int, n: int):
        if self.amplitude <= 0:
            raise ValueError("pilot amplitude must be positive")
        if self.guard_delay < 0 or self.guard_doppler < 0:
            raise ValueError("guard half-widths must be nonnegative")
        if not (0 <= self.delay_index - self.guard_delay
                and self.delay_index + self.guard_delay < m):
            raise ValueError(
                f"delay guard [{self.delay_index - self.guard_delay}, "
                f"{self.delay_index + self.guard_delay}] does not fit in {m} rows"
            )
        if not (0 <= self.doppler_index - self.guard_doppler
                and self.doppler_index + self.guard_doppler < n):
            raise ValueError(
                f"Doppler guard [{self.doppler_index - self.guard_doppler}, "
                f"{self.doppler_index + self.guard_doppler}] does not fit in {n} columns"
            )

    def window(self, m: int, n: int):
        """Row and column index arrays of the pilot guard window."""
        self.validate(m, n)
        rows = np.arange(self.delay_index - self.guard_delay,
                         self.delay_index + self.guard_delay + 1)
        cols = np.arange(self.doppler_index - self.guard_doppler,
                         self.doppler_index + self.guard_doppler + 1)
        return rows, cols


@dataclass
class SblviState:
    """Variational posterior quantities after one update sweep."""

    mu_h: np.ndarray
    sigma_h: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: float
    d: float
    sigma_k: np.ndarray
    sigma_l: np.ndarray
    l_hat: np.ndarray
    k_hat: np.ndarray
    eps: float


@dataclass
class EstimateResult:
    h_dd: np.ndarray        # M x N reconstructed pilot-relative response
    h_max: np.ndarray       # path coefficients, pilot phase removed
    l_est: np.ndarray       # delay indices (pilot-relative = channel bins)
    k_est: np.ndarray       # Doppler indices, fractional
    iterations: int
    final_eps: float
    history: list = None    # list of SblviState when requested


# ---------------------------------------------------------------------------
# frame construction


def embed_pilot(data, cfg: PilotConfig) -> np.ndarray:
    """Place the pilot impulse and zero its guard rectangle in a data frame."""
    frame = np.array(data, dtype=np.complex128)
    m, n = frame.shape
    rows, cols = cfg.window(m, n)
    frame[np.ix_(rows, cols)] = 0.0
    frame[cfg.delay_index, cfg.doppler_index] = cfg.amplitude
    return frame


def qpsk_data_frame(m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-energy QPSK symbol grid."""
    bits = rng.integers(0, 4, size=(m, n))
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * bits))


def build_pilot_frame(m, n, cfg: PilotConfig, rng=None, with_data=True) -> np.ndarray:
    data = qpsk_data_frame(m, n, rng) if with_data else np.zeros((m, n), complex)
    return embed_pilot(data, cfg)


def true_dd_response(realization, m, n, cfg: PilotConfig) -> np.ndarray:
    """Noiseless pilot-only response divided by the pilot amplitude.

    Serves as ground truth for reconstruction error: it is produced by the
    full modulate / propagate / demodulate pipeline, independent of the
    kernel model the estimators fit.
    """
    frame = build_pilot_frame(m, n, cfg, with_data=False)
    s = otfs.otfs_modulate(frame)
    r = chan.apply_channel(s, realization, m)
    return otfs.otfs_demodulate(r, m, n) / cfg.amplitude


# ---------------------------------------------------------------------------
# interpolation kernels


def _dirichlet(x, n: int) -> np.ndarray:
    """Closed form of (1/n) * sum_u exp(-j*2*pi*x*u/n) with safe poles."""
    x = np.asarray(x, dtype=float)
    residue = x - n * np.round(x / n)
    near_pole = np.abs(residue) < 1e-8
    den = np.where(near_pole, 1.0, np.sin(np.pi * x / n))
    ratio = np.where(
        near_pole,
        n * np.cos(np.pi * x) / np.cos(np.pi * x / n),
        np.sin(np.pi * x) / den,
    )
    return (ratio / n) * np.exp(-1j * np.pi * (n - 1) * x / n)


def _dirichlet_grad(x, n: int) -> np.ndarray:
    """Exact derivative of the Dirichlet kernel with respect to the offset."""
    x = np.asarray(x, dtype=float)
    u = np.arange(n)
    phases = np.exp(-2j * np.pi * np.outer(x, u) / n)
    return phases @ (2j * np.pi * u / n**2)


def delay_basis(l_ip: float, m: int) -> np.ndarray:
    """Fractional-delay kernel sampled on the m delay rows (0-based)."""
    if m < 1:
        raise ValueError("delay grid must have at least one row")
    return _dirichlet(np.arange(m) - l_ip, m)


def doppler_basis(k_ip: float, n: int) -> np.ndarray:
    """Fractional-Doppler kernel sampled on the n Doppler columns (0-based)."""
    if n < 1:
        raise ValueError("Doppler grid must have at least one column")
    return _dirichlet(np.arange(n) - k_ip, n)


def basis_gradients(l_ip: float, k_ip: float, m: int, n: int):
    """Derivatives of the delay and Doppler kernels with respect to their offsets."""
    dphi_tau = _dirichlet_grad(np.arange(m) - l_ip, m)
    dphi_nu = _dirichlet_grad(np.arange(n) - k_ip, n)
    return dphi_tau, dphi_nu


def reconstruct_dd(coeffs, l_abs, k_abs, m: int, n: int) -> np.ndarray:
    """Full-grid response sum_i coeffs[i] * delay_kernel_i x doppler_kernel_i."""
    coeffs = np.asarray(coeffs, dtype=np.complex128)
    out = np.zeros((m, n), dtype=np.complex128)
    for i in range(coeffs.size):
        out += coeffs[i] * np.outer(delay_basis(l_abs[i], m), doppler_basis(k_abs[i], n))
    return out


# ---------------------------------------------------------------------------
# peak search


def initial_peak_search(y_frame, p: int, cfg: PilotConfig):
    """Indices of the P strongest window cells, strongest first.

    A one-cell neighborhood around every selected peak is excluded from the
    later picks; fractional paths smear energy into adjacent cells and the
    raw magnitude order would return duplicates.
    """
    y_frame = np.asarray(y_frame)
    m, n = y_frame.shape
    rows, cols = cfg.window(m, n)
    if p < 1:
        raise ValueError("need at least one path")
    if p > rows.size * cols.size:
        raise ValueError(
            f"window of {rows.size * cols.size} cells cannot hold {p} peaks"
        )
    mag = np.abs(y_frame[np.ix_(rows, cols)]).copy()
    l_idx = np.empty(p, dtype=int)
    k_idx = np.empty(p, dtype=int)
    for i in range(p):
        flat = np.argmax(mag)
        r, c = np.unravel_index(flat, mag.shape)
        if np.isneginf(mag[r, c]):
            raise ValueError(
                "peak search exhausted the guard window; enlarge the guards "
                f"or reduce the path count {p}"
            )
        l_idx[i] = rows[r]
        k_idx[i] = cols[c]
        mag[max(0, r - 1): r + 2, max(0, c - 1): c + 2] = -np.inf
    return l_idx, k_idx


# ---------------------------------------------------------------------------
# variational estimator


def _reseed_weakest_component(resid, mu, phi, l_hat, k_hat, budget, rows, cols, cfg, noise_var):
    """Move an underperforming component onto the strongest unexplained cell.

    Fires only when the weakest budgeted component explains less than half of
    the residual energy still on the table, so a correctly fitted weak path
    is never sacrificed.  The target cell must clear a 4-sigma bar at the
    current noise estimate and must not coincide with another component's
    cell.  Budgeted per component so the sweep always terminates.
    """
    mags = np.abs(mu)
    candidates = np.where(budget > 0)[0]
    if candidates.size == 0:
        return False
    target = int(candidates[np.argmin(mags[candidates])])
    resid_energy = float(np.real(np.vdot(resid, resid)))
    explained = mags[target] ** 2 * float(np.real(np.vdot(phi[:, target], phi[:, target])))
    if explained > 0.5 * resid_energy:
        return False

    window = resid.reshape((rows.size, cols.size), order="F")
    mag = np.abs(window).copy()
    row_pos = l_hat + cfg.delay_index
    col_pos = k_hat + cfg.doppler_index
    for i in range(mu.size):
        if i == target:
            continue
        r = int(round(row_pos[i])) - rows[0]
        cidx = int(round(col_pos[i])) - cols[0]
        if 0 <= r < mag.shape[0] and 0 <= cidx < mag.shape[1]:
            mag[r, cidx] = -np.inf
    r, cidx = np.unravel_index(np.argmax(mag), mag.shape)
    if not np.isfinite(mag[r, cidx]) or mag[r, cidx] < 4.0 * np.sqrt(max(noise_var, 0.0)):
        return False

    l_hat[target] = float(rows[r] - cfg.delay_index)
    k_hat[target] = float(cols[cidx] - cfg.doppler_index)
    mu[target] = 0.0
    budget[target] -= 1
    return True


def _stacked_outer(col_a, col_b) -> np.ndarray:
    """Per-path column-wise vectorization of outer(col_a[:, i], col_b[:, i])."""
    r = col_a.shape[0]
    c = col_b.shape[0]
    return (col_a[None, :, :] * col_b[:, None, :]).reshape(r * c, -1)


def _hermitian_inv(matrix, iteration=None) -> np.ndarray:
    """Inverse of a Hermitian positive definite matrix with one jitter retry."""
    a = 0.5 * (matrix + matrix.conj().T)
    p = a.shape[0]
    jitter = 1e-10 * np.real(np.trace(a)) / p
    for attempt in range(2):
        try:
            np.linalg.cholesky(a)
            return np.linalg.inv(a)
        except np.linalg.LinAlgError:
            a = a + jitter * np.eye(p)
    raise NumericalFailure(
        f"posterior covariance not positive definite at iteration {iteration}",
        iteration=iteration,
    )


def _pilot_phase(k_est, cfg: PilotConfig, m: int, n: int) -> np.ndarray:
    """Known phase a Doppler-shifted path picks up at the pilot delay row."""
    return np.exp(2j * np.pi * np.asarray(k_est) * cfg.delay_index / (m * n))


def sblvi_estimate(
    y_frame,
    p: int,
    cfg: PilotConfig,
    max_iterations: int = 200,
    tolerance: float = 1e-6,
    return_history: bool = False,
) -> EstimateResult:
    """Sparse Bayesian channel estimation with variational inference.

    Iterates: build per-path delay/Doppler kernels and their derivatives at
    the current fractional indices, refresh the Gaussian posterior of the
    coefficients and the Gamma posteriors of the coefficient precisions and
    the noise precision, refresh the index-offset covariances, then move the
    fractional indices by the posterior-mean offset (clamped to half a bin
    per sweep).  Stops when the relative change of the reconstructed
    response drops to `tolerance` or after `max_iterations` sweeps.
    """
    y_frame = np.asarray(y_frame, dtype=np.complex128)
    m, n = y_frame.shape
    rows, cols = cfg.window(m, n)
    y = y_frame[np.ix_(rows, cols)].flatten(order="F")
    n_obs = y.size
    y_energy = float(np.real(np.vdot(y, y)))

    l0, k0 = initial_peak_search(y_frame, p, cfg)
    l_hat = l0.astype(float) - cfg.delay_index
    k_hat = k0.astype(float) - cfg.doppler_index

    # Gamma prior constants; posteriors are recomputed from these each sweep.
    a0 = np.ones(p)
    b0 = np.ones(p)
    c0, d0 = 1e-6, 1e-3

    a, b = a0.copy(), b0.copy()
    c, d = c0, d0
    sigma_k = np.eye(p)
    sigma_l = np.eye(p)
    mu = np.zeros(p, dtype=np.complex128)
    sigma_h = np.eye(p, dtype=np.complex128)
    reseed_budget = np.full(p, 2, dtype=int)

    history = [] if return_history else None
    h_dd = np.zeros((m, n), dtype=np.complex128)
    h_dd_prev = None
    eps = np.inf
    iterations = 0

    for it in range(1, max_iterations + 1):
        iterations = it
        wt = np.column_stack([delay_basis(cfg.delay_index + l_hat[i], m) for i in range(p)])
        wn = np.column_stack([doppler_basis(cfg.doppler_index + k_hat[i], n) for i in range(p)])
        gt = np.empty((m, p), dtype=np.complex128)
        gn = np.empty((n, p), dtype=np.complex128)
        for i in range(p):
            gt[:, i], gn[:, i] = basis_gradients(
                cfg.delay_index + l_hat[i], cfg.doppler_index + k_hat[i], m, n
            )

        amp = cfg.amplitude
        phi = amp * _stacked_outer(wt[rows], wn[cols])
        phi_nu = amp * _stacked_outer(wt[rows], gn[cols])
        phi_tau = amp * _stacked_outer(gt[rows], wn[cols])

        gram = phi.conj().T @ phi
        gram_nu = phi_nu.conj().T @ phi_nu
        gram_tau = phi_tau.conj().T @ phi_tau
        h_mat = gram + gram_nu * sigma_k + gram_tau * sigma_l

        rho = c / d
        sigma_h = _hermitian_inv(rho * h_mat + np.diag(a / b), iteration=it)
        mu = rho * (sigma_h @ (phi.conj().T @ y))

        a = a0 + 1.0
        b = b0 + np.abs(mu) ** 2 + np.real(np.diag(sigma_h))
        c = c0 + n_obs
        fit = (
            y_energy
            - 2.0 * np.real(np.vdot(y, phi @ mu))
            + np.real(np.vdot(mu, h_mat @ mu))
            + float(np.real(np.sum(np.diag(h_mat) * np.diag(sigma_h))))
        )
        d = d0 + max(fit, 0.0)
        rho = c / d

        # offset precision: Re{gram ⊙ conj(second moment)}, positive
        # semidefinite as a Schur product of Gram matrices
        second_moment = np.conj(sigma_h + np.outer(mu, mu.conj()))
        sigma_k = _hermitian_inv(rho * np.real(second_moment * gram_nu), iteration=it).real
        sigma_l = _hermitian_inv(rho * np.real(second_moment * gram_tau), iteration=it).real

        # posterior-mean offsets for the fractional indices
        resid = y - phi @ mu
        corr_k = np.real(
            np.conj(mu) * (phi_nu.conj().T @ resid)
            - np.diag(phi_nu.conj().T @ phi @ sigma_h)
        )
        corr_l = np.real(
            np.conj(mu) * (phi_tau.conj().T @ resid)
            - np.diag(phi_tau.conj().T @ phi @ sigma_h)
        )
        # components with negligible coefficients carry no index information;
        # freezing them prevents covariance-term flapping at the clamp limit
        active = np.abs(mu) >= 1e-3 * np.abs(mu).max()
        relax = _OFFSET_RELAX
        k_hat = k_hat + active * np.clip(relax * rho * (sigma_k @ corr_k), -0.5, 0.5)
        l_hat = l_hat + active * np.clip(relax * rho * (sigma_l @ corr_l), -0.5, 0.5)

        # Local refinement cannot rescue a component stuck far from the signal
        # it should explain; once the fit has stalled, re-seed the weakest
        # component on the strongest residual cell.
        if it >= 3 and eps < 1e-2:
            _reseed_weakest_component(
                resid, mu, phi, l_hat, k_hat, reseed_budget, rows, cols, cfg, d / c
            )

        h_dd = reconstruct_dd(mu, cfg.delay_index + l_hat, cfg.doppler_index + k_hat, m, n)
        if h_dd_prev is not None:
            prev_norm = np.linalg.norm(h_dd_prev)
            diff = np.linalg.norm(h_dd - h_dd_prev)
            if prev_norm > 0:
                eps = diff / prev_norm
            else:
                eps = 0.0 if diff == 0 else np.inf
        if history is not None:
            history.append(
                SblviState(
                    mu_h=mu.copy(), sigma_h=sigma_h.copy(),
                    a=a.copy(), b=b.copy(), c=float(c), d=float(d),
                    sigma_k=sigma_k.copy(), sigma_l=sigma_l.copy(),
                    l_hat=l_hat.copy(), k_hat=k_hat.copy(),
                    eps=float(eps) if np.isfinite(eps) else np.inf,
                )
            )
        if h_dd_prev is not None and eps <= tolerance:
            break
        h_dd_prev = h_dd

    h_max = mu / _pilot_phase(k_hat, cfg, m, n)
    return EstimateResult(
        h_dd=h_dd,
        h_max=h_max,
        l_est=l_hat.copy(),
        k_est=k_hat.copy(),
        iterations=iterations,
        final_eps=float(eps) if np.isfinite(eps) else np.inf,
        history=history,
    )


# ---------------------------------------------------------------------------
# baselines


def lmmse_estimate(y_frame, p: int, cfg: PilotConfig, noise_variance: float) -> EstimateResult:
    """Linear MMSE fit on the integer grid indices found by peak search.

    Prior: coefficients i.i.d. with power 1/P.  Equivalent small-system form
    of R phi^H (phi R phi^H + noise I)^-1 y.
    """
    y_frame = np.asarray(y_frame, dtype=np.complex128)
    m, n = y_frame.shape
    rows, cols = cfg.window(m, n)
    y = y_frame[np.ix_(rows, cols)].flatten(order="F")

    l0, k0 = initial_peak_search(y_frame, p, cfg)
    wt = np.column_stack([delay_basis(float(l0[i]), m) for i in range(p)])
    wn = np.column_stack([doppler_basis(float(k0[i]), n) for i in range(p)])
    phi = cfg.amplitude * _stacked_outer(wt[rows], wn[cols])

    gram = phi.conj().T @ phi
    try:
        h_hat = np.linalg.solve(gram + p * noise_variance * np.eye(p), phi.conj().T @ y)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"linear MMSE system is singular: {exc}") from exc

    l_est = l0.astype(float) - cfg.delay_index
    k_est = k0.astype(float) - cfg.doppler_index
    h_dd = reconstruct_dd(h_hat, l0.astype(float), k0.astype(float), m, n)
    return EstimateResult(
        h_dd=h_dd,
        h_max=h_hat / _pilot_phase(k_est, cfg, m, n),
        l_est=l_est,
        k_est=k_est,
        iterations=1,
        final_eps=0.0,
    )


def ep_threshold_estimate(y_frame, cfg: PilotConfig, noise_variance: float) -> EstimateResult:
    """Threshold detector: one on-grid path per window cell above 3 sigma."""
    y_frame = np.asarray(y_frame, dtype=np.complex128)
    m, n = y_frame.shape
    rows, cols = cfg.window(m, n)
    window = y_frame[np.ix_(rows, cols)]
    threshold = 3.0 * np.sqrt(noise_variance)

    hits = np.argwhere(np.abs(window) >= threshold)
    order = np.argsort(-np.abs(window[hits[:, 0], hits[:, 1]])) if hits.size else []
    h_dd = np.zeros((m, n), dtype=np.complex128)
    l_est, k_est, h_max = [], [], []
    for idx in order:
        r, cidx = hits[idx]
        value = window[r, cidx] / cfg.amplitude
        row, col = rows[r], cols[cidx]
        h_dd[row, col] = value
        l_off = float(row - cfg.delay_index)
        k_off = float(col - cfg.doppler_index)
        l_est.append(l_off)
        k_est.append(k_off)
        h_max.append(value * np.exp(-2j * np.pi * k_off * cfg.delay_index / (m * n)))
    return EstimateResult(
        h_dd=h_dd,
        h_max=np.array(h_max, dtype=np.complex128),
        l_est=np.array(l_est),
        k_est=np.array(k_est),
        iterations=1,
        final_eps=0.0,
    )


# ---------------------------------------------------------------------------
# metric


def nmse(h_est, h_true) -> float:
    """Normalized squared error ||est - true||_F^2 / ||true||_F^2 (linear)."""
    h_est = np.asarray(h_est)
    h_true = np.asarray(h_true)
    if h_est.shape != h_true.shape:
        raise ValueError(f"shape mismatch {h_est.shape} vs {h_true.shape}")
    denom = np.linalg.norm(h_true) ** 2
    if denom == 0:
        raise ValueError("NMSE undefined for an all-zero reference")
    return float(np.linalg.norm(h_est - h_true) ** 2 / denom)


def nmse_db(h_est, h_true) -> float:
    value = nmse(h_est, h_true)
    return float(10.0 * np.log10(value)) if value > 0 else -np.inf
