"""Diagonal complex linear recurrence with a stable log-polar parameterization.

Eigenvalues are parameterized as

    lambda_j = exp(-exp(nu_log_j)) * exp(i * exp(theta_log_j))

so 0 < |lambda_j| < 1 for every real (nu_log, theta_log): stability is a
property of the parameterization, not of a constraint that training could
violate. Optional per-channel input normalization gamma_j = sqrt(1-|lambda|^2)
keeps hidden-state magnitude flat across eigenvalue radii.

One hop sequence per node, x_0..x_K with x_0 at the target node, is consumed
in reverse (farthest hop first):

    s_{-1} = 0;   s_k = lambda * s_{k-1} + gamma * (W_in x_{K-k})

which unrolls to s_K = sum_k lambda^k * gamma * (W_in x_k): a filter over
hops whose weight decays with shortest distance. Three equivalent evaluation
routes are provided: a sequential scan, a parallel tree scan over the
associative affine-pair composition (a1,b1)o(a2,b2) = (a1 a2, a2 b1 + b2),
and the closed-form unroll. Parameters are stored as real arrays (real and
imaginary parts split); scan internals use numpy complex dtype.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .tensor import Tensor, _accum, _make

TWO_PI = 2.0 * np.pi
_PHASE_FLOOR = 1e-30  # keeps theta_log finite for (near-)zero sampled phases

# exp(nu_log) is clipped into this range so that 0 < |lambda| < 1 holds in
# floating point for every real coordinate (unclipped, extreme nu_log rounds
# the magnitude to exactly 1.0 or 0.0); the clip is far outside the regime
# training visits, and its gradient is zero where it binds.
_NU_EXP_MIN = 1e-12
_NU_EXP_MAX = 700.0


def _decay_exp(nu_log: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.clip(np.exp(nu_log), _NU_EXP_MIN, _NU_EXP_MAX)


@dataclass
class LruParams:
    """Log-polar eigenvalue coordinates plus complex I/O projections."""

    nu_log: np.ndarray      # (d_s,)
    theta_log: np.ndarray   # (d_s,)
    w_in_re: np.ndarray     # (d_s, d)
    w_in_im: np.ndarray     # (d_s, d)
    w_out_re: np.ndarray    # (d, d_s)
    w_out_im: np.ndarray    # (d, d_s)
    gamma_enabled: bool = True

    @property
    def state_dim(self) -> int:
        return self.nu_log.shape[0]

    def lam(self) -> np.ndarray:
        return np.exp(-_decay_exp(self.nu_log) + 1j * np.exp(self.theta_log))

    def gamma(self) -> np.ndarray:
        if not self.gamma_enabled:
            return np.ones_like(self.nu_log)
        return np.sqrt(1.0 - np.exp(-2.0 * _decay_exp(self.nu_log)))

    def w_in(self) -> np.ndarray:
        return self.w_in_re + 1j * self.w_in_im

    def w_out(self) -> np.ndarray:
        return self.w_out_re + 1j * self.w_out_im


def init_lru(d_s: int, d: int, r_min: float = 0.5, r_max: float = 0.99,
             max_phase: float = TWO_PI, seed: int = 0,
             gamma_enabled: bool = True) -> LruParams:
    """Sample fresh recurrence parameters.

    |lambda_j|^2 is uniform on [r_min^2, r_max^2] and the phase uniform on
    [0, max_phase]; projection entries are Gaussian with scale 1/sqrt(d) for
    the input map and 1/sqrt(d_s) for the output map. r_min == r_max is
    allowed as a degenerate test configuration; duplicate eigenvalues then
    trigger a warning.
    """
    if not (0.0 <= r_min <= r_max < 1.0):
        raise ValidationError(f"invalid ring bounds [{r_min}, {r_max}]")
    if not (0.0 <= max_phase <= TWO_PI):
        raise ValidationError(f"max_phase must be in [0, 2*pi], got {max_phase}")
    rng = np.random.default_rng(seed)
    mag_sq = rng.uniform(r_min**2, r_max**2, size=d_s)
    if r_min == r_max:
        mag_sq[:] = r_min**2
    nu_log = np.log(-0.5 * np.log(mag_sq))
    phase = rng.uniform(0.0, max_phase, size=d_s)
    theta_log = np.log(np.maximum(phase, _PHASE_FLOOR))
    p = LruParams(
        nu_log=nu_log,
        theta_log=theta_log,
        w_in_re=rng.standard_normal((d_s, d)) / np.sqrt(d),
        w_in_im=rng.standard_normal((d_s, d)) / np.sqrt(d),
        w_out_re=rng.standard_normal((d, d_s)) / np.sqrt(d_s),
        w_out_im=rng.standard_normal((d, d_s)) / np.sqrt(d_s),
        gamma_enabled=gamma_enabled,
    )
    lam = p.lam()
    if d_s > 1:
        diffs = np.abs(lam[:, None] - lam[None, :])[np.triu_indices(d_s, k=1)]
        if np.any(diffs < 1e-12):
            warnings.warn("degenerate recurrence: duplicate eigenvalues sampled")
    return p


def eigen_spectrum(p: LruParams) -> list[tuple[float, float]]:
    """(magnitude, phase) per channel; magnitude = exp(-exp(nu_log))."""
    mags = np.abs(p.lam())
    phases = np.mod(np.exp(p.theta_log), TWO_PI)
    return list(zip(mags.tolist(), phases.tolist()))


# ---------------------------------------------------------------------------
# scan kernels (plain numpy; dtype follows the inputs)


def _projected_inputs(p: LruParams, seq: np.ndarray, lam_override=None) -> tuple:
    """lam, and u_k = gamma * (W_in x_k) for the whole sequence."""
    lam = p.lam() if lam_override is None else np.asarray(lam_override, dtype=complex)
    w = p.w_in()
    if seq.shape[-1] != w.shape[1]:
        raise ValidationError(
            f"hop sequence feature dim {seq.shape[-1]} != input dim {w.shape[1]}"
        )
    if seq.dtype == np.float32:
        lam = lam.astype(np.complex64)
        w = w.astype(np.complex64)
    flat = seq.reshape(-1, seq.shape[-1])
    w_re = np.ascontiguousarray(w.real)
    w_im = np.ascontiguousarray(w.imag)
    u = (flat @ w_re.T + 1j * (flat @ w_im.T)).reshape(seq.shape[:-1] + (w.shape[0],))
    if p.gamma_enabled:
        u = u * p.gamma().astype(u.real.dtype)
    return lam, u


def scan_sequential(p: LruParams, seq: np.ndarray, lam_override=None,
                    return_all: bool = False) -> np.ndarray:
    """Reference evaluation of the recurrence, one step at a time.

    ``seq`` has shape (..., K+1, d) with hop index 0 at the target node; the
    scan consumes hops farthest-first. Returns s_K of shape (..., d_s), or all
    states (..., K+1, d_s) when ``return_all``.
    """
    lam, u = _projected_inputs(p, seq, lam_override)
    kk = seq.shape[-2]
    s = np.zeros(u.shape[:-2] + (u.shape[-1],), dtype=u.dtype)
    states = np.empty_like(u) if return_all else None
    for k in range(kk):
        s = lam * s + u[..., kk - 1 - k, :]
        if return_all:
            states[..., k, :] = s
    return states if return_all else s


def _tree_scan(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive prefix scan of affine pairs along axis -2, by pairwise halving.

    Element t is the map s -> a[t]*s + b[t]; output t is the composition of
    elements 0..t in application order.
    """
    t = a.shape[-2]
    if t == 1:
        return a, b
    n_pairs = t // 2
    ae, be = a[..., 0:2 * n_pairs:2, :], b[..., 0:2 * n_pairs:2, :]
    ao, bo = a[..., 1:2 * n_pairs:2, :], b[..., 1:2 * n_pairs:2, :]
    pa, pb = _tree_scan(ae * ao, ao * be + bo)
    out_a = np.empty_like(a)
    out_b = np.empty_like(b)
    out_a[..., 1::2, :] = pa
    out_b[..., 1::2, :] = pb
    out_a[..., 0:1, :] = a[..., 0:1, :]
    out_b[..., 0:1, :] = b[..., 0:1, :]
    if t > 2:
        out_a[..., 2::2, :] = pa[..., : (t - 1) // 2, :] * a[..., 2::2, :]
        out_b[..., 2::2, :] = a[..., 2::2, :] * pb[..., : (t - 1) // 2, :] + b[..., 2::2, :]
    return out_a, out_b


def scan_parallel(p: LruParams, seq: np.ndarray, lam_override=None,
                  return_all: bool = False) -> np.ndarray:
    """Tree-scan evaluation; agrees with scan_sequential to rounding."""
    lam, u = _projected_inputs(p, seq, lam_override)
    rev = u[..., ::-1, :]
    a = np.broadcast_to(lam, rev.shape).copy()
    _, states = _tree_scan(a, np.ascontiguousarray(rev))
    return states if return_all else states[..., -1, :]


def unroll_closed_form(p: LruParams, seq: np.ndarray, lam_override=None) -> np.ndarray:
    """s_K = sum_k lambda^k * gamma * (W_in x_k), evaluated directly."""
    lam, u = _projected_inputs(p, seq, lam_override)
    kk = seq.shape[-2]
    powers = lam[None, :] ** np.arange(kk)[:, None]  # (K+1, d_s)
    return np.einsum("...kd,kd->...d", u, powers)


# ---------------------------------------------------------------------------
# differentiable block: y = Re[ W_out s_K ] as one custom op


def lru_block(x: Tensor, nu_log: Tensor, theta_log: Tensor,
              w_in_re: Tensor, w_in_im: Tensor,
              w_out_re: Tensor, w_out_im: Tensor,
              gamma_enabled: bool = True) -> Tensor:
    """Run the recurrence over hop sequences and project the final state.

    ``x`` has shape (n, K+1, d); the result is real of shape (n, d'). The
    backward rule is the adjoint recurrence, written against the closed form:
    gradients of complex intermediates are packed as d/dRe + i*d/dIm, so a
    product by a constant c pulls back through conj(c).
    """
    n, kk, _ = x.data.shape
    nu = nu_log.data
    theta = theta_log.data
    decay = _decay_exp(nu)
    # zero gradient through nu where the clip binds
    with np.errstate(over="ignore"):
        decay_grad = np.where(np.abs(np.exp(nu) - decay) > 0.0, 0.0, decay)
    r = np.exp(-decay)
    phase = np.exp(theta)
    lam = r * np.exp(1j * phase)
    gamma = np.sqrt(1.0 - r * r) if gamma_enabled else np.ones_like(r)
    # Complex matmuls on .real/.imag views fall off the fast BLAS path, so the
    # projections are kept as separate real matrices throughout.
    flat_x = x.data.reshape(-1, x.data.shape[-1])
    proj = (flat_x @ w_in_re.data.T + 1j * (flat_x @ w_in_im.data.T)).reshape(n, kk, -1)
    u = proj * gamma
    powers = lam[None, :] ** np.arange(kk)[:, None]
    s = np.einsum("nkd,kd->nd", u, powers)
    s_re = np.ascontiguousarray(s.real)
    s_im = np.ascontiguousarray(s.imag)
    y = s_re @ w_out_re.data.T - s_im @ w_out_im.data.T

    def backward(g):
        _accum(w_out_re, g.T @ s_re)
        _accum(w_out_im, -(g.T @ s_im))
        s_bar = (g @ w_out_re.data) - 1j * (g @ w_out_im.data)
        u_bar = np.conj(powers)[None, :, :] * s_bar[:, None, :]
        if (nu_log.requires_grad or nu_log._parents
                or theta_log.requires_grad or theta_log._parents):
            # d s / d lam = sum_k k lam^(k-1) u_k, per channel
            ks = np.arange(kk)[:, None]
            dpow = ks * lam[None, :] ** np.maximum(ks - 1, 0)
            dpow[0] = 0.0
            ds_dlam = np.einsum("nkd,kd->nd", u, dpow)
            lam_bar = (np.conj(ds_dlam) * s_bar).sum(axis=0)
            nu_grad = -decay_grad * np.real(np.conj(lam) * lam_bar)
            theta_grad = phase * np.imag(np.conj(lam) * lam_bar)
            if gamma_enabled:
                gamma_bar = np.real(np.conj(proj) * u_bar).sum(axis=(0, 1))
                nu_grad = nu_grad + gamma_bar * (decay_grad * r * r / gamma)
            _accum(nu_log, nu_grad)
            _accum(theta_log, theta_grad)
        proj_bar = u_bar * gamma
        pb_re = np.ascontiguousarray(proj_bar.real).reshape(-1, proj_bar.shape[-1])
        pb_im = np.ascontiguousarray(proj_bar.imag).reshape(-1, proj_bar.shape[-1])
        _accum(w_in_re, pb_re.T @ flat_x)
        _accum(w_in_im, pb_im.T @ flat_x)
        if x.requires_grad or x._parents:
            gx = pb_re @ w_in_re.data + pb_im @ w_in_im.data
            _accum(x, gx.reshape(x.data.shape))

    return _make(y, (x, nu_log, theta_log, w_in_re, w_in_im, w_out_re, w_out_im),
                 backward, "lru_block")
