"""Leaky reservoirs with fixed random weights, in real or complex domain.

A reservoir is a large recurrent layer whose weights are drawn once and never
trained.  The state update is

    h' = (1 - gamma) * h + gamma * tanh(w_in @ u + w_rc @ h + b)

with everything element-wise except the two matrix products.  In ``complex``
mode all weights, the leak factor gamma and the state live in the complex
plane and tanh is the phase-amplitude form ``tanh(|z|) * z/|z|``: amplitudes
are squashed while phases rotate freely, so the free-running network can keep
oscillating instead of decaying to zero.  In ``real`` mode the same machinery
reduces exactly to a standard leaky echo-state network.

Stability is enforced at initialization: the recurrent matrix is rescaled to
a spectral radius below one, and the phase of each gamma component is capped
so that |1 - gamma| < 1 (the leak stays a contraction).
"""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError

log = logging.getLogger(__name__)

MODES = ("complex", "real")

_SNAPSHOT_MAGIC = b"PHRC"
_SNAPSHOT_VERSION = 1


def phase_upper_bound(amp):
    """Largest phase a leak factor of amplitude ``amp`` may have.

    For gamma = amp * exp(i*phi), |1 - gamma| < 1 holds exactly when
    phi < arccos(amp / 2).  Accepts scalars or arrays; amp must lie in (0, 1].
    """
    a = np.asarray(amp, dtype=float)
    if np.any(a <= 0.0) or np.any(a > 1.0):
        raise ParameterError(f"amplitude must be in (0, 1], got {amp!r}")
    out = np.arccos(a / 2.0)
    return float(out) if np.ndim(amp) == 0 else out


def complex_tanh(z):
    """Phase-amplitude tanh: tanh(|z|) * z/|z|, with 0 mapped to 0.

    Squashes the amplitude into [0, 1) and preserves the phase exactly.
    For real inputs this coincides with the ordinary tanh.
    """
    arr = np.asarray(z, dtype=np.complex128)
    amp = np.abs(arr)
    out = np.zeros_like(arr)
    nz = amp > 0.0
    out[nz] = np.tanh(amp[nz]) * (arr[nz] / amp[nz])
    if np.ndim(z) == 0:
        return complex(out[()])
    return out


def _eig2x2_maxabs(h):
    tr = h[0, 0] + h[1, 1]
    det = h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]
    disc = np.sqrt(complex(tr * tr - 4.0 * det))
    return max(abs((tr + disc) / 2.0), abs((tr - disc) / 2.0))


def spectral_radius(m, tol=1e-8, max_iter=10000):
    """Largest eigenvalue magnitude of a square matrix.

    Uses two-column subspace (block power) iteration with a deterministic
    start block, so real matrices whose dominant eigenvalues form a complex
    conjugate pair converge as well.  Stops at relative accuracy ``tol`` of
    the estimate (three consecutive hits) or after ``max_iter`` iterations.
    """
    a = np.asarray(m)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ParameterError(f"matrix must be square, got shape {a.shape}")
    n = a.shape[0]
    if n == 0:
        return 0.0
    if n == 1:
        return float(abs(a[0, 0]))
    a = a.astype(np.complex128, copy=False)

    rng = np.random.default_rng(0x5EED)
    q = rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))
    q, _ = np.linalg.qr(q)

    rho_prev = np.inf
    hits = 0
    rho = 0.0
    for _ in range(max_iter):
        z = a @ q
        h = q.conj().T @ z
        rho = _eig2x2_maxabs(h)
        if rho == 0.0 and not z.any():
            return 0.0
        if abs(rho - rho_prev) <= tol * max(rho, 1e-300):
            hits += 1
            if hits >= 3:
                break
        else:
            hits = 0
        rho_prev = rho
        q, _ = np.linalg.qr(z)
    return float(rho)


@dataclass(frozen=True)
class ReservoirParams:
    """Fixed weights of one reservoir.  Immutable and shareable.

    In ``real`` mode every imaginary part is exactly zero; the arrays are
    stored as complex128 either way so both modes share one code path.
    """

    w_in: np.ndarray      # (n_neurons, input_dim)
    w_rc: np.ndarray      # (n_neurons, n_neurons)
    b: np.ndarray         # (n_neurons,)
    gamma: np.ndarray     # (n_neurons,)
    mode: str
    n_neurons: int
    input_dim: int
    seed: int
    spectral_target: float

    def zero_state(self, batch=None):
        shape = (self.n_neurons,) if batch is None else (batch, self.n_neurons)
        return ReservoirState(np.zeros(shape, dtype=np.complex128))

    def state_amplitude_bound(self, h0=None):
        """Sup-norm bound on any trajectory started at h0 (default zero)."""
        leak = np.abs(1.0 - self.gamma)
        ball = float(np.max(np.abs(self.gamma) / (1.0 - leak)))
        if h0 is None:
            return ball
        return ball + float(np.max(np.abs(h0)))


@dataclass
class ReservoirState:
    """Evolving internal state; last axis is the neuron axis.

    Owned by a single caller; many states may be stepped in parallel against
    one shared ReservoirParams.
    """

    h: np.ndarray


def init_reservoir(n_neurons, input_dim, seed, mode="complex",
                   spectral_target=0.9, norm_rows=None):
    """Draw reservoir weights with stability guarantees.

    All entries are uniform in [-1, 1] (real and imaginary parts
    independently in complex mode).  w_in, w_rc and b are sparsified by
    zeroing each entry with probability 1 - 1/n_neurons**0.9, then w_rc is
    rescaled to the exact spectral target and w_in, b are divided by
    1 + norm_rows (default: the input dimension).  Leak amplitudes are
    uniform in (0, 1]; in complex mode each leak phase is uniform in
    [0, arccos(|gamma|/2)) so that |1 - gamma| < 1.

    Deterministic given (seed, mode).  A degenerate draw whose recurrent
    matrix is identically zero is redrawn with a derived sub-seed and logged.
    """
    if n_neurons < 1:
        raise ParameterError(f"n_neurons must be >= 1, got {n_neurons}")
    if input_dim < 1:
        raise ParameterError(f"input_dim must be >= 1, got {input_dim}")
    if not (0.0 < spectral_target < 1.0):
        raise ParameterError(
            f"spectral_target must be in (0, 1), got {spectral_target}")
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")
    if norm_rows is None:
        norm_rows = input_dim

    p_nonzero = 1.0 / n_neurons ** 0.9

    for attempt in range(64):
        rng = np.random.default_rng(seed if attempt == 0 else (seed, attempt))

        def draw(shape, rng=rng):
            re = rng.uniform(-1.0, 1.0, shape)
            if mode == "complex":
                return re + 1j * rng.uniform(-1.0, 1.0, shape)
            return re.astype(np.complex128)

        w_in = draw((n_neurons, input_dim))
        w_rc = draw((n_neurons, n_neurons))
        b = draw((n_neurons,))
        for arr in (w_in, w_rc, b):
            arr[rng.random(arr.shape) >= p_nonzero] = 0.0

        amp = 1.0 - rng.random(n_neurons)   # uniform in (0, 1]
        if mode == "complex":
            phase = rng.random(n_neurons) * phase_upper_bound(amp)
            gamma = amp * np.exp(1j * phase)
        else:
            gamma = amp.astype(np.complex128)

        rho = spectral_radius(w_rc)
        if rho > 0.0:
            break
        log.warning(
            "reservoir draw %d for seed %r produced a zero recurrent "
            "matrix; redrawing with sub-seed", attempt, seed)
    else:
        raise NumericError("could not draw a non-degenerate reservoir")

    w_rc *= spectral_target / rho
    w_in /= 1.0 + norm_rows
    b /= 1.0 + norm_rows

    for arr in (w_in, w_rc, b, gamma):
        arr.setflags(write=False)
    return ReservoirParams(w_in=w_in, w_rc=w_rc, b=b, gamma=gamma, mode=mode,
                           n_neurons=n_neurons, input_dim=input_dim,
                           seed=int(seed), spectral_target=float(spectral_target))


def step(params, state, u):
    """Advance one reservoir state by one time step.

    ``u`` is a real vector (or a (batch, input_dim) array, matched against a
    (batch, n_neurons) state).  Real mode runs entirely in real arithmetic so
    it is bit-compatible with a plain leaky echo-state network.
    """
    u = np.asarray(u, dtype=float)
    h = state.h
    if u.shape[-1] != params.input_dim:
        raise ParameterError(
            f"input dim {u.shape[-1]} != reservoir input dim {params.input_dim}")
    if h.shape[-1] != params.n_neurons:
        raise ParameterError(
            f"state dim {h.shape[-1]} != reservoir size {params.n_neurons}")
    if u.shape[:-1] != h.shape[:-1]:
        raise ParameterError(
            f"batch shape mismatch: input {u.shape} vs state {h.shape}")
    if not np.all(np.isfinite(u)):
        raise NumericError("non-finite reservoir input")

    if params.mode == "real":
        pre = (u @ params.w_in.real.T + h.real @ params.w_rc.real.T
               + params.b.real)
        g = params.gamma.real
        h_next = (1.0 - g) * h.real + g * np.tanh(pre)
        return ReservoirState(h_next.astype(np.complex128))

    pre = u @ params.w_in.T + h @ params.w_rc.T + params.b
    return ReservoirState((1.0 - params.gamma) * h
                          + params.gamma * complex_tanh(pre))


def readout_real(state):
    """Real part of the state, the only slice visible to trained layers.

    Imaginary parts stay inside the state and keep driving future updates.
    """
    return np.ascontiguousarray(state.h.real)


@dataclass(frozen=True)
class FreeResponse:
    """Readout trajectories and per-neuron amplitude spectra for the two
    phases of a drive-then-release experiment."""

    driven_readout: np.ndarray    # (n_drive, n_neurons)
    free_readout: np.ndarray      # (n_free, n_neurons)
    driven_spectrum: np.ndarray   # (n_drive//2 + 1, n_neurons)
    free_spectrum: np.ndarray     # (n_free//2 + 1, n_neurons)
    driven_freqs: np.ndarray      # cycles per step
    free_freqs: np.ndarray


def free_response_spectrum(params, n_drive, n_free, seed, drive_scale=1.0):
    """Drive with uniform random inputs, then release with zero input.

    The bias is forced to zero for this analysis so the free response has a
    unique rest point at the origin.  Returns the real readout trajectory of
    both phases together with their discrete-Fourier amplitude spectra
    (unwindowed, per neuron).
    """
    if n_drive < 16 or n_free < 16:
        raise ParameterError("n_drive and n_free must both be >= 16")
    quiet = ReservoirParams(
        w_in=params.w_in, w_rc=params.w_rc,
        b=np.zeros_like(params.b), gamma=params.gamma, mode=params.mode,
        n_neurons=params.n_neurons, input_dim=params.input_dim,
        seed=params.seed, spectral_target=params.spectral_target)

    rng = np.random.default_rng(seed)
    state = quiet.zero_state()
    driven = np.empty((n_drive, quiet.n_neurons))
    for t in range(n_drive):
        u = drive_scale * rng.uniform(-1.0, 1.0, quiet.input_dim)
        state = step(quiet, state, u)
        driven[t] = readout_real(state)

    zero_u = np.zeros(quiet.input_dim)
    free = np.empty((n_free, quiet.n_neurons))
    for t in range(n_free):
        state = step(quiet, state, zero_u)
        free[t] = readout_real(state)

    return FreeResponse(
        driven_readout=driven,
        free_readout=free,
        driven_spectrum=np.abs(np.fft.rfft(driven, axis=0)),
        free_spectrum=np.abs(np.fft.rfft(free, axis=0)),
        driven_freqs=np.fft.rfftfreq(n_drive),
        free_freqs=np.fft.rfftfreq(n_free),
    )


def save_reservoir(params, path):
    """Write a versioned binary snapshot (little-endian complex128 arrays)."""
    if not -(2 ** 63) <= params.seed < 2 ** 63:
        raise ParameterError("seed must fit in a signed 64-bit integer")
    buf = io.BytesIO()
    buf.write(struct.pack(
        "<4sHBxQQqd", _SNAPSHOT_MAGIC, _SNAPSHOT_VERSION,
        MODES.index(params.mode), params.n_neurons, params.input_dim,
        params.seed, params.spectral_target))
    for arr in (params.w_in, params.w_rc, params.b, params.gamma):
        buf.write(np.ascontiguousarray(arr, dtype="<c16").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_reservoir(path):
    """Read a snapshot written by save_reservoir."""
    with open(path, "rb") as f:
        raw = f.read()
    head = struct.calcsize("<4sHBxQQqd")
    magic, version, mode_ix, n, d, seed, target = struct.unpack(
        "<4sHBxQQqd", raw[:head])
    if magic != _SNAPSHOT_MAGIC:
        raise ParameterError(f"not a reservoir snapshot: {path}")
    if version != _SNAPSHOT_VERSION:
        raise ParameterError(f"unsupported snapshot version {version}")
    off = head
    arrays = []
    for shape in ((n, d), (n, n), (n,), (n,)):
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<c16", count=count, offset=off)
        arrays.append(arr.reshape(shape).astype(np.complex128))
        off += count * 16
    w_in, w_rc, b, gamma = arrays
    for arr in arrays:
        arr.setflags(write=False)
    return ReservoirParams(w_in=w_in, w_rc=w_rc, b=b, gamma=gamma,
                           mode=MODES[mode_ix], n_neurons=int(n),
                           input_dim=int(d), seed=int(seed),
                           spectral_target=float(target))
