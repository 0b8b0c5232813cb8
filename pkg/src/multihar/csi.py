"""Synthetic multi-user CSI generation and amplitude-tensor file ingestion.

The generator builds a complex multipath channel per receive chain: a static
background plus, for each user, a bundle of paths whose attenuations are
modulated by an activity-specific temporal template.  Users superpose
additively in the complex domain, so concurrent activities are entangled in
the returned amplitude.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"CSIT"
VERSION = 1

# Activity template: activity id a modulates its paths at BASE + a * STEP
# cycles per window at constant depth, so each activity is a spectrally
# clean tone. Frequencies 2+4a keep all second-order mixing products
# (sums, differences, second harmonics) at least two DFT bins away from
# every legitimate activity frequency.
BASE_CYCLES = 2.0
STEP_CYCLES = 4.0
MOD_DEPTH = 0.9
USER_RMS = 0.45  # RMS of each user's first-order amplitude footprint


class CsitError(ValueError):
    """File-format rejection with a stable error code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class CsiSample:
    amplitude: np.ndarray  # (T, C), non-negative
    labels: tuple[int, ...]  # activity ids, multiset

    @property
    def occupancy(self) -> int:
        return len(self.labels)


@dataclass
class SynthConfig:
    T: int = 300
    n_sc: int = 8
    n_rx: int = 2
    n_tx: int = 2
    n_act: int = 9
    max_occupancy: int = 5
    paths_per_user: int = 3
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("T", "n_sc", "n_rx", "n_tx", "n_act", "paths_per_user"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    @property
    def channels(self) -> int:
        return self.n_rx * self.n_tx * self.n_sc


def activity_cycles(activity: int) -> float:
    """Modulation frequency (cycles per window) for an activity id."""
    return BASE_CYCLES + STEP_CYCLES * activity


def _path_channel_gains(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Complex per-channel gain of one path: attenuation x carrier phases."""
    alpha = (rng.normal() + 1j * rng.normal()) / np.sqrt(2.0)
    tau = rng.uniform(0.0, 1.0)
    f_k = np.linspace(0.0, 1.0, cfg.n_sc, endpoint=False)
    sc_phase = np.exp(-2j * np.pi * f_k * tau * cfg.n_sc)
    ant_phase = np.exp(1j * rng.uniform(0, 2 * np.pi, cfg.n_rx * cfg.n_tx))
    return alpha * np.kron(ant_phase, sc_phase)  # (C,)


def _background_field(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    g = np.zeros(cfg.channels, dtype=np.complex128)
    for _ in range(4):
        g += _path_channel_gains(cfg, rng)
    # keep the static component dominant so amplitude stays informative and
    # close to linear in the per-user fields
    return g + (3.0 + 1.0j)


def _user_field(cfg: SynthConfig, activity: int, user_rng: np.random.Generator) -> np.ndarray:
    """Time-varying complex contribution of one user, shape (T, C).

    Path gains and phases are random, but the field is normalized to a fixed
    RMS so every person reflects a comparable amount of signal — occupancy
    stays recoverable from amplitude while the channel mix stays random.
    """
    t = np.arange(cfg.T) / cfg.T
    cyc = activity_cycles(activity)
    out = np.zeros((cfg.T, cfg.channels), dtype=np.complex128)
    for _ in range(cfg.paths_per_user):
        gains = _path_channel_gains(cfg, user_rng)
        phase = user_rng.uniform(0, 2 * np.pi)
        mod = MOD_DEPTH * np.cos(2 * np.pi * cyc * t + phase)
        out += np.outer(mod, gains)
    return out


def _normalize_visible(field: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Project a user field onto the background phase at a fixed footprint.

    Only the component of the field aligned with the background survives
    the amplitude nonlinearity to first order; the quadrature component
    contributes nothing but second-order mixing products. Keeping the
    aligned part and fixing its RMS makes every person detectable
    regardless of the random path draw and keeps the composite amplitude
    linear in the per-user contributions.
    """
    bg_mag2 = np.maximum(np.abs(background) ** 2, 1e-18)
    coef = (field * np.conj(background)).real / bg_mag2  # real (T, C)
    aligned = coef * background
    rms = np.sqrt(np.mean((coef * np.abs(background)) ** 2))
    return aligned * (USER_RMS / rms) if rms > 0 else aligned


def synth_complex_field(
    cfg: SynthConfig,
    labels,
    seed: int | None = None,
    user_seeds=None,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Return (static background (C,), per-user fields [(T, C), ...]).

    Exposed separately from :func:`synth_sample` so the complex-domain
    superposition property can be verified directly.
    """
    labels = tuple(labels)
    seed = cfg.seed if seed is None else seed
    if user_seeds is None:
        user_seeds = [np.random.SeedSequence(entropy=seed, spawn_key=(u + 1,)) for u in range(len(labels))]
    else:
        user_seeds = [np.random.SeedSequence(entropy=s) for s in user_seeds]
    bg_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    background = _background_field(cfg, bg_rng)
    fields = [
        _normalize_visible(
            _user_field(cfg, a, np.random.default_rng(ss)), background
        )
        for a, ss in zip(labels, user_seeds)
    ]
    return background, fields


def synth_sample(
    cfg: SynthConfig,
    labels,
    seed: int | None = None,
    user_seeds=None,
) -> CsiSample:
    """Generate one amplitude sample for an activity multiset."""
    labels = tuple(labels)
    if len(labels) > cfg.max_occupancy:
        raise ValueError(
            f"{len(labels)} labels exceed max occupancy {cfg.max_occupancy}"
        )
    for a in labels:
        if not 1 <= a <= cfg.n_act:
            raise ValueError(f"activity id {a} outside 1..{cfg.n_act}")
    seed = cfg.seed if seed is None else seed
    background, fields = synth_complex_field(cfg, labels, seed, user_seeds)
    h = np.broadcast_to(background, (cfg.T, cfg.channels)).astype(np.complex128).copy()
    for f in fields:
        h += f
    if cfg.noise_std > 0:
        noise_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(999,))
        )
        h += cfg.noise_std * (
            noise_rng.normal(size=h.shape) + 1j * noise_rng.normal(size=h.shape)
        ) / np.sqrt(2.0)
    return CsiSample(amplitude=np.abs(h), labels=labels)


def synth_dataset(
    cfg: SynthConfig,
    n_samples: int,
    seed: int = 0,
    max_occupancy: int | None = None,
) -> list[CsiSample]:
    """Draw samples with uniform occupancy in [0, max] and distinct activities.

    Activities within one window are drawn without replacement: two users
    performing the same activity superpose at the same modulation frequency
    with a random relative phase, which makes their joint amplitude — and
    hence the occupancy — fundamentally ambiguous.
    """
    occ_cap = cfg.max_occupancy if max_occupancy is None else max_occupancy
    occ_cap = min(occ_cap, cfg.n_act)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(77,)))
    out = []
    for i in range(n_samples):
        n_p = int(rng.integers(0, occ_cap + 1))
        labels = tuple(sorted((rng.choice(cfg.n_act, size=n_p, replace=False) + 1).tolist()))
        out.append(synth_sample(cfg, labels, seed=seed * 1_000_003 + i))
    return out


# -- .csit file format -------------------------------------------------------------


def write_tensor_file(path: str, samples, n_act: int, max_occupancy: int):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HIBB", VERSION, len(samples), n_act, max_occupancy))
        for s in samples:
            amp = np.asarray(s.amplitude, dtype="<f4")
            T_, C_ = amp.shape
            f.write(struct.pack("<IIB", T_, C_, len(s.labels)))
            f.write(bytes(s.labels))
            f.write(amp.tobytes())


def load_tensor_file(path: str):
    """Yield CsiSample records from a .csit file, validating as it goes."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise CsitError("bad-magic", f"expected {MAGIC!r}, got {buf[:4]!r}")
    if len(buf) < 12:
        raise CsitError("truncated", "header incomplete")
    version, count, n_act, max_occ = struct.unpack_from("<HIBB", buf, 4)
    if version != VERSION:
        raise CsitError("bad-version", f"unsupported version {version}")
    off = 12
    for i in range(count):
        if off + 9 > len(buf):
            raise CsitError("truncated", f"sample {i} header incomplete")
        T_, C_, n_p = struct.unpack_from("<IIB", buf, off)
        off += 9
        if n_p > max_occ:
            raise CsitError(
                "label-overflow",
                f"sample {i} has {n_p} labels, header max occupancy {max_occ}",
            )
        labels = tuple(buf[off : off + n_p])
        off += n_p
        if any(not 1 <= a <= n_act for a in labels):
            raise CsitError("extent-mismatch", f"sample {i} label outside 1..{n_act}")
        nbytes = 4 * T_ * C_
        if off + nbytes > len(buf):
            raise CsitError("truncated", f"sample {i} payload incomplete")
        amp = np.frombuffer(buf[off : off + nbytes], dtype="<f4").reshape(T_, C_)
        off += nbytes
        yield CsiSample(amplitude=amp.astype(np.float64), labels=labels)


def split_dataset(samples, fractions, seed: int):
    """Deterministically split into disjoint, exhaustive parts."""
    fractions = list(fractions)
    if any(f < 0 for f in fractions):
        raise ValueError("fractions must be non-negative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)}, expected 1")
    n = len(samples)
    order = np.random.default_rng(seed).permutation(n)
    bounds = [int(round(c * n)) for c in np.cumsum(fractions)]
    bounds[-1] = n
    parts = []
    start = 0
    for b in bounds:
        parts.append([samples[i] for i in order[start:b]])
        start = b
    return tuple(parts)
