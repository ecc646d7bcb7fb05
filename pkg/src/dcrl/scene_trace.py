"""Synthetic scene and bandwidth traces.

Real video is replaced by a per-slot summary: how similar the frame is to the
previous one, how many objects it holds, and how those objects cluster into
ROI blocks. Bandwidth is an i.i.d. clamped Normal series.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import Stream

NATIVE_FRAME_PIXELS = 640 * 480


class TraceError(ValueError):
    """Raised for invalid trace parameters or malformed trace files."""


@dataclass(frozen=True)
class BlockSpec:
    pixel_fraction: float
    density: int

    def __post_init__(self):
        if not 0.0 < self.pixel_fraction <= 1.0:
            raise TraceError(f"pixel_fraction must be in (0,1], got {self.pixel_fraction}")
        if self.density < 0:
            raise TraceError(f"density must be >= 0, got {self.density}")


@dataclass(frozen=True)
class SceneSlot:
    slot_index: int
    h: float
    true_object_count: int
    blocks: tuple[BlockSpec, ...]
    full_frame_pixels: int = NATIVE_FRAME_PIXELS

    def __post_init__(self):
        where = f"slot {self.slot_index}"
        if self.slot_index < 0:
            raise TraceError(f"{where}: negative slot index")
        if not (0.0 <= self.h <= 1.0):
            raise TraceError(f"{where}: h={self.h} outside [0,1]")
        if self.true_object_count < 0:
            raise TraceError(f"{where}: negative object count")
        if len(self.blocks) < 1:
            raise TraceError(f"{where}: at least one block required")
        if sum(b.density for b in self.blocks) != self.true_object_count:
            raise TraceError(f"{where}: block densities do not sum to object count")
        if sum(b.pixel_fraction for b in self.blocks) > 1.0 + 1e-12:
            raise TraceError(f"{where}: block pixel fractions exceed 1")
        if self.full_frame_pixels <= 0:
            raise TraceError(f"{where}: full_frame_pixels must be positive")

    @property
    def block_count(self) -> int:
        return len(self.blocks)


@dataclass(frozen=True)
class BandwidthTrace:
    samples: tuple[float, ...]
    rho: float
    sigma: float
    b_min: float

    def __post_init__(self):
        if self.b_min <= 0:
            raise TraceError("b_min must be positive")
        for t, b in enumerate(self.samples):
            if not b >= self.b_min:
                raise TraceError(f"slot {t}: bandwidth {b} below b_min={self.b_min}")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class SceneGenParams:
    max_objects: int = 12
    p_up: float = 0.2
    p_down: float = 0.2
    motion_mean: float = 0.15
    motion_std: float = 0.15
    motion_scale: float = 1.0
    cluster_size: int = 3
    fraction_per_object: float = 0.04
    fraction_base: float = 0.02
    fraction_min: float = 0.02
    fraction_max: float = 0.35
    full_frame_pixels: int = NATIVE_FRAME_PIXELS

    def validate(self) -> None:
        if self.max_objects < 1:
            raise TraceError("max_objects must be >= 1")
        if self.p_up < 0 or self.p_down < 0 or self.p_up + self.p_down > 1:
            raise TraceError("p_up, p_down must be >= 0 with p_up + p_down <= 1")
        if self.motion_std < 0 or self.motion_scale < 0:
            raise TraceError("motion_std and motion_scale must be >= 0")
        if self.cluster_size < 1:
            raise TraceError("cluster_size must be >= 1")
        if not 0 < self.fraction_min <= self.fraction_max <= 1:
            raise TraceError("need 0 < fraction_min <= fraction_max <= 1")
        if self.full_frame_pixels <= 0:
            raise TraceError("full_frame_pixels must be positive")


def block_count_for(objects: int, cluster_size: int) -> int:
    # round half up, not Python's banker's rounding
    return max(1, int(math.floor(objects / cluster_size + 0.5)))


def _blocks_for(objects: int, params: SceneGenParams) -> tuple[BlockSpec, ...]:
    s = block_count_for(objects, params.cluster_size)
    base, extra = divmod(objects, s)
    densities = [base + (1 if i < extra else 0) for i in range(s)]
    fractions = [
        min(max(params.fraction_per_object * n + params.fraction_base, params.fraction_min),
            params.fraction_max)
        for n in densities
    ]
    total = sum(fractions)
    if total > 1.0:
        fractions = [f / total for f in fractions]
    return tuple(BlockSpec(f, n) for f, n in zip(fractions, densities))


def generate_scene_trace(params: SceneGenParams, seed: int, T: int) -> list[SceneSlot]:
    """Generate ``T`` correlated scene slots.

    The object count is a reflected +-1 random walk on ``{0..max_objects}``
    started from its (uniform) stationary law; motion is i.i.d. clamped
    Normal and ``h = 1 - motion``.
    """
    if T < 1:
        raise TraceError("T must be >= 1")
    params.validate()
    root = Stream(seed)
    # separate streams: motion settings never perturb the object walk
    walk, motion_rng = root.spawn("objects"), root.spawn("motion")
    count = walk.integer(params.max_objects + 1)
    slots = []
    for t in range(T):
        if t > 0:
            u = walk.uniform()
            if u < params.p_down:
                step = -1
            elif u < params.p_down + params.p_up:
                step = 1
            else:
                step = 0
            nxt = count + step
            if 0 <= nxt <= params.max_objects:
                count = nxt
        motion = params.motion_scale * motion_rng.normal(params.motion_mean, params.motion_std)
        motion = min(max(motion, 0.0), 1.0)
        slots.append(SceneSlot(
            slot_index=t,
            h=1.0 - motion,
            true_object_count=count,
            blocks=_blocks_for(count, params),
            full_frame_pixels=params.full_frame_pixels,
        ))
    return slots


def expected_block_count(params: SceneGenParams) -> float:
    """Stationary mean of the block count, from the walk's transition matrix."""
    params.validate()
    n = params.max_objects + 1
    P = np.zeros((n, n))
    for i in range(n):
        for j, p in ((i - 1, params.p_down), (i + 1, params.p_up)):
            if 0 <= j < n:
                P[i, j] += p
            else:
                P[i, i] += p
        P[i, i] += 1.0 - params.p_up - params.p_down
    # left eigenvector for eigenvalue 1
    w, v = np.linalg.eig(P.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    pi = pi / pi.sum()
    counts = np.array([block_count_for(k, params.cluster_size) for k in range(n)])
    return float(pi @ counts)


def generate_bandwidth_trace(rho: float, sigma: float, b_min: float, seed: int, T: int) -> BandwidthTrace:
    """i.i.d. Normal(rho, sigma) draws clamped below at ``b_min`` (MB/s)."""
    if not rho > 0:
        raise TraceError("rho must be > 0")
    if not sigma >= 0:
        raise TraceError("sigma must be >= 0")
    if not 0 < b_min < rho:
        raise TraceError("b_min must satisfy 0 < b_min < rho")
    if T < 1:
        raise TraceError("T must be >= 1")
    rng = Stream(seed)
    samples = tuple(max(b_min, rng.normal(rho, sigma)) for _ in range(T))
    return BandwidthTrace(samples, rho, sigma, b_min)


def clamped_normal_mean(rho: float, sigma: float, b_min: float) -> float:
    """E[max(b_min, X)] for X ~ Normal(rho, sigma)."""
    if sigma == 0:
        return max(rho, b_min)
    a = (b_min - rho) / sigma
    cdf = 0.5 * (1.0 + math.erf(a / math.sqrt(2.0)))
    pdf = math.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
    return b_min * cdf + rho * (1.0 - cdf) + sigma * pdf


def _slice_scene(scene: list[SceneSlot], lo: int, hi: int) -> list[SceneSlot]:
    return [
        SceneSlot(i, s.h, s.true_object_count, s.blocks, s.full_frame_pixels)
        for i, s in enumerate(scene[lo:hi])
    ]


def split_trace(scene: list[SceneSlot], bandwidth: BandwidthTrace, train_fraction: float):
    """Contiguous train prefix of ``floor(train_fraction * T)`` slots, test remainder.

    Slot indices are renumbered from 0 within each part.
    """
    if len(scene) != len(bandwidth):
        raise TraceError(f"length mismatch: scene {len(scene)} vs bandwidth {len(bandwidth)}")
    if not 0.0 < train_fraction < 1.0:
        raise TraceError("train_fraction must be in (0,1)")
    T = len(scene)
    cut = int(math.floor(train_fraction * T))
    if cut < 1 or cut >= T:
        raise TraceError(f"split of {T} slots at {train_fraction} leaves an empty part")

    def bw(lo, hi):
        return BandwidthTrace(bandwidth.samples[lo:hi], bandwidth.rho, bandwidth.sigma, bandwidth.b_min)

    return (_slice_scene(scene, 0, cut), bw(0, cut)), (_slice_scene(scene, cut, T), bw(cut, T))


# ---------------------------------------------------------------------------
# CSV persistence

HEADER = ["slot", "h", "objects", "bandwidth", "blocks"]


def write_trace(scene: list[SceneSlot], bandwidth: BandwidthTrace, path) -> None:
    if len(scene) != len(bandwidth):
        raise TraceError("scene and bandwidth lengths differ")
    if not scene:
        raise TraceError("cannot write an empty trace")
    pixels = {s.full_frame_pixels for s in scene}
    if len(pixels) != 1:
        raise TraceError("all slots must share full_frame_pixels")
    buf = io.StringIO()
    buf.write(
        f"# rho={bandwidth.rho!r} sigma={bandwidth.sigma!r} "
        f"b_min={bandwidth.b_min!r} full_frame_pixels={pixels.pop()}\n"
    )
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for s, b in zip(scene, bandwidth.samples):
        blocks = ";".join(f"{blk.pixel_fraction!r}:{blk.density}" for blk in s.blocks)
        w.writerow([s.slot_index, repr(s.h), s.true_object_count, repr(b), blocks])
    Path(path).write_text(buf.getvalue())


def _parse_meta(line: str) -> dict[str, str]:
    meta = {}
    for tok in line.lstrip("#").split():
        key, _, val = tok.partition("=")
        meta[key] = val
    return meta


def read_trace(path) -> tuple[list[SceneSlot], BandwidthTrace]:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise TraceError(f"{path}: empty trace file")
    if not lines[0].startswith("#"):
        raise TraceError(f"{path}: missing metadata line")
    meta = _parse_meta(lines[0])
    try:
        rho, sigma, b_min = float(meta["rho"]), float(meta["sigma"]), float(meta["b_min"])
        pixels = int(meta["full_frame_pixels"])
    except (KeyError, ValueError) as exc:
        raise TraceError(f"{path}: bad metadata line: {lines[0]!r}") from exc
    rows = list(csv.reader(lines[1:]))
    if not rows or rows[0] != HEADER:
        raise TraceError(f"{path}: expected header {','.join(HEADER)}")
    if len(rows) == 1:
        raise TraceError(f"{path}: trace has no slots")
    scene, samples = [], []
    for lineno, row in enumerate(rows[1:], start=3):
        if len(row) != len(HEADER):
            raise TraceError(f"{path}:{lineno}: expected {len(HEADER)} fields, got {len(row)}")
        try:
            idx, h, objects, b = int(row[0]), float(row[1]), int(row[2]), float(row[3])
            blocks = []
            for item in row[4].split(";"):
                frac, _, dens = item.partition(":")
                blocks.append((float(frac), int(dens)))
        except ValueError as exc:
            raise TraceError(f"{path}:{lineno}: malformed row {row!r}") from exc
        if idx != len(scene):
            raise TraceError(f"{path}:{lineno}: slot index {idx} out of sequence")
        try:
            scene.append(SceneSlot(idx, h, objects, tuple(BlockSpec(f, n) for f, n in blocks), pixels))
        except TraceError as exc:
            raise TraceError(f"{path}: {exc}") from exc
        samples.append(b)
    try:
        bandwidth = BandwidthTrace(tuple(samples), rho, sigma, b_min)
    except TraceError as exc:
        raise TraceError(f"{path}: {exc}") from exc
    return scene, bandwidth
