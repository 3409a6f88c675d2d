"""Volumes, MetaImage I/O, intensity windows and synthetic phantoms.

Voxel data is held as a float64 array indexed ``data[x, y, z]``.  On disk
the payload is x-fastest (MetaImage convention), which is the Fortran
order of that array.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

__all__ = [
    "Volume",
    "IntensityWindow",
    "Region",
    "PhantomSpec",
    "GroundTruth",
    "GroundTruthRegion",
    "VolumeIOError",
    "PhantomError",
    "load_volume",
    "save_volume",
    "bin_of",
    "make_phantom",
    "ellipsoid_mask",
    "rle_encode",
    "rle_decode",
    "save_ground_truth",
    "load_ground_truth",
    "atomic_write_bytes",
]


class VolumeIOError(IOError):
    """Raised for unreadable, inconsistent or unsupported volume files."""


class PhantomError(ValueError):
    """Raised when a phantom description is invalid."""


_MET_TYPES = {
    "MET_UCHAR": np.dtype("<u1"),
    "MET_SHORT": np.dtype("<i2"),
    "MET_USHORT": np.dtype("<u2"),
    "MET_FLOAT": np.dtype("<f4"),
    "MET_DOUBLE": np.dtype("<f8"),
}
_DTYPE_TO_MET = {v: k for k, v in _MET_TYPES.items()}


@dataclass(frozen=True, eq=False)
class Volume:
    """Immutable 3D scalar grid; a 2D image is a volume with ``nz == 1``."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be 3D with non-empty axes, got {data.shape}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        data = np.array(data, copy=True)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def intensity_range(self) -> tuple[float, float]:
        return float(self.data.min()), float(self.data.max())

    @property
    def is_2d(self) -> bool:
        return self.data.shape[2] == 1

    def binned(self, iw: "IntensityWindow") -> np.ndarray:
        """Bin index of every voxel under ``iw`` (cached per window)."""
        key = ("bins", iw.low, iw.high, iw.bins)
        bins = self._cache.get(key)
        if bins is None:
            bins = bin_of(iw, self.data)
            bins.setflags(write=False)
            self._cache[key] = bins
        return bins

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class IntensityWindow:
    """Intensity range ``[low, high]`` mapped onto ``bins`` histogram bins."""

    low: float
    high: float
    bins: int = 64

    def __post_init__(self) -> None:
        if not self.low < self.high:
            raise ValueError(f"window low ({self.low}) must be below high ({self.high})")
        if int(self.bins) != self.bins or self.bins < 2:
            raise ValueError(f"bin count must be an integer >= 2, got {self.bins}")
        object.__setattr__(self, "bins", int(self.bins))


def bin_of(iw: IntensityWindow, intensity):
    """Histogram bin of ``intensity`` (scalar or array); out-of-window values clamp."""
    x = np.asarray(intensity, dtype=np.float64)
    b = np.floor((x - iw.low) / (iw.high - iw.low) * iw.bins)
    b = np.clip(b, 0, iw.bins - 1).astype(np.intp)
    if b.ndim == 0:
        return int(b)
    return b


# --------------------------------------------------------------------------- I/O


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    """Write ``payload`` to ``path`` via a temp file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_header(path: Path) -> dict[str, str]:
    header: dict[str, str] = {}
    try:
        text = path.read_text(encoding="ascii")
    except FileNotFoundError as exc:
        raise VolumeIOError(f"no such file: {path}") from exc
    except UnicodeDecodeError as exc:
        raise VolumeIOError(f"{path}: header is not ASCII text") from exc
    for line in text.splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise VolumeIOError(f"{path}: malformed header line {line!r}")
        key, value = line.split("=", 1)
        header[key.strip()] = value.strip()
    return header


def load_volume(path: str | os.PathLike) -> Volume:
    """Read a MetaImage ``.mhd`` header and its raw payload."""
    path = Path(path)
    hdr = _parse_header(path)
    try:
        ndims = int(hdr.get("NDims", "3"))
        dims = [int(t) for t in hdr["DimSize"].split()]
        etype = hdr["ElementType"]
        datafile = hdr["ElementDataFile"]
    except (KeyError, ValueError) as exc:
        raise VolumeIOError(f"{path}: missing or malformed header key ({exc})") from exc
    if ndims not in (2, 3) or len(dims) != ndims:
        raise VolumeIOError(f"{path}: NDims={ndims} inconsistent with DimSize={dims}")
    if hdr.get("BinaryDataByteOrderMSB", "False").lower() in ("true", "1"):
        raise VolumeIOError(f"{path}: big-endian payloads are not supported")
    if hdr.get("CompressedData", "False").lower() in ("true", "1"):
        raise VolumeIOError(f"{path}: compressed payloads are not supported")
    if etype not in _MET_TYPES:
        raise VolumeIOError(f"{path}: unsupported ElementType {etype}")
    if datafile == "LOCAL":
        raise VolumeIOError(f"{path}: inline (LOCAL) payloads are not supported")
    spacing = [1.0] * ndims
    if "ElementSpacing" in hdr:
        spacing = [float(t) for t in hdr["ElementSpacing"].split()]
    if ndims == 2:
        dims.append(1)
        spacing.append(1.0)

    raw_path = path.parent / datafile
    try:
        raw = raw_path.read_bytes()
    except FileNotFoundError as exc:
        raise VolumeIOError(f"raw data file not found: {raw_path}") from exc
    dtype = _MET_TYPES[etype]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) != expected:
        raise VolumeIOError(
            f"{raw_path}: size mismatch, header implies {expected} bytes, file has {len(raw)}"
        )
    flat = np.frombuffer(raw, dtype=dtype)
    data = flat.reshape(dims[::-1]).transpose(2, 1, 0)
    return Volume(data, tuple(spacing))


def _pick_element_type(data: np.ndarray) -> np.dtype:
    if np.all(np.isfinite(data)) and np.array_equal(data, np.round(data)):
        lo, hi = data.min(), data.max()
        if lo >= 0 and hi <= 255:
            return _MET_TYPES["MET_UCHAR"]
        if lo >= -32768 and hi <= 32767:
            return _MET_TYPES["MET_SHORT"]
        if lo >= 0 and hi <= 65535:
            return _MET_TYPES["MET_USHORT"]
    if np.array_equal(data.astype(np.float32).astype(np.float64), data, equal_nan=True):
        return _MET_TYPES["MET_FLOAT"]
    return _MET_TYPES["MET_DOUBLE"]


def save_volume(v: Volume, path: str | os.PathLike, element_type: str | None = None) -> None:
    """Write ``v`` as ``path`` (.mhd) plus a sibling ``.raw`` payload.

    The element type defaults to the narrowest supported type that holds the
    data exactly.
    """
    path = Path(path)
    if element_type is None:
        dtype = _pick_element_type(v.data)
    else:
        if element_type not in _MET_TYPES:
            raise VolumeIOError(f"unsupported ElementType {element_type}")
        dtype = _MET_TYPES[element_type]
    raw_path = path.with_suffix(".raw")
    payload = np.asarray(v.data.transpose(2, 1, 0), dtype=dtype).tobytes(order="C")
    header = "\n".join(
        [
            "ObjectType = Image",
            "NDims = 3",
            "BinaryData = True",
            "BinaryDataByteOrderMSB = False",
            "CompressedData = False",
            "DimSize = " + " ".join(str(n) for n in v.dims),
            "ElementSpacing = " + " ".join(repr(s) for s in v.spacing),
            f"ElementType = {_DTYPE_TO_MET[dtype]}",
            f"ElementDataFile = {raw_path.name}",
            "",
        ]
    )
    atomic_write_bytes(raw_path, payload)
    atomic_write_bytes(path, header.encode("ascii"))


# ---------------------------------------------------------------------- phantoms


@dataclass(frozen=True)
class Region:
    """A painted phantom region.

    ``shape`` is ``"box"`` (``origin`` + ``size`` in voxels), ``"ball"``
    (``center`` + ``radius``) or ``"ellipsoid"`` (``center`` + ``axes``, three
    semi-axis vectors given as rows).  ``fill`` is either
    ``{"kind": "uniform", "low": a, "high": b}`` (integers drawn from
    ``[a, b)``) or ``{"kind": "constant", "value": c}``.
    """

    shape: str
    fill: dict
    center: tuple[float, float, float] | None = None
    radius: float | None = None
    axes: tuple[tuple[float, float, float], ...] | None = None
    origin: tuple[int, int, int] | None = None
    size: tuple[int, int, int] | None = None

    def bandwidth(self) -> np.ndarray:
        if self.shape == "ellipsoid":
            a = np.asarray(self.axes, dtype=float)
            return a.T @ a
        if self.shape == "ball":
            return np.eye(3) * float(self.radius) ** 2
        half = np.asarray(self.size, dtype=float) / 2.0
        return np.diag(half**2)

    def mask(self, dims: tuple[int, int, int]) -> np.ndarray:
        if self.shape == "box":
            m = np.zeros(dims, dtype=bool)
            o = np.asarray(self.origin, dtype=int)
            s = np.asarray(self.size, dtype=int)
            m[o[0] : o[0] + s[0], o[1] : o[1] + s[1], o[2] : o[2] + s[2]] = True
            return m
        return ellipsoid_mask(dims, self.center, self.bandwidth())

    def extent(self) -> tuple[np.ndarray, np.ndarray]:
        """Inclusive lower/upper voxel-coordinate bounds of the region."""
        if self.shape == "box":
            o = np.asarray(self.origin, dtype=float)
            return o, o + np.asarray(self.size, dtype=float) - 1
        c = np.asarray(self.center, dtype=float)
        half = np.sqrt(np.diag(self.bandwidth()))
        return c - half, c + half

    @classmethod
    def from_dict(cls, d: dict) -> "Region":
        d = dict(d)
        shape = d.pop("shape", None)
        fill = d.pop("fill", {"kind": "uniform", "low": 0, "high": 64})
        kw: dict[str, Any] = {}
        if shape == "box":
            kw["origin"] = tuple(int(t) for t in d.pop("origin"))
            kw["size"] = tuple(int(t) for t in d.pop("size"))
            if len(kw["origin"]) != 3 or len(kw["size"]) != 3 or min(kw["size"]) < 1:
                raise PhantomError("box needs 3-element origin and positive 3-element size")
        elif shape == "ball":
            kw["center"] = tuple(float(t) for t in d.pop("center"))
            kw["radius"] = float(d.pop("radius"))
            if kw["radius"] <= 0:
                raise PhantomError("ball radius must be positive")
        elif shape == "ellipsoid":
            kw["center"] = tuple(float(t) for t in d.pop("center"))
            if "axes" in d:
                axes = np.asarray(d.pop("axes"), dtype=float)
            else:
                radii = np.asarray(d.pop("radii"), dtype=float)
                angle = np.deg2rad(float(d.pop("rotation_z_deg", 0.0)))
                c, s = np.cos(angle), np.sin(angle)
                rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
                axes = (rot @ np.diag(radii)).T
            if axes.shape != (3, 3) or abs(np.linalg.det(axes)) < 1e-12:
                raise PhantomError("ellipsoid axes must be three independent 3-vectors")
            kw["axes"] = tuple(tuple(float(t) for t in row) for row in axes)
        else:
            raise PhantomError(f"unknown region shape {shape!r}")
        if d:
            raise PhantomError(f"unknown region keys: {sorted(d)}")
        kind = fill.get("kind")
        if kind == "uniform":
            if not set(fill) <= {"kind", "low", "high"} or not fill.get("low", 0) < fill.get("high", 64):
                raise PhantomError(f"bad uniform fill {fill}")
        elif kind == "constant":
            if set(fill) != {"kind", "value"}:
                raise PhantomError(f"bad constant fill {fill}")
        else:
            raise PhantomError(f"unknown fill kind {kind!r}")
        return cls(shape=shape, fill=dict(fill), **kw)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"shape": self.shape, "fill": dict(self.fill)}
        if self.shape == "box":
            out["origin"] = list(self.origin)
            out["size"] = list(self.size)
        else:
            out["center"] = list(self.center)
            if self.shape == "ball":
                out["radius"] = self.radius
            else:
                out["axes"] = [list(r) for r in self.axes]
        return out


@dataclass(frozen=True)
class PhantomSpec:
    """Synthetic volume description: background model, regions, RNG seed.

    ``background`` is ``{"kind": "constant", "value": v}`` (a delta
    distribution) or ``{"kind": "gaussian", "mean": m, "std": s}``.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    background: dict = field(default_factory=lambda: {"kind": "constant", "value": 0.0})
    regions: tuple[Region, ...] = ()
    rng_seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        unknown = set(d) - {"dims", "spacing", "background", "regions", "rng_seed"}
        if unknown:
            raise PhantomError(f"unknown phantom keys: {sorted(unknown)}")
        try:
            dims = tuple(int(t) for t in d["dims"])
        except KeyError as exc:
            raise PhantomError("phantom spec needs 'dims'") from exc
        if len(dims) == 2:
            dims = dims + (1,)
        if len(dims) != 3 or min(dims) < 1:
            raise PhantomError(f"bad dims {dims}")
        spacing = tuple(float(t) for t in d.get("spacing", (1.0, 1.0, 1.0)))
        if len(spacing) == 2:
            spacing = spacing + (1.0,)
        bg = dict(d.get("background", {"kind": "constant", "value": 0.0}))
        if bg.get("kind") == "constant":
            if set(bg) != {"kind", "value"}:
                raise PhantomError(f"bad constant background {bg}")
        elif bg.get("kind") == "gaussian":
            if set(bg) != {"kind", "mean", "std"} or bg["std"] < 0:
                raise PhantomError(f"bad gaussian background {bg}")
        else:
            raise PhantomError(f"unknown background kind {bg.get('kind')!r}")
        regions = tuple(Region.from_dict(r) for r in d.get("regions", []))
        return cls(dims, spacing, bg, regions, int(d.get("rng_seed", 0)))

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "background": dict(self.background),
            "regions": [r.to_dict() for r in self.regions],
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "PhantomSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class GroundTruthRegion:
    center: np.ndarray
    H: np.ndarray
    mask: np.ndarray
    shape: str = "ellipsoid"


@dataclass(frozen=True, eq=False)
class GroundTruth:
    dims: tuple[int, int, int]
    regions: tuple[GroundTruthRegion, ...] = ()

    def label_map(self) -> np.ndarray:
        labels = np.zeros(self.dims, dtype=np.int32)
        for i, r in enumerate(self.regions, start=1):
            labels[r.mask] = i
        return labels


def ellipsoid_mask(dims, center, H) -> np.ndarray:
    """Voxels ``s`` with ``(s - center)^T H^-1 (s - center) <= 1``."""
    c = np.asarray(center, dtype=float)
    hinv = np.linalg.inv(np.asarray(H, dtype=float))
    grids = np.meshgrid(*(np.arange(n, dtype=float) for n in dims), indexing="ij")
    off = np.stack([g - ci for g, ci in zip(grids, c)], axis=-1)
    d = np.einsum("...i,ij,...j->...", off, hinv, off)
    return d <= 1.0 + 1e-12


def make_phantom(spec: PhantomSpec) -> tuple[Volume, GroundTruth]:
    """Paint ``spec`` into a volume and return it with its ground truth."""
    dims = spec.dims
    rng = np.random.default_rng(spec.rng_seed)
    bg = spec.background
    if bg["kind"] == "constant":
        data = np.full(dims, float(bg["value"]))
    else:
        data = rng.normal(float(bg["mean"]), float(bg["std"]), size=dims)

    occupied = np.zeros(dims, dtype=bool)
    gts = []
    upper = np.asarray(dims, dtype=float) - 1
    for i, region in enumerate(spec.regions):
        lo, hi = region.extent()
        if np.any(lo < -1e-9) or np.any(hi > upper + 1e-9):
            raise PhantomError(f"region {i} ({region.shape}) extends outside the volume")
        mask = region.mask(dims)
        n = int(mask.sum())
        if n == 0:
            raise PhantomError(f"region {i} covers no voxels")
        if np.any(occupied & mask):
            raise PhantomError(f"region {i} overlaps an earlier region")
        occupied |= mask
        fill = region.fill
        if fill["kind"] == "uniform":
            data[mask] = rng.integers(int(fill["low"]), int(fill["high"]), size=n)
        else:
            data[mask] = float(fill["value"])
        centroid = np.argwhere(mask).mean(axis=0)
        mask.setflags(write=False)
        gts.append(GroundTruthRegion(centroid, region.bandwidth(), mask, region.shape))
    return Volume(data, spec.spacing), GroundTruth(dims, tuple(gts))


# ------------------------------------------------------------ ground-truth files


def rle_encode(mask: np.ndarray) -> list[list[int]]:
    """``[start, length]`` runs of True over the x-fastest flattening of ``mask``."""
    flat = np.asarray(mask, dtype=np.int8).transpose(2, 1, 0).ravel()
    edges = np.diff(np.concatenate([[0], flat, [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return [[int(s), int(e - s)] for s, e in zip(starts, ends)]


def rle_decode(runs, dims) -> np.ndarray:
    nx, ny, nz = dims
    flat = np.zeros(nx * ny * nz, dtype=bool)
    for start, length in runs:
        flat[start : start + length] = True
    return flat.reshape(nz, ny, nx).transpose(2, 1, 0).copy()


def ground_truth_to_dict(gt: GroundTruth) -> dict:
    return {
        "dims": list(gt.dims),
        "regions": [
            {
                "shape": r.shape,
                "center": [float(c) for c in r.center],
                "H": [float(h) for h in np.asarray(r.H).ravel()],
                "voxels": int(r.mask.sum()),
                "rle": rle_encode(r.mask),
            }
            for r in gt.regions
        ],
    }


def ground_truth_from_dict(d: dict) -> GroundTruth:
    dims = tuple(int(n) for n in d["dims"])
    regions = []
    for r in d["regions"]:
        mask = rle_decode(r["rle"], dims)
        regions.append(
            GroundTruthRegion(
                np.asarray(r["center"], dtype=float),
                np.asarray(r["H"], dtype=float).reshape(3, 3),
                mask,
                r.get("shape", "ellipsoid"),
            )
        )
    return GroundTruth(dims, tuple(regions))


def save_ground_truth(gt: GroundTruth, path: str | os.PathLike) -> None:
    payload = json.dumps(ground_truth_to_dict(gt), sort_keys=True) + "\n"
    atomic_write_bytes(path, payload.encode())


def load_ground_truth(path: str | os.PathLike) -> GroundTruth:
    with open(path) as fh:
        return ground_truth_from_dict(json.load(fh))
