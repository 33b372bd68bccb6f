"""Binary snapshot container for samples and goodness fields.

One container format (magic "RILC", little-endian throughout, trailing CRC32
over everything before it) with two section tags: "SAMP" for an interlacement
sample (window header, vacant bit-field packed C-order with the last axis
fastest, optional trajectory section) and "GOOD" for a goodness field (core
and slab headers, good bit-field over the core, vacant bit-field over the
slab). Fields are bit-packed with numpy little bit order, so files are
byte-identical across hosts.
"""

from __future__ import annotations

import math
import struct
import zlib

import numpy as np

from .goodness import GoodnessField
from .lattice import Window
from .sampler import InterlacementSample, Trajectory


MAGIC = b"RILC"
VERSION = 1
_SHAPES = {"box": 0, "slab": 1}
_SHAPE_NAMES = {v: k for k, v in _SHAPES.items()}
_MODES = {"exact": 0, "truncate": 1}
_MODE_NAMES = {v: k for k, v in _MODES.items()}


class SnapshotError(RuntimeError):
    pass


class ChecksumError(SnapshotError):
    pass


class _Writer:
    def __init__(self, section: bytes):
        self.buf = bytearray()
        self.buf += MAGIC
        self.buf += struct.pack("<H", VERSION)
        self.buf += section

    def pack(self, fmt, *vals):
        self.buf += struct.pack("<" + fmt, *vals)

    def bits(self, mask: np.ndarray):
        flat = np.ascontiguousarray(mask, dtype=bool).ravel()
        packed = np.packbits(flat, bitorder="little")
        self.pack("Q", flat.size)
        self.buf += packed.tobytes()

    def ints(self, arr):
        a = np.ascontiguousarray(arr, dtype="<i8")
        self.buf += a.tobytes()

    def finish(self, path):
        self.buf += struct.pack("<I", zlib.crc32(bytes(self.buf)))
        with open(path, "wb") as fh:
            fh.write(bytes(self.buf))


class _Reader:
    def __init__(self, path):
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < 14 or raw[:4] != MAGIC:
            raise SnapshotError(f"{path}: not a RILC container")
        payload, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
        if zlib.crc32(payload) != crc:
            raise ChecksumError(f"{path}: checksum mismatch (truncated or corrupt)")
        (version,) = struct.unpack_from("<H", raw, 4)
        if version != VERSION:
            raise SnapshotError(f"{path}: unsupported container version {version}")
        self.section = raw[6:10]
        self.raw = raw
        self.off = 10

    def unpack(self, fmt):
        fmt = "<" + fmt
        vals = struct.unpack_from(fmt, self.raw, self.off)
        self.off += struct.calcsize(fmt)
        return vals if len(vals) > 1 else vals[0]

    def bits(self, shape) -> np.ndarray:
        n = self.unpack("Q")
        nbytes = (n + 7) // 8
        packed = np.frombuffer(self.raw, dtype=np.uint8, count=nbytes, offset=self.off)
        self.off += nbytes
        flat = np.unpackbits(packed, count=n, bitorder="little").astype(bool)
        return flat.reshape(shape)

    def ints(self, count) -> np.ndarray:
        arr = np.frombuffer(self.raw, dtype="<i8", count=count, offset=self.off)
        self.off += 8 * count
        return arr.astype(np.int64)


def _write_window(w: _Writer, win: Window):
    w.pack("HBi", win.d, _SHAPES[win.shape], win.slab_n)
    w.ints(win.lo)
    w.ints(win.hi)


def _read_window(r: _Reader) -> Window:
    d, shape, slab_n = r.unpack("HBi")
    lo = tuple(int(c) for c in r.ints(d))
    hi = tuple(int(c) for c in r.ints(d))
    return Window(lo, hi, shape=_SHAPE_NAMES[shape], slab_n=slab_n)


def write_sample(path, sample: InterlacementSample) -> None:
    w = _Writer(b"SAMP")
    _write_window(w, sample.window)
    radius = sample.truncate_radius
    w.pack("dBdQQB", sample.u, _MODES[sample.mode],
           math.nan if radius is None else float(radius),
           sample.seed, sample.stream,
           1 if sample.trajectories is not None else 0)
    w.bits(sample.vacant())
    if sample.trajectories is not None:
        w.pack("I", len(sample.trajectories))
        for t in sample.trajectories:
            w.pack("dBI", t.label, 0 if t.ended == "escaped" else 1, t.excursions)
            w.ints(t.start)
            w.pack("I", len(t.sites))
            w.ints(np.array(t.sites, dtype=np.int64).reshape(-1))
    w.finish(path)


def read_sample(path) -> InterlacementSample:
    r = _Reader(path)
    if r.section != b"SAMP":
        raise SnapshotError(f"{path}: expected a sample section, found {r.section!r}")
    window = _read_window(r)
    u, mode, radius, seed, stream, has_traj = r.unpack("dBdQQB")
    vacant = r.bits(window.extents)
    trajectories = None
    minlabel = np.where(vacant.ravel(), np.inf, u)
    if has_traj:
        trajectories = []
        minlabel = np.full(window.size, np.inf)
        count = r.unpack("I")
        for _ in range(count):
            label, ended, excursions = r.unpack("dBI")
            start = tuple(int(c) for c in r.ints(window.d))
            n = r.unpack("I")
            sites = [tuple(int(c) for c in row)
                     for row in r.ints(n * window.d).reshape(n, window.d)]
            trajectories.append(Trajectory(label, start, sites,
                                           int(excursions),
                                           "escaped" if ended == 0 else "killed"))
            idx = np.array([window.index(s) for s in sites], dtype=np.int64)
            np.minimum.at(minlabel, idx, label)
    return InterlacementSample(
        u=u, window=window, mode=_MODE_NAMES[mode],
        truncate_radius=None if math.isnan(radius) else radius,
        seed=int(seed), stream=int(stream), minlabel=minlabel,
        trajectories=trajectories, exact_labels=bool(has_traj))


def write_goodness(path, gf: GoodnessField) -> None:
    w = _Writer(b"GOOD")
    _write_window(w, gf.core)
    _write_window(w, gf.slab)
    w.pack("d", gf.u)
    w.bits(gf.good)
    w.bits(gf.vacant)
    w.finish(path)


def read_goodness(path) -> GoodnessField:
    r = _Reader(path)
    if r.section != b"GOOD":
        raise SnapshotError(f"{path}: expected a goodness section, found {r.section!r}")
    core = _read_window(r)
    slab = _read_window(r)
    u = r.unpack("d")
    good = r.bits(core.extents)
    vacant = r.bits(slab.extents)
    return GoodnessField(core, u, good, slab, vacant)


def read_any(path):
    """Load whichever snapshot type the file holds."""
    r = _Reader(path)
    if r.section == b"SAMP":
        return read_sample(path)
    if r.section == b"GOOD":
        return read_goodness(path)
    raise SnapshotError(f"{path}: unknown section {r.section!r}")
