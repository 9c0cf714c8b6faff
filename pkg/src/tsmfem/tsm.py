"""Time-separated first-order propagation of a stiffness fluctuation.

Every field y(t, x, xi) is expanded as y0(t, x) + xi * y1(t, x) around the
mean stiffness (xi = 0).  The order-0 problem is the plain deterministic
simulation; the order-1 problem is a second explicit simulation whose
stress law is the exact xi-derivative of the first, driven by the order-0
strain and damage received through a subsampled exchange stream (records
every K steps, zero-order hold in between).  Expectation and standard
deviation of damage, damage function, stress and reaction force follow in
a cheap post-processing pass that only needs the second moment <xi^2>.
"""

from __future__ import annotations

import os
import struct
import tempfile
import time as _time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .material import MaterialParams
from .mesh import LoadCase, Mesh
from .solver import (
    ElementQuadrature,
    History,
    run_deterministic,
    run_with_kernels,
)

_MAGIC = b"TSMX"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")  # magic, version, gp_count, K
_REC_HEAD = struct.Struct("<Qd")  # step, time


class ExchangeFormatError(Exception):
    """Corrupt, truncated, or mismatching exchange file."""


@dataclass(frozen=True)
class Problem:
    """A mesh, its boundary/loading program, and the material.

    ``mass_damping`` (1/s) is the explicit-dynamics noise-control damping
    applied identically by every runner consuming this problem, so the
    deterministic, sensitivity, ensemble, and finite-difference routes all
    integrate exactly the same dynamical system."""

    mesh: Mesh
    loads: LoadCase
    params: MaterialParams
    mass_damping: float = 0.0


@dataclass(frozen=True)
class TsmConfig:
    expansion_order: int = 1
    exchange_interval: int = 1000  # K steps between exchange records
    exchange_mode: str = "in_memory"  # or "file"
    xi_second_moment: float = 0.01

    def __post_init__(self):
        if self.expansion_order != 1:
            raise ValueError("only first-order expansion is supported")
        if self.exchange_interval < 1:
            raise ValueError("exchange_interval must be >= 1")
        if self.exchange_mode not in ("in_memory", "file"):
            raise ValueError(f"unknown exchange_mode '{self.exchange_mode}'")
        if self.xi_second_moment < 0.0:
            raise ValueError("xi_second_moment must be >= 0")


@dataclass
class ExchangeRecord:
    step: int
    time: float
    eps: np.ndarray  # (ngp, 6) order-0 strain
    d: np.ndarray  # (ngp,) order-0 damage


class InMemoryExchange:
    """Sink and source for exchange records held in process memory."""

    def __init__(self, exchange_interval: int, gp_count: int):
        self.K = exchange_interval
        self.gp_count = gp_count
        self.records: list[ExchangeRecord] = []

    def hook(self, step, time, eps, d):
        if step % self.K == 0:
            self.records.append(ExchangeRecord(step, time, eps.copy(), d.copy()))

    @property
    def n_records(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


class ExchangeFileWriter:
    """Streams exchange records to disk; a CRC32 trailer seals the file."""

    def __init__(self, path, exchange_interval: int, gp_count: int):
        self.path = path
        self.K = exchange_interval
        self.gp_count = gp_count
        self._fh = open(path, "wb")
        self._crc = 0
        self._write(_HEADER.pack(_MAGIC, _VERSION, gp_count, exchange_interval))

    def _write(self, data: bytes):
        self._fh.write(data)
        self._crc = zlib.crc32(data, self._crc)

    def write_record(self, step, time, eps, d):
        self._write(_REC_HEAD.pack(step, time))
        self._write(np.ascontiguousarray(eps, dtype="<f8").tobytes())
        self._write(np.ascontiguousarray(d, dtype="<f8").tobytes())

    def hook(self, step, time, eps, d):
        if step % self.K == 0:
            self.write_record(step, time, eps, d)

    def close(self):
        if not self._fh.closed:
            self._fh.write(struct.pack("<I", self._crc))
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _record_size(gp_count: int) -> int:
    return _REC_HEAD.size + gp_count * 7 * 8


def _read_and_check_header(fh, path):
    head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise ExchangeFormatError(f"{path}: truncated header")
    magic, version, gp_count, K = _HEADER.unpack(head)
    if magic != _MAGIC:
        raise ExchangeFormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise ExchangeFormatError(f"{path}: unsupported version {version}")
    return gp_count, K


class ExchangeFileReader:
    """Validated, streaming reader: the whole file is checksum-verified up
    front, then records are yielded one at a time (constant memory)."""

    def __init__(self, path):
        self.path = path
        with open(path, "rb") as fh:
            self.gp_count, self.K = _read_and_check_header(fh, path)
        size = os.path.getsize(path)
        body = size - _HEADER.size - 4
        rec = _record_size(self.gp_count)
        if body < 0 or body % rec != 0:
            raise ExchangeFormatError(
                f"{path}: truncated or misaligned payload ({body} bytes, record={rec})"
            )
        self.n_records = body // rec
        crc = 0
        with open(path, "rb") as fh:
            remaining = size - 4
            while remaining > 0:
                chunk = fh.read(min(1 << 20, remaining))
                if not chunk:
                    raise ExchangeFormatError(f"{path}: unexpected end of file")
                remaining -= len(chunk)
                crc = zlib.crc32(chunk, crc)
            stored = struct.unpack("<I", fh.read(4))[0]
        if crc != stored:
            raise ExchangeFormatError(f"{path}: checksum mismatch")

    def __iter__(self):
        rec = _record_size(self.gp_count)
        prev_step = -1
        with open(self.path, "rb") as fh:
            fh.seek(_HEADER.size)
            for _ in range(self.n_records):
                buf = fh.read(rec)
                step, t = _REC_HEAD.unpack_from(buf)
                if step <= prev_step:
                    raise ExchangeFormatError(f"{self.path}: steps not increasing at {step}")
                prev_step = step
                off = _REC_HEAD.size
                eps = np.frombuffer(buf, dtype="<f8", count=self.gp_count * 6,
                                    offset=off).reshape(self.gp_count, 6).copy()
                off += self.gp_count * 48
                d = np.frombuffer(buf, dtype="<f8", count=self.gp_count, offset=off).copy()
                yield ExchangeRecord(step, t, eps, d)


def write_exchange(records, path, exchange_interval: int = 1) -> None:
    """Persist a record list; the lossless binary round trip is bitwise."""
    if not records:
        raise ValueError("cannot write an empty exchange stream")
    gp = records[0].eps.shape[0]
    with ExchangeFileWriter(path, exchange_interval, gp) as w:
        for r in records:
            w._write(_REC_HEAD.pack(r.step, r.time))
            w._write(np.ascontiguousarray(r.eps, dtype="<f8").tobytes())
            w._write(np.ascontiguousarray(r.d, dtype="<f8").tobytes())


def read_exchange(path) -> InMemoryExchange:
    """Load a whole exchange file into memory (validating the checksum)."""
    reader = ExchangeFileReader(path)
    buf = InMemoryExchange(reader.K, reader.gp_count)
    buf.records = list(reader)
    return buf


# ---------------------------------------------------------------------------
# first-order simulation
# ---------------------------------------------------------------------------


class FirstOrderKernels:
    """Stress and damage callbacks of the sensitivity problem.

    The order-0 strain and damage arrive as a stepwise-constant external
    field (zero-order hold between exchange records); per segment the
    derived quantities exp(-d0), E0:eps0 and Psi0(eps0) are cached.

    Op-for-op identical to material.stress_order1 / update_damage_order1
    for the held (eps0, d0) (pinned by tests).
    """

    def __init__(self, E0: np.ndarray, eta: float, dt: float, source):
        self.E0 = E0
        self.eta = eta
        self.dt = dt
        self._it = iter(source)
        self._next = next(self._it, None)
        if self._next is None:
            raise ValueError("order-0 exchange source is empty")
        self._expd0 = None
        self._s0 = None
        self._psi0 = None

    def _advance_to(self, step: int):
        advanced = False
        while self._next is not None and self._next.step <= step:
            rec = self._next
            self._next = next(self._it, None)
            if self._next is not None and self._next.step <= step:
                continue  # skip straight to the newest applicable record
            self._expd0 = np.exp(-rec.d)
            self._s0 = rec.eps @ self.E0.T
            self._psi0 = 0.5 * (rec.eps * self._s0).sum(axis=-1)
            advanced = True
        if self._expd0 is None:
            raise ValueError(f"no exchange record at or before step {step}")
        return advanced

    def stress(self, d1, eps1, step):
        self._advance_to(step)
        s1 = eps1 @ self.E0.T
        return self._expd0[:, None] * ((1.0 - d1)[:, None] * self._s0 + s1)

    def damage(self, d1, eps1, step):
        cross = (eps1 * self._s0).sum(axis=-1)
        rate = self._expd0 / self.eta * ((1.0 - d1) * self._psi0 + cross)
        return d1 + self.dt * rate


def run_order0(problem: Problem, dt: float, output_times, config: TsmConfig, *,
               quad: ElementQuadrature | None = None, exchange_path=None,
               force_stride: int = 1):
    """Mean-stiffness simulation, emitting exchange records every K steps.

    Returns (history, source); the history is bitwise identical to
    run_deterministic with xi = 0.
    """
    quad = quad or ElementQuadrature.build(problem.mesh)
    if config.exchange_mode == "file":
        if exchange_path is None:
            raise ValueError("file exchange mode needs an exchange_path")
        sink = ExchangeFileWriter(exchange_path, config.exchange_interval, quad.n_gauss)
        try:
            hist = run_deterministic(problem.mesh, problem.loads, problem.params,
                                     0.0, dt, output_times, quad=quad,
                                     exchange_hook=sink.hook, force_stride=force_stride,
                                     mass_damping=problem.mass_damping)
        finally:
            sink.close()
        source = ExchangeFileReader(exchange_path)
    else:
        sink = InMemoryExchange(config.exchange_interval, quad.n_gauss)
        hist = run_deterministic(problem.mesh, problem.loads, problem.params,
                                 0.0, dt, output_times, quad=quad,
                                 exchange_hook=sink.hook, force_stride=force_stride,
                                 mass_damping=problem.mass_damping)
        source = sink
    hist.meta["kind"] = "order0"
    return hist, source


def run_order1(problem: Problem, order0_source, dt: float, output_times, *,
               quad: ElementQuadrature | None = None,
               force_stride: int = 1) -> History:
    """Sensitivity simulation consuming the order-0 exchange stream.

    All Dirichlet values are homogeneous (the prescribed ramp does not
    depend on the random variable, so its derivative vanishes).
    """
    quad = quad or ElementQuadrature.build(problem.mesh)
    if order0_source.gp_count != quad.n_gauss:
        raise ExchangeFormatError(
            f"exchange stream has {order0_source.gp_count} Gauss points, "
            f"mesh has {quad.n_gauss}"
        )
    n_steps = int(np.ceil(problem.loads.total_time / dt - 1e-9))
    expected = n_steps // order0_source.K + 1
    if order0_source.n_records < expected:
        raise ValueError(
            f"order-0 source too short: {order0_source.n_records} records, "
            f"need {expected} to cover {n_steps} steps at K={order0_source.K}"
        )
    kern = FirstOrderKernels(problem.params.stiffness, problem.params.eta, dt,
                             order0_source)
    hist = run_with_kernels(problem.mesh, problem.loads, problem.params.rho, dt,
                            output_times, kern.stress, kern.damage, quad=quad,
                            dirichlet_scale=0.0, force_stride=force_stride,
                            mass_damping=problem.mass_damping,
                            meta={"kind": "order1", "K": order0_source.K})
    return hist


@dataclass
class TsmSolution:
    history0: History
    history1: History
    config: TsmConfig


def run_tsm(problem: Problem, config: TsmConfig, dt: float, output_times, *,
            quad: ElementQuadrature | None = None, exchange_path=None,
            force_stride: int = 1) -> TsmSolution:
    """Staggered pair of simulations: order-0 to completion, then order-1.

    In file mode the exchange stream goes through ``exchange_path`` (a
    temporary file when not given); in-memory mode keeps identical K-step
    subsampling semantics so both modes agree bitwise.
    """
    quad = quad or ElementQuadrature.build(problem.mesh)
    tmp = None
    if config.exchange_mode == "file" and exchange_path is None:
        fd, tmp = tempfile.mkstemp(suffix=".tsmx")
        os.close(fd)
        exchange_path = tmp
    try:
        hist0, source = run_order0(problem, dt, output_times, config, quad=quad,
                                   exchange_path=exchange_path,
                                   force_stride=force_stride)
        hist1 = run_order1(problem, source, dt, output_times, quad=quad,
                           force_stride=force_stride)
    finally:
        if tmp is not None and os.path.exists(tmp):
            os.remove(tmp)
    if not np.array_equal(hist0.times, hist1.times):
        raise RuntimeError("order-0 and order-1 snapshot grids differ")
    return TsmSolution(history0=hist0, history1=hist1, config=config)


# ---------------------------------------------------------------------------
# uncertainty post-processing
# ---------------------------------------------------------------------------


@dataclass
class UqSummary:
    """Expectation and standard deviation per snapshot and Gauss point,
    plus the reaction-force series on the loaded boundary set."""

    times: np.ndarray  # (S,)
    d_mean: np.ndarray  # (S, ngp)
    d_std: np.ndarray
    f_mean: np.ndarray
    f_std: np.ndarray
    sigma_mean: np.ndarray  # (S, ngp, 6)
    sigma_std: np.ndarray
    force_times: np.ndarray  # (F,)
    force_mean: np.ndarray  # (F, 3)
    force_std: np.ndarray
    force_set: str
    meta: dict = field(default_factory=dict)


def loaded_set_name(hist: History) -> str:
    sets = hist.meta.get("loaded_sets", ())
    if not sets:
        raise ValueError("history has no set with a nonzero ramp")
    return sorted(sets)[0]


def uq_summary(solution: TsmSolution, xi_second_moment: float | None = None) -> UqSummary:
    """First-order moments: means are the order-0 fields; standard
    deviations are sqrt(<xi^2>) times |first-order field| (first-order terms
    can be negative, e.g. the damage-function sensitivity -exp(-d0)*d1, so
    the absolute value keeps Std nonnegative)."""
    xi2 = solution.config.xi_second_moment if xi_second_moment is None else xi_second_moment
    if xi2 < 0.0:
        raise ValueError("xi_second_moment must be >= 0")
    s = float(np.sqrt(xi2))
    h0, h1 = solution.history0, solution.history1
    f_mean = np.exp(-h0.d)
    f1 = -f_mean * h1.d  # chain rule on f = exp(-d)
    name = loaded_set_name(h0)
    return UqSummary(
        times=h0.times.copy(),
        d_mean=h0.d.copy(), d_std=s * np.abs(h1.d),
        f_mean=f_mean, f_std=s * np.abs(f1),
        sigma_mean=h0.sigma.copy(), sigma_std=s * np.abs(h1.sigma),
        force_times=h0.force_times.copy(),
        force_mean=h0.forces[name].copy(),
        force_std=s * np.abs(h1.forces[name]),
        force_set=name,
        meta={"method": "tsm", "xi_second_moment": xi2,
              "wall_order0": h0.wall_time, "wall_order1": h1.wall_time},
    )
