"""Benchmark objectives and black-box adapters.

Every optimiser in this package works in *normalized* design units: each
input coordinate lives in ``[-3, 3]`` and, when the output range is known,
outputs are linearly rescaled to ``[-3, 3]`` as well.  An
:class:`ObjectiveHandle` owns that mapping plus an evaluation counter, so
traces can report exactly how many black-box calls were spent.

Three kinds of objectives are provided:

* analytic benchmarks (:func:`ackley`, :func:`booth`) via :func:`make_benchmark`;
* a fixed table of pre-generated input/output pairs (:class:`DatasetObjective`),
  queried by nearest-neighbour projection without replacement;
* an external executable speaking a line protocol (:func:`subprocess_objective`).
"""

from __future__ import annotations

import math
import os
import select
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, DatasetParseError, EvaluationError

DOMAIN = (-3.0, 3.0)

ACKLEY_BOUNDS = ((-32.768, 32.768), (-32.768, 32.768))
BOOTH_BOUNDS = ((-10.0, 10.0), (-10.0, 10.0))
BOOTH_OPTIMUM = np.array([1.0, 3.0])


def _check_domain(x, bounds, name):
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    if np.any(x < lo) or np.any(x > hi):
        raise ContractViolation(f"{name}: query outside domain {bounds}")


def ackley(x, strict=False):
    """Two-dimensional Ackley function (vectorised over leading axes).

    Minimum 0 at the origin.  With ``strict=True`` queries outside
    ``[-32.768, 32.768]^2`` raise :class:`ContractViolation`.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ContractViolation(f"ackley expects 2 coordinates, got {x.shape[-1]}")
    if strict:
        _check_domain(x, ACKLEY_BOUNDS, "ackley")
    r = np.sqrt(0.5 * np.sum(x**2, axis=-1))
    c = 0.5 * np.sum(np.cos(2.0 * np.pi * x), axis=-1)
    return -20.0 * np.exp(-0.2 * r) - np.exp(c) + 20.0 + np.e


def booth(x, strict=False):
    """Booth function, minimum 0 at (1, 3)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ContractViolation(f"booth expects 2 coordinates, got {x.shape[-1]}")
    if strict:
        _check_domain(x, BOOTH_BOUNDS, "booth")
    x1, x2 = x[..., 0], x[..., 1]
    return (x1 + 2.0 * x2 - 7.0) ** 2 + (2.0 * x1 + x2 - 5.0) ** 2


BENCHMARKS = {
    "ackley": (ackley, ACKLEY_BOUNDS),
    "booth": (booth, BOOTH_BOUNDS),
}


def linear_scale(value, src, dst=DOMAIN):
    """Affine map sending interval ``src`` onto ``dst`` (endpoints to endpoints)."""
    lo, hi = float(src[0]), float(src[1])
    if not hi > lo:
        raise ContractViolation(f"source interval {src} has no positive width")
    a, b = float(dst[0]), float(dst[1])
    value = np.asarray(value, dtype=float)
    out = a + (value - lo) * (b - a) / (hi - lo)
    return float(out) if out.ndim == 0 else out


class ObjectiveHandle:
    """A black-box function seen through normalized coordinates.

    Parameters
    ----------
    func : callable
        Maps a raw-unit point of shape ``(d,)`` to a scalar.
    bounds : sequence of (lo, hi)
        Raw bounds per dimension; normalized ``[-3, 3]`` maps onto these.
    output_range : (lo, hi) or None
        Raw output range used to rescale outputs to ``[-3, 3]``.  ``None``
        leaves outputs unscaled.  For maximisation tasks give the range of
        the *negated* outputs.
    maximize : bool
        Negate outputs before scaling so that all optimisers minimise.
    """

    def __init__(self, func, bounds, output_range=None, maximize=False, name="objective"):
        self.func = func
        self.bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
        if np.any(self.bounds[:, 1] <= self.bounds[:, 0]):
            raise ContractViolation(f"{name}: every bound needs positive width")
        self.dimension = self.bounds.shape[0]
        self.output_range = None if output_range is None else (float(output_range[0]), float(output_range[1]))
        self.maximize = maximize
        self.name = name
        self.evaluations = 0

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r}, d={self.dimension}, evaluations={self.evaluations})"

    def to_raw(self, u):
        u = np.asarray(u, dtype=float)
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return lo + (u - DOMAIN[0]) * (hi - lo) / (DOMAIN[1] - DOMAIN[0])

    def to_normalized(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return DOMAIN[0] + (x - lo) * (DOMAIN[1] - DOMAIN[0]) / (hi - lo)

    def normalize_output(self, y):
        y = -np.asarray(y, dtype=float) if self.maximize else np.asarray(y, dtype=float)
        if self.output_range is not None:
            y = linear_scale(y, self.output_range, DOMAIN)
        return float(y) if np.ndim(y) == 0 else y

    def reset(self):
        """Zero the evaluation counter before a fresh run."""
        self.evaluations = 0

    def _evaluate_raw(self, x):
        return self.func(x)

    def __call__(self, u):
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.shape[0] != self.dimension:
            raise ContractViolation(f"{self.name}: expected {self.dimension} coordinates, got {u.shape[0]}")
        u = np.clip(u, *DOMAIN)
        self.evaluations += 1
        y = self._evaluate_raw(self.to_raw(u))
        try:
            y = float(y)
        except (TypeError, ValueError) as exc:
            raise EvaluationError(f"{self.name}: non-numeric output {y!r}", raw_reply=y) from exc
        if not math.isfinite(y):
            raise EvaluationError(f"{self.name}: non-finite output {y!r}", raw_reply=y)
        return self.normalize_output(y)

    def query(self, batch):
        """Evaluate a batch of normalized points.

        Returns the points actually evaluated (clipped into the domain) and
        their normalized outputs.
        """
        batch = np.clip(np.atleast_2d(np.asarray(batch, dtype=float)), *DOMAIN)
        outputs = np.array([self(u) for u in batch])
        return batch, outputs


def _probe_range(func, bounds, resolution):
    axes = [np.linspace(lo, hi, resolution) for lo, hi in bounds]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(bounds))
    values = func(mesh)
    return float(values.min()), float(values.max())


def make_benchmark(name, shift=None, probe_resolution=256, normalize_outputs=True):
    """Build a normalized :class:`ObjectiveHandle` for a named benchmark.

    ``shift`` (normalized units, one entry per dimension) translates the
    function so its optimum moves from the image of the raw optimum by
    ``shift``.  The output range is taken from a dense probe grid of the
    (shifted) function over its raw domain.
    """
    try:
        base, bounds = BENCHMARKS[name]
    except KeyError:
        raise ContractViolation(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None
    bounds_arr = np.asarray(bounds, dtype=float)
    if shift is None:
        func = base
        label = name
    else:
        shift = np.asarray(shift, dtype=float).reshape(-1)
        raw_shift = shift * (bounds_arr[:, 1] - bounds_arr[:, 0]) / (DOMAIN[1] - DOMAIN[0])

        def func(x, _f=base, _s=raw_shift):
            return _f(np.asarray(x, dtype=float) - _s)

        label = f"{name}+shift({', '.join(f'{s:.4g}' for s in shift)})"
    out_range = _probe_range(func, bounds, probe_resolution) if normalize_outputs else None
    handle = ObjectiveHandle(func, bounds, output_range=out_range, name=label)
    handle.shift = shift
    return handle


# ---------------------------------------------------------------------------
# Pre-generated datasets (retrofit mode)
# ---------------------------------------------------------------------------


@dataclass
class GridDataset:
    """A finite pool of candidate designs with known outputs.

    ``consumed`` marks rows already served to an optimiser; they are never
    served again until :meth:`reset`.
    """

    points: np.ndarray
    outputs: np.ndarray
    consumed: np.ndarray = field(default=None)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.outputs = np.asarray(self.outputs, dtype=float).reshape(-1)
        if self.points.shape[0] != self.outputs.shape[0]:
            raise ContractViolation(
                f"{self.points.shape[0]} points but {self.outputs.shape[0]} outputs"
            )
        if self.consumed is None:
            self.consumed = np.zeros(len(self.outputs), dtype=bool)

    def __len__(self):
        return len(self.outputs)

    @property
    def dimension(self):
        return self.points.shape[1]

    @property
    def available(self):
        return int(np.count_nonzero(~self.consumed))

    def reset(self):
        self.consumed[:] = False


def nn_project_batch(batch, grid):
    """Snap each batch point to its nearest unconsumed grid point.

    Points are handled in order; each chosen grid row is marked consumed
    before the next batch point is projected, so the returned rows are
    pairwise distinct.  Distances are Euclidean, ties go to the lowest
    index.

    Returns
    -------
    list of (int, ndarray)
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if batch.shape[1] != grid.dimension:
        raise ContractViolation(f"batch dimension {batch.shape[1]} != grid dimension {grid.dimension}")
    if grid.available < batch.shape[0]:
        raise ContractViolation(
            f"only {grid.available} unconsumed grid points for a batch of {batch.shape[0]}"
        )
    chosen = []
    for p in batch:
        dist = np.sum((grid.points - p) ** 2, axis=1)
        dist[grid.consumed] = np.inf
        idx = int(np.argmin(dist))
        grid.consumed[idx] = True
        chosen.append((idx, grid.points[idx].copy()))
    return chosen


def load_pregen_dataset(source):
    """Read a dataset file.

    Format: first line ``d=<int>``; then one row per sample holding ``d``
    comma-separated coordinates followed by the output.  Blank lines are
    skipped.
    """
    path = Path(source)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetParseError("empty file, expected header 'd=<int>'", line=1)
    header = lines[0].strip()
    if not header.startswith("d="):
        raise DatasetParseError(f"expected header 'd=<int>', got {header!r}", line=1)
    try:
        d = int(header[2:])
    except ValueError:
        raise DatasetParseError(f"bad dimension in header {header!r}", line=1) from None
    if d < 1:
        raise DatasetParseError(f"dimension must be >= 1, got {d}", line=1)
    rows = []
    for lineno, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        cells = text.split(",")
        if len(cells) != d + 1:
            raise DatasetParseError(f"expected {d + 1} fields, found {len(cells)}", line=lineno)
        try:
            values = [float(c) for c in cells]
        except ValueError:
            raise DatasetParseError(f"non-numeric field in {text!r}", line=lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise DatasetParseError(f"non-finite value in {text!r}", line=lineno)
        rows.append(values)
    if not rows:
        raise DatasetParseError("no data rows", line=len(lines))
    table = np.array(rows)
    return GridDataset(points=table[:, :d], outputs=table[:, d])


def write_pregen_dataset(grid, path):
    """Write ``grid`` in the format read by :func:`load_pregen_dataset`."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"d={grid.dimension}\n")
        for p, y in zip(grid.points, grid.outputs):
            fh.write(",".join(repr(float(v)) for v in (*p, y)) + "\n")


class DatasetObjective(ObjectiveHandle):
    """Retrofit adapter: answers queries from a fixed table of results.

    Inputs are normalized per column using the data's own min/max, outputs
    likewise (after negation for maximisation).  Every query is snapped to
    the nearest row not yet served, so a run can never see a row twice.
    """

    def __init__(self, dataset, maximize=False, name="dataset"):
        raw_points = dataset.points
        lo, hi = raw_points.min(axis=0), raw_points.max(axis=0)
        # constant columns get a unit-width box so the scaling stays defined
        hi = np.where(hi > lo, hi, lo + 1.0)
        signed = -dataset.outputs if maximize else dataset.outputs
        super().__init__(
            func=None,
            bounds=np.column_stack([lo, hi]),
            output_range=(float(signed.min()), float(signed.max())) if signed.max() > signed.min() else None,
            maximize=maximize,
            name=name,
        )
        self.dataset = dataset
        self.grid = GridDataset(points=self.to_normalized(raw_points), outputs=self.normalize_output(dataset.outputs))
        self.served = []

    @property
    def best_value(self):
        """Smallest normalized output in the table."""
        return float(self.grid.outputs.min())

    def reset(self):
        super().reset()
        self.grid.reset()
        self.served = []

    def candidates(self):
        """Normalized coordinates of rows not yet served, with their indices."""
        idx = np.flatnonzero(~self.grid.consumed)
        return self.grid.points[idx], idx

    def query(self, batch):
        batch = np.atleast_2d(np.asarray(batch, dtype=float))
        picks = nn_project_batch(batch, self.grid)
        idx = np.array([i for i, _ in picks], dtype=int)
        self.evaluations += len(idx)
        self.served.extend(idx.tolist())
        return self.grid.points[idx].copy(), self.grid.outputs[idx].copy()

    def __call__(self, u):
        _, y = self.query(np.asarray(u, dtype=float).reshape(1, -1))
        return float(y[0])


# ---------------------------------------------------------------------------
# External process adapter
# ---------------------------------------------------------------------------


class SubprocessObjective(ObjectiveHandle):
    """Evaluate an external executable over a line protocol.

    For each evaluation one line of ``d`` space-separated raw coordinates is
    written to the child's stdin and one line holding a decimal number is
    read back from its stdout.  The child is started lazily and must flush
    after every reply.
    """

    def __init__(self, command, dimension, bounds=None, output_range=None, maximize=False, timeout=30.0):
        if bounds is None:
            bounds = [DOMAIN] * dimension
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        super().__init__(
            func=self._ask,
            bounds=bounds,
            output_range=output_range,
            maximize=maximize,
            name=" ".join(self.command),
        )
        if self.dimension != dimension:
            raise ContractViolation(f"{dimension} dimensions but {self.dimension} bounds")
        self.timeout = timeout
        self._proc = None
        self._buffer = b""

    def _start(self):
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
        )
        self._buffer = b""

    def _readline(self):
        fd = self._proc.stdout.fileno()
        while b"\n" not in self._buffer:
            ready, _, _ = select.select([fd], [], [], self.timeout)
            if not ready:
                raise EvaluationError(f"{self.name}: no reply within {self.timeout}s", raw_reply=self._buffer.decode(errors="replace"))
            chunk = os.read(fd, 4096)
            if not chunk:
                raise EvaluationError(
                    f"{self.name}: child exited (status {self._proc.poll()})",
                    raw_reply=self._buffer.decode(errors="replace"),
                )
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line.decode(errors="replace")

    def _ask(self, x):
        if self._proc is None or self._proc.poll() is not None:
            self._start()
        message = " ".join(repr(float(v)) for v in x) + "\n"
        try:
            self._proc.stdin.write(message.encode())
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise EvaluationError(f"{self.name}: cannot write to child ({exc})") from exc
        reply = self._readline()
        try:
            value = float(reply.strip())
        except ValueError:
            raise EvaluationError(f"{self.name}: unparseable reply {reply!r}", raw_reply=reply) from None
        if not math.isfinite(value):
            raise EvaluationError(f"{self.name}: non-finite reply {reply!r}", raw_reply=reply)
        return value

    def close(self):
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
            self._proc.stdout.close()
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def subprocess_objective(command, dimension, bounds=None, output_range=None, maximize=False, timeout=30.0):
    """Wrap an external executable as an :class:`ObjectiveHandle`."""
    return SubprocessObjective(command, dimension, bounds, output_range, maximize, timeout)
