"""Binary trajectory dataset files.

Layout (little endian)::

    b"TDF1"            magic / format version
    u32 count          number of records
    u32 K              nodes per plan
    count x [ f64[17*K] plan (row-major), f64[47] problem vector ]
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .trajectory import N_ROWS, PROBLEM_VECTOR_LENGTH, DescentProblem, TrajectoryPlan

MAGIC = b"TDF1"
_HEADER = struct.Struct("<4sII")


class DatasetError(Exception):
    pass


class FormatVersionError(DatasetError):
    pass


class TruncatedFileError(DatasetError):
    pass


class ShapeMismatchError(DatasetError):
    pass


def save_dataset(path, plans: Sequence[TrajectoryPlan], problems: Sequence[DescentProblem],
                 K: int | None = None) -> None:
    if len(plans) != len(problems):
        raise ValueError("need exactly one problem per plan")
    if K is None:
        K = plans[0].nodes if plans else 0
    chunks = [_HEADER.pack(MAGIC, len(plans), K)]
    for plan, problem in zip(plans, problems):
        if plan.nodes != K:
            raise ShapeMismatchError(f"plan has {plan.nodes} nodes, file uses K={K}")
        chunks.append(np.ascontiguousarray(plan.data, dtype="<f8").tobytes())
        chunks.append(problem.to_vector().astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_dataset(path, expected_K: int | None = None) -> tuple[list[TrajectoryPlan], list[DescentProblem]]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: header is incomplete")
    magic, count, K = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatVersionError(f"{path}: unsupported format tag {magic!r}, expected {MAGIC!r}")
    if expected_K is not None and count and K != expected_K:
        raise ShapeMismatchError(f"{path}: file stores K={K}, expected {expected_K}")
    record = N_ROWS * K + PROBLEM_VECTOR_LENGTH
    body = raw[_HEADER.size:]
    if len(body) < 8 * record * count:
        raise TruncatedFileError(f"{path}: expected {count} records, file is too short")
    if len(body) != 8 * record * count:
        raise ShapeMismatchError(f"{path}: trailing bytes after {count} records")
    values = np.frombuffer(body, dtype="<f8").reshape(count, record) if count else np.empty((0, record))
    plans, problems = [], []
    for row in values:
        plans.append(TrajectoryPlan(row[: N_ROWS * K].reshape(N_ROWS, K)))
        problem = DescentProblem.from_vector(row[N_ROWS * K:])
        if problem.K != K:
            raise ShapeMismatchError(f"{path}: record problem has K={problem.K}, file K={K}")
        problems.append(problem)
    return plans, problems


def export_dataset_text(path, plans: Sequence[TrajectoryPlan]) -> None:
    """Plain-text dump: one line per (record, row) with K values."""
    with open(path, "w") as fh:
        fh.write("# record row values...\n")
        for i, plan in enumerate(plans):
            for j, row in enumerate(plan.data):
                fh.write(f"{i} {j} " + " ".join(repr(float(v)) for v in row) + "\n")
