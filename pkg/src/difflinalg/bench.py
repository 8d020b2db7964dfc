"""Forward and backward timings of the operators, normalized by n^3."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from types import SimpleNamespace

import numpy as np

from .dense import ToleranceConfig, precision_dtype
from .gradcheck import DESCRIPTORS
from .kernels import get_backend
from .tape.ops import get_op

__all__ = ["BenchRecord", "bench_op", "run_bench", "DEFAULT_REPS", "WARMUP"]

DEFAULT_REPS = 10
WARMUP = 2


@dataclass
class BenchRecord:
    op: str
    phase: str  # "forward" | "backward"
    n: int
    precision: str
    repetitions: int
    mean_seconds: float
    seconds_per_n3: float
    threads: int = 1
    backend: str = ""

    def record(self) -> dict:
        return asdict(self)


def _time(fn, setup, reps, warmup):
    for _ in range(warmup):
        fn(*setup())
    total = 0.0
    for _ in range(reps):
        args = setup()
        t0 = time.perf_counter()
        fn(*args)
        total += time.perf_counter() - t0
    return total / reps


def bench_op(name, n, reps=DEFAULT_REPS, precision="double", seed=0, warmup=WARMUP, threads=1):
    """Mean forward and backward seconds of ``name`` on one random n x n-sized instance.

    Input copies and fresh cotangents are prepared outside the timed region.
    The backward pass receives exactly the values its dependency mode
    retains and may overwrite its cotangent.
    """
    if reps < 3:
        raise ValueError("at least 3 timed repetitions are required")
    desc = DESCRIPTORS[name]
    op = get_op(name)
    flags = desc.flag_combos[0]
    dtype = precision_dtype(precision)
    cfg = ToleranceConfig.for_dtype(dtype)
    rng = np.random.default_rng(seed)
    inputs = desc.make_inputs(rng, n, flags, ToleranceConfig())
    if name in ("trmm", "trsm"):
        # a square right-hand side, so every operator is O(n^3)
        inputs[1] = rng.standard_normal((n, n))
    inputs = [x.astype(dtype) for x in inputs]
    outs = list(op.forward([x.copy() for x in inputs], None, **flags))
    cots = [rng.standard_normal(y.shape).astype(dtype) for y in outs]
    ctx = SimpleNamespace(flags=flags, in_shapes=[x.shape for x in inputs], out_shapes=[y.shape for y in outs], cfg=cfg)
    ins_b = [None] * len(inputs)
    for i in op.retained_input_slots(len(inputs)):
        ins_b[i] = inputs[i]
    outs_b = outs if op.retains_outputs() else [None] * len(outs)

    fwd = _time(lambda xs: op.forward(xs, None, **flags), lambda: ([x.copy() for x in inputs],), reps, warmup)
    bwd = _time(lambda cs: op.backward(cs, ins_b, outs_b, ctx, True),
                lambda: ([c.copy() for c in cots],), reps, warmup)
    backend = get_backend()
    prec = "single" if dtype == np.float32 else "double"
    return [BenchRecord(name, phase, int(n), prec, reps, t, t / float(n) ** 3, threads, backend)
            for phase, t in (("forward", fwd), ("backward", bwd))]


def run_bench(ops, sizes, reps=DEFAULT_REPS, precision="double", seed=0, threads=1):
    records = []
    for name in ops:
        for n in sizes:
            if n < 16:
                raise ValueError(f"benchmark sizes must be >= 16, got {n}")
            records.extend(bench_op(name, n, reps, precision, seed, threads=threads))
    return records
