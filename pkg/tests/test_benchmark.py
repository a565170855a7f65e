import importlib.util
from pathlib import Path

import pytest

from test_kernels import needs_ext

BENCH = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"


@needs_ext
def test_benchmark_runs(capsys):
    spec = importlib.util.spec_from_file_location("bench_kernels", BENCH)
    bench = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(bench)
    bench.main(["--sites", "50", "--no-fit"])
    out = capsys.readouterr().out
    assert "nll+grad" in out and "speedup" in out
