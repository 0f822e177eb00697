import importlib.util
import pathlib


def test_benchmark_runs(capsys):
    path = pathlib.Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    spec = importlib.util.spec_from_file_location("bench_kernels", path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    mod.main(["--repeat", "1", "--scale", "0.01"])
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 7
    # numba and numpy paths agree on every kernel
    assert all(float(line.split()[-1]) < 1e-12 for line in lines[1:])
