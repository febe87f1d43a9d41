import math
import os

import pytest

from simcampaign import mocksim
from simcampaign.mocksim import SimConfig, simulate, splitmix64, uniform_stream, unit_interval, write_results
from simcampaign.results import ParseStats, ScalarRecord, parse_scalar_file, parse_vector_file


def reference_splitmix64(seed, n):
    """Straightforward transcription of the published SplitMix64 generator."""
    out = []
    x = seed
    for _ in range(n):
        x = (x + 0x9E3779B97F4A7C15) % 2**64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) % 2**64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) % 2**64
        out.append(z ^ (z >> 31))
    return out


def test_splitmix64_vector():
    assert splitmix64(0) == (0x9E3779B97F4A7C15, 0xE220A8397B1DCDAF)
    state, outs = 12345, []
    for _ in range(5):
        state, x = splitmix64(state)
        outs.append(x)
    assert outs == reference_splitmix64(12345, 5)


def test_uniform_mapping():
    stream = uniform_stream(99)
    for x in reference_splitmix64(99, 1000):
        u = next(stream)
        assert u == unit_interval(x)
        assert 0.0 < u < 1.0
    assert unit_interval(0) == 2.0 ** -53
    assert unit_interval((1 << 11) - 1) == 2.0 ** -53
    assert unit_interval(1 << 11) == 2.0 ** -53
    assert unit_interval(2**64 - 1) == 1.0 - 2.0 ** -53


@pytest.fixture(scope="module")
def mm1_run():
    return simulate(SimConfig(lam=0.5, mu=1.0, customers=200_000, seed=7))


def test_mean_sojourn_close_to_analytic(mm1_run):
    # M/M/1: W = 1 / (mu - lambda)
    assert abs(mm1_run.mean_sojourn - 2.0) / 2.0 < 0.10
    # Wq = rho / (mu - lambda)
    assert abs(mm1_run.mean_queue_wait - 1.0) / 1.0 < 0.15


@pytest.mark.parametrize("seed", [0, 1, 2**63 + 5])
def test_mean_sojourn_any_seed(seed):
    res = simulate(SimConfig(0.5, 1.0, 200_000, seed))
    assert abs(res.mean_sojourn - 2.0) < 0.2


def test_littles_law(mm1_run):
    lhs = mm1_run.throughput * mm1_run.mean_sojourn
    assert abs(lhs - mm1_run.mean_in_system) / mm1_run.mean_in_system < 0.05


def test_interarrival_mean(mm1_run):
    assert abs(mm1_run.mean_interarrival - 2.0) / 2.0 < 0.02


def test_throughput_matches_arrival_rate(mm1_run):
    assert abs(mm1_run.throughput - 0.5) / 0.5 < 0.02


def test_instant_service_no_queueing():
    res = simulate(SimConfig(0.5, 1e6, 20_000, 3))
    assert 0.0 <= res.mean_queue_wait < 1e-6


@pytest.mark.parametrize("cfg", [SimConfig(0.5, 1.0, 1000, 1), SimConfig(2.0, 1.0, 500, 2), SimConfig(0.9, 1.0, 1, 3)])
def test_sojourn_at_least_wait(cfg):
    res = simulate(cfg)
    assert res.mean_sojourn >= res.mean_queue_wait >= 0.0
    assert res.served == cfg.customers == len(res.samples)
    times = [t for t, _ in res.samples]
    assert times == sorted(times)


def test_invalid_config():
    for bad in [(0, 1, 1), (1, -1, 1), (1, 1, 0)]:
        with pytest.raises(ValueError):
            SimConfig(*bad)


def test_write_results_schema(tmp_path):
    res = simulate(SimConfig(0.5, 1.0, 3, 11))
    sca, vec = write_results(res, tmp_path, "factA=50,factB=1#r=0", 11, [("factA", "50"), ("factB", "1")])
    lines = sca.read_text().splitlines()
    assert sum(l.startswith("itervar ") for l in lines) == 2
    assert sum(l.startswith("scalar ") and " throughput " in l for l in lines) == 1
    assert sum(l.startswith("scalar ") for l in lines) == 4
    assert "attr seed 11" in lines
    vlines = vec.read_text().splitlines()
    assert vlines[0].startswith("vector 0 ")
    assert len([l for l in vlines if l[0].isdigit()]) == 3


def test_outputs_parse_cleanly(tmp_path):
    res = simulate(SimConfig(0.5, 1.0, 50, 11))
    sca, vec = write_results(res, tmp_path, "x=a b#r=0", 11, [("x", "a b")])
    stats = ParseStats()
    with open(sca) as fh:
        items = list(parse_scalar_file(fh, stats=stats))
    scalars = [i for i in items if isinstance(i, ScalarRecord)]
    assert len(scalars) == 4 and stats.skipped == 0
    assert {s.run_id for s in scalars} == {"x=a b#r=0"}
    with open(vec) as fh:
        assert sum(1 for _ in parse_vector_file(fh)) == 51


def run_cli(tmp_path, name, env_seed=None, extra=()):
    cfg = tmp_path / "run.ini"
    cfg.write_text("**.lambda = 0.5\n**.mu = 1.0\n**.customers = 2000\n# runkey = lambda=0.5#r=0\n")
    out = tmp_path / name
    env = dict(os.environ)
    env.pop("CAMPAIGN_SEED", None)
    if env_seed is not None:
        os.environ["CAMPAIGN_SEED"] = str(env_seed)
    try:
        rc = mocksim.main(["--config", str(cfg), "--out", str(out), *extra])
    finally:
        os.environ.clear()
        os.environ.update(env)
    return rc, out


def test_cli_deterministic(tmp_path):
    rc1, a = run_cli(tmp_path, "a", env_seed=5)
    rc2, b = run_cli(tmp_path, "b", env_seed=5)
    rc3, c = run_cli(tmp_path, "c", extra=["--seed", "5"])
    assert rc1 == rc2 == rc3 == 0
    for name in ("results.sca", "results.vec"):
        assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes()
    _, d = run_cli(tmp_path, "d", env_seed=6)
    assert (a / "results.vec").read_bytes() != (d / "results.vec").read_bytes()


def test_cli_missing_key(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("**.lambda = 0.5\n")
    assert mocksim.main(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "mu" in capsys.readouterr().err


def test_unstable_queue_runs():
    res = simulate(SimConfig(2.0, 1.0, 2000, 1))
    assert math.isfinite(res.mean_sojourn) and res.mean_sojourn > 0
