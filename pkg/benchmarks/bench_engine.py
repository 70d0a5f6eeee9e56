"""Compare the compiled and pure-Python engines on the same run.

    python3 benchmarks/bench_engine.py --duration 2 --scale 0.1 --cc bbr

Both backends execute the identical event sequence, so the event counts and
goodput printed for each must agree; only the wall time differs.
"""

from __future__ import annotations

import argparse
import time

from mmtcp.backend import available, run_engine
from mmtcp.config import ScenarioConfig
from mmtcp.harness import channel_for, engine_spec


def bench(cfg: ScenarioConfig, backend: str, repeat: int) -> tuple[float, int, float]:
    trace = channel_for(cfg, cfg.seed)
    best = float("inf")
    res = None
    for _ in range(repeat):
        spec, _ = engine_spec(cfg, cfg.seed, trace)
        t0 = time.perf_counter()
        res = run_engine(spec, backend)
        best = min(best, time.perf_counter() - t0)
    return best, res.events, sum(f.goodput_bps for f in res.flows)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="high_speed")
    ap.add_argument("--server", default="remote")
    ap.add_argument("--cc", default="cubic")
    ap.add_argument("--mss", type=int, default=1400)
    ap.add_argument("--buffer", default="bdp")
    ap.add_argument("--duration", type=float, default=2.0)
    ap.add_argument("--scale", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    cfg = ScenarioConfig(scenario=args.scenario, server=args.server, cc=args.cc, mss_bytes=args.mss,
                         buffer=args.buffer, duration_s=args.duration, warmup_s=min(2.0, args.duration / 2),
                         seed=args.seed, runs=1, scale=args.scale)
    cfg.validate()
    rows = []
    for backend in available():
        wall, events, gp = bench(cfg, backend, args.repeat)
        rows.append((backend, wall, events, gp))
        print(f"{backend:8s} wall={wall:8.3f}s events={events:10d} rate={events / wall / 1e6:7.2f} Mev/s "
              f"goodput={gp / 1e6:9.2f} Mb/s")
    if len(rows) == 2:
        (_, wp, ep, gp_p), (_, wc, ec, gp_c) = rows
        same = ep == ec and gp_p == gp_c
        print(f"speedup x{wp / wc:.1f}; results {'identical' if same else 'DIFFER'}")
        return 0 if same else 1
    print("compiled engine not built; only the Python backend was timed")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
