"""Settled fraction of a switching ensemble as the horizon grows.

"No switch in the last 20% of the horizon" only approximates "finitely
many switches", so the fraction is reported for several horizons.

    python3 scripts/horizon_sensitivity.py --config scripts/configs/two_mode_classical.yaml
"""
import argparse
from pathlib import Path

from switchstab.analysis import switch_statistics
from switchstab.cli import run_simulate
from switchstab.config import parse_config, with_overrides

HERE = Path(__file__).resolve().parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(HERE / "configs" / "two_mode_classical.yaml"))
    ap.add_argument("--horizons", default="1,2,5,10")
    ap.add_argument("--traj", type=int, default=100)
    args = ap.parse_args()

    base = parse_config(Path(args.config).read_text())
    print(f"{'T':>6} {'settled':>8} {'median':>7} {'max last switch':>16}")
    for T in (float(v) for v in args.horizons.split(",")):
        cfg = with_overrides(base, T=T, n_traj=args.traj)
        _, trajs = run_simulate(cfg)
        st = switch_statistics(trajs, cfg.controller.j)
        print(f"{T:6.1f} {st.settled_fraction:8.3f} {st.median_count:7g} {max(st.last_switch_times):16.3f}")


if __name__ == "__main__":
    main()
