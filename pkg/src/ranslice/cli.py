"""Experiment runner.

Reads a scenario file (INI sections per module), optionally sweeps one
parameter over a value list, runs seeded replicas through the engine,
and writes delimited outputs plus rendered figures:

    regret.csv   -- per super-frame: chosen arm, utility, cumulative regret
    frames.csv   -- per frame and user: backlog, virtual queue, rates
    summary.csv  -- per replica: throughput, latency, URLLC satisfaction
    manifest.json-- resolved configuration echo (re-runnable)
    *.png        -- regret curve, backlog trace, latency CDF, arm trace

Exit code 0 on success; 2 on configuration errors; 3 when any replica
fails (partial outputs are flushed and the manifest is marked incomplete).
"""

import argparse
import configparser
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .channel import ChannelParams, shadow_std_from_db
from .engine import MODES, ALLOCATORS, Scenario, dbm_to_watts, run
from .pbra import GridSpec, PsumConfig
from .queueing import CLASS_NAMES, TrafficParams


class ConfigError(Exception):
    pass


def fmt(v):
    """Fixed-precision numeric formatting for byte-stable CSV output."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

_DEFAULTS = {
    "channel": {"beta": 0.999, "sigma_shadow_db": 5.0, "q_a": 1e-4,
                "q_mu": 1.0, "stationary": True, "mu0": 54.0},
    "traffic": {"n_embb": 5, "n_urllc": 4, "n_mbbll": 3,
                "lambda_e": 10000.0, "lambda_u": 38.0, "lambda_m": 12500.0,
                "d_e_ms": 120.0, "d_m_ms": 30.0, "frame_ms": 0.5,
                "eta": 1.25e-4, "burst_interval": 0.0, "burst_size": 0.0},
    "grid": {"n_slots": 1, "n_subchannels": 24, "bandwidth_hz": 360e3,
             "p_total_dbm": 40.0, "slice_split": 12},
    "psum": {"p_order": 0.5, "epsilon": 1e-3, "sigma_init": 0.3,
             "alpha": 8.0, "max_outer": 4, "max_inner": 5,
             "inner_tol": 1e-6, "binary_tol": 1e-3, "bisect_iters": 32},
    "run": {"mode": "ad2s", "allocator": "pbra", "superframes": 50,
            "frames_per_superframe": 100, "omega_q": 5e-8, "omega_t": 1e-3,
            "tau_db": 1.0, "seed": 1, "counterfactual": False,
            "anytime": True, "f_max": 0.0, "bandit_eta": 0.0,
            "bandit_gamma": 0.0, "bandit_eta_scale": 0.0,
            "bandit_gamma_scale": 0.0, "cucb_width": 1.0, "fixed_arm": -1,
            "frames_stride": 1},
}

_INT_KEYS = {"n_embb", "n_urllc", "n_mbbll", "n_slots", "n_subchannels",
             "slice_split", "max_outer", "max_inner", "bisect_iters",
             "superframes", "frames_per_superframe", "seed", "fixed_arm",
             "frames_stride"}
_BOOL_KEYS = {"stationary", "counterfactual", "anytime"}
_STR_KEYS = {"mode", "allocator"}


def _coerce(key, raw):
    if key in _STR_KEYS:
        return str(raw).strip().lower()
    if key in _BOOL_KEYS:
        if isinstance(raw, bool):
            return raw
        s = str(raw).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean {key!r} from {raw!r}")
    try:
        val = float(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot parse numeric {key!r} from {raw!r}") from exc
    return int(round(val)) if key in _INT_KEYS else val


def load_config(path) -> dict:
    """Scenario file -> nested plain dict with defaults filled in."""
    cfg = {sec: dict(vals) for sec, vals in _DEFAULTS.items()}
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not read:
        raise ConfigError(f"scenario file not found: {path}")
    for sec in parser.sections():
        if sec not in cfg:
            raise ConfigError(f"{path}: unknown section [{sec}]")
        for key, raw in parser.items(sec):
            if key not in cfg[sec]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{sec}]")
            cfg[sec][key] = _coerce(key, raw)
    return cfg


def load_manifest(path) -> tuple:
    """Re-ingest a manifest.json for an identical rerun."""
    with open(path) as fh:
        doc = json.load(fh)
    cfg = {sec: dict(vals) for sec, vals in _DEFAULTS.items()}
    for sec, vals in doc["scenario"].items():
        if sec not in cfg:
            raise ConfigError(f"{path}: unknown section {sec!r}")
        for key, raw in vals.items():
            if key not in cfg[sec]:
                raise ConfigError(f"{path}: unknown key {key!r} in {sec!r}")
            cfg[sec][key] = _coerce(key, raw)
    sweep = doc.get("sweep") or None
    if sweep is not None:
        sweep = (sweep["param"], [float(v) for v in sweep["values"]])
    return cfg, sweep, [int(s) for s in doc["seeds"]]


def build_scenario(cfg: dict) -> Scenario:
    c, t, g, p, r = (cfg["channel"], cfg["traffic"], cfg["grid"],
                     cfg["psum"], cfg["run"])
    n_users = t["n_embb"] + t["n_urllc"] + t["n_mbbll"]
    chp = ChannelParams(
        n_users=n_users, beta=c["beta"],
        sigma_shadow=shadow_std_from_db(c["sigma_shadow_db"]),
        q_a=c["q_a"], q_mu=c["q_mu"], stationary=c["stationary"],
        mu0=c["mu0"])
    traffic = TrafficParams(
        lambda_e=t["lambda_e"], lambda_u=t["lambda_u"], lambda_m=t["lambda_m"],
        d_e_ms=t["d_e_ms"], d_m_ms=t["d_m_ms"], frame_ms=t["frame_ms"],
        eta=t["eta"], burst_interval=t["burst_interval"],
        burst_size=t["burst_size"])
    grid = GridSpec(
        n_slots=g["n_slots"], n_subchannels=g["n_subchannels"],
        bandwidth_hz=g["bandwidth_hz"], p_total=dbm_to_watts(g["p_total_dbm"]),
        slice_split=min(g["slice_split"], g["n_subchannels"]))
    psum = PsumConfig(
        p_order=p["p_order"], epsilon=p["epsilon"], sigma_init=p["sigma_init"],
        alpha=p["alpha"], max_outer=p["max_outer"], max_inner=p["max_inner"],
        inner_tol=p["inner_tol"], binary_tol=p["binary_tol"],
        bisect_iters=p["bisect_iters"])
    if r["mode"] not in MODES:
        raise ConfigError(f"unknown mode {r['mode']!r} (choose from {MODES})")
    if r["allocator"] not in ALLOCATORS:
        raise ConfigError(f"unknown allocator {r['allocator']!r}")
    return Scenario(
        n_embb=t["n_embb"], n_urllc=t["n_urllc"], n_mbbll=t["n_mbbll"],
        channel=chp, traffic=traffic, grid=grid, psum=psum,
        mode=r["mode"], allocator=r["allocator"],
        superframes=r["superframes"],
        frames_per_superframe=r["frames_per_superframe"],
        omega_q=r["omega_q"], omega_t=r["omega_t"], tau_db=r["tau_db"],
        seed=r["seed"], counterfactual=r["counterfactual"],
        anytime=r["anytime"], f_max=r["f_max"], bandit_eta=r["bandit_eta"],
        bandit_gamma=r["bandit_gamma"],
        bandit_eta_scale=r["bandit_eta_scale"],
        bandit_gamma_scale=r["bandit_gamma_scale"],
        cucb_width=r["cucb_width"], fixed_arm=r["fixed_arm"])


def find_sweep_key(cfg: dict, name: str):
    """Resolve 'section.key' or bare 'key' to its section."""
    if "." in name:
        sec, key = name.split(".", 1)
        if sec in cfg and key in cfg[sec]:
            return sec, key
        raise ConfigError(f"unknown sweep parameter {name!r}")
    hits = [(sec, name) for sec in cfg if name in cfg[sec]]
    if len(hits) == 1:
        return hits[0]
    if not hits:
        raise ConfigError(f"unknown sweep parameter {name!r}")
    raise ConfigError(
        f"ambiguous sweep parameter {name!r}; qualify as section.key "
        f"(candidates: {', '.join(s + '.' + k for s, k in hits)})")


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------

def _run_one(args):
    cfg, sweep_kv, seed = args
    local = {sec: dict(vals) for sec, vals in cfg.items()}
    if sweep_kv is not None:
        (sec, key), value = sweep_kv
        local[sec][key] = _coerce(key, value)
    local["run"]["seed"] = seed
    sc = build_scenario(local)
    return run(sc)


def run_experiment(cfg, sweep, seeds, outdir, parallel=1, plots=True,
                   echo=print):
    """Execute the sweep x seeds grid and write every output file.

    sweep: None or (param-name, [values]); seeds: list of ints.
    Returns the manifest dict.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    sweep_key = None
    values = [None]
    if sweep is not None:
        sweep_key = find_sweep_key(cfg, sweep[0])
        values = list(sweep[1])

    jobs = [
        (value, seed, (cfg, (sweep_key, value) if value is not None else None, seed))
        for value in values for seed in seeds]
    manifest = {
        "package_version": __version__,
        "scenario": cfg,
        "sweep": ({"param": sweep[0], "values": values}
                  if sweep is not None else None),
        "seeds": list(seeds),
        "outputs": ["regret.csv", "frames.csv", "summary.csv"],
        "incomplete": True,
    }
    _write_manifest(outdir, manifest)

    stride = max(int(cfg["run"].get("frames_stride", 1)), 1)
    failures = []
    f_reg = open(outdir / "regret.csv", "w")
    f_fr = open(outdir / "frames.csv", "w")
    f_sum = open(outdir / "summary.csv", "w")
    f_reg.write("sweep_value,replica,superframe,chosen_arm,utility,"
                "best_utility,regret\n")
    f_fr.write("sweep_value,replica,frame,user,class,q,g,rate_bps,"
               "served_pk,urllc_ok\n")
    f_sum.write("sweep_value,replica,throughput_mbps,mean_latency_ms,"
                "urllc_satisfaction_pct,exploration_frames,"
                "latency_embb_ms,latency_urllc_ms,latency_mbbll_ms,"
                "delay_outage,cum_regret\n")
    try:
        if parallel > 1:
            with ProcessPoolExecutor(max_workers=parallel) as pool:
                records = list(pool.map(_run_one, [j[2] for j in jobs]))
        else:
            records = []
            for j in jobs:
                records.append(_run_one(j[2]))
        for (value, seed, _), rec in zip(jobs, records):
            _append_record(f_reg, f_fr, f_sum, value, seed, rec, stride)
    except Exception as exc:  # noqa: BLE001 - replica failures are reported
        failures.append(repr(exc))
        echo(f"replica failure: {exc!r}", file=sys.stderr)
    finally:
        f_reg.close()
        f_fr.close()
        f_sum.close()

    manifest["incomplete"] = bool(failures)
    if failures:
        manifest["failures"] = failures
    _write_manifest(outdir, manifest)
    if plots and not failures:
        from . import report
        report.render_all(outdir)
    return manifest


def _write_manifest(outdir, manifest):
    with open(Path(outdir) / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _append_record(f_reg, f_fr, f_sum, value, seed, rec, stride):
    sv = "" if value is None else fmt(value)
    sc = rec.scenario
    for li in range(sc.superframes):
        f_reg.write(f"{sv},{seed},{li + 1},{rec.arm[li]},"
                    f"{fmt(rec.utility[li])},{fmt(rec.best_utility[li])},"
                    f"{fmt(rec.cum_regret[li])}\n")
    names = [CLASS_NAMES[c] for c in rec.classes]
    k_total = rec.frame_count()
    for k in range(0, k_total, stride):
        for u in range(rec.classes.size):
            f_fr.write(f"{sv},{seed},{k + 1},{u},{names[u]},"
                       f"{fmt(rec.q[k, u])},{fmt(rec.g[k, u])},"
                       f"{fmt(rec.rate[k, u])},{fmt(rec.served_pk[k, u])},"
                       f"{fmt(rec.urllc_ok[k, u])}\n")
    lat = rec.latency_ms()
    cls = rec.classes
    def _mean(mask):
        return float(lat[mask].mean()) if mask.any() else 0.0
    f_sum.write(
        f"{sv},{seed},{fmt(rec.throughput_mbps())},{fmt(float(lat.mean()))},"
        f"{fmt(100.0 * rec.urllc_satisfaction())},{rec.exploration_frames()},"
        f"{fmt(_mean(cls == 0))},{fmt(_mean(cls == 1))},{fmt(_mean(cls == 2))},"
        f"{fmt(rec.delay_outage())},{fmt(float(rec.cum_regret[-1]))}\n")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def parse_seeds(text):
    if "," in text:
        return [int(s) for s in text.split(",") if s.strip()]
    n = int(text)
    if n <= 0:
        raise ConfigError("--seeds must be positive")
    return list(range(1, n + 1))


def parse_sweep(text):
    if "=" not in text:
        raise ConfigError("--sweep expects param=v1,v2,...")
    name, vals = text.split("=", 1)
    values = [float(v) for v in vals.split(",") if v.strip()]
    if not values:
        raise ConfigError(f"--sweep {name}: empty value list")
    return name.strip(), values


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="ranslice",
        description="QoS-aware RAN slicing experiments: dual-timescale "
                    "simulation with CSV and figure outputs.")
    ap.add_argument("--scenario", required=False,
                    help="scenario file (.cfg) or a previous manifest.json")
    ap.add_argument("--sweep", default=None,
                    help="parameter sweep, e.g. grid.p_total_dbm=39,40,41")
    ap.add_argument("--seeds", default="1",
                    help="replica count or explicit list, e.g. 5 or 1,7,9")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--mode", default=None, choices=MODES,
                    help="override the slicing policy")
    ap.add_argument("--allocator", default=None, choices=ALLOCATORS,
                    help="override the frame allocator")
    ap.add_argument("--parallel", type=int, default=1,
                    help="replica worker processes")
    ap.add_argument("--no-plots", action="store_true",
                    help="skip figure rendering")
    ap.add_argument("--report-only", action="store_true",
                    help="render figures from existing CSVs in --out")
    args = ap.parse_args(argv)

    if args.report_only:
        from . import report
        report.render_all(args.out)
        return 0

    try:
        if args.scenario is None:
            raise ConfigError("--scenario is required (a .cfg or manifest.json)")
        sweep = None
        if str(args.scenario).endswith(".json"):
            cfg, sweep, seeds = load_manifest(args.scenario)
        else:
            cfg = load_config(args.scenario)
            seeds = parse_seeds(args.seeds)
        if args.sweep is not None:
            sweep = parse_sweep(args.sweep)
        if args.mode is not None:
            cfg["run"]["mode"] = args.mode
        if args.allocator is not None:
            cfg["run"]["allocator"] = args.allocator
        build_scenario(cfg)   # validate before any output is written
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    manifest = run_experiment(cfg, sweep, seeds, args.out,
                              parallel=max(args.parallel, 1),
                              plots=not args.no_plots)
    if manifest["incomplete"]:
        print("run incomplete; see manifest.json for diagnostics",
              file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
