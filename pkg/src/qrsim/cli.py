"""Command-line entry point: sweep, train, eval, census.

Configuration lives in a JSON file with a "params" block (the chain
parameters, lengths in km and coherence time in ms) plus exactly one mode
block named after the subcommand.  Every command writes an effective-config
echo next to its output, so each artifact is self-describing and re-running
the echo reproduces it byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import montecarlo, ppo
from .physics import RepeaterParams

MODES = ("sweep", "train", "eval", "census")

PARAM_FIELDS = {
    "n_segments": int,
    "L0_km": float,
    "tau_c_ms": float,
    "L_att_km": float,
    "c_signal_mps": float,
    "p_x": float,
    "t_max_steps": lambda v: None if v is None else int(v),
}

TRAIN_FIELDS = (
    "L", "N", "alpha_pi", "alpha_v", "eps_clip", "n_pi", "n_v", "kl_max",
    "eps_adam", "epochs", "checkpoint_every", "hidden", "advantage_norm",
    "suffix_full_horizon", "init_scale",
)


def load_config(path: str, mode: str) -> dict:
    with open(path) as f:
        cfg = json.load(f)
    if "params" not in cfg:
        raise ValueError("config is missing the 'params' block")
    present = [m for m in MODES if m in cfg]
    if len(present) != 1:
        raise ValueError(f"config must contain exactly one mode block, found {present}")
    if present[0] != mode:
        raise ValueError(f"config holds a '{present[0]}' block but the command is '{mode}'")
    return cfg


def build_params(block: dict) -> RepeaterParams:
    unknown = set(block) - set(PARAM_FIELDS)
    if unknown:
        raise ValueError(f"unknown params fields: {sorted(unknown)}")
    kwargs = {k: PARAM_FIELDS[k](v) for k, v in block.items()}
    return RepeaterParams(**kwargs)


def _parse_cutoffs(values) -> list:
    out = []
    for v in values:
        if v is None or v == "none":
            out.append(None)
        else:
            out.append(int(v))
    return out


def write_effective_config(path: Path, doc: dict) -> None:
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _effective_doc(params: RepeaterParams, mode: str, block: dict, seed: int, workers: int, output: str) -> dict:
    pdoc = {k: getattr(params, k) for k in PARAM_FIELDS}
    return {"params": pdoc, mode: block, "seed": seed, "workers": workers, "output": output}


def cmd_sweep(cfg: dict, out: str, seed: int, workers: int) -> int:
    params = build_params(cfg["params"])
    block = dict(cfg["sweep"])
    c_values = _parse_cutoffs(block["c_values"])
    T = int(block["T"])
    M = int(block["M"])
    rows = montecarlo.sweep_cutoff(params, c_values, T, M, seed, workers=workers)
    montecarlo.write_sweep_csv(rows, out)
    echo_block = {"c_values": ["none" if c is None else c for c in c_values], "T": T, "M": M}
    write_effective_config(Path(str(out) + ".config.json"),
                           _effective_doc(params, "sweep", echo_block, seed, workers, str(out)))
    best = max(rows, key=lambda r: r.estimate.rate_per_s)
    print(f"wrote {out} ({len(rows)} rows); best cutoff="
          f"{'none' if best.cutoff is None else best.cutoff} at {best.estimate.rate_per_s:.6g} /s")
    return 0


def cmd_train(cfg: dict, out: str, seed: int, workers: int, resume: bool) -> int:
    params = build_params(cfg["params"])
    block = dict(cfg["train"])
    unknown = set(block) - set(TRAIN_FIELDS)
    if unknown:
        raise ValueError(f"unknown train fields: {sorted(unknown)}")
    if "hidden" in block:
        block["hidden"] = tuple(int(h) for h in block["hidden"])
    tc = ppo.TrainConfig(params=params, seed=seed, workers=workers, **block)
    run_dir = ppo.train(tc, out, resume=resume)
    final = sorted((run_dir / "checkpoints").glob("policy_*.json"))[-1]
    print(f"run directory {run_dir}; final checkpoint {final}")
    return 0


def cmd_eval(cfg: dict, out: str | None, seed: int, workers: int) -> int:
    params = build_params(cfg["params"])
    block = dict(cfg["eval"])
    M = int(block.get("M", 100))
    T = int(block.get("T", 100_000))
    est = ppo.evaluate(block["checkpoint"], params, M=M, T=T, seed=seed, workers=workers)
    doc = {
        "rate_per_s": est.rate_per_s,
        "ci3sigma": est.ci3sigma,
        "raw_rate_per_s": est.raw_rate_per_s,
        "e_x": est.e_x,
        "M": M,
        "T": T,
    }
    if "sweep_csv" in block:
        rows = montecarlo.read_sweep_csv(block["sweep_csv"])
        none_rows = [r for r in rows if r["cutoff"] is None]
        if not none_rows:
            raise ValueError("sweep CSV lacks a 'none' baseline row for the ratio")
        best = max(r["rate_per_s"] for r in rows)
        doc["ratios"] = {
            "vs_no_cutoff": est.rate_per_s / none_rows[0]["rate_per_s"],
            "vs_benchmark": est.rate_per_s / best,
        }
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    print(text, end="")
    if out:
        with open(out, "w") as f:
            f.write(text)
        echo_block = {k: block[k] for k in block}
        echo_block.update({"M": M, "T": T})
        write_effective_config(Path(str(out) + ".config.json"),
                               _effective_doc(params, "eval", echo_block, seed, workers, str(out)))
    return 0


def cmd_census(cfg: dict, out: str, seed: int, workers: int) -> int:
    params = build_params(cfg["params"])
    block = dict(cfg["census"])
    T = int(block["T"])
    table = ppo.census(block["checkpoint"], params, T, seed=seed)
    ppo.write_census_csv(table, out)
    echo_block = {"checkpoint": block["checkpoint"], "T": T}
    write_effective_config(Path(str(out) + ".config.json"),
                           _effective_doc(params, "census", echo_block, seed, workers, str(out)))
    print(f"wrote {out} ({len(table)} distinct states over {T} steps)")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qrsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for mode in MODES:
        sp = sub.add_parser(mode)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", default=None, help="output path (overrides config)")
        sp.add_argument("--workers", type=int, default=None,
                        help="worker threads (default: config value or available parallelism)")
        sp.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
        if mode == "train":
            sp.add_argument("--resume", action="store_true",
                            help="continue from the latest checkpoint in the run directory")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, args.command)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        workers = (
            args.workers
            if args.workers is not None
            else int(cfg.get("workers", os.cpu_count() or 1))
        )
        out = args.out if args.out is not None else cfg.get("output")
        if out is None and args.command != "eval":
            raise ValueError("an output path is required (config 'output' or --out)")
        if args.command == "sweep":
            return cmd_sweep(cfg, out, seed, workers)
        if args.command == "train":
            return cmd_train(cfg, out, seed, workers, args.resume)
        if args.command == "eval":
            return cmd_eval(cfg, out, seed, workers)
        return cmd_census(cfg, out, seed, workers)
    except Exception as exc:  # surface config/IO errors as a clean exit code
        print(f"qrsim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
