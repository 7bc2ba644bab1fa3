"""Command line: ``coldse {synth,train,enhance,eval,demo}``.

Settings resolve as flag > ``--config`` JSON file (flat keys named like the
flags, with dashes as underscores) > built-in default. Every run writes the
resolved settings to ``config.json`` in its output directory; passing that
file back via ``--config`` reproduces the run.

Exit codes: 0 success, 1 usage/configuration error, 2 data/format error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from coldse.data import (
    NOISE_KINDS,
    Signal,
    SynthConfig,
    build_synthetic_dataset,
    read_manifest,
    read_wav,
    write_wav,
)
from coldse.errors import ColdSEError, ConfigurationError, FormatError
from coldse.metrics import evaluate
from coldse.restoration import CountingRestorer, OracleRestorer, load_checkpoint
from coldse.sampling import SamplerConfig, run_sampler
from coldse.schedule import Schedule, make_cosine_schedule
from coldse.training import TrainConfig, train_loop, write_training_outputs

OUTPUT_ROOT_ENV = "COLDSE_OUTPUT_ROOT"

log = logging.getLogger("coldse")


class UsageError(ColdSEError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- config resolution -------------------------------------------------------

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "synth": {
        "out": None,
        "seed": 0,
        "n_train": 200,
        "n_valid": 20,
        "n_test": 40,
        "duration": 1.0,
        "sample_rate": 8000,
        "noise_kinds": ",".join(NOISE_KINDS),
        "train_snrs": "0,5,10,15",
        "test_snrs": "2.5,7.5,12.5,17.5",
    },
    "train": {
        "data": None,
        "out": None,
        "mode": "unfolded",
        "grad_policy": "stop_gradient",
        "iters": TrainConfig.n_iter,
        "batch_size": TrainConfig.batch_size,
        "lr": TrainConfig.lr,
        "T": TrainConfig.T,
        "s": TrainConfig.s,
        "valid_every": TrainConfig.valid_every,
        "seed": 0,
        "crop": TrainConfig.crop_seconds,
        "frame_len": TrainConfig.frame_len,
        "hidden": TrainConfig.hidden,
        "depth": TrainConfig.depth,
        "emb_dim": TrainConfig.emb_dim,
        "dtype": TrainConfig.dtype,
    },
    "enhance": {
        "checkpoint": None,
        "inputs": [],
        "out": None,
        "steps": None,
        "method": "improved",
        "variant": "reanchored",
        "jobs": 1,
        "verbose": False,
        "trajectory": False,
        "reference": None,
    },
    "eval": {
        "data": None,
        "split": "test",
        "checkpoint": None,
        "oracle": False,
        "grid": None,
        "T": 50,
        "s": 0.008,
        "out": None,
        "jobs": 1,
        "tag": "",
    },
    "demo": {
        "T": None,
        "s": 0.008,
        "schedule": "linear",
        "x0": 1.0,
        "xT": 0.0,
        "bias": 0.0,
        "schedule_dump": False,
        "out": None,
    },
}


def resolve(command: str, args: argparse.Namespace) -> Dict[str, Any]:
    file_cfg: Dict[str, Any] = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
        file_cfg.pop("command", None)
        unknown = set(file_cfg) - set(DEFAULTS[command])
        if unknown:
            raise ConfigurationError(f"unknown keys in {args.config}: {sorted(unknown)}")
    cfg = {}
    for key, default in DEFAULTS[command].items():
        flag = getattr(args, key, None)
        if flag is not None and flag is not False and flag != []:
            cfg[key] = flag
        elif key in file_cfg:
            cfg[key] = file_cfg[key]
        else:
            cfg[key] = default
    if cfg.get("out") is None:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root:
            cfg["out"] = str(Path(root) / command)
    return cfg


def echo_config(out_dir: Path, command: str, cfg: Dict[str, Any]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump({"command": command, **cfg}, fh, indent=2)


def _require(cfg, key, what):
    if cfg.get(key) in (None, "", []):
        raise UsageError(f"{what} is required (--{key.replace('_', '-')})")
    return cfg[key]


def _floats(text) -> List[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _names(text) -> List[str]:
    if isinstance(text, (list, tuple)):
        return list(text)
    return [v.strip() for v in str(text).split(",") if v.strip()]


# -- subcommands ---------------------------------------------------------------


def cmd_synth(cfg: Dict[str, Any]) -> int:
    out = Path(_require(cfg, "out", "output directory"))
    synth = SynthConfig(
        counts={"train": int(cfg["n_train"]), "valid": int(cfg["n_valid"]), "test": int(cfg["n_test"])},
        duration_s=float(cfg["duration"]),
        sample_rate=int(cfg["sample_rate"]),
        snr_grid={"train": _floats(cfg["train_snrs"]), "test": _floats(cfg["test_snrs"])},
        noise_kinds=_names(cfg["noise_kinds"]),
        seed=int(cfg["seed"]),
    )
    synth.validate()
    manifest = build_synthetic_dataset(synth, out)
    with open(out / "generator.json", "w", encoding="utf-8") as fh:
        json.dump(synth.to_dict(), fh, indent=2)
    echo_config(out, "synth", cfg)
    print(f"wrote {len(manifest)} pairs; manifest at {out / 'manifest.csv'}")
    return 0


def cmd_train(cfg: Dict[str, Any]) -> int:
    manifest = read_manifest(_require(cfg, "data", "dataset manifest"))
    out = Path(_require(cfg, "out", "output directory"))
    tc = TrainConfig(
        n_iter=int(cfg["iters"]),
        batch_size=int(cfg["batch_size"]),
        lr=float(cfg["lr"]),
        T=int(cfg["T"]),
        s=float(cfg["s"]),
        mode=cfg["mode"],
        grad_policy=cfg["grad_policy"],
        seed=int(cfg["seed"]),
        valid_every=int(cfg["valid_every"]),
        crop_seconds=float(cfg["crop"]),
        frame_len=int(cfg["frame_len"]),
        hidden=int(cfg["hidden"]),
        depth=int(cfg["depth"]),
        emb_dim=int(cfg["emb_dim"]),
        dtype=cfg["dtype"],
    )
    tc.validate()
    train = manifest.split("train").load_pairs()
    valid = manifest.split("valid").load_pairs()
    if not train:
        raise ConfigurationError("manifest has no train records")
    echo_config(out, "train", cfg)
    model, record = train_loop(tc, train, valid)
    paths = write_training_outputs(out, model, record)
    print(f"checkpoint: {paths['checkpoint']} (best iter {record.best_iter})")
    return 0


def _sampler_from(method: str, steps: int, variant: str, T: int) -> SamplerConfig:
    if steps == 1:
        return SamplerConfig(method="direct", T_start=T)
    if steps != T:
        raise UsageError(f"steps must be 1 (direct) or T={T} (iterative), got {steps}")
    if method not in ("improved", "naive"):
        raise UsageError(f"unknown method {method!r}")
    return SamplerConfig(method=method, variant=_variant(variant))


def _variant(text: str) -> str:
    v = text.replace("-", "_").lower()
    if v == "fixed_xt":
        return "fixed_xT"
    if v == "reanchored":
        return v
    raise UsageError(f"unknown variant {text!r} (reanchored | fixed-xt)")


def cmd_enhance(cfg: Dict[str, Any]) -> int:
    ckpt = Path(_require(cfg, "checkpoint", "checkpoint"))
    if not ckpt.is_file():
        raise ConfigurationError(f"checkpoint {ckpt} not found")
    inputs = [Path(p) for p in _require(cfg, "inputs", "input WAV file")]
    out = Path(_require(cfg, "out", "output directory"))
    model = load_checkpoint(ckpt)
    schedule = make_cosine_schedule(model.schedule_T or 50, model.schedule_s or 0.008)
    steps = schedule.T if cfg["steps"] is None else int(cfg["steps"])
    sampler = _sampler_from(cfg["method"], steps, cfg["variant"], schedule.T)
    if cfg["trajectory"]:
        sampler = SamplerConfig(sampler.method, sampler.variant, sampler.T_start, record_trajectory=True)
    reference = None
    if cfg["reference"]:
        if len(inputs) != 1:
            raise UsageError("--reference needs exactly one input")
        reference = read_wav(cfg["reference"])
    echo_config(out, "enhance", cfg)

    def one(path: Path):
        sig = read_wav(path)
        if model.sample_rate and sig.sample_rate != model.sample_rate:
            raise FormatError(
                f"{path}: rate mismatch, file is {sig.sample_rate} Hz but the model was trained at {model.sample_rate} Hz"
            )
        counter = CountingRestorer(model)
        enhanced, traj = run_sampler(counter, sig.samples, schedule, sampler)
        write_wav(out / f"{path.stem}_enhanced.wav", Signal(enhanced, sig.sample_rate))
        if traj is not None:
            tdir = out / f"{path.stem}_trajectory"
            tdir.mkdir(exist_ok=True)
            for step in traj:
                write_wav(tdir / f"step_{step.t:03d}.wav", Signal(step.x_t, sig.sample_rate))
            if reference is not None:
                with open(tdir / "l1.csv", "w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["t", "l1"])
                    for t, d in traj.l1_to(reference.samples):
                        w.writerow([t, repr(d)])
        return path, counter.calls

    jobs = max(1, int(cfg["jobs"]))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, inputs))
    else:
        results = [one(p) for p in inputs]
    for path, calls in results:
        if cfg["verbose"]:
            print(f"{path}: {calls} restorer calls")
    print(f"enhanced {len(results)} file(s) into {out}")
    return 0


def parse_grid(text: str, T: int) -> List[SamplerConfig]:
    """``direct-1,improved-50,improved-50-fixed-xt,naive-50`` -> configs."""
    configs = []
    for token in _names(text):
        parts = token.lower().split("-", 2)
        if len(parts) < 2 or not parts[1].isdigit():
            raise UsageError(f"bad grid entry {token!r}; expected METHOD-STEPS[-VARIANT]")
        method, steps = parts[0], int(parts[1])
        variant = parts[2] if len(parts) == 3 else "reanchored"
        if method == "direct":
            if steps != 1:
                raise UsageError(f"direct reconstruction takes 1 step, got {token!r}")
            configs.append(SamplerConfig(method="direct", T_start=T))
        else:
            configs.append(_sampler_from(method, steps, variant, T))
    return configs


def cmd_eval(cfg: Dict[str, Any]) -> int:
    manifest = read_manifest(_require(cfg, "data", "dataset manifest"))
    out = Path(_require(cfg, "out", "output directory"))
    if cfg["oracle"]:
        model = None
        schedule = make_cosine_schedule(int(cfg["T"]), float(cfg["s"]))
    else:
        ckpt = Path(_require(cfg, "checkpoint", "checkpoint (or --oracle)"))
        if not ckpt.is_file():
            raise ConfigurationError(f"checkpoint {ckpt} not found")
        model = load_checkpoint(ckpt)
        schedule = make_cosine_schedule(model.schedule_T or int(cfg["T"]), model.schedule_s or float(cfg["s"]))
    grid = cfg["grid"] or f"direct-1,improved-{schedule.T}"
    configs = parse_grid(grid, schedule.T)
    pairs = manifest.split(cfg["split"]).load_pairs()
    if not pairs:
        raise ConfigurationError(f"manifest has no {cfg['split']!r} records")
    echo_config(out, "eval", cfg)
    report = evaluate(
        pairs, model, schedule, configs, tag=cfg["tag"], oracle=bool(cfg["oracle"]), jobs=max(1, int(cfg["jobs"]))
    )
    report.to_csv(out / "report.csv")
    report.to_json(out / "report.json")
    print(report.summary_table())
    return 0


def cmd_demo(cfg: Dict[str, Any]) -> int:
    if cfg["schedule_dump"]:
        T = 50 if cfg["T"] is None else int(cfg["T"])
        if T < 1:
            raise UsageError("--T must be >= 1")
        text = make_cosine_schedule(T, float(cfg["s"])).to_csv()
        if cfg["out"]:
            out = Path(cfg["out"])
            echo_config(out, "demo", cfg)
            (out / "schedule.csv").write_text(text)
        sys.stdout.write(text)
        return 0
    T = 2 if cfg["T"] is None else int(cfg["T"])
    if T < 1:
        raise UsageError("--T must be >= 1")
    if cfg["schedule"] == "linear":
        # pedagogical table alpha_t = 1 - t/T; T=2 gives {1, 0.5, 0}
        schedule = Schedule.from_alphas(1.0 - np.arange(T + 1) / T)
    elif cfg["schedule"] == "cosine":
        schedule = make_cosine_schedule(T, float(cfg["s"]))
    else:
        raise UsageError(f"unknown demo schedule {cfg['schedule']!r}")
    x0 = np.array([float(cfg["x0"])])
    xT = np.array([float(cfg["xT"])])
    bias = float(cfg["bias"])
    oracle = OracleRestorer(x0 + bias)
    _, traj = run_sampler(oracle, xT, schedule, SamplerConfig(record_trajectory=True))
    rows = []
    for step in traj:
        x0_hat = "" if step.x0_hat is None else f"{step.x0_hat[0]:.7f}"
        rows.append((step.t, schedule.alphas[step.t], step.x_t[0], x0_hat))
    print(f"{'t':>4} {'alpha_t':>10} {'x_t':>12} {'x0_hat':>12}")
    for t, a, x, xh in rows:
        print(f"{t:>4} {a:>10.6f} {x:>12.7f} {xh:>12}")
    if cfg["out"]:
        out = Path(cfg["out"])
        echo_config(out, "demo", cfg)
        with open(out / "trajectory.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "alpha", "x_t", "x0_hat"])
            for t, a, x, xh in rows:
                w.writerow([t, repr(float(a)), repr(float(x)), xh])
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "enhance": cmd_enhance, "eval": cmd_eval, "demo": cmd_demo}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="coldse", description="Cold-diffusion signal enhancement.")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic paired corpus")
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-train", type=int)
    s.add_argument("--n-valid", type=int)
    s.add_argument("--n-test", type=int)
    s.add_argument("--duration", type=float)
    s.add_argument("--sample-rate", type=int)
    s.add_argument("--noise-kinds")
    s.add_argument("--train-snrs")
    s.add_argument("--test-snrs")

    t = sub.add_parser("train", help="train a restorer")
    t.add_argument("--config")
    t.add_argument("--data", help="manifest.csv")
    t.add_argument("--out")
    t.add_argument("--mode", choices=["cd", "unfolded"])
    t.add_argument("--grad-policy", choices=["stop_gradient", "full_unroll"])
    t.add_argument("--iters", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--T", type=int)
    t.add_argument("--s", type=float)
    t.add_argument("--valid-every", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--crop", type=float, help="crop length in seconds")
    t.add_argument("--frame-len", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--depth", type=int)
    t.add_argument("--emb-dim", type=int)
    t.add_argument("--dtype", choices=["float32", "float64"])

    e = sub.add_parser("enhance", help="enhance noisy WAV files")
    e.add_argument("inputs", nargs="*")
    e.add_argument("--config")
    e.add_argument("--checkpoint")
    e.add_argument("--out")
    e.add_argument("--steps", type=int, help="1 = direct reconstruction, T = iterative sampling")
    e.add_argument("--method", choices=["improved", "naive"])
    e.add_argument("--variant", choices=["reanchored", "fixed-xt"])
    e.add_argument("--jobs", type=int)
    e.add_argument("--verbose", action="store_true", default=None)
    e.add_argument("--trajectory", action="store_true", default=None)
    e.add_argument("--reference", help="clean reference WAV for the trajectory L1 log")

    v = sub.add_parser("eval", help="evaluate over a manifest split")
    v.add_argument("--config")
    v.add_argument("--data", help="manifest.csv")
    v.add_argument("--split")
    v.add_argument("--checkpoint")
    v.add_argument("--oracle", action="store_true", default=None)
    v.add_argument("--grid", help="e.g. direct-1,improved-50,improved-50-fixed-xt")
    v.add_argument("--T", type=int)
    v.add_argument("--s", type=float)
    v.add_argument("--out")
    v.add_argument("--jobs", type=int)
    v.add_argument("--tag")

    d = sub.add_parser("demo", help="scalar walk-through of the sampler")
    d.add_argument("--config")
    d.add_argument("--T", type=int)
    d.add_argument("--s", type=float)
    d.add_argument("--schedule", choices=["linear", "cosine"])
    d.add_argument("--x0", type=float)
    d.add_argument("--xT", type=float)
    d.add_argument("--bias", type=float, help="constant error added to the oracle restorer")
    d.add_argument("--schedule-dump", action="store_true", default=None)
    d.add_argument("--out")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING), format="%(message)s")
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except ColdSEError as exc:
        print(f"coldse {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"coldse {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
