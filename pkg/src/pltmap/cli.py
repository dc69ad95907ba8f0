"""pltmap: simulate, dataset, train, infer, map, eval.

Data goes to files; logs go to stderr.  Failures print one JSON line
``{"error": <type>, "message": <text>}`` on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io as pio
from . import mapping
from .config import RunConfig, parse_override
from .dataset import (
    generate_dataset,
    load_dataset,
    save_dataset,
    strand_diffusion,
)
from .errors import ConfigError, PLTError
from .nn.checkpoint import infer_array, load_checkpoint, save_checkpoint
from .nn.train import evaluate, train
from .nn.unet import UNetModel, predict
from .pltcore import PLTSignal, detect_plt_breaks
from .tissue import StimulusProtocol, TissueGeometry, run_simulation

log = logging.getLogger("pltmap")

EXIT_ERROR = 1
EXIT_CONFIG = 2


def thread_cap():
    """Positive thread cap from PLT_THREADS, or None for automatic."""
    raw = os.environ.get("PLT_THREADS", "").strip()
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"PLT_THREADS must be an integer, got {raw!r}") from exc
    if n < 0:
        raise ConfigError("PLT_THREADS must be >= 0")
    return n or None


@contextlib.contextmanager
def _limited_threads(n):
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def _config(args):
    overrides = dict(parse_override(s) for s in args.set or [])
    return RunConfig.load(args.config, overrides)


def _meta(cfg, command):
    return {"command": command, "seed": cfg["seed"], **cfg.to_json()}


# -- subcommands -------------------------------------------------------------

def cmd_simulate(args):
    cfg = _config(args)
    s = cfg["simulate"]
    p = cfg.cell_params()
    if s["dims"] == 1:
        d = s["diffusion"] if s["diffusion"] is not None else strand_diffusion(s["cv"], p)
        geom = TissueGeometry.strand(d, int(s["nodes"] or 1024))
        if s["protocol"] == "pacing":
            stim = StimulusProtocol.pacing(s["period"])
        elif s["protocol"] == "single":
            stim = StimulusProtocol.single()
        else:
            raise ConfigError(f"simulate.protocol {s['protocol']!r} needs dims=2")
    else:
        n = int(s["nodes"] or mapping.SHEET_NODES)
        geom = mapping.sheet_geometry(n, n, s["diffusion"] or mapping.SHEET_DIFFUSION)
        if s["protocol"] == "s1s2":
            stim = mapping.spiral_protocol(s["s2_delay"], n, n)
        elif s["protocol"] in ("planar", "pacing"):
            stim = mapping.planar_protocol(s["period"], n)
        else:
            stim = StimulusProtocol.single(region=((0, n), (0, mapping.SHEET_STRIP)))
    trace = run_simulation(geom, stim, p, s["duration"], s["sample_rate"])
    pio.save_trace(trace, args.out, _meta(cfg, "simulate"))
    log.info("wrote %s (%d samples, nodes %s)", args.out, trace.n_samples, trace.nodes)


def cmd_dataset(args):
    cfg = _config(args)
    d = cfg["dataset"]
    workers = int(d["workers"])
    cap = thread_cap()
    if cap is not None:
        workers = min(workers, cap)
    split = generate_dataset(cfg.grid(), int(d["split_seed"]), cfg.cell_params(), workers)
    save_dataset(split, args.out)
    log.info("wrote %s: %d train / %d validation", args.out, len(split.train),
             len(split.validation))


def cmd_train(args):
    cfg = _config(args)
    split = load_dataset(args.dataset)
    length = len(split.cases[0].input.samples)
    model = UNetModel.initialize(cfg.architecture(length), int(cfg["train"]["init_seed"]))
    model, report = train(model, split, cfg.train_config())
    extra = {"dataset_sha256": _file_sha(args.dataset), **_meta(cfg, "train"),
             "best_epoch": report.best_epoch}
    save_checkpoint(model, args.out, extra)
    out = Path(args.out)
    pio.write_json(out.with_name(out.name + ".report.json"), report.to_json())
    if report.train_loss:
        from . import plotting

        plotting.plot_training(report.to_json(), out.with_name(out.name + ".training.png"))
    v = report.final.get("validation", {})
    log.info("best epoch %s; validation MAE %.4f MSE %.4f", report.best_epoch,
             v.get("mae", float("nan")), v.get("mse", float("nan")))


def cmd_infer(args):
    model = load_checkpoint(args.model)
    egm = pio.load_egm(args.egm)
    if not egm.normalized:
        log.warning("%s is not marked normalized; the network expects [-1, 1] input", args.egm)
    y = infer_array(model, np.asarray(egm.samples))
    breaks = detect_plt_breaks(y, egm.sample_rate)
    meta = {"model_sha256": _file_sha(args.model), "source": str(Path(args.egm).name)}
    pio.save_plt(PLTSignal(y, egm.sample_rate, breaks), args.out, meta)


def cmd_map(args):
    cfg = _config(args)
    m = cfg["map"]
    model = load_checkpoint(args.model)
    trace = pio.load_trace(args.trace)
    array = cfg.electrode_array(tuple(trace.nodes))
    seq = mapping.build_phase_maps(trace, array, model, window=int(m["window"]),
                                   border=int(m["border"]))
    out = Path(args.out)
    index = mapping.export_frames(seq, out, float(m["stride_ms"]))
    counts = seq.singularity_counts()
    summary = {
        **seq.meta,
        **_meta(cfg, "map"),
        "model_sha256": _file_sha(args.model),
        "trace_sha256": _file_sha(args.trace),
        "n_frames": seq.n_frames,
        "persistence_final_2000ms": mapping.persistence(seq, 2000.0),
        "frames_with_singularity": int((counts > 0).sum()),
        "max_singularities": int(counts.max()) if len(counts) else 0,
        "singularity_counts": counts.tolist(),
    }
    pio.write_json(out / "summary.json", summary)
    from . import plotting

    shown = [f["index"] for f in index["frames"]]
    truth = [mapping.ground_truth_frame(trace, array, k) for k in shown]
    plotting.plot_phase_maps(seq, shown, out / "phase_maps.png", truth)
    plotting.plot_singularity_counts(seq, out / "singularities.png")
    print(f"frames\t{seq.n_frames}")
    print(f"persistence_final_2000ms\t{summary['persistence_final_2000ms']:.4f}")
    print(f"frames_with_singularity\t{summary['frames_with_singularity']}")


def format_table(rows):
    """Tab-separated metrics: split, case count, MAE, MSE, upstroke error."""
    lines = ["split\tcases\tMAE\tMSE\tupstroke_error"]
    for name, r in rows:
        lines.append(f"{name}\t{r['n']}\t{r['mae']:.4f}\t{r['mse']:.4f}\t"
                     f"{r['upstroke_error_rate']:.4f}")
    return "\n".join(lines)


def cmd_eval(args):
    cfg = _config(args)
    model = load_checkpoint(args.model)
    split = load_dataset(args.dataset)
    tol = float(cfg["eval"]["tolerance_ms"])
    rows = [("train", evaluate(model, split.train, tol)),
            ("validation", evaluate(model, split.validation, tol))]
    print(format_table(rows))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        pio.write_json(out / "metrics.json", {name: r for name, r in rows})
        from . import plotting

        cases = split.validation[: args.n_figure]
        if cases:
            x = np.stack([c.input.samples for c in cases])
            plotting.plot_predictions(cases, predict(model, x), out / "validation_cases.png",
                                      len(cases))


def _file_sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- entry point -------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="pltmap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one config value (JSON literal); repeatable")
        return p

    p = with_config(sub.add_parser("simulate", help="run a tissue simulation, write a VTRC trace"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = with_config(sub.add_parser("dataset", help="generate the strand dataset container"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset)

    p = with_config(sub.add_parser("train", help="train the network on a dataset"))
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="electrogram CSV -> PLT CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--egm", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = with_config(sub.add_parser("map", help="phase maps and rotor cores from a 2-D trace"))
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_map)

    p = with_config(sub.add_parser("eval", help="MAE / MSE / upstroke error per split"))
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="directory for metrics.json and figures")
    p.add_argument("--n-figure", type=int, default=4, help="validation cases to plot")
    p.set_defaults(func=cmd_eval)
    return parser


def _fail(exc, code):
    line = json.dumps({"error": type(exc).__name__, "message": str(exc)})
    print(line, file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        with _limited_threads(thread_cap()):
            args.func(args)
    except ConfigError as exc:
        return _fail(exc, EXIT_CONFIG)
    except (PLTError, OSError, ValueError) as exc:
        return _fail(exc, EXIT_ERROR)
    return 0


if __name__ == "__main__":
    sys.exit(main())
