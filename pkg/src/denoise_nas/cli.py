"""Command-line entry point: costs, search, derive, finetune, eval, pareto.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
Everything a command writes lands under the run's output directory; only
``meta.json`` files carry timestamps, so all other outputs are reproducible.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import default_dtype
from .config import ConfigError, RunConfig, load_config, parse_resolution
from .costs import (ParetoPoint, build_cost_table, candidate_cost, dumps_report, load_latency_table,
                    network_cost, pareto_front, report, stage_resolution)
from .data import ImagePair, add_gaussian_noise, make_dataset, psnr, ssim, write_metrics_csv
from .nn import UNetConfig, build_unet, load_params, save_params
from .search import (ArchState, SearchDiverged, SearchRun, default_rosters, derive_architecture, finetune,
                     train_supernet)
from .search.engine import evaluate

log = logging.getLogger("denoise_nas")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ----------------------------------------------------------------- helpers


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_meta(out: Path, command: str, args: argparse.Namespace, started: float) -> None:
    _write_json(out / "meta.json", {
        "command": command,
        "argv": sys.argv[1:],
        "version": __version__,
        "finished_utc": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "wall_clock_s": round(time.perf_counter() - started, 3),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "host": platform.node(),
    })


def _rosters(cfg: RunConfig):
    ss = cfg.search_space
    return default_rosters(cfg.network, ss.max_count, ss.searchable, ss.overrides)


def _cost_table(cfg: RunConfig, rosters, latency_path: str | None = None, resolution=None, net=None):
    path = latency_path or cfg.costs.latency_table
    latency = load_latency_table(path) if path else None
    if cfg.costs.eta < 1.0 and latency is None:
        raise ConfigError("costs.eta < 1 needs a latency table (costs.latency_table or --latency-table)")
    return build_cost_table(rosters, net or cfg.network, resolution or cfg.costs.resolution, latency, cfg.costs.eta)


def _load_run(path: Path) -> SearchRun:
    if not path.is_file():
        raise FileNotFoundError(f"search run {path} does not exist; run 'search' first or pass --run")
    return SearchRun.from_dict(json.loads(path.read_text()))


def _load_alphas(path: Path, rosters) -> dict[str, list[float]]:
    """Encodings file: {stage: {candidate_id: alpha}} or {stage: [alpha, ...]} in roster order."""
    doc = json.loads(path.read_text()) if path.suffix == ".json" else None
    if doc is None:
        import yaml

        doc = yaml.safe_load(path.read_text())
    doc = doc.get("alphas", doc)
    out = {}
    for r in rosters:
        if not r.searchable:
            continue
        if r.stage not in doc:
            raise KeyError(f"{path}: no encodings for stage {r.stage}")
        col = doc[r.stage]
        if isinstance(col, dict):
            missing = [c for c in r.ids if c not in col]
            extra = [c for c in col if c not in r.ids]
            if missing or extra:
                raise KeyError(f"{path}: stage {r.stage} candidates do not match the roster "
                               f"(missing {missing}, unexpected {extra})")
            out[r.stage] = [float(col[c]) for c in r.ids]
        else:
            out[r.stage] = [float(v) for v in col]
    return out


# ----------------------------------------------------------------- commands


def cmd_costs(cfg: RunConfig, args, out: Path) -> None:
    resolution = parse_resolution(args.resolution) if args.resolution else cfg.costs.resolution
    rosters = _rosters(cfg)
    table = _cost_table(cfg, rosters, args.latency_table, resolution)
    net = cfg.network
    op_rows = []
    for r in rosters:
        c = net.stage_width(r.stage)
        h, w = stage_resolution(net, r.stage, resolution)
        for spec in r.candidates:
            oc = candidate_cost(spec, c, h, w, net.alt3_depthwise)
            op_rows.append([r.stage, spec.id, c, h, w, oc.macs, oc.params, int(oc.foldable)])
    _write_csv(out / "op_costs.csv", ["stage", "candidate", "width", "height", "width_px", "macs", "params",
                                      "foldable"], op_rows)
    _write_csv(out / "cost_table.csv", ["stage", "candidate", "macs", "params", "latency_ms", "penalty"],
               [[_fmt(v) for v in row.values()] for row in table.rows()])
    total = network_cost(net, resolution)
    summary = {"resolution": list(resolution), "width": net.width, "gmacs": total.gmacs,
               "params": total.params, "stages": {s: net.spec_for(s).id for s in net.stage_ids},
               "table_rows": len(table.rows()), "eta": table.eta}
    _write_json(out / "network_cost.json", summary)
    print(f"network {net.width}w @ {resolution[0]}x{resolution[1]}: {total.gmacs:.2f} GMACs, "
          f"{total.params:,} params; {len(table.rows())} candidate rows")


def cmd_search(cfg: RunConfig, args, out: Path) -> None:
    rosters = _rosters(cfg)
    table = _cost_table(cfg, rosters)
    data = make_dataset(cfg.data)
    run = train_supernet(cfg.network, rosters, data, table, cfg.train)
    _write_json(out / "run.json", run.to_dict())
    epochs = range(len(run.trace["L"]))
    _write_csv(out / "loss_trace.csv", ["epoch", "lambda", "L_T", "L_P", "L_ER", "L"],
               [[e] + [repr(float(run.trace[k][e])) for k in ("lambda", "L_T", "L_P", "L_ER", "L")] for e in epochs])
    ids = {r.stage: r.ids for r in rosters}
    _write_csv(out / "alpha_history.csv", ["epoch", "stage", "candidate", "alpha"],
               [[e, s, ids[s][i], repr(float(a))]
                for e, snap in enumerate(run.alpha_history) for s, col in snap.items() for i, a in enumerate(col)])
    save_params(run.supernet.state_dict(), out / "supernet")
    print("derived architecture:")
    for r in rosters:
        if r.searchable:
            a = run.final_alphas()[r.stage]
            print(f"  {r.stage:5s} {run.derived.spec_for(r.stage).id:8s} alpha={a.max():.3f}")


def cmd_derive(cfg: RunConfig, args, out: Path) -> None:
    if args.alphas:
        rosters = _rosters(cfg)
        arch = ArchState.from_alphas(rosters, _load_alphas(Path(args.alphas), rosters))
        base = cfg.network
        trace = {}
    else:
        run = _load_run(Path(args.run) if args.run else out.parent / "search" / "run.json")
        rosters, base, trace = run.rosters, run.net_config, run.trace
        arch = ArchState(rosters, {s: np.array(v) for s, v in run.final_phi.items()},
                         run.config.temperature)
    table = _cost_table(cfg, rosters, net=base)
    derived = derive_architecture(arch, rosters, base, table)
    _write_json(out / "derived.json", derived.to_dict())
    doc_run = SearchRun(cfg.train, base, list(rosters), trace=trace, derived=derived)
    doc = report(doc_run, table, base, cfg.costs.report_resolution, width=cfg.costs.report_width)
    (out / "report.json").write_text(dumps_report(doc))
    for s in base.stage_ids:
        print(f"  {s:5s} {derived.spec_for(s).id}")
    print(f"at width {doc['width']}: {doc['base']['gmacs']:.2f} -> {doc['derived']['gmacs']:.2f} GMACs, "
          f"params {doc['param_delta_pct']:+.1f}%")


def cmd_finetune(cfg: RunConfig, args, out: Path) -> None:
    derived_path = Path(args.derived) if args.derived else out.parent / "derive" / "derived.json"
    if not derived_path.is_file():
        raise FileNotFoundError(f"derived config {derived_path} does not exist; run 'derive' first or pass --derived")
    derived = UNetConfig.from_dict(json.loads(derived_path.read_text()))
    supernet = None
    if not args.from_scratch:
        run = _load_run(Path(args.run) if args.run else out.parent / "search" / "run.json")
        from .search import build_supernet

        with default_dtype(cfg.train.dtype):
            supernet = build_supernet(run.net_config, run.rosters, seed=run.config.seed)
        params = Path(args.run).parent / "supernet" if args.run else out.parent / "search" / "supernet"
        supernet.load_state_dict(load_params(params))
    data = make_dataset(cfg.data)
    result = finetune(derived, supernet, data, cfg.finetune)
    save_params(result.network.state_dict(), out / "params")
    _write_json(out / "network.json", derived.to_dict())
    _write_json(out / "metrics.json", {"before": result.before, "after": result.after})
    _write_csv(out / "loss_trace.csv", ["epoch", "L_T"], [[e, repr(v)] for e, v in enumerate(result.trace)])
    print(f"held-out PSNR {result.before['psnr']:.2f} -> {result.after['psnr']:.2f} dB "
          f"(noisy input {result.after['noisy_psnr']:.2f} dB)")


def _eval_model(cfg: RunConfig, args, out: Path):
    model = args.model or cfg.eval.model
    if model == "identity":
        return build_unet(cfg.network, identity_init=True)
    if model == "base":
        return build_unet(cfg.network, seed=cfg.finetune.seed)
    root = Path(args.params).parent if args.params else out.parent / "finetune"
    net_path, params = root / "network.json", Path(args.params) if args.params else root / "params"
    if not net_path.is_file():
        raise FileNotFoundError(f"{net_path} does not exist; run 'finetune' first or pass --params")
    net = build_unet(UNetConfig.from_dict(json.loads(net_path.read_text())), identity_init=False)
    net.load_state_dict(load_params(params))
    return net


def cmd_eval(cfg: RunConfig, args, out: Path) -> None:
    sigmas = [float(s) for s in args.sigmas.split(",")] if args.sigmas else cfg.eval.sigmas
    net = _eval_model(cfg, args, out)
    clean = [p.clean for p in make_dataset(cfg.data).heldout]
    if cfg.eval.num_images is not None:
        clean = clean[:cfg.eval.num_images]
    rows, summary = [], []
    for k, sigma in enumerate(sigmas):
        pairs = [ImagePair(c, add_gaussian_noise(c, sigma, [cfg.data.seed, 3, k, i]), sigma, f"h{i:04d}")
                 for i, c in enumerate(clean)]
        for p in pairs:
            m = evaluate(net, [p])
            rows.append({"image_id": p.image_id, "sigma": sigma, "psnr": m["psnr"], "ssim": m["ssim"]})
        ps = [r["psnr"] for r in rows[-len(pairs):]]
        ss = [r["ssim"] for r in rows[-len(pairs):]]
        mean_psnr = float(np.mean(ps))
        summary.append([repr(sigma), repr(mean_psnr), repr(float(np.mean(ss))),
                        repr(float(np.mean([psnr(p.noisy, p.clean) for p in pairs])))])
        print(f"sigma {sigma:g}: PSNR {mean_psnr:.2f} dB, SSIM {np.mean(ss):.4f} over {len(pairs)} images")
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(rows, out / "metrics.csv")
    _write_csv(out / "summary.csv", ["sigma", "psnr", "ssim", "noisy_psnr"], summary)


def read_points(path: Path) -> list[ParetoPoint]:
    """CSV with header ``label,psnr,gmacs``; errors name the offending line."""
    if not path.is_file():
        raise FileNotFoundError(f"points file {path} does not exist")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["label", "psnr", "gmacs"]:
            raise ValueError(f"{path}:1: header must be 'label,psnr,gmacs', got {header}")
        points = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{line}: expected 3 fields, got {len(row)}")
            try:
                points.append(ParetoPoint(float(row[1]), float(row[2]), row[0].strip()))
            except ValueError as exc:
                raise ValueError(f"{path}:{line}: {exc}") from None
    if not points:
        raise ValueError(f"{path}: no data rows")
    return points


def cmd_pareto(cfg: RunConfig, args, out: Path) -> None:
    points = read_points(Path(args.points))
    front = pareto_front(points)
    _write_csv(out / "front.csv", ["label", "psnr", "gmacs"], [[p.label, repr(p.quality), repr(p.cost)] for p in front])
    out.joinpath("front.dat").write_text(
        "# gmacs psnr label\n" + "".join(f"{p.cost!r} {p.quality!r} \"{p.label}\"\n" for p in front))
    print("non-dominated: " + ", ".join(f"{p.label} ({p.quality:g} dB, {p.cost:g} G)" for p in front))


COMMANDS = {
    "costs": cmd_costs,
    "search": cmd_search,
    "derive": cmd_derive,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "pareto": cmd_pareto,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="denoise-nas", description="Hardware-aware entropy-regularized NAS for denoising U-Nets.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="YAML/JSON run config (defaults if omitted)")
        sp.add_argument("--out", help=f"output root (default: config output_dir, then $DENOISE_NAS_OUT/<name>)")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    sp = add("costs", "analytic MAC/param table and penalties")
    sp.add_argument("--latency-table", help="measured latencies (ms) per Stage/candidate")
    sp.add_argument("--resolution", help="input resolution HxW, e.g. 256x256")
    add("search", "train the supernet and derive an architecture")
    sp = add("derive", "pick the highest-encoding candidate per stage")
    sp.add_argument("--run", help="search run document (default: <out>/search/run.json)")
    sp.add_argument("--alphas", help="encodings file to derive from instead of a run")
    sp = add("finetune", "train the derived network from inherited weights")
    sp.add_argument("--derived", help="derived network (default: <out>/derive/derived.json)")
    sp.add_argument("--run", help="search run whose supernet supplies initial weights")
    sp.add_argument("--from-scratch", action="store_true", help="skip weight inheritance")
    sp = add("eval", "PSNR/SSIM per held-out image and noise level")
    sp.add_argument("--sigmas", help="comma-separated noise levels on the 0-255 scale")
    sp.add_argument("--model", choices=["finetuned", "identity", "base"])
    sp.add_argument("--params", help="parameter container of a fine-tuned network")
    sp = add("pareto", "non-dominated front of (PSNR, GMACs) points")
    sp.add_argument("--points", required=True, help="CSV with header label,psnr,gmacs")
    return p


def main(argv: list[str] | None = None) -> int:
    started = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = cfg.out_dir(args.out) / args.command
    try:
        COMMANDS[args.command](cfg, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SearchDiverged as exc:
        print(f"search diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_RUNTIME
    _write_meta(out, args.command, args, started)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
