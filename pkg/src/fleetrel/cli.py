"""Command-line entry point.

Every subcommand writes ``manifest.json`` into ``--out`` describing the run:
inputs with their SHA-256, seed, parameters, package version and built-in
model fingerprints.  Exit codes are 0 on success, 1 on a data error and 2 on
a usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .dram_classify import ComponentClassifier
from .exceptions import FleetrelError
from .failure_model import (
    BUILTIN_MODELS,
    LogisticFailureModel,
    compare_designs,
    fit_logistic,
    predict_relative_rate,
    published_model,
)
from .mitigation_sim import OfflinePolicy, OfflineStore, RandomizationPlan, run_offline_sim, run_randomizer_sim
from .net_reliability import (
    breakdown,
    group_metrics,
    incident_table,
    per_link_metrics,
    percentile_curve,
)
from .ssd_lifecycle import (
    FACTORS,
    FleetPairIndex,
    conditional_both_fail,
    factor_curve,
    label_phases,
    platform_uber,
    write_amplification_ratio,
)
from .svg import write_chart
from .trace_model import (
    ClassifiedMemError,
    GeneratorSpec,
    ServerDesign,
    generate_traces,
    open_text,
    parse_events,
    parse_fiber_tickets,
    write_jsonl,
)


class UsageError(Exception):
    """Bad flags or missing files; exits with status 2."""


# ---------------------------------------------------------------------------
# helpers


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _require_file(path, flag):
    if path is None:
        raise UsageError(f"{flag} is required")
    if not os.path.isfile(path):
        raise UsageError(f"{flag}: no such file: {path}")
    return path


def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_table(rows, fields, path_stem, fmt):
    """Write ``rows`` as ``<stem>.csv`` or ``<stem>.json``; returns the file name."""
    if fmt == "json":
        path = path_stem + ".json"
        _dump_json(rows, path)
    else:
        path = path_stem + ".csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
            w.writeheader()
            for row in rows:
                w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
    return os.path.basename(path)


def _load(path, schema, flag):
    try:
        return parse_events(path, schema)
    except FleetrelError as exc:
        raise FleetrelError(f"{flag} {path}: {exc}") from None


def _model_fingerprints():
    out = {}
    for name in BUILTIN_MODELS:
        blob = json.dumps(published_model(name).to_dict(), sort_keys=True).encode()
        out[name] = hashlib.sha256(blob).hexdigest()[:16]
    return out


class _Run:
    """Collects manifest details while a subcommand runs."""

    def __init__(self, args):
        self.args = args
        self.out = args.out
        self.inputs = {}
        self.outputs = []

    def input(self, flag, path):
        self.inputs[flag] = {"path": os.path.basename(path), "sha256": _sha256(path)}
        return path

    def path(self, name):
        self.outputs.append(name)
        return os.path.join(self.out, name)

    def manifest(self, status, error=None):
        params = {
            k: v
            for k, v in sorted(vars(self.args).items())
            if k not in ("func", "out", "input", "config", "design", "compare", "store") and not callable(v)
        }
        if params.get("model") not in (None, *BUILTIN_MODELS):
            params["model"] = os.path.basename(params["model"])
        doc = {
            "command": self.args.command,
            "status": status,
            "seed": getattr(self.args, "seed", None),
            "parameters": params,
            "inputs": self.inputs,
            "outputs": sorted(set(self.outputs)),
            "version": __version__,
            "builtin_models": _model_fingerprints(),
        }
        if error is not None:
            doc["error"] = error
        _dump_json(doc, os.path.join(self.out, "manifest.json"))


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(run):
    a = run.args
    cfg = {}
    if a.config:
        with open(run.input("--config", _require_file(a.config, "--config")), encoding="utf-8") as fh:
            try:
                cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FleetrelError(f"--config {a.config}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
    cfg["seed"] = a.seed
    if a.fleet_size is not None:
        cfg["fleet_size"] = a.fleet_size
    bundle = generate_traces(GeneratorSpec.from_dict(cfg))
    files = bundle.write(run.out)
    run.outputs.extend(files.values())
    print(f"generated {len(bundle.mem_events)} memory errors, {len(bundle.ssd_snapshots)} SSD snapshots, "
          f"{len(bundle.incidents)} incidents, {len(bundle.fiber_tickets)} fiber tickets")


def cmd_classify(run):
    a = run.args
    events = _load(run.input("--input", _require_file(a.input, "--input")), "mem_error", "--input")
    if not events:
        raise FleetrelError(f"--input {a.input}: no events")
    clf = ComponentClassifier(threshold_k=a.threshold_k, cell_window_s=a.cell_window).fit(events)
    classified = [ClassifiedMemError.from_event(e, c) for e, c in zip(events, clf.labels_)]
    classified.sort(key=lambda e: (e.timestamp, e.server_id))
    write_jsonl(classified, run.path("classified.jsonl"))
    rows = clf.report_.to_rows()
    run.outputs.append(_write_table(rows, ["class", "error_fraction", "server_fraction"],
                                    os.path.join(run.out, "class_shares"), a.format))
    if a.svg:
        xs = list(range(len(rows)))
        write_chart(run.path("class_shares.svg"),
                    {"errors": (xs, [r["error_fraction"] for r in rows]),
                     "servers": (xs, [r["server_fraction"] for r in rows])},
                    title="share by component class", xlabel="class index", ylabel="fraction")
    for r in rows:
        print(f"{r['class']:9s} errors {r['error_fraction']:.4f}  servers {r['server_fraction']:.4f}")


def cmd_fit(run):
    a = run.args
    samples = _load(run.input("--input", _require_file(a.input, "--input")), "labeled_design", "--input")
    fit = fit_logistic([(s.design, s.in_error_group) for s in samples],
                       include_excluded=a.include_excluded, ridge=a.ridge)
    with open(run.path("model.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(fit.model.to_json() + "\n")
    rows = [
        {"term": k, "coefficient": v, "std_error": fit.stderr[k], "p_value": fit.pvalues[k],
         "significant": fit.significant[k]}
        for k, v in fit.model.coefficients.items()
    ]
    run.outputs.append(_write_table(rows, ["term", "coefficient", "std_error", "p_value", "significant"],
                                    os.path.join(run.out, "coefficients"), a.format))
    for r in rows:
        print(f"{r['term']:11s} {r['coefficient']: .4e}  se {r['std_error']:.3e}  p {r['p_value']:.3g}")


def _load_model(name):
    if name in BUILTIN_MODELS:
        return published_model(name)
    path = _require_file(name, "--model")
    try:
        with open(path, encoding="utf-8") as fh:
            return LogisticFailureModel.from_dict(json.load(fh))
    except json.JSONDecodeError as exc:
        raise FleetrelError(f"--model {path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None


def _load_design(path, flag):
    with open(path, encoding="utf-8") as fh:
        try:
            return ServerDesign.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise FleetrelError(f"{flag} {path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
        except FleetrelError as exc:
            raise FleetrelError(f"{flag} {path}: {exc}") from None


def cmd_predict(run):
    a = run.args
    model = _load_model(a.model)
    if a.model not in BUILTIN_MODELS:
        run.input("--model", a.model)
    design = _load_design(run.input("--design", _require_file(a.design, "--design")), "--design")
    rate = predict_relative_rate(model, design)
    result = {"model": model.name, "rate": rate}
    print(f"{rate:.{a.decimals}f}")
    if a.compare:
        other = _load_design(run.input("--compare", _require_file(a.compare, "--compare")), "--compare")
        cmp = compare_designs(model, design, other, decimals=a.decimals if a.rounded else None)
        result["comparison"] = {
            "rate_a": cmp.rate_a, "rate_b": cmp.rate_b, "ratio": cmp.ratio,
            "percent_reduction": cmp.percent_reduction,
        }
        print(f"ratio {cmp.ratio:.2f}  reduction {cmp.percent_reduction:.1f}%")
    _dump_json(result, run.path("prediction.json"))


def cmd_ssd(run):
    a = run.args
    snaps = _load(run.input("--input", _require_file(a.input, "--input")), "ssd_snapshot", "--input")
    if not snaps:
        raise FleetrelError(f"--input {a.input}: no snapshots")
    summary = {"uber": platform_uber(snaps), "both_fail": {}, "write_amplification": {}, "curves": {}}
    for plat in sorted({s.platform for s in snaps}):
        idx = FleetPairIndex.from_snapshots(snaps, platform=plat)
        if idx.s_lower | idx.s_higher:
            summary["both_fail"][plat] = conditional_both_fail(idx)
        ratios = [write_amplification_ratio(s) for s in snaps if s.platform == plat and s.os_sectors_written > 0]
        if ratios:
            summary["write_amplification"][plat] = float(np.mean(ratios))
    factors = list(FACTORS) if a.factor == "all" else [a.factor]
    phases = {}
    for factor in factors:
        for plat in [None] if not a.per_platform else sorted({s.platform for s in snaps}):
            cohort = [s for s in snaps if plat is None or s.platform == plat]
            series = factor_curve(cohort, factor, a.bucket_width, a.min_frac)
            stem = f"curve_{factor}" + (f"_{plat}" if plat else "")
            run.outputs.append(_write_table(series.to_rows(), ["bucket_x", "n", "rate", "ci_low", "ci_high"],
                                            os.path.join(run.out, stem), a.format))
            summary["curves"][stem] = len(series)
            if a.svg:
                write_chart(run.path(stem + ".svg"),
                            {"rate": (series.centers, series.rates), "ci_high": (series.centers, series.ci_high)},
                            title=f"SSD failure rate vs {factor}", xlabel=factor, ylabel="failure rate")
            if factor == "written":
                try:
                    phases[stem] = label_phases(series).to_dict()
                except FleetrelError as exc:
                    phases[stem] = {"error": str(exc)}
    if phases:
        _dump_json(phases, run.path("phases.json"))
    _dump_json(summary, run.path("ssd_summary.json"))
    for plat, u in summary["uber"].items():
        print(f"platform {plat}: UBER {u:.3g}")


def cmd_net(run):
    a = run.args
    base = a.input
    if base is None or not os.path.isdir(base):
        raise UsageError(f"--input must be a directory holding incidents.jsonl and network_population.json, "
                         f"got {base!r}")
    inc_path = run.input("--input", _require_file(os.path.join(base, "incidents.jsonl"), "--input"))
    pop_path = _require_file(os.path.join(base, "network_population.json"), "--input")
    run.inputs["population"] = {"path": os.path.basename(pop_path), "sha256": _sha256(pop_path)}
    incidents = _load(inc_path, "incident", "--input")
    with open(pop_path, encoding="utf-8") as fh:
        try:
            populations = {k: int(v) for k, v in json.load(fh).items()}
        except (json.JSONDecodeError, ValueError, AttributeError) as exc:
            raise FleetrelError(f"--input {pop_path}: bad population file ({exc})") from None
    report = {"device_types": incident_table(incidents, populations)}
    if incidents:
        report["root_causes"] = breakdown(incidents, "root_cause")
        report["severity"] = {str(k): v for k, v in breakdown(incidents, "sev_level").items()}
    tk_path = os.path.join(base, "fiber_tickets.txt")
    if os.path.isfile(tk_path):
        run.inputs["tickets"] = {"path": os.path.basename(tk_path), "sha256": _sha256(tk_path)}
        with open_text(tk_path) as fh:
            try:
                tickets = parse_fiber_tickets(fh.read())
            except FleetrelError as exc:
                raise FleetrelError(f"--input {tk_path}: {exc}") from None
        links = per_link_metrics(tickets)
        report["vendors"] = group_metrics(links, "vendor")
        report["continents"] = group_metrics(links, "continent")
        for name, key in (("mtbf", "mtbf_h"), ("mttr", "mttr_h")):
            vals = [m[key] for m in links.values() if m[key] is not None and m[key] > 0]
            if len(vals) < 3:
                continue
            curve = percentile_curve(vals)
            report[f"{name}_curve"] = {"a": curve.fit.a, "b": curve.fit.b, "r2": curve.fit.r2,
                                       "median": curve.percentile(0.5)}
            run.outputs.append(_write_table(curve.to_rows(), ["p", "value", "fitted"],
                                            os.path.join(run.out, f"{name}_curve"), a.format))
            if a.svg:
                write_chart(run.path(f"{name}_curve.svg"),
                            {"links": (curve.positions, curve.values),
                             "fit": (curve.positions, [r["fitted"] for r in curve.to_rows()])},
                            title=f"link {name.upper()} by percentile", xlabel="percentile", ylabel="hours")
    _dump_json(report, run.path("net_report.json"))
    for dev, row in report["device_types"].items():
        print(f"{dev:5s} i={row['i']:<5d} n={row['n']:<6d} r={row['r']:.3f}")


def cmd_sim_offline(run):
    a = run.args
    path = run.input("--input", _require_file(a.input, "--input"))
    with open_text(path) as fh:
        first = next((ln for ln in fh if ln.strip()), "")
    try:
        raw = "fault_class" not in json.loads(first) if first else False
    except json.JSONDecodeError:
        raise FleetrelError(f"--input {path}: line 1: invalid JSON") from None
    if raw:
        events = _load(path, "mem_error", "--input")
        labels = ComponentClassifier(a.threshold_k, a.cell_window).predict(events)
        trace = sorted((ClassifiedMemError.from_event(e, c) for e, c in zip(events, labels)),
                       key=lambda e: (e.timestamp, e.server_id))
    else:
        trace = _load(path, "classified_mem_error", "--input")
    policy = OfflinePolicy(
        trigger_errors=a.trigger_errors,
        cap_frac=a.cap_frac,
        initial_fail_prob=a.fail_prob,
        retry="fixed_delay" if a.retry_delay else "none",
        retry_delay_s=a.retry_delay or 3600,
    )
    store = OfflineStore(a.store) if a.store else None
    res = run_offline_sim(trace, policy, a.seed, host_capacity_bytes=int(a.capacity_gb * 2**30),
                          deploy_at=a.deploy_at, window_days=a.window_days, store=store)
    run.outputs.append(_write_table(res.timeline, ["day", "errors", "pages_offline", "tickets"],
                                    os.path.join(run.out, "timeline"), a.format))
    _dump_json(res.to_dict(), run.path("offline_result.json"))
    if a.svg:
        days = [r["day"] for r in res.timeline]
        write_chart(run.path("timeline.svg"), {"errors": (days, [r["errors"] for r in res.timeline])},
                    title="errors per day with page offlining", xlabel="day", ylabel="errors")
    print(f"observed {res.observed}  suppressed {res.suppressed}  reduction {res.reduction_pct:.1f}%  "
          f"pages {res.pages_offlined}  tickets {len(res.tickets)}")


def cmd_sim_randomize(run):
    a = run.args
    if a.input:
        with open(run.input("--input", _require_file(a.input, "--input")), encoding="utf-8") as fh:
            try:
                weights = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FleetrelError(f"--input {a.input}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(weights, list):
            raise FleetrelError(f"--input {a.input}: expected a JSON list of write weights")
    else:
        weights = [1.0] * a.pages
        for i in range(min(a.hot_pages, a.pages)):
            weights[i] = a.hot_weight
    plan = RandomizationPlan(a.capacity_gb * 2**30, a.utilization, a.period_days, a.latency_us * 1e-6)
    res = run_randomizer_sim(weights, plan, a.steps, a.seed, a.writes_per_period)
    _dump_json(res.to_dict(), run.path("randomize_result.json"))
    rows = [{"frame": i, "baseline": int(b), "randomized": int(r)}
            for i, (b, r) in enumerate(zip(res.wear_baseline, res.wear_randomized))]
    run.outputs.append(_write_table(rows, ["frame", "baseline", "randomized"],
                                    os.path.join(run.out, "wear"), a.format))
    if a.svg:
        xs = [r["frame"] for r in rows]
        write_chart(run.path("wear.svg"),
                    {"baseline": (xs, [r["baseline"] for r in rows]),
                     "randomized": (xs, [r["randomized"] for r in rows])},
                    title="wear per frame", xlabel="frame", ylabel="writes")
    print(f"pages/s {res.pages_per_second:.1f}  overhead {100 * res.overhead_fraction:.1f}%  "
          f"gini {res.gini_baseline:.3f} -> {res.gini_randomized:.3f}")


# ---------------------------------------------------------------------------
# parser


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("must be a non-negative 64-bit integer")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="fleetrel", description="Fleet hardware reliability toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_, *, stochastic=False, needs_input=False):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--out", default=".", help="output directory (default: current directory)")
        sp.add_argument("--format", choices=("csv", "json"), default="csv", help="tabular output format")
        sp.add_argument("--svg", action="store_true", help="also write SVG line charts")
        if stochastic:
            sp.add_argument("--seed", type=_seed, required=True, help="random seed (required)")
        sp.add_argument("--input", required=needs_input, help="input file or directory")
        return sp

    sp = add("generate", cmd_generate, "generate a synthetic fleet", stochastic=True)
    sp.add_argument("--config", help="generator spec JSON")
    sp.add_argument("--fleet-size", type=_positive_int)

    sp = add("classify", cmd_classify, "attribute DRAM errors to component classes", needs_input=True)
    sp.add_argument("--threshold-k", type=float, default=1000)
    sp.add_argument("--cell-window", type=int, default=60)

    sp = add("fit", cmd_fit, "fit the logistic failure model to labeled designs", needs_input=True)
    sp.add_argument("--include-excluded", action="store_true", help="also fit Width8 and Memory%%")
    sp.add_argument("--ridge", type=float, default=0.0)

    sp = add("predict", cmd_predict, "predict the relative failure rate of a server design")
    sp.add_argument("--model", default="paper-2015", help="built-in model name or model JSON")
    sp.add_argument("--design", required=True, help="server design JSON")
    sp.add_argument("--compare", help="second design JSON to compare against")
    sp.add_argument("--decimals", type=int, default=2)
    sp.add_argument("--rounded", action="store_true", help="compare rates rounded to --decimals")

    sp = add("ssd", cmd_ssd, "SSD failure curves, phases, UBER and paired failures", needs_input=True)
    sp.add_argument("--factor", choices=sorted(FACTORS) + ["all"], default="written")
    sp.add_argument("--bucket-width", type=float, default=1.0)
    sp.add_argument("--min-frac", type=float, default=0.001)
    sp.add_argument("--per-platform", action="store_true")

    add("net", cmd_net, "network incident and backbone reliability report", needs_input=True)

    sp = add("sim-offline", cmd_sim_offline, "replay a trace with page offlining", stochastic=True,
             needs_input=True)
    sp.add_argument("--fail-prob", type=float, default=0.06)
    sp.add_argument("--cap-frac", type=float, default=0.05)
    sp.add_argument("--trigger-errors", type=_positive_int, default=1)
    sp.add_argument("--retry-delay", type=int, default=0, help="retry failed attempts after N seconds")
    sp.add_argument("--capacity-gb", type=float, default=64)
    sp.add_argument("--deploy-at", type=int)
    sp.add_argument("--window-days", type=_positive_int, default=30)
    sp.add_argument("--store", help="persistent offline-page JSONL store")
    sp.add_argument("--threshold-k", type=float, default=1000)
    sp.add_argument("--cell-window", type=int, default=60)

    sp = add("sim-randomize", cmd_sim_randomize, "simulate physical page randomization", stochastic=True)
    sp.add_argument("--capacity-gb", type=float, default=256)
    sp.add_argument("--utilization", type=float, default=1.0)
    sp.add_argument("--period-days", type=float, default=1.0)
    sp.add_argument("--latency-us", type=float, default=374.9)
    sp.add_argument("--pages", type=_positive_int, default=64)
    sp.add_argument("--hot-pages", type=int, default=1)
    sp.add_argument("--hot-weight", type=float, default=1000.0)
    sp.add_argument("--steps", type=_positive_int, default=200_000)
    sp.add_argument("--writes-per-period", type=_positive_int)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as exc:
        parser.exit(2, f"fleetrel: error: --out {args.out}: {exc.strerror}\n")
    run = _Run(args)
    try:
        args.func(run)
    except UsageError as exc:
        run.manifest("usage_error", str(exc))
        parser.exit(2, f"fleetrel {args.command}: error: {exc}\n")
    except (FleetrelError, OSError) as exc:
        run.manifest("error", str(exc))
        print(f"fleetrel {args.command}: error: {exc}", file=sys.stderr)
        return 1
    run.manifest("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
