"""Command-line surface.

Subcommands: gen-argmax, compile, synth, split-flows, replay, run,
calibrate, imis, estimate, verify.  A JSON config file (--config) supplies
defaults; explicit flags override it.  Exit codes: 0 success, 2 validation
or input errors, 1 unexpected runtime errors (verify exits 1 when a check
fails).
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import bundle as bundle_mod
from . import engine as engine_mod
from . import escalate, imis, oracles, resources, ternary, trace as trace_mod


class ValidationError(Exception):
    pass


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fp:
        doc = json.load(fp)
    if not isinstance(doc, dict):
        raise ValidationError("config file must hold a JSON object")
    return doc


def _cfg_get(cfg: dict, section: str, key: str, fallback):
    return cfg.get(section, {}).get(key, fallback)


def _engine_config(cfg: dict, args) -> engine_mod.EngineConfig:
    ec = engine_mod.EngineConfig()
    sec = cfg.get("engine", {})
    for name in vars(ec):
        if name in sec:
            setattr(ec, name, sec[name])
    if getattr(args, "n_slots", None) is not None:
        ec.n_slots = args.n_slots
    if getattr(args, "timeout_ms", None) is not None:
        ec.timeout_us = int(args.timeout_ms * 1000)
    if getattr(args, "cross_check", False):
        ec.cross_check_argmax = True
    return ec


def cmd_gen_argmax(args, cfg):
    tie = tuple(int(t) for t in args.tie_order.split(",")) if args.tie_order else None
    table = ternary.generate_table(args.n, args.m, tie, args.level, cap=args.cap)
    out = open(args.output, "w") if args.output else sys.stdout
    try:
        ternary.dump_table(table, out)
    finally:
        if args.output:
            out.close()
    print(f"generated {len(table)} entries for n={args.n} m={args.m} level={args.level}",
          file=sys.stderr)
    return 0


def cmd_compile(args, cfg):
    if args.random:
        rng = np.random.default_rng(args.seed)
        weights = bundle_mod.random_weights(
            rng,
            n_classes=args.classes,
            ev_width=args.ev_width,
            h_width=args.h_width,
            len_embed_width=args.len_embed_width,
            ipd_embed_width=args.ipd_embed_width,
            len_input_bits=args.len_input_bits,
            ipd_input_bits=args.ipd_input_bits,
        )
        b = bundle_mod.compile_bundle(
            weights,
            S=args.window,
            n_classes=args.classes,
            merged=not args.unmerged,
            len_embed_width=args.len_embed_width,
            ipd_embed_width=args.ipd_embed_width,
            len_input_bits=args.len_input_bits,
            ipd_input_bits=args.ipd_input_bits,
            reset_period=args.reset_period,
        )
    else:
        if not args.bundle:
            raise ValidationError("compile needs --bundle (or --random)")
        src = bundle_mod.load_bundle(args.bundle)
        if src.weights is None:
            raise ValidationError("bundle has no weights section to compile from")
        b = bundle_mod.compile_bundle(
            src.weights,
            S=src.S,
            n_classes=src.n_classes,
            merged=src.merged,
            len_embed_width=src.len_embed_width,
            ipd_embed_width=src.ipd_embed_width,
            len_input_bits=src.len_input_bits,
            len_shift=src.len_shift,
            ipd_input_bits=src.ipd_input_bits,
            ipd_shift=src.ipd_shift,
            prob_bits=src.prob_bits,
            reset_period=src.reset_period,
            tie_order=src.tie_order,
        )
        b.t_conf_fx = src.t_conf_fx
        b.t_esc = src.t_esc
        b.fallback_tree = src.fallback_tree
    bundle_mod.save_bundle(b, args.output)
    print(f"wrote bundle with {len(b.tables)} tables to {args.output}", file=sys.stderr)
    return 0


def cmd_synth(args, cfg):
    specs_cfg = cfg.get("synth", {}).get("classes")
    if args.spec:
        with open(args.spec) as fp:
            specs_cfg = json.load(fp)
    if specs_cfg:
        specs = [trace_mod.ClassSpec(**entry) for entry in specs_cfg]
    else:
        specs = trace_mod.two_class_demo_specs()
    t = trace_mod.synth_trace(specs, args.flows, args.seed, spacing_us=args.spacing_us)
    if t.degenerate_classes:
        print("warning: some classes share identical generative parameters", file=sys.stderr)
    trace_mod.save_trace(t, args.output)
    print(f"wrote {len(t)} packets / {args.flows} flows to {args.output}", file=sys.stderr)
    return 0


def cmd_split_flows(args, cfg):
    t = trace_mod.load_trace(args.input)
    records = trace_mod.split_flows(t.packets, gap_us=int(args.gap_ms * 1000))
    packets = [p for rec in records for p in rec.packets]
    packets.sort(key=lambda p: (p.time_us, p.key))
    trace_mod.save_trace(trace_mod.Trace(packets=packets, n_classes=t.n_classes), args.output)
    skipped = getattr(t, "skipped_records", 0)
    print(
        f"{len(records)} flow records from {len(packets)} packets "
        f"({skipped} malformed lines skipped)",
        file=sys.stderr,
    )
    return 0


def cmd_replay(args, cfg):
    t = trace_mod.load_trace(args.input)
    load = math.inf if args.load == "inf" else float(args.load)
    out = trace_mod.replay(t, load, total_flows=args.total_flows)
    trace_mod.save_trace(out, args.output)
    print(f"replayed {out.flow_count()} flows / {len(out)} packets", file=sys.stderr)
    return 0


def cmd_run(args, cfg):
    b = bundle_mod.load_bundle(args.bundle)
    t = trace_mod.load_trace(args.trace)
    ec = _engine_config(cfg, args)
    ec.collect_escalated = bool(args.esc_out)
    result = engine_mod.run_integrated(b, t, ec)
    if args.esc_out:
        stream = [
            imis.EscalatedPacket(r.key, r.time_us, r.seq, r.prefix) for r in result.escalated
        ]
        imis.save_stream(stream, args.esc_out)
    if args.records:
        escalate.save_records(
            [escalate.ConfidenceRecord(*r) for r in result.records], args.records
        )
    if args.decisions:
        with open(args.decisions, "w") as fp:
            fp.write("# matchplane-decisions v1\n")
            fp.write("# index category pred label\n")
            for o in result.outcomes:
                pred = o.pred if o.pred is not None else -1
                label = o.label if o.label is not None else -1
                fp.write(f"{o.index} {o.category} {pred} {label}\n")
    doc = result.report.to_json()
    if args.report:
        with open(args.report, "w") as fp:
            json.dump(doc, fp, indent=1)
    print(json.dumps(doc, indent=1))
    return 0


def cmd_calibrate(args, cfg):
    records = escalate.load_records(args.records)
    b = bundle_mod.load_bundle(args.bundle)
    cal = escalate.calibrate(
        records,
        b.n_classes,
        args.target,
        prob_bits=b.prob_bits,
        correct_loss_budget=args.budget,
    )
    b.t_conf_fx = cal.t_conf_fx
    b.t_esc = cal.t_esc
    bundle_mod.save_bundle(b, args.output)
    print(
        json.dumps(
            {
                "t_conf_fx": list(cal.t_conf_fx),
                "t_esc": cal.t_esc,
                "escalated_fraction": cal.escalated_fraction,
                "infeasible": cal.infeasible,
            },
            indent=1,
        )
    )
    return 0


def cmd_imis(args, cfg):
    stream = imis.load_stream(args.stream)
    icfg = imis.ImisConfig(
        batch_size=args.batch,
        batch_latency_us=args.latency_us,
        cap_parser_pool=args.cap,
        cap_parser_buffer=args.cap,
        cap_results=args.cap,
        overflow=args.overflow,
        pool_policy=args.pool_policy,
    )
    classifier = imis.default_classifier(args.classes, seed=args.seed)
    log = imis.run_pipeline(stream, classifier, icfg)
    with open(args.output, "w") as fp:
        fp.write("# matchplane-imis-release v1\n")
        fp.write("# src dst sport dport proto seq arrival release class waited\n")
        for r in log.releases:
            cls = r.cls if r.cls is not None else -1
            fp.write(
                f"{r.key[0]} {r.key[1]} {r.key[2]} {r.key[3]} {r.key[4]} "
                f"{r.seq} {r.arrival_us} {r.release_us} {cls} {int(r.waited)}\n"
            )
    if args.latency_report:
        with open(args.latency_report, "w") as fp:
            fp.write("phase,p50,p90,p99,p100\n")
            if log.releases:
                rep = imis.latency_report(log)
                for phase in imis.PHASES + ("end_to_end",):
                    row = rep[phase]
                    fp.write(f"{phase},{row['p50']},{row['p90']},{row['p99']},{row['p100']}\n")
    print(
        f"released {len(log.releases)} packets over {len(log.batches)} batches "
        f"(drops: {log.drops})",
        file=sys.stderr,
    )
    return 0


def cmd_estimate(args, cfg):
    b = bundle_mod.load_bundle(args.bundle)
    rep = resources.estimate_resources(b, fan=args.fan)
    print(json.dumps(rep.to_json(), indent=1))
    return 0


def cmd_verify(args, cfg):
    b = bundle_mod.load_bundle(args.bundle)
    rows = oracles.verify_bundle(b, trials=args.trials, seed=args.seed)
    failed = 0
    for name, ok, detail in rows:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        failed += 0 if ok else 1
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="matchplane", description=__doc__)
    ap.add_argument("--config", help="JSON config file supplying defaults")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-argmax", help="generate a ternary argmax table")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--level", choices=ternary.LEVELS, default="opt1+opt2")
    g.add_argument("--tie-order", dest="tie_order")
    g.add_argument("--cap", type=int, default=ternary.DEFAULT_ENTRY_CAP)
    g.add_argument("-o", "--output")
    g.set_defaults(fn=cmd_gen_argmax)

    c = sub.add_parser("compile", help="compile tables from bundle weights")
    c.add_argument("--bundle")
    c.add_argument("--random", action="store_true", help="random weights (demo)")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--window", type=int, default=8)
    c.add_argument("--classes", type=int, default=2)
    c.add_argument("--ev-width", type=int, default=4)
    c.add_argument("--h-width", type=int, default=5)
    c.add_argument("--len-embed-width", type=int, default=6)
    c.add_argument("--ipd-embed-width", type=int, default=6)
    c.add_argument("--len-input-bits", type=int, default=8)
    c.add_argument("--ipd-input-bits", type=int, default=8)
    c.add_argument("--reset-period", type=int, default=128)
    c.add_argument("--unmerged", action="store_true")
    c.add_argument("-o", "--output", required=True)
    c.set_defaults(fn=cmd_compile)

    s = sub.add_parser("synth", help="generate a labeled synthetic trace")
    s.add_argument("--spec", help="JSON list of class generative parameters")
    s.add_argument("--flows", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--spacing-us", type=int, default=1000)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(fn=cmd_synth)

    sf = sub.add_parser("split-flows", help="split flow records at idle gaps")
    sf.add_argument("-i", "--input", required=True)
    sf.add_argument("--gap-ms", type=float, default=256.0)
    sf.add_argument("-o", "--output", required=True)
    sf.set_defaults(fn=cmd_split_flows)

    r = sub.add_parser("replay", help="re-release flows at a target load")
    r.add_argument("-i", "--input", required=True)
    r.add_argument("--load", required=True, help="new flows per second, or 'inf'")
    r.add_argument("--total-flows", type=int)
    r.add_argument("-o", "--output", required=True)
    r.set_defaults(fn=cmd_replay)

    run = sub.add_parser("run", help="integrated per-packet analysis over a trace")
    run.add_argument("--bundle", required=True)
    run.add_argument("--trace", required=True)
    run.add_argument("--esc-out", help="write escalated packets to this stream file")
    run.add_argument("--records", help="write confidence records here")
    run.add_argument("--report", help="write the metrics report JSON here")
    run.add_argument("--decisions", help="write per-packet decisions here")
    run.add_argument("--n-slots", type=int)
    run.add_argument("--timeout-ms", type=float)
    run.add_argument("--cross-check", action="store_true",
                     help="assert ternary argmax equals software argmax per decision")
    run.set_defaults(fn=cmd_run)

    cal = sub.add_parser("calibrate", help="pick T_conf / T_esc from records")
    cal.add_argument("--records", required=True)
    cal.add_argument("--bundle", required=True)
    cal.add_argument("--target", type=float, default=0.05)
    cal.add_argument("--budget", type=float, default=0.01)
    cal.add_argument("-o", "--output", required=True)
    cal.set_defaults(fn=cmd_calibrate)

    im = sub.add_parser("imis", help="simulate the off-switch pipeline")
    im.add_argument("--stream", required=True)
    im.add_argument("--batch", type=int, default=16)
    im.add_argument("--latency-us", type=int, default=1000)
    im.add_argument("--cap", type=int, default=1 << 16)
    im.add_argument("--overflow", choices=("block", "drop"), default="block")
    im.add_argument("--pool-policy", choices=("oldest", "freshest"), default="oldest")
    im.add_argument("--classes", type=int, default=2)
    im.add_argument("--seed", type=int, default=7)
    im.add_argument("--latency-report")
    im.add_argument("-o", "--output", required=True)
    im.set_defaults(fn=cmd_imis)

    est = sub.add_parser("estimate", help="table/state/TCAM resource report")
    est.add_argument("--bundle", required=True)
    est.add_argument("--fan", type=int, default=3)
    est.set_defaults(fn=cmd_estimate)

    v = sub.add_parser("verify", help="run the oracle suites on a bundle")
    v.add_argument("--bundle", required=True)
    v.add_argument("--trials", type=int, default=512)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(fn=cmd_verify)

    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        return args.fn(args, cfg)
    except (ValidationError, ValueError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except engine_mod.EngineError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
