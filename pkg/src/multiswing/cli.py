"""Command-line entry point: ``multiswing {validate,train,price,compare,curve}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from .config import LS, ConfigError, build_config, check_config, dump_config, make_contract, make_model, make_train_config, validate_config
from .lsm import LongstaffSchwartzPricer
from .reporting import price_row, write_csv
from .trainer import MultitaskSwingPricer, train_policy

log = logging.getLogger("multiswing")

EXIT_CONFIG = 2
EXIT_MISSING = 3


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", action="append", default=[],
                        help="named preset, may be repeated (applied in order)")
    common.add_argument("--config", help="YAML config file applied after the presets")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted override such as training.iterations=50")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--config-id", help="label written to price tables")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="multiswing", description="Swing contract pricing with multitask networks.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check a config and list every problem")
    sub.add_parser("train", parents=[common], help="train a policy and write checkpoints and a training log")
    price = sub.add_parser("price", parents=[common], help="value a saved policy")
    price.add_argument("--checkpoint", help="checkpoint directory (default: <out>/checkpoint)")
    sub.add_parser("compare", parents=[common], help="train and value every configured scheme")
    sub.add_parser("curve", parents=[common], help="sweep-mode learning curves per scheme")
    return p


def _config(args):
    overrides = list(args.overrides)
    if args.out:
        overrides.append(f"output={args.out}")
    return build_config(args.preset, args.config, overrides)


def _config_id(args):
    return args.config_id or ("+".join(args.preset) if args.preset else "custom")


def _prepare_out(cfg):
    out = cfg["output"]
    os.makedirs(out, exist_ok=True)
    dump_config(cfg, os.path.join(out, "config.yaml"))
    return out


def _pricer(cfg, scheme, **changes):
    tc = replace(make_train_config(cfg), scheme=scheme, **changes)
    params = {k: v for k, v in vars(tc).items() if k != "seed"}
    return MultitaskSwingPricer(**params, random_state=tc.seed)


def _valuate(estimator, model, cfg):
    v = cfg["valuation"]
    return estimator.price(model, v["n_paths"], v["seed"], v["chunk_size"])


def cmd_validate(args, cfg):
    problems = validate_config(cfg)
    if problems:
        for p in problems:
            print(f"error: {p}")
        return EXIT_CONFIG
    grid_info = make_contract(cfg).volume
    print(f"ok: {cfg['model']['n_dates']} dates, constraints {grid_info.to_dict()}")
    return 0


def cmd_train(args, cfg):
    model, contract = make_model(cfg), make_contract(cfg)
    out = _prepare_out(cfg)
    est = _pricer(cfg, cfg["training"]["scheme"]).fit(model, contract)
    est.save(os.path.join(out, "checkpoint"), model)
    write_csv(os.path.join(out, "training_log.csv"), "training_log", est.training_log_)
    print(f"trained {est.n_dates_} dates, checkpoint in {os.path.join(out, 'checkpoint')}")
    return 0


def cmd_price(args, cfg):
    ckpt = args.checkpoint or os.path.join(cfg["output"], "checkpoint")
    if not os.path.exists(os.path.join(ckpt, "manifest.json")):
        print(f"error: no checkpoint found at {ckpt} (run 'train' first)", file=sys.stderr)
        return EXIT_MISSING
    est, model, _ = MultitaskSwingPricer.load(ckpt)
    out = _prepare_out(cfg)
    res = _valuate(est, model, cfg)
    write_csv(os.path.join(out, "prices.csv"), "prices", [price_row(_config_id(args), est.scheme.upper(), res)])
    print(f"{est.scheme.upper()}: {res.price:.6f} +/- {res.stderr:.6f} (M={res.n_paths})")
    return 0


def cmd_compare(args, cfg):
    model, contract = make_model(cfg), make_contract(cfg)
    out = _prepare_out(cfg)
    rows = []
    for scheme in cfg["schemes"]:
        if scheme == LS:
            ls = cfg["ls"]
            est = LongstaffSchwartzPricer(ls["degree"], ls["include_spot"], ls["n_train_paths"],
                                          random_state=cfg["training"]["seed"]).fit(model, contract)
        else:
            est = _pricer(cfg, scheme).fit(model, contract)
            write_csv(os.path.join(out, f"training_log_{scheme}.csv"), "training_log", est.training_log_)
        res = _valuate(est, model, cfg)
        rows.append(price_row(_config_id(args), scheme.upper(), res))
        print(f"{scheme.upper()}: {res.price:.6f} +/- {res.stderr:.6f}", flush=True)
        write_csv(os.path.join(out, "prices.csv"), "prices", rows)
    return 0


def cmd_curve(args, cfg):
    model, contract = make_model(cfg), make_contract(cfg)
    out = _prepare_out(cfg)
    rows = []
    for scheme in cfg["schemes"]:
        if scheme == LS:
            log.info("LS has no learning curve; skipped")
            continue
        tc = replace(make_train_config(cfg), scheme=scheme, mode="sweep", path_sampling="fresh")
        _, records, curve = train_policy(model, contract, tc)
        write_csv(os.path.join(out, f"training_log_{scheme}.csv"), "training_log", records)
        rows.extend({"scheme": scheme.upper(), **pt} for pt in curve)
        print(f"{scheme.upper()}: final snapshot {curve[-1]['price']:.6f}", flush=True)
        write_csv(os.path.join(out, "curve.csv"), "curve", rows)
    return 0


COMMANDS = {"validate": cmd_validate, "train": cmd_train, "price": cmd_price,
            "compare": cmd_compare, "curve": cmd_curve}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command != "validate":
            check_config(cfg)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return COMMANDS[args.command](args, cfg)


if __name__ == "__main__":
    sys.exit(main())
