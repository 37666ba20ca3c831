"""``serrobust`` command line.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 diverged
training, 1 anything else raised by the toolkit.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as X
from .augment import resolve_asset_root
from .corpus import (TagFilter, build_degraded_testset, filter_noise, read_manifest, read_noise_manifest,
                     validate_manifest, write_noise_manifest)
from .errors import ConfigError, DataError, DivergedError, ManifestError, SerError
from .features import FeatureCache
from .metrics import summary_rows, write_csv

log = logging.getLogger("serrobust")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4


def _parse_overrides(extra: list) -> dict:
    """``--train.lr 1e-3 --augment.plan_cycle 4`` -> {'train.lr': '1e-3', ...}."""
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"override {tok} needs a value")
            val = extra[i + 1]
            i += 2
        out[key.replace("-", "_")] = val
    return out


def _asset_root(explicit):
    root = resolve_asset_root(explicit)
    if root is not None:
        log.info("asset root: %s%s", root, "" if explicit else " (from SERROBUST_ASSET_ROOT)")
    return root


def load_run_config(args, extra) -> X.RunConfig:
    base = X.RunConfig.load(args.config).to_dict() if args.config else X.RunConfig().to_dict()
    flat = {}
    for key in ("corpus", "degraded", "run_dir", "workers"):
        v = getattr(args, key, None)
        if v is not None:
            flat[key] = v if key != "workers" else int(v)
    if getattr(args, "folds", None):
        flat["folds"] = [int(f) for f in args.folds.split(",")]
    if getattr(args, "arch", None):
        flat["model.arch"] = args.arch
    if getattr(args, "head", None):
        flat["model.head"] = args.head
    if getattr(args, "seed", None) is not None:
        flat["model.seed"] = flat["train.seed"] = flat["augment.rng_seed"] = args.seed
    d = X.apply_overrides(base, flat)
    d = X.apply_overrides(d, _parse_overrides(extra))
    root = _asset_root(getattr(args, "assets", None) or d.get("assets") or None)
    d["assets"] = str(root) if root else ""
    if getattr(args, "augment", None) == "off":
        d["augment"]["apply_prob"] = {k: 0.0 for k in d["augment"]["apply_prob"]}
    cfg = X.RunConfig.from_dict(d)
    if not cfg.corpus:
        raise ConfigError("no corpus manifest given (--corpus or config 'corpus')")
    return cfg.validate()


# ---------------------------------------------------------------- commands

def cmd_synth(args, extra):
    paths = X.build_workspace(args.out, size=args.size, seed=args.seed, nsr=args.nsr)
    print(json.dumps(paths, indent=1))


def cmd_curate(args, extra):
    f = TagFilter.from_file(args.tags) if args.tags else TagFilter()
    clips = read_noise_manifest(args.noise_manifest)
    kept = filter_noise(clips, f)
    write_noise_manifest(args.out, kept)
    print(f"kept {len(kept)} of {len(clips)} clips -> {args.out}")


def cmd_degrade(args, extra):
    root = _asset_root(args.assets)
    if root is None:
        raise ConfigError("degrade needs --assets or SERROBUST_ASSET_ROOT")
    ir, ego = X.load_channel(root)
    recs = read_manifest(args.manifest)
    nsr = tuple(args.nsr) if len(args.nsr) == 2 else args.nsr[0]
    out, skipped = build_degraded_testset(recs, args.out, ir, ego, nsr_policy=nsr, seed=args.seed)
    print(f"wrote {len(out)} utterances, skipped {len(skipped)} -> {args.out}")


def cmd_features(args, extra):
    recs = read_manifest(args.manifest)
    rep = validate_manifest(recs, check_audio=True, n_sessions=len({r.session for r in recs}))
    if not rep.ok:
        raise ManifestError(f"{args.manifest}: {len(rep.diagnostics)} problems", rep.diagnostics)
    cache = FeatureCache(args.cache)
    lengths = []
    for ex in X.load_examples(recs):
        lengths.append(len(cache.get_or_compute(ex.waveform)))
    print(f"{len(lengths)} feature matrices in {args.cache} (frames: min {min(lengths)}, max {max(lengths)})")


def cmd_train(args, extra):
    cfg = load_run_config(args, extra)
    agg = X.run_experiment(cfg)
    for cond, rep in agg.items():
        print(cond, json.dumps({k: round(v, 4) for k, v in rep.values().items()}))


def cmd_ablate(args, extra):
    cfg = load_run_config(args, extra)
    rows = X.run_ablation(cfg)
    for r in rows:
        print(r)


def _manifests_for(run_dir, clean, degraded) -> dict:
    cfg = X.RunConfig.load(Path(run_dir) / "config.json")
    m = {"clean": clean or cfg.corpus}
    if degraded or cfg.degraded:
        m["degraded"] = degraded or cfg.degraded
    return m


def cmd_eval(args, extra):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for name, run in (("noaug", args.noaug), ("aug", args.aug)):
        if run is None:
            continue
        res = X.evaluate_run(run, _manifests_for(run, args.clean, args.degraded))
        results[name] = {c: r for c, (r, _, _) in res.items()}
        for cond, (rep, pred, target) in res.items():
            rep.to_json(out / f"{name}_{cond}.json")
            np.savez(out / f"{name}_{cond}_predictions.npz", pred=pred, target=target)
    base = results["noaug"]
    if "degraded" not in base:
        raise DataError("no degraded manifest given or recorded in the run config")
    aug = results.get("aug", {})
    rows = summary_rows(args.model_name, base["clean"], base["degraded"],
                        aug.get("clean"), aug.get("degraded"))
    write_csv(out / "summary.csv", rows)
    (out / "summary.json").write_text(json.dumps(rows, indent=1))
    for r in rows:
        print(r)


def cmd_report(args, extra):
    from . import plotting
    d = Path(args.eval_dir)
    made = []
    for js in sorted(d.glob("*_*.json")):
        if js.name.startswith("summary"):
            continue
        rep = json.loads(js.read_text())
        if rep.get("confusion"):
            made.append(plotting.confusion_heatmap(rep["confusion"], d / f"{js.stem}_confusion.png", js.stem))
        npz = d / f"{js.stem}_predictions.npz"
        if rep.get("arousal_mae") is not None and npz.is_file():
            z = np.load(npz)
            made.append(plotting.av_scatter(z["pred"], z["target"], d / f"{js.stem}_av.png", js.stem))
    if not made:
        raise DataError(f"{d}: no evaluation reports to plot")
    for p in made:
        print(p)


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="serrobust", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a mini-corpus, assets and degraded test set")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nsr", type=float, default=0.7)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("curate", help="filter a noise-clip manifest by tags")
    p.add_argument("--noise-manifest", required=True)
    p.add_argument("--tags", help="tag file: one tag per line, '!tag' for unwanted")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_curate)

    p = sub.add_parser("degrade", help="freeze a channel-degraded copy of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--assets")
    p.add_argument("--out", required=True)
    p.add_argument("--nsr", type=float, nargs="+", default=[0.7], help="fixed ratio or LOW HIGH")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_degrade)

    p = sub.add_parser("features", help="extract and cache features for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", required=True)
    p.set_defaults(fn=cmd_features)

    for name, fn, hlp in (("train", cmd_train, "train on every selected LOSO fold"),
                          ("ablate", cmd_ablate, "all-on run plus one run per removed augmentation")):
        p = sub.add_parser(name, help=hlp, description="Unknown --section.key VALUE flags override config fields.")
        p.add_argument("--config")
        p.add_argument("--corpus")
        p.add_argument("--degraded")
        p.add_argument("--assets")
        p.add_argument("--run-dir", dest="run_dir")
        p.add_argument("--arch", choices=("rnn", "cnn"))
        p.add_argument("--head", choices=("categorical", "dimensional"))
        p.add_argument("--augment", choices=("on", "off"))
        p.add_argument("--folds", help="comma-separated fold ids")
        p.add_argument("--workers", type=int)
        p.add_argument("--seed", type=int)
        p.set_defaults(fn=fn)

    p = sub.add_parser("eval", help="evaluate run checkpoints and build the summary table")
    p.add_argument("--noaug", required=True, help="run directory trained without augmentation")
    p.add_argument("--aug", help="run directory trained with augmentation")
    p.add_argument("--clean")
    p.add_argument("--degraded")
    p.add_argument("--model-name", default="model")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="render PNG figures from an eval directory")
    p.add_argument("eval_dir")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args, extra = ap.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if extra and args.command not in ("train", "ablate"):
        ap.error(f"unrecognized arguments: {' '.join(extra)}")
    try:
        args.fn(args, extra)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        for d in getattr(exc, "diagnostics", None) or []:
            print(f"  {d}", file=sys.stderr)
        return EXIT_DATA
    except SerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
