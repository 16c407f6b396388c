"""Command-line entry point: sources, baselines, bound checks, training, coding.

Every subcommand resolves a RunConfig (defaults, optional JSON config file,
flag overrides, then the GWN_SEED environment variable), derives a short
hash of the resolved config, embeds that hash and the seed in each artifact,
and writes a ``<out>.config.json`` snapshot beside the primary output.
Validation problems exit with code 2, numerical failures with code 3.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import autodiff as ad
from . import codec as codec_mod
from . import common_info as ci
from . import evaluation as ev
from . import range_coder as rcoder
from . import rate_distortion as rd
from . import sources
from .errors import NumericalError, ValidationError
from .pmf import JointPmf, Pmf

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

DEFAULT_CONFIG = {
    "seed": 0,
    "training": {
        "batch_size": 100,
        "learning_rate": 1e-4,
        "adam_betas": [0.9, 0.999],
        "grad_clip": 1.0,
        "patience": 10,
        "max_epochs": 100,
        "steps_per_epoch": 50,
        "val_steps": 5,
    },
    "codec": {
        "arch": "shared",
        "latent_dim": 12,
        "beta": 1.0,
        "eta": 0.1,
        "gamma": 1.0,
    },
    "source": {
        "kind": "synthetic",
        "spatial": [2, 2],
        "copy_prob": 0.8,
        "target_block": 1,
        "noise_scale": 0.1,
    },
}


def _merge_config(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ValidationError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ValidationError(f"config key {where!r} must be a section")
            out[key] = _merge_config(base[key], value, where)
        else:
            out[key] = value
    return out


def resolve_config(args) -> tuple[dict, str]:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            config = _merge_config(config, json.load(fh))
    overrides: dict = {}
    for flag, path in (
        ("seed", ("seed",)),
        ("arch", ("codec", "arch")),
        ("beta", ("codec", "beta")),
        ("eta", ("codec", "eta")),
        ("latent_dim", ("codec", "latent_dim")),
        ("source", ("source", "kind")),
        ("copy_prob", ("source", "copy_prob")),
        ("spatial", ("source", "spatial")),
        ("steps", ("training", "steps_per_epoch")),
        ("epochs", ("training", "max_epochs")),
        ("val_steps", ("training", "val_steps")),
        ("batch_size", ("training", "batch_size")),
        ("lr", ("training", "learning_rate")),
        ("patience", ("training", "patience")),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            node = overrides
            for part in path[:-1]:
                node = node.setdefault(part, {})
            node[path[-1]] = value
    config = _merge_config(config, overrides)
    env_seed = os.environ.get("GWN_SEED")
    if env_seed is not None:
        config["seed"] = int(env_seed)
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(canonical.encode()).hexdigest()[:12]
    return config, digest


def write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_text(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def snapshot_config(out_path: str, config: dict, digest: str) -> None:
    write_json(f"{out_path}.config.json", {"config": config, "config_hash": digest})


def build_source(config: dict):
    section = config["source"]
    kind = section["kind"]
    if kind == "synthetic":
        spec = sources.SyntheticSourceSpec(
            spatial=tuple(section["spatial"]),
            copy_prob=section["copy_prob"],
            seed=config["seed"],
            target_block=section["target_block"],
        )
        return sources.SyntheticSource(spec)
    if kind in ("dependent", "independent", "mixture"):
        spec = sources.AttributePmfSpec(
            kind=kind, noise_scale=section["noise_scale"], seed=config["seed"]
        )
        return sources.build_attribute_source(spec)
    raise ValidationError(f"unknown source kind {kind!r}")


def preset_joint(name: str) -> JointPmf:
    if name == "independent-bits":
        return JointPmf(np.full((2, 2), 0.25))
    if name.startswith("copy:"):
        n = int(name.split(":", 1)[1])
        return JointPmf(np.eye(n) / n)
    if name.startswith("uniform:"):
        n1, n2 = (int(v) for v in name.split(":", 1)[1].split("x"))
        return JointPmf(np.full((n1, n2), 1.0 / (n1 * n2)))
    if name.startswith("dsbs:"):
        a0 = float(name.split(":", 1)[1])
        return JointPmf(np.array([[(1 - a0) / 2, a0 / 2], [a0 / 2, (1 - a0) / 2]]))
    if name.startswith("random:"):
        n, seed = (int(v) for v in name.split(":", 1)[1].split(","))
        rng = np.random.default_rng(seed)
        t = rng.random((n, n))
        return JointPmf(t / t.sum())
    raise ValidationError(f"unknown joint preset {name!r}")


def squared_error_matrix(n: int) -> rd.DistortionMatrix:
    return rd.DistortionMatrix.squared_error(np.arange(float(n)))


# --- subcommand implementations -----------------------------------------------------

def cmd_gen_source(args) -> int:
    config, digest = resolve_config(args)
    src = build_source(config)
    if not isinstance(src, sources.SyntheticSource):
        raise ValidationError("gen-source emits metadata for the synthetic source only")
    measures = sources.theoretical_measures(src.spec, src.dep_map)
    payload = {
        "config_hash": digest,
        "seed": config["seed"],
        "dependency_map": src.dep_map.flags.astype(int).tolist(),
        "copy_fraction": src.dep_map.copy_fraction,
        "base_pmf": src.base_pmf.probs.tolist(),
        "target_matrices": {
            "A1": src.targets.a1.tolist(),
            "A2": src.targets.a2.tolist(),
        },
        "theoretical_measures": measures,
    }
    write_json(args.out, payload)
    snapshot_config(args.out, config, digest)
    return 0


def cmd_ba_curves(args) -> int:
    config, digest = resolve_config(args)
    joint = preset_joint(args.joint)
    n1, n2 = joint.axis_sizes
    slopes = sorted(float(s) for s in args.slopes.split(","))
    d1 = squared_error_matrix(n1)
    d2 = squared_error_matrix(n2)
    p1 = Pmf(joint.probs.sum(axis=1))
    p2 = Pmf(joint.probs.sum(axis=0))
    which = args.kind
    if which == "marginal1":
        curve = rd.sweep_curve(lambda s: rd.ba_marginal(p1, d1, s), slopes)
    elif which == "marginal2":
        curve = rd.sweep_curve(lambda s: rd.ba_marginal(p2, d2, s), slopes)
    elif which == "conditional1":
        curve = rd.sweep_curve(lambda s: rd.ba_conditional(joint, 1, d1, s), slopes)
    elif which == "joint":
        def solver(s):
            jp = rd.ba_joint(joint, d1, d2, (s, s))
            return rd.RDPoint(jp.rate, 0.5 * (jp.d1 + jp.d2), s, jp.converged, jp.gap,
                              jp.iterations)
        curve = rd.sweep_curve(solver, slopes)
    else:
        raise ValidationError(f"unknown curve kind {which!r}")
    write_text(args.out, curve.to_csv())
    snapshot_config(args.out, config, digest)
    return 0


def cmd_common_info(args) -> int:
    config, digest = resolve_config(args)
    joint = preset_joint(args.joint)
    gk = ci.gk_common_information_lossless(joint)
    wyner = ci.wyner_common_information_lossless(
        joint, aux_size=args.aux_size, restarts=args.restarts, seed=config["seed"]
    )
    payload = {
        "config_hash": digest,
        "seed": config["seed"],
        "gk": {
            "value_bits": gk.value_bits,
            "aux_alphabet_size": gk.aux_alphabet_size,
            "method": gk.method,
        },
        "wyner": {
            "value_bits": wyner.value_bits,
            "raw_mi": wyner.raw_mi,
            "conditional_mi": wyner.conditional_mi,
            "feasible": wyner.feasible,
            "aux_alphabet_size": wyner.aux_alphabet_size,
            "method": wyner.method,
        },
    }
    write_json(args.out, payload)
    snapshot_config(args.out, config, digest)
    return 0


def cmd_check_bounds(args) -> int:
    config, digest = resolve_config(args)
    if args.preset == "random":
        rng = np.random.default_rng(config["seed"])
        reports = []
        for trial in range(args.trials):
            t = rng.random((3, 3))
            joint = JointPmf(t / t.sum())
            d = squared_error_matrix(3)
            reports.append(
                ci.check_theorem1(joint, d, d, grid=args.grid, seed=trial)
            )
        satisfied = sum(r.ordering_satisfied for r in reports)
        payload = {
            "config_hash": digest,
            "seed": config["seed"],
            "trials": args.trials,
            "ordering_satisfied_count": satisfied,
            "all_satisfied": satisfied == args.trials,
            "reports": [json.loads(r.to_json()) for r in reports],
        }
        write_json(args.out, payload)
        snapshot_config(args.out, config, digest)
        return 0
    joint = preset_joint(args.preset)
    n1, n2 = joint.axis_sizes
    report = ci.check_theorem1(
        joint, squared_error_matrix(n1), squared_error_matrix(n2),
        grid=args.grid, seed=config["seed"],
    )
    payload = json.loads(report.to_json())
    payload["config_hash"] = digest
    payload["seed"] = config["seed"]
    write_json(args.out, payload)
    snapshot_config(args.out, config, digest)
    return 0


def cmd_gw_discrete(args) -> int:
    config, digest = resolve_config(args)
    joint = preset_joint(args.joint)
    n1, n2 = joint.axis_sizes
    y_sizes = tuple(int(v) for v in args.y_sizes.split(","))
    t_value, mappings = ci.gw_objective_discrete(
        joint, squared_error_matrix(n1), squared_error_matrix(n2),
        args.d1, args.d2, args.alpha1, args.alpha2, y_sizes, seed=config["seed"],
    )
    payload = {
        "config_hash": digest,
        "seed": config["seed"],
        "T_bits": t_value,
        "alpha1": args.alpha1,
        "alpha2": args.alpha2,
        "y_sizes": list(y_sizes),
        "mappings": mappings,
    }
    write_json(args.out, payload)
    snapshot_config(args.out, config, digest)
    return 0


def _train_from_config(config: dict):
    src = build_source(config)
    cfg = codec_mod.CodecConfig(
        arch=config["codec"]["arch"],
        latent_dim=config["codec"]["latent_dim"],
        beta=config["codec"]["beta"],
        eta=config["codec"]["eta"],
        gamma=config["codec"]["gamma"],
        seed=config["seed"],
    )
    train_cfg = config["training"]
    result = codec_mod.train(
        cfg,
        src,
        steps=train_cfg["steps_per_epoch"],
        val_steps=train_cfg["val_steps"],
        max_epochs=train_cfg["max_epochs"],
        patience=train_cfg["patience"],
        batch_size=train_cfg["batch_size"],
        lr=train_cfg["learning_rate"],
    )
    return result


def cmd_train(args) -> int:
    config, digest = resolve_config(args)
    result = _train_from_config(config)
    payload = {"config_hash": digest, "seed": config["seed"], **result.point.to_dict()}
    write_json(args.out, payload)
    snapshot_config(args.out, config, digest)
    if args.checkpoint:
        ad.save_checkpoint(result.codec.params, args.checkpoint)
        write_json(
            f"{args.checkpoint}.meta.json",
            {
                "config_hash": digest,
                "seed": config["seed"],
                "config": config,
            },
        )
    return 0


def _sweep_worker(config: dict):
    result = _train_from_config(config)
    return result.point.to_dict()


def cmd_sweep(args) -> int:
    config, digest = resolve_config(args)
    archs = args.arch.split(",")
    betas = [float(b) for b in args.beta.split(",")]
    etas = [float(e) for e in args.eta.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    runs = []
    for arch in archs:
        for beta in betas:
            for eta in etas:
                for seed in seeds:
                    run_config = copy.deepcopy(config)
                    run_config["codec"]["arch"] = arch
                    run_config["codec"]["beta"] = beta
                    run_config["codec"]["eta"] = eta
                    run_config["seed"] = seed
                    runs.append(run_config)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            dicts = list(pool.map(_sweep_worker, runs))
    else:
        dicts = [_sweep_worker(rc) for rc in runs]
    points = [ev.GWRatePoint.from_dict(d) for d in dicts]
    write_text(args.out, ev.points_to_csv(points))
    snapshot_config(args.out, config, digest)
    return 0


def _load_codec(checkpoint: str):
    with open(f"{checkpoint}.meta.json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    config = meta["config"]
    src = build_source(config)
    cfg = codec_mod.CodecConfig(
        arch=config["codec"]["arch"],
        latent_dim=config["codec"]["latent_dim"],
        beta=config["codec"]["beta"],
        eta=config["codec"]["eta"],
        gamma=config["codec"]["gamma"],
        seed=config["seed"],
    )
    model = codec_mod.build_arch(cfg, src)
    model.params = ad.load_checkpoint(checkpoint)
    return model, src, config


def cmd_encode(args) -> int:
    model, src, config = _load_codec(args.checkpoint)
    x, _, _ = src.batch(args.batch_size, args.batch_index)
    blob, codes, report = codec_mod.encode_batch(model, x)
    est_bits = sum(ch["model_bits"] for ch in report.values())
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "wb") as fh:
        fh.write(blob)
    write_json(
        f"{args.out}.meta.json",
        {
            "config_hash": hashlib.sha256(
                json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
            ).hexdigest()[:12],
            "seed": config["seed"],
            "batch_index": args.batch_index,
            "batch_size": args.batch_size,
            "estimated_bits": est_bits,
            "container_bytes": len(blob),
        },
    )
    return 0


def cmd_decode(args) -> int:
    model, _, config = _load_codec(args.checkpoint)
    with open(getattr(args, "in"), "rb") as fh:
        blob = fh.read()
    decoded = codec_mod.decode_batch(model, blob)
    payload = {
        "config_hash": hashlib.sha256(
            json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest()[:12],
        "seed": config["seed"],
        "codes": {k: v.tolist() for k, v in decoded.items()},
    }
    write_json(args.out, payload)
    return 0


def cmd_bdrate(args) -> int:
    config, digest = resolve_config(args)
    with open(args.reference, "r", encoding="utf-8") as fh:
        ref_points = ev.points_from_csv(fh.read())
    with open(args.test, "r", encoding="utf-8") as fh:
        test_points = ev.points_from_csv(fh.read())
    kind = args.rate
    ref_curve = ev.points_to_curve(ref_points, kind)
    test_curve = ev.points_to_curve(test_points, kind)
    value = ev.bd_rate(ref_curve, test_curve)
    payload = {
        "config_hash": digest,
        "seed": config["seed"],
        "rate_kind": kind,
        "bd_rate_percent": value,
    }
    if args.out:
        write_json(args.out, payload)
    print(f"{value:.4f}")
    return 0


def cmd_empirical_mi(args) -> int:
    config, digest = resolve_config(args)
    with open(args.joint, "r", encoding="utf-8") as fh:
        joint_points = ev.points_from_csv(fh.read())
    with open(args.independent, "r", encoding="utf-8") as fh:
        ind_points = ev.points_from_csv(fh.read())
    joint_curve = ev.points_to_curve(joint_points, "transmit")
    marg1 = rd.RDCurve(
        [rd.RDPoint(p.R1 / p.pixels, p.D1, 0.0) for p in ind_points], tol=np.inf
    )
    marg2 = rd.RDCurve(
        [rd.RDPoint(p.R2 / p.pixels, p.D2, 0.0) for p in ind_points], tol=np.inf
    )
    estimates = ev.empirical_mi(joint_curve, marg1, marg2)
    write_text(args.out, ev.mi_estimates_to_csv(estimates))
    snapshot_config(args.out, config, digest)
    return 0


# --- parser ---------------------------------------------------------------------------

def _add_config_flags(sp):
    sp.add_argument("--config", help="JSON RunConfig file")
    sp.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gwn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-source", help="emit synthetic source metadata")
    _add_config_flags(sp)
    sp.add_argument("--copy-prob", dest="copy_prob", type=float)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_source)

    sp = sub.add_parser("ba-curves", help="Blahut-Arimoto rate-distortion curves")
    _add_config_flags(sp)
    sp.add_argument("--joint", default="uniform:3x3", help="joint pmf preset")
    sp.add_argument("--kind", default="marginal1",
                    choices=["marginal1", "marginal2", "conditional1", "joint"])
    sp.add_argument("--slopes", default="-8,-4,-2,-1,-0.5,-0.25")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ba_curves)

    sp = sub.add_parser("common-info", help="Gacs-Korner and Wyner common information")
    _add_config_flags(sp)
    sp.add_argument("--joint", required=True)
    sp.add_argument("--aux-size", dest="aux_size", type=int, default=None)
    sp.add_argument("--restarts", type=int, default=32)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_common_info)

    sp = sub.add_parser("check-bounds", help="Theorem-1 interaction-information chain")
    _add_config_flags(sp)
    sp.add_argument("--preset", required=True,
                    help="independent-bits | copy:N | dsbs:A | random")
    sp.add_argument("--trials", type=int, default=50)
    sp.add_argument("--grid", type=int, default=8)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_check_bounds)

    sp = sub.add_parser("gw-discrete", help="entropy-form Gray-Wyner objective")
    _add_config_flags(sp)
    sp.add_argument("--joint", required=True)
    sp.add_argument("--alpha1", type=float, default=1.0)
    sp.add_argument("--alpha2", type=float, default=1.0)
    sp.add_argument("--d1", type=float, default=0.0)
    sp.add_argument("--d2", type=float, default=0.0)
    sp.add_argument("--y-sizes", dest="y_sizes", default="3,3,3")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gw_discrete)

    sp = sub.add_parser("train", help="train one codec and emit its operating point")
    _add_config_flags(sp)
    for flag, kind in (
        ("--arch", str), ("--beta", float), ("--eta", float),
        ("--latent-dim", int), ("--source", str), ("--steps", int),
        ("--epochs", int), ("--val-steps", int), ("--batch-size", int),
        ("--lr", float), ("--patience", int),
    ):
        sp.add_argument(flag, dest=flag[2:].replace("-", "_"), type=kind)
    sp.add_argument("--checkpoint", help="write trained parameters here")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", help="grid of trainings, one CSV row per point")
    _add_config_flags(sp)
    sp.add_argument("--arch", default="shared,separated,combined")
    sp.add_argument("--beta", default="1,1.5,2")
    sp.add_argument("--eta", default="0.001,0.01,0.1,0.5,1")
    sp.add_argument("--seeds", default="0")
    sp.add_argument("--jobs", type=int, default=1)
    for flag, kind in (
        ("--source", str), ("--steps", int), ("--epochs", int),
        ("--val-steps", int), ("--batch-size", int), ("--lr", float),
        ("--patience", int), ("--latent-dim", int),
    ):
        sp.add_argument(flag, dest=flag[2:].replace("-", "_"), type=kind)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("encode", help="range-encode one deterministic batch")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--batch-index", dest="batch_index", type=int, default=0)
    sp.add_argument("--batch-size", dest="batch_size", type=int, default=16)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("decode", help="decode a container back to channel codes")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--in", dest="in", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("bdrate", help="BD-rate between two operating-point CSVs")
    _add_config_flags(sp)
    sp.add_argument("--reference", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--rate", default="transmit", choices=["transmit", "receive"])
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_bdrate)

    sp = sub.add_parser("empirical-mi", help="interpolated MI from joint/independent curves")
    _add_config_flags(sp)
    sp.add_argument("--joint", required=True, help="joint codec points CSV")
    sp.add_argument("--independent", required=True, help="independent codec points CSV")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_empirical_mi)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
