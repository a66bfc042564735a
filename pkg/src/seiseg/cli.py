"""Command-line front end tying the pipeline together.

Subcommands: gen, label, train, predict, eval, sweep. Module settings
are plain key=value pairs in three namespaces (geo.*, arch.*, train.*),
resolved in the order defaults < --config file < dedicated flags <
--set overrides. Every run writes the fully resolved configuration to
``resolved.cfg`` next to its outputs, and that file can be fed back via
--config to reproduce the run. Errors print one machine-parsable line
``ERROR:<category>: <message>`` on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, SeisegError
from .evaluation import (
    budget_sweep,
    class_iou,
    class_map_pgm,
    confusion,
    error_map,
    error_map_pgm,
    mean_iou,
    pixel_accuracy,
    save_report,
)
from .labels import (
    annotation_yield,
    load_partial_labels,
    rasterize,
    sample_partial,
    sampling_seed,
    save_partial_labels,
)
from .network import ArchConfig, load_checkpoint, predict, save_checkpoint
from .synth import (
    GeoModelConfig,
    class_fractions,
    gen_dataset,
    load_dataset,
    load_image,
    save_dataset,
)
from .synth import _fmt as _fmt_value
from .training import TrainConfig, save_history, standardize_image, train

RESOLVED_NAME = "resolved.cfg"


# value parsers for key=value settings


def _int(raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}") from None


def _float(raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"expected a number, got {raw!r}") from None


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected true/false, got {raw!r}")


def _ints(raw: str) -> tuple:
    return tuple(_int(part) for part in raw.split(","))


def _floats(raw: str) -> tuple:
    return tuple(_float(part) for part in raw.split(","))


def _depths(raw: str):
    if raw.strip().lower() == "auto":
        return None
    return _floats(raw)


_GEO_PARSERS = {
    "n_z": _int,
    "n_x": _int,
    "n_horizons": _int,
    "base_depths": _depths,
    "dip_range": _floats,
    "fold_amplitude": _floats,
    "fold_wavelength": _floats,
    "n_folds": _ints,
    "contrast_range": _floats,
    "wavelet_freq": _float,
    "noise_level": _float,
    "seed": _int,
}
_ARCH_PARSERS = {
    "n_class": _int,
    "level_widths": _ints,
    "encoder_convs": _ints,
    "decoder_convs": _ints,
    "seed": _int,
}
_TRAIN_PARSERS = {
    "epochs": _int,
    "base_lr": _float,
    "decay_factor": _float,
    "decay_every": _int,
    "seed": _int,
    "shuffle": _bool,
    "checkpoint_every": _int,
}
_NAMESPACES = {"geo": _GEO_PARSERS, "arch": _ARCH_PARSERS, "train": _TRAIN_PARSERS}


def _parse_setting(item: str) -> tuple[str, str, str]:
    """Split 'ns.key=value' and reject unknown namespaces/keys."""
    if "=" not in item:
        raise ConfigError(f"setting {item!r} is not of the form ns.key=value")
    key, _, raw = item.partition("=")
    key = key.strip()
    if "." not in key:
        raise ConfigError(f"setting key {key!r} lacks a namespace (geo./arch./train.)")
    ns, _, field = key.partition(".")
    parsers = _NAMESPACES.get(ns)
    if parsers is None:
        raise ConfigError(f"unknown config namespace {ns!r}, expected one of {sorted(_NAMESPACES)}")
    if field not in parsers:
        raise ConfigError(f"unknown config key {key!r}")
    return ns, field, raw


def _read_config_file(path: str, command: str) -> tuple[dict, dict]:
    """Read a resolved.cfg-style file.

    Returns (namespace settings as {(ns, field): raw}, command-level
    args as {name: raw}). Lines are key=value; blank lines and
    #-comments are ignored.
    """
    text = Path(path).read_text(encoding="utf-8")
    ns_map: dict = {}
    arg_map: dict = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key == "command":
            if raw != command:
                raise ConfigError(
                    f"{path} was written by the {raw!r} command, not {command!r}"
                )
        elif "." in key:
            ns, field, _ = _parse_setting(f"{key}={raw}")
            ns_map[(ns, field)] = raw
        else:
            arg_map[key] = raw
    return ns_map, arg_map


def _build_config(cls, ns: str, file_map: dict, flag_map: dict, set_list: list):
    """Construct a module config from layered key=value sources."""
    parsers = _NAMESPACES[ns]
    kwargs = {}
    for (file_ns, field), raw in file_map.items():
        if file_ns == ns:
            kwargs[field] = parsers[field](raw)
    for field, value in flag_map.items():
        if value is not None:
            kwargs[field] = value
    for item in set_list or []:
        set_ns, field, raw = _parse_setting(item)
        if set_ns == ns:
            kwargs[field] = parsers[field](raw)
    return cls(**kwargs)


def _config_lines(ns: str, cfg) -> list[str]:
    return [f"{ns}.{name}={_fmt_value(getattr(cfg, name))}" for name in _NAMESPACES[ns]]


def _write_resolved(out_dir: Path, command: str, args: dict, configs: dict) -> None:
    lines = [f"command={command}"]
    for name, value in args.items():
        if value is not None:
            lines.append(f"{name}={value}")
    for ns, cfg in configs.items():
        lines.extend(_config_lines(ns, cfg))
    (out_dir / RESOLVED_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_index_spec(spec: str, n: int) -> list[int]:
    """Expand '0-17' / '3,5,9' / 'all' into a sorted unique index list."""
    if spec.strip().lower() == "all":
        return list(range(n))
    picked = set()
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        if "-" in token[1:]:
            lo, _, hi = token.partition("-")
            start, stop = _int(lo), _int(hi)
            if stop < start:
                raise ConfigError(f"index range {token!r} runs backwards")
            picked.update(range(start, stop + 1))
        else:
            picked.add(_int(token))
    if not picked:
        raise ConfigError(f"index spec {spec!r} selects nothing")
    bad = [i for i in picked if not 0 <= i < n]
    if bad:
        raise ConfigError(f"indices {sorted(bad)} outside the {n} available images")
    return sorted(picked)


def _need(args, name: str):
    value = getattr(args, name.replace("-", "_"))
    if value is None:
        raise ConfigError(f"missing required option --{name}")
    return value


def _out_dir(args) -> Path:
    out = Path(_need(args, "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _merge_file_args(args, arg_map: dict, int_keys=(), str_keys=()) -> None:
    """Fill argparse values that were not given from a config file."""
    for key in int_keys:
        if getattr(args, key) is None and key in arg_map:
            setattr(args, key, _int(arg_map[key]))
    for key in str_keys:
        if getattr(args, key) is None and key in arg_map:
            setattr(args, key, arg_map[key])


def _load_file_maps(args, command: str) -> tuple[dict, dict]:
    if args.config:
        return _read_config_file(args.config, command)
    return {}, {}


# subcommands


def cmd_gen(args) -> None:
    ns_map, arg_map = _load_file_maps(args, "gen")
    _merge_file_args(args, arg_map, int_keys=("nex", "seed", "nz", "nx", "horizons"), str_keys=("out",))
    flag_map = {"n_z": args.nz, "n_x": args.nx, "n_horizons": args.horizons}
    geo = _build_config(GeoModelConfig, "geo", ns_map, flag_map, args.set)
    n_ex = args.nex if args.nex is not None else 24
    seed = args.seed if args.seed is not None else 0
    out = _out_dir(args)

    ds = gen_dataset(geo, n_ex=n_ex, seed=seed)
    save_dataset(ds, out)
    _write_resolved(out, "gen", {"nex": n_ex, "seed": seed}, {"geo": geo})
    fractions = class_fractions(ds)
    print(f"dataset {out} images={ds.n_ex} classes={ds.n_class}")
    print("class_fractions " + " ".join(f"{v:.4f}" for v in fractions))


def cmd_label(args) -> None:
    ns_map, arg_map = _load_file_maps(args, "label")
    _merge_file_args(
        args, arg_map,
        int_keys=("budget", "seed"),
        str_keys=("data", "out", "strategy", "indices"),
    )
    data = _need(args, "data")
    strategy = _need(args, "strategy")
    budget = _need(args, "budget")
    seed = args.seed if args.seed is not None else 0
    indices_spec = args.indices if args.indices is not None else "all"
    out = _out_dir(args)

    ds = load_dataset(data)
    indices = _parse_index_spec(indices_spec, ds.n_ex)
    for i in indices:
        labels = sample_partial(
            strategy, ds.horizons[i], budget, seed=sampling_seed(seed, strategy, i)
        )
        save_partial_labels(out / f"labels_{i:04d}.csv", labels)
    _write_resolved(
        out,
        "label",
        {
            "data": data,
            "strategy": strategy,
            "budget": budget,
            "seed": seed,
            "indices": indices_spec,
        },
        {},
    )
    y = annotation_yield(strategy, budget, ds.horizons[indices[0]])
    print(f"labeled {len(indices)} images with strategy={strategy} budget={budget}")
    print(f"annotation_yield {y}")


def _label_file_indices(labels_dir: Path, n: int) -> list[int]:
    found = [i for i in range(n) if (labels_dir / f"labels_{i:04d}.csv").exists()]
    if not found:
        raise ConfigError(f"no labels_####.csv files found in {labels_dir}")
    return found


def cmd_train(args) -> None:
    ns_map, arg_map = _load_file_maps(args, "train")
    _merge_file_args(args, arg_map, int_keys=("seed",), str_keys=("data", "labels", "out", "indices"))
    data = _need(args, "data")
    labels_dir = Path(_need(args, "labels"))
    seed = args.seed if args.seed is not None else 0
    out = _out_dir(args)

    ds = load_dataset(data)
    if args.indices is not None:
        indices = _parse_index_spec(args.indices, ds.n_ex)
    else:
        indices = _label_file_indices(labels_dir, ds.n_ex)

    arch = _build_config(
        ArchConfig, "arch", ns_map, {"n_class": ds.n_class, "seed": seed}, args.set
    )
    if arch.n_class != ds.n_class:
        raise ConfigError(
            f"arch.n_class={arch.n_class} conflicts with the dataset ({ds.n_class} classes)"
        )
    tcfg = _build_config(TrainConfig, "train", ns_map, {"seed": seed}, args.set)

    pairs = []
    for i in indices:
        path = labels_dir / f"labels_{i:04d}.csv"
        labels = load_partial_labels(path, n_z=ds.cfg.n_z, n_x=ds.cfg.n_x, n_class=ds.n_class)
        pairs.append((ds.images[i], labels))

    _write_resolved(
        out,
        "train",
        {
            "data": data,
            "labels": labels_dir,
            "seed": seed,
            "indices": ",".join(str(i) for i in indices),
        },
        {"arch": arch, "train": tcfg},
    )

    def log_epoch(epoch, mean_loss, lr):
        print(f"epoch {epoch + 1:>4}/{tcfg.epochs} lr {lr:g} loss {mean_loss:.6f}", flush=True)

    params, hist = train(pairs, tcfg, arch, checkpoint_dir=out, on_epoch=log_epoch)
    save_checkpoint(out / "final.ckpt", params)
    save_history(out / "history.csv", hist)
    print(f"saved {out / 'final.ckpt'} and {out / 'history.csv'}")


def cmd_predict(args) -> None:
    ns_map, arg_map = _load_file_maps(args, "predict")
    _merge_file_args(args, arg_map, int_keys=("index",), str_keys=("ckpt", "data", "image", "out"))
    ckpt = _need(args, "ckpt")
    out = _out_dir(args)
    params = load_checkpoint(ckpt)

    if args.image is not None:
        raw = load_image(args.image)
        pred = predict(params, standardize_image(raw))
        stem = Path(args.image).stem
        class_map_pgm(out / f"pred_{stem}.pgm", pred)
        _write_resolved(out, "predict", {"ckpt": ckpt, "image": args.image}, {})
        print(f"wrote {out / f'pred_{stem}.pgm'} (no truth available)")
        return

    data = _need(args, "data")
    index = _need(args, "index")
    ds = load_dataset(data)
    if not 0 <= index < ds.n_ex:
        raise ConfigError(f"index {index} outside the {ds.n_ex} available images")
    pred = predict(params, standardize_image(ds.images[index]))
    truth = rasterize(ds.horizons[index])
    err = error_map(pred, truth)
    class_map_pgm(out / f"pred_{index:04d}.pgm", pred)
    error_map_pgm(out / f"error_{index:04d}.pgm", err)
    _write_resolved(out, "predict", {"ckpt": ckpt, "data": data, "index": index}, {})
    acc = 1.0 - float(err.mean())
    print(f"wrote pred_{index:04d}.pgm and error_{index:04d}.pgm  accuracy {acc:.4f}")


def cmd_eval(args) -> None:
    ns_map, arg_map = _load_file_maps(args, "eval")
    _merge_file_args(args, arg_map, str_keys=("ckpt", "data", "out", "indices"))
    ckpt = _need(args, "ckpt")
    data = _need(args, "data")
    indices_spec = args.indices if args.indices is not None else "all"
    out = _out_dir(args)

    params = load_checkpoint(ckpt)
    ds = load_dataset(data)
    indices = _parse_index_spec(indices_spec, ds.n_ex)

    header = "index,accuracy,mean_iou," + ",".join(f"iou_{c}" for c in range(ds.n_class))
    lines = [header]
    total = np.zeros((ds.n_class, ds.n_class), dtype=np.int64)
    for i in indices:
        pred = predict(params, standardize_image(ds.images[i]))
        cm = confusion(pred, rasterize(ds.horizons[i]))
        total += cm
        ious = class_iou(cm)
        lines.append(
            f"{i},{pixel_accuracy(cm)!r},{mean_iou(cm)!r},"
            + ",".join(repr(float(v)) for v in ious)
        )
    acc = pixel_accuracy(total)
    miou = mean_iou(total)
    ious = class_iou(total)
    lines.append(f"all,{acc!r},{miou!r}," + ",".join(repr(float(v)) for v in ious))
    (out / "eval.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_resolved(
        out, "eval", {"ckpt": ckpt, "data": data, "indices": indices_spec}, {}
    )
    print(f"evaluated {len(indices)} images  accuracy {acc:.4f}  mean_iou {miou:.4f}")
    print(f"wrote {out / 'eval.csv'}")


def cmd_sweep(args) -> None:
    ns_map, arg_map = _load_file_maps(args, "sweep")
    _merge_file_args(
        args, arg_map,
        int_keys=("train_count", "jobs"),
        str_keys=("data", "out", "strategies", "budgets", "seeds", "train_indices", "test_indices"),
    )
    data = _need(args, "data")
    out = _out_dir(args)
    strategies = [s.strip() for s in (args.strategies or "columns,scattered").split(",") if s.strip()]
    budgets = list(_ints(args.budgets or "100,600"))
    seeds = list(_ints(args.seeds or "0,1,2,3,4"))
    jobs = args.jobs if args.jobs is not None else 1

    ds = load_dataset(data)
    if args.train_indices is not None or args.test_indices is not None:
        if args.train_indices is None or args.test_indices is None:
            raise ConfigError("--train-indices and --test-indices go together")
        train_idx = _parse_index_spec(args.train_indices, ds.n_ex)
        test_idx = _parse_index_spec(args.test_indices, ds.n_ex)
    else:
        count = args.train_count if args.train_count is not None else (ds.n_ex * 3) // 4
        if not 0 < count < ds.n_ex:
            raise ConfigError(f"train count {count} leaves no test images out of {ds.n_ex}")
        train_idx = list(range(count))
        test_idx = list(range(count, ds.n_ex))

    arch = _build_config(ArchConfig, "arch", ns_map, {"n_class": ds.n_class}, args.set)
    if arch.n_class != ds.n_class:
        raise ConfigError(
            f"arch.n_class={arch.n_class} conflicts with the dataset ({ds.n_class} classes)"
        )
    tcfg = _build_config(TrainConfig, "train", ns_map, {}, args.set)

    _write_resolved(
        out,
        "sweep",
        {
            "data": data,
            "strategies": ",".join(strategies),
            "budgets": ",".join(str(b) for b in budgets),
            "seeds": ",".join(str(s) for s in seeds),
            "train_indices": ",".join(str(i) for i in train_idx),
            "test_indices": ",".join(str(i) for i in test_idx),
            "jobs": jobs,
        },
        {"arch": arch, "train": tcfg},
    )

    def log_cell(cell):
        print(
            f"cell strategy={cell.strategy} budget={cell.budget} seed={cell.seed} "
            f"accuracy={cell.test_accuracy:.4f} mean_iou={cell.mean_iou:.4f}",
            flush=True,
        )

    report = budget_sweep(
        ds, (train_idx, test_idx), strategies, budgets, seeds, arch, tcfg,
        jobs=jobs, on_cell=log_cell,
    )
    save_report(out / "report.csv", report)
    for (strategy, budget), (mean, std, n) in sorted(report.aggregate().items()):
        print(f"summary strategy={strategy} budget={budget} mean_accuracy={mean:.4f} std={std:.4f} n={n}")
    print(f"wrote {out / 'report.csv'}")


# parser plumbing


def _add_common(sp) -> None:
    sp.add_argument("--config", help="key=value file (e.g. a previous resolved.cfg)")
    sp.add_argument(
        "--set",
        action="append",
        metavar="NS.KEY=VALUE",
        help="override one config value (geo./arch./train.), repeatable",
    )
    sp.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seiseg",
        description="Weakly-supervised segmentation of seismic images into geologic units",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset directory")
    _add_common(p)
    p.add_argument("--nex", type=int, help="number of images (default 24)")
    p.add_argument("--nz", type=int, help="image height (geo.n_z)")
    p.add_argument("--nx", type=int, help="image width (geo.n_x)")
    p.add_argument("--horizons", type=int, help="horizons per image (geo.n_horizons)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("label", help="sample partial annotations for a dataset")
    _add_common(p)
    p.add_argument("--data", help="dataset directory from gen")
    p.add_argument("--strategy", choices=("columns", "scattered"), help="annotation strategy")
    p.add_argument("--budget", type=int, help="annotation clicks per image")
    p.add_argument("--indices", help="image indices to label, e.g. 0-17 (default all)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train the segmentation network")
    _add_common(p)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--labels", help="directory of labels_####.csv files")
    p.add_argument("--indices", help="training image indices (default: those with label files)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write class-map and error-map images")
    _add_common(p)
    p.add_argument("--ckpt", help="checkpoint file")
    p.add_argument("--data", help="dataset directory (with --index)")
    p.add_argument("--index", type=int, help="image index within --data")
    p.add_argument("--image", help="single .seis image file (no truth)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score a checkpoint against dataset truth")
    _add_common(p)
    p.add_argument("--ckpt", help="checkpoint file")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--indices", help="image indices to score (default all)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run the strategy-vs-budget experiment grid")
    _add_common(p)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--train-count", type=int, help="first N images train, rest test")
    p.add_argument("--train-indices", help="explicit training indices")
    p.add_argument("--test-indices", help="explicit test indices")
    p.add_argument("--strategies", help="comma list (default columns,scattered)")
    p.add_argument("--budgets", help="comma list (default 100,600)")
    p.add_argument("--seeds", help="comma list of cell seeds (default 0,1,2,3,4)")
    p.add_argument("--jobs", type=int, help="parallel worker processes (default 1)")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
        return 0
    except SeisegError as exc:
        print(f"ERROR:{exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ERROR:io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
