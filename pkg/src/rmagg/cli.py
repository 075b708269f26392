"""Command line front end: gen-codes, train, eval, attack, report.

Experiments are described by a JSON config (schema_version 1); scalar
fields can be overridden on the command line with repeated
``--set section.key=value`` flags.  Relative dataset paths resolve
against --data-dir, or the RMAGG_DATA_DIR environment variable when the
flag is absent.  Reruns with an unchanged config and seeds rewrite
byte-identical codebooks and tables.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import aggregation, attacks, baselines, data, figures, metrics, nnet, rm_codes

SCHEMA_VERSION = 1
FAMILIES = ("rmaggnet", "ensemble", "ccat", "surrogate")
DATA_DIR_ENV = "RMAGG_DATA_DIR"


class ConfigError(ValueError):
    """Configuration rejected before any long-running work."""


DEFAULTS: dict = {
    "schema_version": SCHEMA_VERSION,
    "output_dir": "runs/default",
    "code": {"m": 4, "r": 1, "classes": 10, "seed": 0},
    "dataset": {"kind": "digits", "test_fraction": 0.2, "seed": 0},
    "model": {
        "family": "rmaggnet",
        "hidden": [64],
        "tau": 0.5,
        "ec": 0,
        "members": 16,
        "sigma": 1.0,
        "tau_conf": 0.5,
        "rho": 1.0,
        "adv_fraction": 0.5,
        "train_attack": {"norm": "linf", "epsilon": 0.3, "steps": 10, "random_start": True, "seed": 0},
    },
    "train": {"epochs": 30, "batch_size": 32, "learning_rate": 0.1, "momentum": 0.0, "seed": 0},
    "eval": {"sweep": None, "dataset": None},
    "attack": {
        "norm": "linf",
        "epsilons": [0.1, 0.3],
        "steps": 40,
        "step_size": None,
        "random_start": True,
        "seed": 0,
        "surrogate": None,
        "sample": None,
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_set(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set needs key=value, got {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    keys = dotted.split(".")
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            node[key] = {}
        node = node[key]
    node[keys[-1]] = value


def load_config(path: str | None, sets: list[str], output_dir: str | None) -> dict:
    config = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
        config = _deep_merge(config, raw)
    for assignment in sets:
        _apply_set(config, assignment)
    if output_dir is not None:
        config["output_dir"] = output_dir
    if config.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {config.get('schema_version')!r}, expected {SCHEMA_VERSION}"
        )
    return config


def _resolve_path(raw: str, data_dir: str | None) -> Path:
    path = Path(raw)
    if path.exists() or path.is_absolute():
        return path
    base = data_dir or os.environ.get(DATA_DIR_ENV)
    if base and (Path(base) / path).exists():
        return Path(base) / path
    return path


def _code_params(config: dict) -> rm_codes.RMParams:
    code = config["code"]
    return rm_codes.derive_params(int(code["m"]), int(code["r"]))


def validate_config(config: dict, data_dir: str | None = None) -> None:
    """Cheap whole-config checks, run before any training or attacking."""
    try:
        params = _code_params(config)
    except rm_codes.ParameterError as exc:
        raise ConfigError(str(exc))
    classes = int(config["code"]["classes"])
    if classes < 2:
        raise ConfigError(f"need at least 2 classes, got {classes}")
    if classes > 2**params.k:
        raise ConfigError(f"{classes} classes exceed the 2**{params.k} available codewords")
    model = config["model"]
    if model["family"] not in FAMILIES:
        raise ConfigError(f"model.family must be one of {FAMILIES}, got {model['family']!r}")
    if not 0 <= int(model["ec"]) <= params.t:
        raise ConfigError(f"model.ec={model['ec']} outside [0, t={params.t}] for this code")
    if not 0.0 < float(model["sigma"]) <= 1.0:
        raise ConfigError(f"model.sigma must sit in (0, 1], got {model['sigma']}")
    if not 0.0 <= float(model["tau_conf"]) <= 1.0:
        raise ConfigError(f"model.tau_conf must sit in [0, 1], got {model['tau_conf']}")
    sweep = config["eval"].get("sweep")
    if sweep is not None:
        axis, values = sweep.get("axis"), sweep.get("values")
        if axis not in metrics.AXES:
            raise ConfigError(f"eval.sweep.axis must be one of {metrics.AXES}, got {axis!r}")
        if not values or any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigError(f"eval.sweep.values must be strictly increasing, got {values}")
        if axis == "ec" and any(not 0 <= int(v) <= params.t for v in values):
            raise ConfigError(f"eval.sweep ec values outside [0, t={params.t}]: {values}")
    atk = config["attack"]
    epsilons = atk.get("epsilons") or []
    if any(b <= a for a, b in zip(epsilons, epsilons[1:])):
        raise ConfigError(f"attack.epsilons must be strictly increasing, got {epsilons}")
    for eps in epsilons:
        try:
            attacks.AttackConfig(
                norm=atk["norm"],
                epsilon=float(eps),
                steps=int(atk["steps"]),
                step_size=atk.get("step_size"),
                random_start=bool(atk["random_start"]),
                seed=int(atk["seed"]),
            )
        except attacks.AttackConfigError as exc:
            raise ConfigError(str(exc))
    _check_dataset_spec(config["dataset"], data_dir)
    extra = config["eval"].get("dataset")
    if extra is not None:
        _check_dataset_spec(extra, data_dir)


def _check_dataset_spec(spec: dict, data_dir: str | None) -> None:
    kind = spec.get("kind")
    kinds = ("digits", "blobs", "noise", "idx", "cifar10", "cache")
    if kind not in kinds:
        raise ConfigError(f"dataset.kind must be one of {kinds}, got {kind!r}")
    file_keys = {
        "idx": ("train_images", "train_labels", "test_images", "test_labels"),
        "cifar10": ("train_paths", "test_paths"),
        "cache": ("path",),
    }.get(kind, ())
    for key in file_keys:
        if key not in spec:
            raise ConfigError(f"dataset.{key} required for kind {kind!r}")
        raw = spec[key]
        paths = raw if isinstance(raw, list) else [raw]
        for p in paths:
            resolved = _resolve_path(str(p), data_dir)
            if not resolved.exists():
                raise ConfigError(f"dataset file not found: {p}")


def load_splits(spec: dict, data_dir: str | None) -> tuple[data.Dataset | None, data.Dataset]:
    """Build (train, test) from a dataset spec; train is None for
    eval-only kinds (noise, cache)."""
    kind = spec["kind"]
    if kind == "digits":
        whole = data.digits()
        return data.split(whole, float(spec.get("test_fraction", 0.2)), int(spec.get("seed", 0)))
    if kind == "blobs":
        whole = data.synth_blobs(
            num_classes=int(spec.get("classes", 10)),
            per_class=int(spec.get("per_class", 60)),
            dim=int(spec.get("dim", 16)),
            spread=float(spec.get("spread", 0.06)),
            seed=int(spec.get("seed", 0)),
        )
        return data.split(whole, float(spec.get("test_fraction", 0.2)), int(spec.get("seed", 0)))
    if kind == "noise":
        return None, data.uniform_noise(
            count=int(spec.get("count", 1000)), dim=int(spec["dim"]), seed=int(spec.get("seed", 0))
        )
    if kind == "idx":
        transpose = bool(spec.get("transpose", False))
        train = data.load_idx(
            _resolve_path(spec["train_images"], data_dir),
            _resolve_path(spec["train_labels"], data_dir),
            transpose=transpose,
        )
        test = data.load_idx(
            _resolve_path(spec["test_images"], data_dir),
            _resolve_path(spec["test_labels"], data_dir),
            transpose=transpose,
        )
        return train, test
    if kind == "cifar10":
        train = data.load_cifar10_batches([_resolve_path(p, data_dir) for p in spec["train_paths"]])
        test = data.load_cifar10_batches([_resolve_path(p, data_dir) for p in spec["test_paths"]])
        return train, test
    if kind == "cache":
        cached, _ = data.read_flat(_resolve_path(spec["path"], data_dir))
        return None, cached
    raise ConfigError(f"unknown dataset kind {kind!r}")


def _out(config: dict) -> Path:
    return Path(config["output_dir"])


def _codebook_path(config: dict) -> Path:
    return _out(config) / "codebook.json"


def _train_cfg(config: dict) -> nnet.TrainConfig:
    t = config["train"]
    return nnet.TrainConfig(
        epochs=int(t["epochs"]),
        batch_size=int(t["batch_size"]),
        learning_rate=float(t["learning_rate"]),
        momentum=float(t["momentum"]),
        seed=int(t["seed"]),
    )


def _attack_cfg(config: dict, epsilon: float) -> attacks.AttackConfig:
    atk = config["attack"]
    return attacks.AttackConfig(
        norm=atk["norm"],
        epsilon=float(epsilon),
        steps=int(atk["steps"]),
        step_size=atk.get("step_size"),
        random_start=bool(atk["random_start"]),
        seed=int(atk["seed"]),
    )


def cmd_gen_codes(config: dict, args) -> int:
    params = _code_params(config)
    basis = rm_codes.generate_basis(params)
    codebook = rm_codes.span_codebook(basis, params)
    classbook = rm_codes.assign_class_codewords(
        codebook, int(config["code"]["classes"]), int(config["code"]["seed"])
    )
    path = _codebook_path(config)
    path.parent.mkdir(parents=True, exist_ok=True)
    rm_codes.save_classbook(classbook, path)
    print(f"wrote [{params.n},{params.k},{params.d}] codebook with "
          f"{classbook.num_classes} classes to {path}")
    return 0


def _load_classbook(config: dict) -> rm_codes.ClassCodebook:
    path = _codebook_path(config)
    if not path.exists():
        raise ConfigError(f"codebook {path} not found; run gen-codes first")
    return rm_codes.load_classbook(path)


def _models_dir(config: dict) -> Path:
    return _out(config) / "models"


def _save_members(nets, models_dir: Path, prefix: str) -> list[str]:
    names = []
    for i, net in enumerate(nets):
        name = f"{prefix}_{i:02d}.json"
        nnet.save_network(net, models_dir / name)
        names.append(name)
    return names


def cmd_train(config: dict, args) -> int:
    family = config["model"]["family"]
    train_set, _ = load_splits(config["dataset"], args.data_dir)
    if train_set is None:
        raise ConfigError(f"dataset kind {config['dataset']['kind']!r} has no training split")
    models_dir = _models_dir(config)
    models_dir.mkdir(parents=True, exist_ok=True)
    cfg = _train_cfg(config)
    model = config["model"]
    hidden = [int(h) for h in model["hidden"]]
    if family == "rmaggnet":
        classbook = _load_classbook(config)
        agg = aggregation.train_aggregate(
            classbook, train_set, hidden, cfg,
            tau=float(model["tau"]), ec=int(model["ec"]), jobs=args.jobs,
        )
        names = _save_members(agg.networks, models_dir, "member")
        manifest = {
            "codebook": os.path.relpath(_codebook_path(config), models_dir),
            "checkpoints": names,
            "tau": float(model["tau"]),
            "ec": int(model["ec"]),
        }
        manifest_path = models_dir / "aggregate.json"
    elif family == "ensemble":
        ensemble = baselines.train_ensemble(
            int(model["members"]), train_set, hidden, cfg,
            sigma=float(model["sigma"]), jobs=args.jobs,
        )
        names = _save_members(ensemble.networks, models_dir, "member")
        manifest = {"checkpoints": names, "sigma": float(model["sigma"])}
        manifest_path = models_dir / "ensemble.json"
    elif family == "ccat":
        ta = model["train_attack"]
        attack_cfg = attacks.AttackConfig(
            norm=ta["norm"], epsilon=float(ta["epsilon"]), steps=int(ta["steps"]),
            random_start=bool(ta["random_start"]), seed=int(ta["seed"]),
        )
        ccat, _history = baselines.train_ccat(
            train_set, hidden, cfg, attack_cfg,
            tau_conf=float(model["tau_conf"]), rho=float(model["rho"]),
            adv_fraction=float(model["adv_fraction"]),
        )
        nnet.save_network(ccat.network, models_dir / "ccat_net.json")
        manifest = {
            "checkpoint": "ccat_net.json",
            "tau_conf": float(model["tau_conf"]),
            "epsilon_train": float(ta["epsilon"]),
            "rho": float(model["rho"]),
        }
        manifest_path = models_dir / "ccat.json"
    elif family == "surrogate":
        net = nnet.classifier_net(train_set.dim, hidden, train_set.num_classes, seed=cfg.seed)
        nnet.train(net, train_set.inputs, train_set.labels, cfg)
        nnet.save_network(net, models_dir / "surrogate_net.json")
        manifest = {"checkpoint": "surrogate_net.json"}
        manifest_path = models_dir / "surrogate.json"
    else:
        raise ConfigError(f"unknown family {family!r}")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"trained {family} on {train_set.name} ({len(train_set)} items) -> {manifest_path}")
    return 0


class _PlainClassifier:
    """Argmax wrapper so a bare network produces verdicts (never rejects)."""

    def __init__(self, net: nnet.Network):
        self.net = net

    def predict(self, inputs):
        labels = self.net.forward_logits(np.atleast_2d(inputs)).argmax(axis=1)
        return [rm_codes.Verdict.exact(int(label)) for label in labels]


def load_model(config: dict, family: str):
    models_dir = _models_dir(config)
    manifest_path = models_dir / {
        "rmaggnet": "aggregate.json",
        "ensemble": "ensemble.json",
        "ccat": "ccat.json",
        "surrogate": "surrogate.json",
    }[family]
    if not manifest_path.exists():
        raise ConfigError(f"model manifest {manifest_path} not found; run train first")
    manifest = json.loads(manifest_path.read_text())
    if family == "rmaggnet":
        classbook = rm_codes.load_classbook((models_dir / manifest["codebook"]).resolve())
        nets = [nnet.load_network(models_dir / name) for name in manifest["checkpoints"]]
        return aggregation.AggregateClassifier(
            classbook=classbook, networks=nets,
            tau=float(manifest["tau"]), ec=int(manifest["ec"]),
        )
    if family == "ensemble":
        nets = [nnet.load_network(models_dir / name) for name in manifest["checkpoints"]]
        return baselines.VotingEnsemble(networks=nets, sigma=float(manifest["sigma"]))
    if family == "ccat":
        net = nnet.load_network(models_dir / manifest["checkpoint"])
        return baselines.CcatModel(
            network=net, tau_conf=float(manifest["tau_conf"]),
            epsilon_train=float(manifest["epsilon_train"]), rho=float(manifest["rho"]),
        )
    net = nnet.load_network(models_dir / manifest["checkpoint"])
    return _PlainClassifier(net)


def _configure_for_axis(model, family: str, axis: str):
    if family == "rmaggnet" and axis == "ec":
        return lambda v: model.with_ec(int(v))
    if family == "rmaggnet" and axis == "tau":
        return lambda v: model.with_tau(float(v))
    if family == "ensemble" and axis == "sigma":
        return lambda v: model.with_sigma(float(v))
    if family == "ccat" and axis == "tau":
        return lambda v: model.with_tau_conf(float(v))
    raise ConfigError(f"axis {axis!r} does not apply to family {family!r}")


def _default_sweep(config: dict, family: str) -> tuple[str, list[float]]:
    model = config["model"]
    return {
        "rmaggnet": ("ec", [int(model["ec"])]),
        "ensemble": ("sigma", [float(model["sigma"])]),
        "ccat": ("tau", [float(model["tau_conf"])]),
        "surrogate": ("tau", [0.0]),
    }[family]


def cmd_eval(config: dict, args) -> int:
    family = config["model"]["family"]
    spec = config["eval"].get("dataset") or config["dataset"]
    _, test_set = load_splits(spec, args.data_dir)
    model = load_model(config, family)
    sweep_spec = config["eval"].get("sweep")
    if sweep_spec is None:
        axis, values = _default_sweep(config, family)
    else:
        axis, values = sweep_spec["axis"], sweep_spec["values"]
    if family == "surrogate":
        table = metrics.sweep(
            lambda v: model, axis, values, test_set,
            meta={"model": family, "dataset": test_set.name},
        )
    else:
        table = metrics.sweep(
            _configure_for_axis(model, family, axis), axis, values, test_set,
            meta={"model": family, "dataset": test_set.name},
        )
    stem = _out(config) / "tables" / f"clean_{family}_{axis}"
    paths = metrics.save_table(table, stem)
    print(metrics.to_markdown(table), end="")
    print(f"wrote {', '.join(str(p) for p in paths)}")
    return 0


def _attack_target(config: dict, family: str, model, train_set):
    if family == "rmaggnet":
        if train_set is None:
            raise ConfigError("rmaggnet attacks need a training split to fit the hybrid head")
        head = aggregation.build_hybrid_head(
            model, train_set.inputs, seed=int(config["attack"]["seed"])
        )
        return aggregation.HybridModel(model, head)
    if family == "ensemble":
        return baselines.EnsembleLogitsTarget(model)
    if family == "ccat":
        return attacks.SingleNetTarget(model.network, loss="ce")
    return attacks.SingleNetTarget(model.net, loss="ce")


def cmd_attack(config: dict, args) -> int:
    family = config["model"]["family"]
    train_set, test_set = load_splits(config["dataset"], args.data_dir)
    atk = config["attack"]
    sample = atk.get("sample")
    if sample:
        test_set = data.take(test_set, int(sample), seed=int(atk["seed"]))
    model = load_model(config, family)
    surrogate_spec = atk.get("surrogate")
    if surrogate_spec:
        target = attacks.SingleNetTarget(
            nnet.load_network(_resolve_path(surrogate_spec, args.data_dir)), loss="ce"
        )
        tag = f"transfer_{atk['norm']}"
    else:
        target = _attack_target(config, family, model, train_set)
        tag = f"open_{atk['norm']}"
    rows = []
    for eps in atk["epsilons"]:
        cfg = _attack_cfg(config, eps)
        cache_dir = _out(config) / "adv" / f"{tag}_eps{eps}"
        adv = attacks.craft_adversarial(target, test_set, cfg, cache_dir=cache_dir)
        rows.append((float(eps), metrics.evaluate(model, adv)))
    table = metrics.SweepTable(
        axis="epsilon", rows=tuple(rows),
        meta={"model": family, "dataset": test_set.name, "norm": atk["norm"], "mode": tag.split("_")[0]},
    )
    stem = _out(config) / "tables" / f"attack_{family}_{tag}"
    paths = metrics.save_table(table, stem)
    print(metrics.to_markdown(table), end="")
    print(f"wrote {', '.join(str(p) for p in paths)}")
    return 0


def cmd_report(config: dict, args) -> int:
    tables_dir = _out(config) / "tables"
    report_dir = _out(config) / "report"
    fig_dir = report_dir / "figures"
    report_dir.mkdir(parents=True, exist_ok=True)
    json_paths = sorted(tables_dir.glob("*.json"))
    if not json_paths:
        raise ConfigError(f"no tables under {tables_dir}; run eval or attack first")
    sections = []
    for path in json_paths:
        table = metrics.load_table(path)
        name = path.stem
        (report_dir / f"{name}.csv").write_text(metrics.to_csv(table))
        figure_path = figures.render_sweep(table, fig_dir / f"{name}.png")
        meta = ", ".join(f"{k}={v}" for k, v in sorted(table.meta.items()))
        sections.append(
            f"## {name}\n\n{meta}\n\n"
            + metrics.to_markdown(table)
            + f"\n![{name}](figures/{figure_path.name})\n"
        )
    (report_dir / "report.md").write_text("# Results\n\n" + "\n".join(sections))
    print(f"report with {len(json_paths)} tables -> {report_dir / 'report.md'}")
    return 0


COMMANDS = {
    "gen-codes": cmd_gen_codes,
    "train": cmd_train,
    "eval": cmd_eval,
    "attack": cmd_attack,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmagg",
        description="Codebook-aggregated classification with rejection: build, train, evaluate, attack, report.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("gen-codes", "derive the code and write the class codebook"),
        ("train", "fit the configured model family and save checkpoints"),
        ("eval", "sweep a setting axis on clean data and write tables"),
        ("attack", "craft adversarial inputs per epsilon and write tables"),
        ("report", "merge tables into a markdown report with figures"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-c", "--config", default=None, help="JSON experiment config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field (dotted path, JSON value)")
        p.add_argument("--output-dir", default=None, help="override output_dir")
        p.add_argument("--data-dir", default=None,
                       help=f"base for relative dataset paths (default ${DATA_DIR_ENV})")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for training")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.set, args.output_dir)
        validate_config(config, args.data_dir)
        return COMMANDS[args.command](config, args)
    except (ConfigError, rm_codes.ParameterError, rm_codes.CapacityError,
            rm_codes.CorrectionBudgetError, rm_codes.CodebookFileError,
            data.DatasetError, data.IdxFormatError, metrics.MetricsError,
            attacks.AttackConfigError, baselines.BaselineConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
