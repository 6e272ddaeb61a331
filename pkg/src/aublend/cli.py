"""Command line front end: dataset generation, training, inference, export.

Artifact-producing commands finish by writing a manifest of content hashes so
a rerun with the same seeds can be checked for bit-identical output at a
glance. Exit codes: 0 success, 1 usage, 2 malformed input or config,
3 runtime failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import KIND_CODEBOOK, KIND_STYLE, load_checkpoint, save_checkpoint
from .errors import (ConfigError, ContractError, FormatError, NonFiniteError,
                     ShapeError, TrainingDiverged, ValidationError)
from .facs import get_registry
from .formats import load_bundle, load_offsets, save_bundle, save_obj
from .mesh import AUActivation, OffsetSequence, compose, compose_animated
from .metrics import diversity, eval_mse, fdd, lve, model_predictor, oracle_predictor, vlve
from .model import HyperParams, predict_basis
from .service import emotion_offset, serve
from .synth import (SynthDataset, DatasetSplit, export_augmentation,
                    generate_dataset, region_masks, with_grid_topology)
from .train import TrainConfig, save_report, train_codebook, train_styleblend

SPLIT_FILE = "split.txt"
MANIFEST_FILE = "manifest.txt"

_HP_KEYS = ("token_dim", "codebook_size", "layers", "heads", "mlp_ratio",
            "tcn_channels", "tcn_kernel", "dilations", "style_dim", "beta")
_TRAIN_KEYS = ("epochs", "lr", "batch_size", "seed", "snapshot_every",
               "precision", "init_from_data")


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir: Path, files: list[Path], name: str = MANIFEST_FILE) -> Path:
    rows = sorted((p.name, _sha256(p)) for p in files)
    manifest = out_dir / name
    manifest.write_text("".join(f"{n}\t{h}\n" for n, h in rows), encoding="utf-8")
    return manifest


def write_dataset_dir(dataset: SynthDataset, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for ident in sorted(dataset.bundles):
        path = out / f"{ident}.aubd"
        save_bundle(dataset.bundles[ident], path)
        written.append(path)
    split_path = out / SPLIT_FILE
    rows = [f"{part}\t{ident}\n"
            for part in ("train", "val", "test")
            for ident in getattr(dataset.split, part)]
    split_path.write_text("".join(rows), encoding="utf-8")
    written.append(split_path)
    return write_manifest(out, written)


def read_dataset_dir(path: str | Path) -> SynthDataset:
    """Rebuild a dataset from bundle files plus the split listing.

    Style parameters are not serialized, so the returned dataset carries an
    empty style table.
    """
    root = Path(path)
    split_path = root / SPLIT_FILE
    if not split_path.is_file():
        raise FormatError(f"{root}: missing {SPLIT_FILE}")
    parts: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    for i, line in enumerate(split_path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            part, ident = line.split("\t")
        except ValueError:
            raise FormatError(f"{split_path}:{i}: expected '<split>\\t<identity>'") from None
        if part not in parts:
            raise FormatError(f"{split_path}:{i}: unknown split {part!r}")
        parts[part].append(ident)
    bundles = {}
    for ident in (ident for rows in parts.values() for ident in rows):
        bundle_path = root / f"{ident}.aubd"
        if not bundle_path.is_file():
            raise FormatError(f"{root}: split lists {ident!r} but {bundle_path.name} is missing")
        bundles[ident] = with_grid_topology(load_bundle(bundle_path))
    if not bundles:
        raise FormatError(f"{root}: split file lists no identities")
    split = DatasetSplit(tuple(parts["train"]), tuple(parts["val"]), tuple(parts["test"]))
    return SynthDataset(bundles, split, {})


# ---------------------------------------------------------------------------
# activation grammar
# ---------------------------------------------------------------------------

_ACT_TOKEN = re.compile(r"^AU(\d+)=([-+0-9.eE]+)$")


def parse_activation_text(text: str) -> AUActivation:
    """AU12=1.0,AU4=0.3 style tokens, separated by commas or newlines."""
    weights: dict[int, float] = {}
    problems: list[str] = []
    for raw in re.split(r"[,\n]", text):
        token = raw.strip()
        if not token:
            continue
        m = _ACT_TOKEN.match(token)
        if m is None:
            problems.append(f"cannot parse token {token!r} (expected AU<id>=<weight>)")
            continue
        au = int(m.group(1))
        try:
            w = float(m.group(2))
        except ValueError:
            problems.append(f"AU{au}: bad weight {m.group(2)!r}")
            continue
        if au in weights:
            problems.append(f"AU{au} given twice")
        weights[au] = w
    if problems:
        raise ValidationError("invalid activation: " + "; ".join(problems))
    return AUActivation(weights)


def _activation_from_args(args) -> AUActivation:
    if args.activation_file is not None:
        return parse_activation_text(Path(args.activation_file).read_text(encoding="utf-8"))
    return parse_activation_text(args.activation or "")


# ---------------------------------------------------------------------------
# training configuration
# ---------------------------------------------------------------------------

def load_train_settings(config_path: str | None, stage: str) -> tuple[dict, TrainConfig]:
    """Split one flat JSON object into architecture and optimizer settings.

    The stage comes from the command line and the vertex count from the data,
    so both are rejected here. Architecture keys are only meaningful for the
    first stage; the second inherits everything from the frozen checkpoint.
    """
    raw = {}
    if config_path is not None:
        try:
            raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise ConfigError(f"{config_path}: not valid JSON ({err})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{config_path}: expected a JSON object")
    hp_kwargs = {k: raw[k] for k in _HP_KEYS if k in raw}
    train_kwargs = {k: raw[k] for k in _TRAIN_KEYS if k in raw}
    unknown = sorted(set(raw) - set(_HP_KEYS) - set(_TRAIN_KEYS))
    if unknown:
        hint = " (vertex_count comes from the dataset)" if "vertex_count" in unknown else ""
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}{hint}")
    if stage == "styleblend" and hp_kwargs:
        raise ConfigError("styleblend inherits the architecture from the codebook "
                          f"checkpoint; remove: {', '.join(sorted(hp_kwargs))}")
    if "dilations" in hp_kwargs:
        hp_kwargs["dilations"] = tuple(hp_kwargs["dilations"])
    return hp_kwargs, TrainConfig(stage=stage, **train_kwargs)


def _dataset_vertex_count(dataset: SynthDataset) -> int:
    counts = {b.vertex_count for b in dataset.bundles.values()}
    if len(counts) != 1:
        raise FormatError(f"bundles disagree on vertex count: {sorted(counts)}")
    return counts.pop()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    dataset = generate_dataset(args.count, seed=args.seed,
                               vertex_count=args.vertex_count,
                               poses_per_identity=args.poses)
    manifest = write_dataset_dir(dataset, args.out)
    tr, va, te = dataset.split.counts()
    print(f"identities\t{len(dataset.bundles)}")
    print(f"split\t{tr}/{va}/{te}")
    print(f"manifest\t{_sha256(manifest)}")
    return 0


def cmd_train(args) -> int:
    dataset = read_dataset_dir(args.data)
    hp_kwargs, config = load_train_settings(args.config, args.stage)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.stage == "codebook":
        hp = HyperParams(vertex_count=_dataset_vertex_count(dataset), **hp_kwargs)
        model, report = train_codebook(dataset, hp, config, out_dir=out)
    else:
        codebook = load_checkpoint(out / "codebook.aubm", expected_kind=KIND_CODEBOOK)
        model, report = train_styleblend(dataset, codebook, config, out_dir=out)
    checkpoint_path = out / f"{args.stage}.aubm"
    report_path = out / f"{args.stage}_report.txt"
    save_checkpoint(model, checkpoint_path)
    save_report(report, report_path)
    manifest = write_manifest(out, [checkpoint_path, report_path],
                              name=f"{args.stage}_{MANIFEST_FILE}")
    print(f"best_epoch\t{report.best_epoch}")
    print(f"val\t{report.val_curve[report.best_epoch - 1]:.12g}")
    print(f"manifest\t{_sha256(manifest)}")
    return 0


def _load_models(models_dir: str | Path):
    models = Path(models_dir)
    codebook = load_checkpoint(models / "codebook.aubm", expected_kind=KIND_CODEBOOK)
    style = load_checkpoint(models / "styleblend.aubm", expected_kind=KIND_STYLE)
    return codebook, style


def cmd_predict(args) -> int:
    dataset = read_dataset_dir(args.data)
    codebook, style = _load_models(args.models)
    idents = args.identity or sorted(dataset.bundles)
    unknown = sorted(set(idents) - set(dataset.bundles))
    if unknown:
        raise ValidationError(f"identities not in the dataset: {', '.join(unknown)}")
    au_ids = list(get_registry().au_ids)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    index_rows = []
    for ident in idents:
        bundle = dataset.bundles[ident]
        pred = predict_basis(style, codebook, bundle.template.flat(), au_ids)
        path = out / f"{ident}_pred.aubd"
        save_bundle(replace(bundle, bases=dict(pred.bases), annotated_poses=()), path)
        written.append(path)
        index_rows.append(f"{ident}\t{','.join(str(i) for i in pred.indices.tolist())}\n")
    indices_path = out / "indices.txt"
    indices_path.write_text("".join(index_rows), encoding="utf-8")
    written.append(indices_path)
    manifest = write_manifest(out, written)
    print(f"predicted\t{len(idents)}")
    print(f"manifest\t{_sha256(manifest)}")
    return 0


def cmd_compose(args) -> int:
    bundle = with_grid_topology(load_bundle(Path(args.data) / f"{args.identity}.aubd"))
    mesh = compose(bundle, _activation_from_args(args))
    save_obj(mesh, args.out)
    print(f"wrote\t{args.out}")
    return 0


def cmd_animate(args) -> int:
    data = Path(args.data)
    bundle = with_grid_topology(load_bundle(data / f"{args.identity}.aubd"))
    speech = load_offsets(data / f"{args.speech}.auos")
    offset = emotion_offset(bundle, get_registry(), args.emotion, args.intensity)
    expression = OffsetSequence(offset[None, :, :], speech.frame_rate)
    frames = compose_animated(bundle, speech, expression)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for t, frame in enumerate(frames):
        path = out / f"frame_{t:04d}.obj"
        save_obj(frame, path)
        written.append(path)
    manifest = write_manifest(out, written)
    print(f"frames\t{len(frames)}")
    print(f"manifest\t{_sha256(manifest)}")
    return 0


def _sequence_rows(dataset: SynthDataset, predict_fn) -> list[tuple[str, float]]:
    """Pose-sequence metrics over the test split.

    Each identity is scored against its own annotated poses; velocity metrics
    need at least two poses and diversity at least two identities, so those
    rows are omitted when the dataset is too small for them.
    """
    test_ids = [i for i in dataset.split.test if dataset.bundles[i].annotated_poses]
    if not test_ids:
        return []
    v = _dataset_vertex_count(dataset)
    masks = region_masks(v)
    lips = np.flatnonzero(masks["lips"]).tolist()
    upper = np.flatnonzero(masks["upper_face"]).tolist()
    pred_bundles = {i: replace(dataset.bundles[i], bases=dict(predict_fn(dataset.bundles[i])))
                    for i in test_ids}
    gt_seqs, pred_seqs = {}, {}
    for ident in test_ids:
        poses = dataset.bundles[ident].annotated_poses
        gt_seqs[ident] = np.stack([posed.positions for _, posed in poses])
        pred_seqs[ident] = np.stack([compose(pred_bundles[ident], act).positions
                                     for act, _ in poses])
    rows = [("lve", float(np.mean([lve(pred_seqs[i], gt_seqs[i], lips) for i in test_ids])))]
    if all(len(dataset.bundles[i].annotated_poses) >= 2 for i in test_ids):
        rows.append(("vlve", float(np.mean([vlve(pred_seqs[i], gt_seqs[i], lips)
                                            for i in test_ids]))))
        rows.append(("fdd", float(np.mean([fdd(pred_seqs[i], gt_seqs[i], upper)
                                           for i in test_ids]))))
    if len(test_ids) >= 2:
        # one shared activation script so the spread measures identity styling
        script = [act for act, _ in dataset.bundles[test_ids[0]].annotated_poses]
        shared = [np.stack([compose(pred_bundles[i], act).positions for act in script])
                  for i in test_ids]
        rows.append(("diversity", diversity(shared)))
    return rows


def cmd_eval(args) -> int:
    dataset = read_dataset_dir(args.data)
    if args.oracle:
        predictor_name, predict_fn = "oracle", oracle_predictor()
    else:
        codebook, style = _load_models(args.models)
        predictor_name, predict_fn = "model", model_predictor(style, codebook)
    rows = [("predictor", predictor_name), ("seed", args.seed),
            ("mse_single", eval_mse(predict_fn, dataset, "single", seed=args.seed)),
            ("mse_multi", eval_mse(predict_fn, dataset, "multi", seed=args.seed))]
    rows.extend(_sequence_rows(dataset, predict_fn))
    text = "".join(f"{k}\t{v:.12g}\n" if isinstance(v, float) else f"{k}\t{v}\n"
                   for k, v in rows)
    Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_export_augment(args) -> int:
    dataset = read_dataset_dir(args.data)
    files = export_augmentation(dataset.bundles, args.per_identity, args.seed, args.out)
    print(f"files\t{len(files)}")
    print(f"manifest\t{_sha256(Path(args.out) / MANIFEST_FILE)}")
    return 0


def cmd_serve(args) -> int:
    serve(args.data, args.models, port=args.port)
    return 0


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aublend",
        description="AU basis toolkit: synthesize faces, train the two-stage "
                    "predictor, compose and animate expressions.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic identity dataset")
    p.add_argument("count", type=int, help="number of identities")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vertex-count", type=int, default=529)
    p.add_argument("--poses", type=int, default=4, help="annotated poses per identity")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit one training stage")
    p.add_argument("stage", choices=["codebook", "styleblend"])
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True,
                   help="artifact directory; styleblend reads codebook.aubm from here")
    p.add_argument("--config", help="flat JSON settings file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict AU bases for identities")
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True, help="directory holding both checkpoints")
    p.add_argument("--identity", action="append",
                   help="restrict to this identity (repeatable; default all)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("compose", help="blend AU weights into a posed mesh")
    p.add_argument("--data", required=True)
    p.add_argument("--identity", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--activation", help="inline weights, e.g. AU12=1.0,AU4=0.3")
    group.add_argument("--activation-file", help="file with the same token format")
    p.add_argument("--out", required=True, help="output OBJ path")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("animate", help="speech offsets plus an emotion preset")
    p.add_argument("--data", required=True)
    p.add_argument("--identity", required=True)
    p.add_argument("--speech", required=True, help="offsets name (<name>.auos in the dataset)")
    p.add_argument("--emotion", required=True)
    p.add_argument("--intensity", type=float, default=1.0)
    p.add_argument("--out", required=True, help="output frame directory")
    p.set_defaults(func=cmd_animate)

    p = sub.add_parser("eval", help="reconstruction and sequence metrics on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--models", help="checkpoint directory (omit with --oracle)")
    p.add_argument("--oracle", action="store_true",
                   help="score ground-truth bases instead of the model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-augment", help="posed meshes with AU labels for detector training")
    p.add_argument("--data", required=True)
    p.add_argument("--per-identity", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_augment)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--data", required=True)
    p.add_argument("--models", help="optional checkpoint directory")
    p.add_argument("--port", type=int, help="default from AUBLEND_PORT or 8471")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if args.command == "eval" and not args.oracle and args.models is None:
        print("error: eval needs --models or --oracle", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (FormatError, ValidationError, ShapeError, ConfigError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (TrainingDiverged, NonFiniteError, ContractError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except Exception as err:  # noqa: BLE001 - the process boundary maps everything
        print(f"unexpected error: {err!r}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
