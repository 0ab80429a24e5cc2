"""Command-line interface.

Every failure prints exactly one line ``error[CODE]: message`` on stderr and
exits nonzero. The default dataset cache location can be overridden with the
``GESTUREGEN_CACHE_DIR`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import secrets
import sys
from pathlib import Path

import numpy as np

CACHE_ENV = "GESTUREGEN_CACHE_DIR"
CACHE_NAME = "dataset.zegm"

EXIT_CODES = {
    "usage": 2,
    "input": 3,
    "config": 4,
    "data": 5,
    "checkpoint": 6,
    "style": 7,
    "audio": 8,
    "train": 9,
    "internal": 1,
}


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}")


def default_cache() -> Path:
    return Path(os.environ.get(CACHE_ENV, "cache")) / CACHE_NAME


# -- helpers -----------------------------------------------------------------------------------
def _load_dataset(path):
    from .container import ContainerError
    from .data import Dataset

    try:
        return Dataset.load(path)
    except FileNotFoundError:
        raise CliError("input", f"{path}: dataset cache not found") from None
    except (ContainerError, KeyError, ValueError) as exc:
        raise CliError("data", f"{path}: {exc}") from None


def _load_model(path):
    from .container import ContainerError
    from .train import TrainingError, load_checkpoint

    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise CliError("input", f"{path}: checkpoint not found") from None
    except (ContainerError, TrainingError, KeyError, ValueError) as exc:
        raise CliError("checkpoint", str(exc)) from None


def _load_embeddings(path):
    from .style_space import EmbeddingSet, StyleSpaceError

    if path is None:
        raise CliError("usage", "--embeddings is required for this style source")
    try:
        return EmbeddingSet.load_csv(path)
    except FileNotFoundError:
        raise CliError("input", f"{path}: embedding file not found") from None
    except (StyleSpaceError, ValueError, IndexError) as exc:
        raise CliError("style", f"{path}: {exc}") from None


def _read_clip(path, skeleton, scale):
    from .motion.bvh import read_bvh

    try:
        clip = read_bvh(path, hips=skeleton.hips, spine=skeleton.spine, head=skeleton.head, scale=scale)
    except FileNotFoundError:
        raise CliError("input", f"{path}: file not found") from None
    except ValueError as exc:
        raise CliError("input", f"{path}: {exc}") from None
    if not clip.skeleton.same_topology(skeleton):
        raise CliError("input", f"{path}: skeleton differs from the one the model was trained on")
    return clip


def _rest_pose_state(skeleton) -> np.ndarray:
    from .geom import quat_identity
    from .motion.clip import MotionClip
    from .motion.features import extract_pose_states

    J = skeleton.num_joints
    pos = np.broadcast_to(skeleton.offsets, (2, J, 3)).copy()
    clip = MotionClip(skeleton, pos, quat_identity((2, J)))
    return extract_pose_states(clip)[0]


def _parse_facing(text: str) -> np.ndarray:
    try:
        v = np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise CliError("usage", f"--facing expects 'x,z', got {text!r}") from None
    if v.shape != (2,) or np.linalg.norm(v) < 1e-8:
        raise CliError("usage", f"--facing expects a nonzero 'x,z' direction, got {text!r}")
    return v / np.linalg.norm(v)


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(31)
        print(f"seed: {args.seed}", file=sys.stderr)
    return args.seed


# -- subcommands -----------------------------------------------------------------------------------
def cmd_make_synthetic(args) -> int:
    from . import audio, synth
    from .motion.bvh import write_bvh

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, style in enumerate(args.styles):
        sc = synth.make_clip(style, args.seconds, seed=args.seed + i)
        stem = f"{style.lower()}_{i:02d}"
        (out / f"{stem}.bvh").write_text(write_bvh(sc.clip))
        (out / f"{stem}.wav").write_bytes(audio.write_wav(sc.waveform))
        split = "heldout" if style in (args.heldout or []) else "train"
        entries.append({"motion": f"{stem}.bvh", "audio": f"{stem}.wav", "style": style, "split": split})
    manifest = {"entries": entries, "bvh": {"hips": "Hips", "spine": "Spine2", "head": "Head"}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(out / "manifest.json")
    return 0


def cmd_prepare_data(args) -> int:
    from .data import DataError, prepare_dataset

    try:
        ds = prepare_dataset(args.manifest, workers=args.workers)
    except DataError as exc:
        raise CliError("data", str(exc)) from None
    out = Path(args.out) if args.out else default_cache()
    out.parent.mkdir(parents=True, exist_ok=True)
    ds.save(out)
    report = ds.report()
    if args.report:
        Path(args.report).write_text(report + "\n")
    print(report)
    print(f"wrote {out}")
    return 0


def _load_train_config(path, num_joints):
    from .model import ModelConfig
    from .train import ConfigError, TrainingConfig

    doc = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise CliError("input", f"{path}: config not found") from None
        except json.JSONDecodeError as exc:
            raise CliError("config", f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise CliError("config", f"{path}: top level must be an object")
    model_doc = dict(doc.pop("model", {}))
    try:
        tcfg = TrainingConfig.from_dict(doc)
    except ConfigError as exc:
        raise CliError("config", f"training.{exc}") from None
    reduced = bool(model_doc.pop("reduced", False))
    known = set(ModelConfig.__dataclass_fields__)
    for k in model_doc:
        if k not in known:
            raise CliError("config", f"model.{k}: unknown model config field")
    model_doc.setdefault("num_joints", num_joints)
    try:
        mcfg = ModelConfig.reduced(**model_doc) if reduced else ModelConfig(**model_doc)
    except (TypeError, ValueError) as exc:
        raise CliError("config", f"model: {exc}") from None
    return mcfg, tcfg


def cmd_train(args) -> int:
    from .train import ConfigError, Trainer, TrainingError

    ds = _load_dataset(args.cache or default_cache())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.resume:
            trainer = Trainer.resume(args.resume, ds)
        else:
            mcfg, tcfg = _load_train_config(args.config, ds.skeleton.num_joints)
            if args.seed is not None:
                tcfg.seed = args.seed
            trainer = Trainer.create(ds, mcfg, tcfg)
    except (ConfigError, TrainingError) as exc:
        raise CliError("config", str(exc)) from None
    remaining = trainer.cfg.max_iters - trainer.iteration
    iters = remaining if args.iters is None else min(args.iters, remaining)

    def show(m):
        if m["iter"] % max(1, args.print_every) == 0:
            print(f"iter {m['iter']} loss {m['total']:.5f} recon {m['recon']:.5f} kl {m['kl']:.4f} "
                  f"lr {m['lr']:.3g} beta {m['beta']:.3g}", flush=True)

    try:
        trainer.run(iters, metrics_path=out / "metrics.csv", checkpoint_dir=out, callback=show)
    except TrainingError as exc:
        raise CliError("train", str(exc)) from None
    final = out / "checkpoint_final.zegc"
    trainer.save(final)
    print(f"wrote {final} at iteration {trainer.iteration}")
    return 0


def _style_embedding(args, model, skeleton, scale, rng):
    """Resolve the style source to (embedding, default initial pose or None)."""
    from .motion.features import extract_pose_states, extract_style_features
    from .style_space import PcaModel, StyleSpaceError, blend, parse_blend_spec, pca_edit

    try:
        if args.style_clip:
            clip = _read_clip(args.style_clip, skeleton, scale)
            feats = extract_style_features(clip)
            if args.style_window:
                feats = feats[:args.style_window]
            emb = model.embed(feats, stochastic=not args.deterministic, rng=rng)
            return emb.sample, extract_pose_states(clip)[0]
        store = _load_embeddings(args.embeddings)
        if args.embedding:
            return store.get(args.embedding), None
        if args.blend:
            terms = parse_blend_spec(args.blend)
            return blend([store.get(i) for i, _ in terms], [w for _, w in terms]), None
        if args.pca_edit:
            if not args.pca:
                raise CliError("usage", "--pca-edit needs --pca")
            parts = args.pca_edit.split(",")
            if len(parts) != 4:
                raise CliError("usage", "--pca-edit expects 'id,component,delta,style'")
            pca = PcaModel.load(args.pca)
            return pca_edit(store.get(parts[0]), pca, int(parts[1]), float(parts[2]), parts[3]), None
    except StyleSpaceError as exc:
        raise CliError("style", str(exc)) from None
    except ValueError as exc:
        raise CliError("usage", str(exc)) from None
    raise CliError("usage", "one of --style-clip, --embedding, --blend, --pca-edit is required")


def cmd_generate(args) -> int:
    from . import audio
    from .motion.bvh import write_bvh
    from .motion.features import pose_states_to_clip

    seed = _seed(args)
    rng = np.random.default_rng(seed)
    model, meta, _ = _load_model(args.checkpoint)
    skeleton = model.skeleton
    if skeleton is None:
        raise CliError("checkpoint", f"{args.checkpoint}: checkpoint carries no skeleton")
    scale = args.bvh_scale if args.bvh_scale is not None else meta.get("bvh", {}).get("scale", 1.0)
    try:
        wave = audio.read_wav(Path(args.audio).read_bytes())
    except FileNotFoundError:
        raise CliError("input", f"{args.audio}: file not found") from None
    except ValueError as exc:
        raise CliError("audio", f"{args.audio}: {exc}") from None
    speech = audio.speech_features(wave, target_rate=model.config.fps)
    frames = len(speech) if args.frames is None else min(args.frames, len(speech))
    if frames < 2:
        raise CliError("audio", f"{args.audio}: audio too short ({len(speech)} feature frames)")
    e, init = _style_embedding(args, model, skeleton, scale, rng)
    if len(e) != model.config.style_dim:
        raise CliError("style", f"embedding has width {len(e)}, model expects {model.config.style_dim}")
    if args.initial_pose:
        from .motion.features import extract_pose_states

        init = extract_pose_states(_read_clip(args.initial_pose, skeleton, scale))[0]
    if init is None:
        init = _rest_pose_state(skeleton)
    facing = _parse_facing(args.facing)
    Y = model.generate(speech, e, init, facing, frames)
    clip = pose_states_to_clip(Y, skeleton, model.config.fps)
    Path(args.out).write_text(write_bvh(clip, scale=scale))
    print(f"wrote {args.out} ({frames} frames)")
    return 0


def cmd_encode_style(args) -> int:
    from .style_space import embed_records

    model, _, _ = _load_model(args.checkpoint)
    ds = _load_dataset(args.cache or default_cache())
    recs = [r for r in ds.records if (args.split == "all" or r.split == args.split)
            and (args.mirrored or not r.mirrored)]
    if not recs:
        raise CliError("data", f"no clips in split {args.split!r}")
    store = embed_records(model, recs, window=args.window)
    store.save_csv(args.out)
    print(f"wrote {len(store)} embeddings to {args.out}")
    return 0


def cmd_pca_fit(args) -> int:
    from .style_space import StyleSpaceError, pca_fit, write_scatter_csv

    store = _load_embeddings(args.embeddings)
    try:
        model = pca_fit(store, args.k)
    except StyleSpaceError as exc:
        raise CliError("style", str(exc)) from None
    model.save(args.out)
    if args.scatter:
        write_scatter_csv(args.scatter, store, model)
    total = model.explained_variance.sum()
    print(f"wrote {args.out}: k={model.k}, explained variance {model.explained_variance[:2].tolist()} "
          f"(sum {total:.6g})")
    return 0


def cmd_pca_edit(args) -> int:
    from .style_space import PcaModel, StyleSpaceError, pca_edit

    store = _load_embeddings(args.embeddings)
    try:
        pca = PcaModel.load(args.pca)
    except FileNotFoundError:
        raise CliError("input", f"{args.pca}: PCA model not found") from None
    try:
        edited = pca_edit(store.get(args.id), pca, args.component, args.delta, args.style)
        name = args.name or f"{args.id}+pc{args.component}:{args.delta:g}{args.style}"
        store.add(name, store.labels[store.ids.index(args.id)], edited)
    except StyleSpaceError as exc:
        raise CliError("style", str(exc)) from None
    store.save_csv(args.out or args.embeddings)
    print(name)
    return 0


def cmd_inspect(args) -> int:
    from .container import ContainerError, read_dataset_cache

    if args.full_config:
        from .model import GestureModel, ModelConfig
        from .motion.features import NormalizationStats, PoseLayout

        cfg = ModelConfig(num_joints=args.joints)
        L = PoseLayout(args.joints)
        stats = NormalizationStats(mean={"pose": np.zeros(L.pose_dim), "facing": np.zeros(2)},
                                   std={"pose": np.ones(L.pose_dim), "facing": np.ones(2)})
        model = GestureModel(cfg, stats)
        _print_params(model.num_parameters(), model.parameter_breakdown(), json.loads(cfg.to_json()))
        return 0
    if not args.path:
        raise CliError("usage", "inspect needs a path or --full-config")
    path = Path(args.path)
    try:
        head = path.read_bytes()[:4]
    except FileNotFoundError:
        raise CliError("input", f"{path}: not found") from None
    if head == b"ZEGM":
        try:
            j, fps, meta, _ = read_dataset_cache(path)
        except ContainerError as exc:
            raise CliError("data", f"{path}: {exc}") from None
        print(f"dataset cache: j={j} fps={fps:g} clips={len(meta['clips'])}")
        print(json.dumps(meta["dimensions"]))
        print(_load_dataset(path).report())
        return 0
    if head == b"ZEGC":
        model, meta, arrays = _load_model(path)
        total = sum(int(a.size) for k, a in arrays.items() if k.startswith("param/"))
        _print_params(total, model.parameter_breakdown(), meta["model_config"])
        print(f"iteration: {meta['iteration']}")
        if "training_config" in meta:
            print(f"training: {json.dumps(meta['training_config'], sort_keys=True)}")
        return 0
    raise CliError("input", f"{path}: unrecognized file (magic {head!r})")


def _print_params(total, breakdown, config):
    print(f"parameters: {total}")
    for k, v in breakdown.items():
        print(f"  {k}: {v} ({100.0 * v / total:.1f}%)")
    print(f"config: {json.dumps(config, sort_keys=True)}")


# -- parser -----------------------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gesturegen", description="Speech-driven stylized gesture generation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("make-synthetic", help="write a synthetic BVH/WAV dataset with a manifest")
    s.add_argument("out")
    s.add_argument("--styles", nargs="+", default=["High", "Low"])
    s.add_argument("--heldout", nargs="*")
    s.add_argument("--seconds", type=float, default=30.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_synthetic)

    s = sub.add_parser("prepare-data", help="ingest a manifest into a feature cache")
    s.add_argument("manifest")
    s.add_argument("--out", help=f"cache path (default ${CACHE_ENV}/{CACHE_NAME} or cache/{CACHE_NAME})")
    s.add_argument("--report")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_prepare_data)

    s = sub.add_parser("train", help="train or resume a model")
    s.add_argument("--config", help="JSON training config; optional 'model' object")
    s.add_argument("--cache")
    s.add_argument("--out", required=True)
    s.add_argument("--iters", type=int)
    s.add_argument("--resume")
    s.add_argument("--seed", type=int)
    s.add_argument("--print-every", type=int, default=10)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="generate a BVH from speech and a style source")
    s.add_argument("checkpoint")
    s.add_argument("audio")
    s.add_argument("--out", required=True)
    src = s.add_mutually_exclusive_group()
    src.add_argument("--style-clip", help="BVH example clip (zero-shot style)")
    src.add_argument("--embedding", help="embedding id from --embeddings")
    src.add_argument("--blend", help="'id:w,id:w' with weights summing to 1")
    src.add_argument("--pca-edit", help="'id,component,delta,style' (needs --pca)")
    s.add_argument("--embeddings")
    s.add_argument("--pca")
    s.add_argument("--style-window", type=int, default=0, help="use the first N frames of the style clip")
    s.add_argument("--initial-pose", help="BVH whose first frame starts the rollout")
    s.add_argument("--deterministic", action="store_true", help="use the posterior mean")
    s.add_argument("--seed", type=int)
    s.add_argument("--frames", type=int)
    s.add_argument("--facing", default="0,1", help="world ground direction 'x,z'")
    s.add_argument("--bvh-scale", type=float)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("encode-style", help="export style embeddings of cached clips")
    s.add_argument("checkpoint")
    s.add_argument("--cache")
    s.add_argument("--out", required=True)
    s.add_argument("--window", type=int, default=512)
    s.add_argument("--split", choices=["train", "heldout", "all"], default="all")
    s.add_argument("--mirrored", action="store_true", help="include mirrored clips")
    s.set_defaults(func=cmd_encode_style)

    s = sub.add_parser("pca-fit", help="fit PCA on an embedding CSV")
    s.add_argument("embeddings")
    s.add_argument("--k", type=int, default=2)
    s.add_argument("--out", required=True)
    s.add_argument("--scatter")
    s.set_defaults(func=cmd_pca_fit)

    s = sub.add_parser("pca-edit", help="add a PCA-edited embedding to a CSV")
    s.add_argument("embeddings")
    s.add_argument("pca")
    s.add_argument("--id", required=True)
    s.add_argument("--component", type=int, default=0)
    s.add_argument("--delta", type=float, default=1.0)
    s.add_argument("--style", required=True, help="label whose std scales the edit")
    s.add_argument("--name")
    s.add_argument("--out")
    s.set_defaults(func=cmd_pca_edit)

    s = sub.add_parser("inspect", help="describe a checkpoint or dataset cache")
    s.add_argument("path", nargs="?")
    s.add_argument("--full-config", action="store_true", help="instantiate the default full-size model")
    s.add_argument("--joints", type=int, default=75)
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "func", None):
            raise CliError("usage", "missing subcommand")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except CliError as exc:
        err = exc
    except Exception as exc:  # noqa: BLE001 - last-resort single-line report
        err = CliError("internal", f"{type(exc).__name__}: {exc}")
    message = " ".join(str(err).split())
    print(f"error[{err.code}]: {message}", file=sys.stderr)
    return EXIT_CODES[err.code]


if __name__ == "__main__":
    sys.exit(main())
