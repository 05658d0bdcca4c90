"""Command-line surface: generate, perturb, evaluate, report, protocol-test.

Every command is deterministic given its flags and seed. The default seed
comes from the VISSYN_SEED environment variable; flags beat config-file
values, which beat built-in defaults. Paths are resolved relative to
--workdir. Exit codes: 0 success, 1 usage or validation problem, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from importlib import resources
from pathlib import Path

from . import __version__
from .errors import MetricsError, ValidationError, VissynError
from .grammar import load_grammar
from .metrics import accumulate, file_digest, report as build_report, summarize, write_report
from .perturb import (
    StyleGlyphSource,
    perturb_extra,
    perturb_replace,
    perturb_scatter,
    perturb_swap,
)
from .pipeline import (
    ExternalBackendProvider,
    OracleBackendProvider,
    PipelineConfig,
    SceneResult,
    evaluate_corpus,
)
from .protocol_test import run_golden_suite
from .raster import read_image
from .render import style_for
from .synthcorpus import (
    CORRECT,
    JitterSpec,
    corpus_grammars,
    derive_rng,
    extend_corpus,
    generate_scene,
    load_scene,
    read_manifest,
    write_corpus,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

PERTURB_KINDS = ("swap", "replace", "extra", "scatter")


class _Parser(argparse.ArgumentParser):
    # usage errors must exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _env_seed() -> int:
    raw = os.environ.get("VISSYN_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        return 0


def build_parser() -> tuple[_Parser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="vissyn", description=__doc__)
    parser.add_argument("--version", action="version", version=f"vissyn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    commands: dict[str, argparse.ArgumentParser] = {}

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--workdir", default=".", help="base directory for relative paths")
        p.add_argument("--config", default=None, help="JSON config file; flags override it")
        p.add_argument("--seed", type=int, default=_env_seed(), help="run seed (env VISSYN_SEED)")

    p = sub.add_parser("generate", help="render a corpus of correct scenes")
    common(p)
    p.add_argument("--grammar", required=True, help="grammar file path or builtin name")
    p.add_argument("--count", type=int, required=True, help="number of scenes")
    p.add_argument("--out", required=True, help="corpus directory to create")
    p.add_argument("--image-size", type=int, default=224)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--center-sigma", type=float, default=0.0, help="part center jitter")
    p.add_argument("--size-sigma", type=float, default=0.0, help="part size jitter")
    p.add_argument("--drop-prob", type=float, default=0.0, help="optional-part drop probability")
    commands["generate"] = p

    p = sub.add_parser("perturb", help="derive syntactically incorrect scenes")
    common(p)
    p.add_argument("--corpus", required=True, help="corpus directory to extend")
    p.add_argument("--count", type=int, required=True, help="number of incorrect scenes")
    p.add_argument(
        "--mix",
        default="40,30,30,0",
        help="swap,replace,extra,scatter proportions (need not sum to 100)",
    )
    p.add_argument("--backgrounds", default=None, help="directory of background images (scatter)")
    commands["perturb"] = p

    p = sub.add_parser("evaluate", help="run the checking pipeline over a corpus")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory for records and report")
    p.add_argument("--backend-cmd", default=None, help="external backend command (default: oracle)")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--t", type=float, default=0.3, help="checker IOU threshold")
    p.add_argument("--nms-original", type=float, default=0.1)
    p.add_argument("--nms-reconstructed", type=float, default=0.3)
    p.add_argument("--masking", choices=("part_based", "random"), default="part_based")
    p.add_argument("--mask-ratio", type=float, default=0.25, help="random-masking patch fraction")
    p.add_argument("--part-order", choices=("row_major", "detection_score"), default="row_major")
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--noise-center-sigma", type=float, default=0.0, help="oracle detector noise")
    p.add_argument("--noise-size-sigma", type=float, default=0.0)
    p.add_argument("--noise-drop-prob", type=float, default=0.0)
    p.add_argument("--timeout", type=float, default=60.0, help="per-call backend timeout (s)")
    p.add_argument("--trace", action="store_true", help="persist per-scene traces")
    commands["evaluate"] = p

    p = sub.add_parser("report", help="merge evaluation records into a report")
    common(p)
    p.add_argument("--records", nargs="+", required=True, help="records.json files to merge")
    p.add_argument("--out", required=True)
    commands["report"] = p

    p = sub.add_parser("protocol-test", help="check an external backend for protocol conformance")
    common(p)
    p.add_argument("--backend-cmd", required=True)
    p.add_argument("--golden", default=None, help="transcript directory (default: bundled)")
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--timeout", type=float, default=30.0)
    commands["protocol-test"] = p

    return parser, commands


def _apply_config(argv: list[str], parser: _Parser, commands: dict) -> argparse.Namespace:
    args = parser.parse_args(argv)
    config_path = getattr(args, "config", None)
    if not config_path:
        return args
    path = Path(args.workdir) / config_path if not Path(config_path).is_absolute() else Path(config_path)
    try:
        config = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ValidationError(f"config {path} must hold a JSON object")
    command_parser = commands[args.command]
    known = {a.dest for a in command_parser._actions}
    unknown = sorted(set(config) - known)
    if unknown:
        raise ValidationError(f"config {path} has unknown keys {unknown}")
    command_parser.set_defaults(**config)
    return parser.parse_args(argv)  # explicit flags still win


def _resolve(workdir: str, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else Path(workdir) / path


def cmd_generate(args) -> int:
    grammar = load_grammar(
        args.grammar if "/" not in args.grammar and "." not in args.grammar
        else _resolve(args.workdir, args.grammar)
    )
    if args.count <= 0:
        raise ValidationError("--count must be positive")
    jitter = JitterSpec(
        seed=args.seed,
        center_sigma=args.center_sigma,
        size_sigma=args.size_sigma,
        drop_prob=args.drop_prob,
    )
    out_dir = _resolve(args.workdir, args.out)
    width = len(str(max(args.count - 1, 1)))
    scenes = (
        generate_scene(
            grammar,
            args.image_size,
            jitter,
            f"{grammar.class_name}-{i:0{max(width, 5)}d}",
            args.patch_size,
        )
        for i in range(args.count)
    )
    manifest = write_corpus(scenes, out_dir, [grammar])
    print(manifest)
    return EXIT_OK


def _apportion(total: int, weights: list[float]) -> list[int]:
    """Largest-remainder split of total into len(weights) integer counts."""
    s = sum(weights)
    if s <= 0:
        raise ValidationError("--mix proportions must sum to a positive value")
    quotas = [total * w / s for w in weights]
    counts = [int(q) for q in quotas]
    leftovers = sorted(
        range(len(weights)), key=lambda i: (counts[i] - quotas[i], i)
    )
    for i in range(total - sum(counts)):
        counts[leftovers[i]] += 1
    return counts


def _load_backgrounds(path: Path) -> list[Path]:
    files = sorted(
        p for p in path.iterdir() if p.suffix.lower() in (".ppm", ".png", ".jpg", ".jpeg")
    )
    if not files:
        raise ValidationError(f"background library {path} has no images")
    return files


def cmd_perturb(args) -> int:
    corpus = _resolve(args.workdir, args.corpus)
    manifest = read_manifest(corpus)
    grammars = corpus_grammars(corpus, manifest)
    try:
        weights = [float(x) for x in args.mix.split(",")]
    except ValueError:
        raise ValidationError(f"--mix must be four comma-separated numbers, got {args.mix!r}") from None
    if len(weights) != len(PERTURB_KINDS) or any(w < 0 for w in weights):
        raise ValidationError("--mix needs four non-negative proportions: swap,replace,extra,scatter")
    counts = dict(zip(PERTURB_KINDS, _apportion(args.count, weights)))
    backgrounds: list[Path] = []
    if counts["scatter"] > 0:
        if not args.backgrounds:
            raise ValidationError("scatter perturbations need --backgrounds")
        backgrounds = _load_backgrounds(_resolve(args.workdir, args.backgrounds))
    sources = [e for e in manifest["scenes"] if e["correctness"] == CORRECT]
    if not sources:
        raise ValidationError(f"corpus {corpus} has no correct scenes to perturb")

    rng = derive_rng(args.seed, "perturb-cli")
    new_scenes = []
    for kind in PERTURB_KINDS:
        for j in range(counts[kind]):
            entry = sources[int(rng.integers(len(sources)))]
            image, ann = load_scene(corpus, entry)
            grammar = grammars[ann.class_name]
            library = StyleGlyphSource(style_for(grammar))
            new_id = f"{ann.class_name}-{kind}-{j:05d}"
            scene_seed = int(derive_rng(args.seed, "perturb", new_id).integers(0, 2**63))
            if kind == "swap":
                if len(ann.parts) < 2:
                    raise ValidationError(f"scene {ann.scene_id!r} has too few parts to swap")
                ia, ib = (int(x) for x in rng.choice(len(ann.parts), size=2, replace=False))
                out_img, out_ann = perturb_swap(image, ann, ia, ib, scene_seed)
            elif kind == "replace":
                it = int(rng.integers(len(ann.parts)))
                others = [l for l in grammar.vocabulary if l != ann.parts[it].label]
                new_label = others[int(rng.integers(len(others)))]
                out_img, out_ann = perturb_replace(image, ann, it, new_label, library, scene_seed)
            elif kind == "extra":
                label = grammar.vocabulary[int(rng.integers(len(grammar.vocabulary)))]
                out_img, out_ann = perturb_extra(
                    image, ann, label, scene_seed, source_library=library
                )
            else:
                bg_path = backgrounds[int(rng.integers(len(backgrounds)))]
                out_img, out_ann = perturb_scatter(image, ann, read_image(bg_path), scene_seed)
            out_ann = dataclasses.replace(out_ann, scene_id=new_id, image_ref=f"{new_id}.ppm")
            new_scenes.append((out_img, out_ann))
    manifest_path = extend_corpus(new_scenes, corpus)
    print(manifest_path)
    return EXIT_OK


def _records_to_summaries(results: list[SceneResult]):
    by_class: dict[str, list[SceneResult]] = {}
    for r in results:
        if r.error is None:
            by_class.setdefault(r.class_name, []).append(r)
    if not by_class:
        raise MetricsError("no successfully evaluated scenes to report on")
    summaries = []
    for class_name in sorted(by_class):
        matrix = accumulate(
            [(r.predicted_incorrect, r.truth) for r in by_class[class_name]]
        )
        summaries.append(summarize(matrix, class_name=class_name))
    return summaries


def _write_records(results: list[SceneResult], path: Path) -> None:
    doc = {"version": 1, "records": [r.to_dict() for r in results]}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_evaluate(args) -> int:
    corpus = _resolve(args.workdir, args.corpus)
    out_dir = _resolve(args.workdir, args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = PipelineConfig(
        iou_threshold=args.t,
        nms_original=args.nms_original,
        nms_reconstructed=args.nms_reconstructed,
        patch_size=args.patch_size,
        masking_strategy=args.masking,
        random_mask_ratio=args.mask_ratio,
        part_order=args.part_order,
        seed=args.seed,
    )
    noise = JitterSpec(
        seed=args.seed,
        center_sigma=args.noise_center_sigma,
        size_sigma=args.noise_size_sigma,
        drop_prob=args.noise_drop_prob,
    )
    if args.backend_cmd:
        provider = ExternalBackendProvider(
            args.backend_cmd,
            size=args.parallelism,
            patch_size=args.patch_size,
            timeout=args.timeout,
        )
        backend_desc = args.backend_cmd
    else:
        provider = OracleBackendProvider(noise, patch_size=args.patch_size)
        backend_desc = "oracle"
    try:
        results = evaluate_corpus(
            corpus,
            provider,
            cfg,
            parallelism=args.parallelism,
            trace_dir=out_dir / "traces" if args.trace else None,
        )
    finally:
        provider.close()

    _write_records(results, out_dir / "records.json")
    failed = [r for r in results if r.error is not None]
    for r in failed:
        print(f"warning: scene {r.scene_id} failed: {r.error}", file=sys.stderr)
    if failed and len(failed) == len(results):
        print("error: every scene failed to evaluate", file=sys.stderr)
        return EXIT_RUNTIME

    metadata = {
        "backend": backend_desc,
        "corpus": str(args.corpus),
        "failed_scenes": len(failed),
        "iou_threshold": args.t,
        "manifest_sha256": file_digest(corpus / "manifest.json"),
        "mask_ratio": args.mask_ratio,
        "masking": args.masking,
        "nms_original": args.nms_original,
        "nms_reconstructed": args.nms_reconstructed,
        "noise_center_sigma": args.noise_center_sigma,
        "noise_drop_prob": args.noise_drop_prob,
        "noise_size_sigma": args.noise_size_sigma,
        "part_order": args.part_order,
        "patch_size": args.patch_size,
        "seed": args.seed,
        "tool_version": __version__,
    }
    rep = build_report(_records_to_summaries(results), metadata)
    json_path, _ = write_report(rep, out_dir)
    print(json_path)
    return EXIT_OK


def cmd_report(args) -> int:
    results: list[SceneResult] = []
    names = []
    for rec_path in args.records:
        path = _resolve(args.workdir, rec_path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        results.extend(SceneResult.from_dict(r) for r in doc["records"])
        names.append(path.name)
    metadata = {"merged_from": names, "tool_version": __version__}
    rep = build_report(_records_to_summaries(results), metadata)
    out_dir = _resolve(args.workdir, args.out)
    json_path, _ = write_report(rep, out_dir)
    print(json_path)
    return EXIT_OK


def _bundled_golden_dir() -> Path:
    return Path(str(resources.files("vissyn").joinpath("data", "golden")))


def cmd_protocol_test(args) -> int:
    golden = _resolve(args.workdir, args.golden) if args.golden else _bundled_golden_dir()
    results = run_golden_suite(
        args.backend_cmd, golden, patch_size=args.patch_size, timeout=args.timeout
    )
    all_ok = True
    for name in sorted(results):
        failures = results[name]
        if failures:
            all_ok = False
            print(f"FAIL {name}")
            for failure in failures:
                print(f"  {failure}")
        else:
            print(f"PASS {name}")
    return EXIT_OK if all_ok else EXIT_RUNTIME


_HANDLERS = {
    "generate": cmd_generate,
    "perturb": cmd_perturb,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "protocol-test": cmd_protocol_test,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, commands = build_parser()
    try:
        args = _apply_config(argv, parser, commands)
        return _HANDLERS[args.command](args)
    except (ValidationError, MetricsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VissynError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
