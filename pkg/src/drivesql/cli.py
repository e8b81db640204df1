"""Command-line driver for the dataset pipeline.

Subcommands cover the whole flow: synthesize annotations, build the scene
database, generate instruction-response pairs, verify them, split, compute
statistics, and score predictions. Every run leaves a manifest documenting
its inputs, configuration, and outputs.

Exit codes: 0 success, 1 validation error, 2 I/O error. Any flag default
can be overridden by an environment variable named DRIVESQL_<FLAG>, with
explicit command-line values taking precedence over the environment.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from pathlib import Path
from typing import Any, Iterable, Sequence

from .canonical import canonical_dumps
from .errors import DriveSqlError
from .evaluation import evaluate, read_predictions_jsonl, split_dataset
from .generation import (
    ExternalClient,
    GenerationConfig,
    OfflineRules,
    generate_dataset,
    read_pairs_jsonl,
    verify_pairs,
    write_pairs_jsonl,
)
from .scene_db import (
    DEFAULT_IMPORTANT_RADIUS,
    build_database,
    load_annotations,
    load_database,
    save_database,
)
from .stats import compute_stats, view_percent_csv
from .synth import ScenarioScript, Waypoint, demo_corpus, merge_scenes, synth_scene
from .task_sql import RISK_SUBTASKS, RiskThresholds, Subtask
from .geometry import Vec3

__all__ = ["main", "run"]

TOOL_VERSION = "0.1.0"
ENV_PREFIX = "DRIVESQL_"


class CliUsageError(ValueError):
    """Bad arguments or malformed input content; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise CliUsageError(message)


def _env(flag: str, fallback: str | None) -> str | None:
    return os.environ.get(ENV_PREFIX + flag, fallback)


# ----------------------------------------------------------------- manifest


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _sha256_file(path: Path) -> str:
    return _sha256_bytes(path.read_bytes())


def _write_atomic(path: Path, text: str) -> None:
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _write_manifest(
    command: str,
    config: dict[str, Any],
    inputs: Iterable[Path],
    outputs: Sequence[Path],
    started: float,
) -> Path:
    manifest = {
        "command": command,
        "config_digest": _sha256_bytes(canonical_dumps(config).encode("utf-8")),
        "input_digests": {str(p): _sha256_file(p) for p in inputs},
        "output_paths": [str(p) for p in outputs],
        "tool_version": TOOL_VERSION,
        "wall_time_s": round(time.monotonic() - started, 3),
    }
    primary = outputs[0]
    target = primary / "manifest.json" if primary.is_dir() else Path(f"{primary}.manifest.json")
    _write_atomic(target, canonical_dumps(manifest) + "\n")
    return target


# ------------------------------------------------------------ option parsing


def _parse_thresholds_file(path: Path) -> RiskThresholds:
    """Read ``key=value`` lines; keys are dis, dis_x, dis_y, s."""
    values: dict[str, float] = {}
    known = {"dis", "dis_x", "dis_y", "s"}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliUsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in known:
            raise CliUsageError(
                f"{path}:{lineno}: unknown threshold {key!r}, expected one of "
                + ", ".join(sorted(known))
            )
        try:
            values[key] = float(value.strip())
        except ValueError:
            raise CliUsageError(f"{path}:{lineno}: {value.strip()!r} is not a number") from None
    return RiskThresholds(**values)


def _parse_subtasks(text: str) -> frozenset[Subtask]:
    names = [part.strip() for part in text.split(",") if part.strip()]
    if not names:
        raise CliUsageError("--subtasks needs at least one name")
    out = set()
    for name in names:
        try:
            out.add(Subtask(name))
        except ValueError:
            raise CliUsageError(
                f"unknown subtask {name!r}; choose from "
                + ", ".join(s.value for s in Subtask)
            ) from None
    return frozenset(out)


def _parse_ratios(text: str) -> tuple[float, float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise CliUsageError(f"--ratios needs three comma-separated numbers, got {text!r}")
    try:
        a, b, c = (float(p) for p in parts)
    except ValueError:
        raise CliUsageError(f"--ratios contains a non-number: {text!r}") from None
    return (a, b, c)


def _load_json(path: Path, what: str) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise CliUsageError(f"{path}: invalid JSON for {what}: {err}") from None


# ------------------------------------------------------------- synth loader


def _script_from_doc(doc: dict[str, Any], where: str) -> ScenarioScript:
    kind_name = doc.get("kind")
    kind = None
    if kind_name is not None:
        try:
            kind = Subtask(str(kind_name))
        except ValueError:
            raise CliUsageError(f"{where}: unknown kind {kind_name!r}") from None
        if kind not in RISK_SUBTASKS:
            raise CliUsageError(f"{where}: kind must be a risk kind, got {kind_name!r}")
    waypoints = []
    raw_points = doc.get("waypoints")
    if not isinstance(raw_points, list) or not raw_points:
        raise CliUsageError(f"{where}: waypoints must be a non-empty list")
    for i, wp in enumerate(raw_points):
        if not isinstance(wp, dict):
            raise CliUsageError(f"{where}.waypoints[{i}]: expected an object")
        try:
            waypoints.append(
                Waypoint(
                    t=float(wp["t"]),
                    pos=Vec3(float(wp["x"]), float(wp["y"]), float(wp.get("z", 0.0))),
                    yaw=float(wp.get("yaw", 0.0)),
                    speed=float(wp.get("speed", 0.0)),
                    lane=None if wp.get("lane") is None else str(wp["lane"]),
                )
            )
        except (KeyError, TypeError, ValueError) as err:
            raise CliUsageError(f"{where}.waypoints[{i}]: {err}") from None
    return ScenarioScript(
        kind=kind,
        waypoints=tuple(waypoints),
        category=str(doc.get("category", "car")),
        lane=str(doc.get("lane", "2")),
    )


def _synth_from_request(doc: Any, path: Path) -> dict[str, Any]:
    if not isinstance(doc, dict):
        raise CliUsageError(f"{path}: top level must be an object")
    if "sample" in doc:
        sample = doc["sample"]
        if not isinstance(sample, dict):
            raise CliUsageError(f"{path}: 'sample' must be an object")
        return demo_corpus(
            int(sample.get("n_random", 20)),
            int(sample.get("seed", 0)),
            include_curated=bool(sample.get("include_curated", True)),
        )
    scenes = doc.get("scenes")
    if not isinstance(scenes, list) or not scenes:
        raise CliUsageError(f"{path}: need either 'sample' or a non-empty 'scenes' list")
    docs = []
    for idx, scene in enumerate(scenes):
        where = f"{path}: scenes[{idx}]"
        if not isinstance(scene, dict):
            raise CliUsageError(f"{where}: expected an object")
        raw_scripts = scene.get("scripts", [])
        if not isinstance(raw_scripts, list):
            raise CliUsageError(f"{where}: scripts must be a list")
        scripts = [
            _script_from_doc(s, f"{where}.scripts[{i}]") if isinstance(s, dict) else None
            for i, s in enumerate(raw_scripts)
        ]
        if any(s is None for s in scripts):
            raise CliUsageError(f"{where}: every script must be an object")
        try:
            docs.append(
                synth_scene(
                    [s for s in scripts if s is not None],
                    n_frames=int(scene.get("n_frames", 3)),
                    seed=int(scene.get("seed", 0)),
                    scene_id=str(scene.get("scene_id", f"scene_{idx:04d}")),
                    ego_speed=float(scene.get("ego_speed", 5.0)),
                    ego_yaw=float(scene.get("ego_yaw", 0.0)),
                )
            )
        except (TypeError, ValueError) as err:
            raise CliUsageError(f"{where}: {err}") from None
    return merge_scenes(docs)


# --------------------------------------------------------------- subcommands


def _cmd_build_db(args: argparse.Namespace) -> int:
    started = time.monotonic()
    src = Path(args.annotations)
    annotations = load_annotations(src)
    db = build_database(annotations, important_radius=args.radius)
    out = Path(args.output)
    save_database(db, out)
    _write_manifest("build-db", {"radius": args.radius}, [src], [out], started)
    print(
        f"built database: {len(db.scenes)} scenes, {len(db.frames)} frames, "
        f"{len(db.instances)} instance rows -> {out}"
    )
    return 0


def _generation_config(args: argparse.Namespace) -> GenerationConfig:
    thresholds = RiskThresholds()
    if args.thresholds:
        thresholds = _parse_thresholds_file(Path(args.thresholds))
    subtasks = frozenset(Subtask)
    if args.subtasks:
        subtasks = _parse_subtasks(args.subtasks)
    verifier: OfflineRules | ExternalClient = OfflineRules()
    if args.verifier:
        verifier = ExternalClient(endpoint=args.verifier)
    return GenerationConfig(
        master_seed=args.seed,
        windows_per_scene=args.windows,
        max_instances_per_subtask=args.max_instances,
        thresholds=thresholds,
        enabled_subtasks=subtasks,
        verifier=verifier,
    )


def _cmd_generate(args: argparse.Namespace) -> int:
    started = time.monotonic()
    src = Path(args.database)
    db = load_database(src)
    config = _generation_config(args)
    pairs, diag = generate_dataset(db, config, jobs=args.jobs)
    dropped = 0
    if isinstance(config.verifier, ExternalClient):
        result = verify_pairs(pairs, config, db)
        dropped = len(result.rejected)
        pairs = result.kept
    out = Path(args.output)
    write_pairs_jsonl(pairs, out)
    inputs = [src] + ([Path(args.thresholds)] if args.thresholds else [])
    _write_manifest(
        "generate",
        {"config_digest": config.digest(), "jobs": args.jobs},
        inputs,
        [out],
        started,
    )
    note = f", dropped {dropped} in verification" if dropped else ""
    print(
        f"generated {len(pairs)} pairs from {diag.eligible_scenes} scenes "
        f"({diag.windows_unique} windows){note} -> {out}"
    )
    return 0


def _cmd_verify(args: argparse.Namespace) -> int:
    started = time.monotonic()
    src = Path(args.pairs)
    pairs = read_pairs_jsonl(src)
    db = load_database(Path(args.db)) if args.db else None
    verifier: OfflineRules | ExternalClient = OfflineRules()
    if args.verifier:
        verifier = ExternalClient(endpoint=args.verifier)
    config = GenerationConfig(verifier=verifier)
    result = verify_pairs(pairs, config, db)
    out = Path(args.output)
    write_pairs_jsonl(result.kept, out)
    report = {
        "kept": len(result.kept),
        "rejected": [{"pair_id": pid, "reason": reason} for pid, reason in result.rejected],
        "unverified": sorted(result.unverified),
        "revised": sorted(result.revised),
    }
    report_path = Path(f"{out}.report.json")
    _write_atomic(report_path, canonical_dumps(report) + "\n")
    inputs = [src] + ([Path(args.db)] if args.db else [])
    _write_manifest(
        "verify",
        {"verifier": args.verifier or "offline", "db": args.db or ""},
        inputs,
        [out, report_path],
        started,
    )
    print(
        f"kept {len(result.kept)}/{len(pairs)} pairs "
        f"({len(result.rejected)} rejected, {len(result.unverified)} unverified, "
        f"{len(result.revised)} revised) -> {out}"
    )
    return 0


def _cmd_split(args: argparse.Namespace) -> int:
    started = time.monotonic()
    src = Path(args.pairs)
    pairs = read_pairs_jsonl(src)
    if not pairs:
        raise CliUsageError(f"{src}: no pairs to split")
    ratios = _parse_ratios(args.ratios)
    scene_ids = {pair.scene_id for pair in pairs}
    split = split_dataset(scene_ids, ratios=ratios, seed=args.seed)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name, ids in (("train", split.train), ("val", split.val), ("test", split.test)):
        bucket = set(ids)
        target = out_dir / f"{name}.jsonl"
        write_pairs_jsonl([p for p in pairs if p.scene_id in bucket], target)
        outputs.append(target)
    _write_manifest(
        "split",
        {"ratios": list(ratios), "seed": args.seed},
        [src],
        [out_dir, *outputs],
        started,
    )
    print(
        f"split {len(scene_ids)} scenes into "
        f"{len(split.train)}/{len(split.val)}/{len(split.test)} -> {out_dir}"
    )
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    started = time.monotonic()
    pairs_path = Path(args.pairs)
    db_path = Path(args.database)
    pairs = read_pairs_jsonl(pairs_path)
    db = load_database(db_path)
    stats = compute_stats(pairs, db)
    out = Path(args.output)
    _write_atomic(out, canonical_dumps(stats.as_dict()) + "\n")
    csv_path = Path(f"{out}.views.csv")
    view_percent_csv(stats, csv_path)
    _write_manifest("stats", {}, [pairs_path, db_path], [out, csv_path], started)
    print(
        f"{stats.pairs_total} pairs, {stats.keyframes} keyframes, "
        f"{stats.avg_instances_per_keyframe:.2f} instances/keyframe -> {out}"
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    started = time.monotonic()
    pairs_path = Path(args.pairs)
    preds_path = Path(args.predictions)
    pairs = read_pairs_jsonl(pairs_path)
    preds = read_predictions_jsonl(preds_path)
    report = evaluate(pairs, preds)
    out = Path(args.output)
    _write_atomic(out, canonical_dumps(report.as_dict()) + "\n")
    _write_manifest("eval", {}, [pairs_path, preds_path], [out], started)
    undefined = [name for name, value in report.groups.items() if value is None]
    for name, value in report.groups.items():
        shown = "undefined" if value is None else f"{value:.4f}"
        print(f"{name}: {shown}")
    print(f"extraction_failure_rate: {report.extraction_failure_rate:.4f}")
    if undefined:
        print(f"error: undefined metric groups: {', '.join(undefined)}", file=sys.stderr)
        return 1
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    started = time.monotonic()
    src = Path(args.scripts)
    request = _load_json(src, "synth scripts")
    annotations = _synth_from_request(request, src)
    out = Path(args.output)
    out.write_text(canonical_dumps(annotations) + "\n", encoding="utf-8")
    _write_manifest("synth", {}, [src], [out], started)
    print(
        f"synthesized {len(annotations['scenes'])} scenes, "
        f"{len(annotations['frames'])} frames -> {out}"
    )
    return 0


# -------------------------------------------------------------------- parser


def _build_parser() -> _Parser:
    parser = _Parser(prog="drivesql", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-db", help="validate annotations and build the scene database")
    p.add_argument("annotations")
    p.add_argument("-o", "--output", required=True)
    p.add_argument(
        "--radius",
        type=float,
        default=_env("RADIUS", str(DEFAULT_IMPORTANT_RADIUS)),
        help="importance radius in meters",
    )
    p.set_defaults(handler=_cmd_build_db)

    p = sub.add_parser("generate", help="generate instruction-response pairs")
    p.add_argument("database")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, default=_env("SEED", "0"))
    p.add_argument("--windows", type=int, default=_env("WINDOWS", "1"))
    p.add_argument("--max-instances", type=int, default=_env("MAX_INSTANCES", "3"))
    p.add_argument("--thresholds", default=_env("THRESHOLDS", None))
    p.add_argument("--subtasks", default=_env("SUBTASKS", None))
    p.add_argument("--verifier", default=_env("VERIFIER", None))
    p.add_argument("--jobs", type=int, default=_env("JOBS", str(os.cpu_count() or 1)))
    p.set_defaults(handler=_cmd_generate)

    p = sub.add_parser("verify", help="filter pairs through the format rules")
    p.add_argument("pairs")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--db", default=_env("DB", None))
    p.add_argument("--verifier", default=_env("VERIFIER", None))
    p.set_defaults(handler=_cmd_verify)

    p = sub.add_parser("split", help="split pairs by scene into train/val/test")
    p.add_argument("pairs")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--ratios", default=_env("RATIOS", "7.5,1.5,1.5"))
    p.add_argument("--seed", type=int, default=_env("SEED", "0"))
    p.set_defaults(handler=_cmd_split)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("pairs")
    p.add_argument("database")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(handler=_cmd_stats)

    p = sub.add_parser("eval", help="score predictions against pairs")
    p.add_argument("pairs")
    p.add_argument("predictions")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("synth", help="synthesize annotation corpora from scripts")
    p.add_argument("scripts")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(handler=_cmd_synth)

    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except (DriveSqlError, CliUsageError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
