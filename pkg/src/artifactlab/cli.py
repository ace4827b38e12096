"""``artifactlab`` command line entry point.

Every subcommand writes its outputs plus ``manifest.json`` (all effective
parameters) into ``--out-dir``. Exit codes: 0 success, 2 usage error,
3 missing file, 4 version mismatch, 5 invalid input, 6 numerical failure,
7 remote classifier failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .annotations import AnnotatedImage, ArtifactAnnotation, Dataset, load_dataset, save_dataset, summarize, summary_csv
from .ddpo import DDPOConfig, TrainingHistory
from .diffusion import NoiseSchedule, load_checkpoint, save_checkpoint
from .errors import (
    AnswerConflictError, ArtifactLabError, NumericalError, ParseError, ProtocolError, TransportError,
    ValidationError, VersionMismatchError, DomainError,
)
from .experiment import PretrainConfig, artifact_rate, oracle_reward, parse_mix, pretrain, run_rlaif, sample_mixture
from .instructions import BoundingBox, build_classification_prompt, build_detection_prompt
from .metrics import classification_report, detection_score
from .report import curve_csv, reward_curve_svg
from .reward import ENDPOINT_ENV, ClassifierReward, RemoteClassifier, RewardConfig, RewardFunction, artifact_reward
from .scenes import SceneConfig, artifact_boxes, classify_scene, encode_pgm, render, sample_scene
from .taxonomy import NO_ARTIFACTS, LabelSet, canonical_answer, load_taxonomy, parse_answer
from .textsim import EmbeddingModel

log = logging.getLogger("artifactlab")

EXIT_USAGE, EXIT_MISSING, EXIT_VERSION, EXIT_INVALID, EXIT_NUMERIC, EXIT_REMOTE = 2, 3, 4, 5, 6, 7


class UsageError(ArtifactLabError):
    pass


def _write_manifest(out: Path, command: str, args: argparse.Namespace, extra: dict | None = None) -> None:
    params = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in ("func",)}
    doc = {"command": command, "version": __version__, "parameters": params}
    if extra:
        doc["results"] = extra
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _taxonomy(args):
    return load_taxonomy(Path(args.taxonomy)) if getattr(args, "taxonomy", None) else load_taxonomy()


def _embedding(args) -> EmbeddingModel:
    if getattr(args, "embedding_table", None):
        return EmbeddingModel.from_table_file(args.embedding_table, seed=args.embedding_seed)
    return EmbeddingModel(dimension=args.embedding_dim, seed=args.embedding_seed)


def _reward_config(args, taxonomy) -> RewardConfig:
    return RewardConfig(phrases=tuple(taxonomy.names), alpha=args.alpha, beta=args.beta, score=args.score)


def cmd_gen_data(args) -> dict:
    try:
        mix = parse_mix(args.mix)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args)
    taxonomy = _taxonomy(args)
    cfg = SceneConfig()
    rng = np.random.default_rng(args.seed)
    xs, specs, conds = sample_mixture(rng, args.n, mix, cfg)
    if args.render:
        (out / "images").mkdir(exist_ok=True)
    items = []
    for i, (x, spec, c) in enumerate(zip(xs, specs, conds)):
        ref = f"images/scene_{i:06d}.pgm"
        labels = classify_scene(x, cfg, taxonomy)
        anns = [ArtifactAnnotation(cid, BoundingBox(*box, normalized=True) if box else None, cap)
                for cid, box, cap in artifact_boxes(x, cfg, taxonomy)]
        prompt = f"toy scene, condition {int(c)}, params " + " ".join(f"{v:.6f}" for v in x)
        items.append(AnnotatedImage(ref, prompt, f"toy-scene:{spec}", labels, tuple(anns)))
        if args.render:
            (out / ref).write_bytes(encode_pgm(render(x, args.resolution)))
    ds = Dataset(tuple(items), taxonomy.version, {"seed": args.seed, "mix": mix, "n": args.n})
    save_dataset(ds, out / "dataset.json")
    summary = summarize(ds, taxonomy)
    (out / "summary.csv").write_text(summary_csv(summary, taxonomy))
    artifacts = sum(not it.labels.is_clean for it in ds.items)
    print(f"wrote {len(ds)} items ({artifacts} with artifacts) to {out / 'dataset.json'}")
    return {"n_items": len(ds), "n_artifact_items": artifacts}


def cmd_pretrain(args) -> dict:
    try:
        mix = parse_mix(args.mix)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args)
    schedule = NoiseSchedule.linear(args.diffusion_steps)
    rng = np.random.default_rng(args.seed)
    t0 = time.perf_counter()
    res = pretrain(mix, rng, PretrainConfig(args.steps, args.lr, args.batch_size, args.hidden, args.pool_size), schedule)
    save_checkpoint(res.denoiser, schedule, out / "denoiser.ckpt")
    (out / "loss.csv").write_text("step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(res.losses)))
    rate = artifact_rate(res.denoiser, args.eval_samples, args.seed + 1, schedule)
    print(f"pretrained in {time.perf_counter() - t0:.1f}s; final loss {np.mean(res.losses[-100:]):.4f}; "
          f"artifact rate {rate:.3f} on {args.eval_samples} samples")
    return {"final_loss": float(np.mean(res.losses[-100:])), "artifact_rate": rate}


def _scorer(args, taxonomy) -> ClassifierReward:
    reward_fn = RewardFunction(_reward_config(args, taxonomy), _embedding(args), taxonomy)
    if args.classifier == "remote":
        return ClassifierReward(RemoteClassifier(args.endpoint, args.timeout), reward_fn)
    return oracle_reward(SceneConfig(), reward_fn)


def cmd_rlaif(args) -> dict:
    out = _out_dir(args)
    taxonomy = _taxonomy(args)
    denoiser, schedule = load_checkpoint(args.checkpoint)
    dcfg = DDPOConfig(args.batch_size, args.lr, args.inner_epochs, None if args.no_clip else args.clip_range,
                      not args.no_normalize, args.batches, args.checkpoint_every)
    scorer = _scorer(args, taxonomy)
    before = artifact_rate(denoiser, args.eval_samples, args.seed + 1, schedule)

    def progress(b, h):
        if (b + 1) % max(1, args.batches // 10) == 0:
            log.info("batch %d: mean reward %.4f, artifact rate %.3f", b + 1, h.mean_reward[-1], h.artifact_rate[-1])

    policy, history = run_rlaif(denoiser, np.random.default_rng(args.seed), dcfg, schedule, scorer,
                                checkpoint_dir=out / "checkpoints" if args.checkpoint_every else None, callback=progress)
    save_checkpoint(policy, schedule, out / "denoiser.ckpt")
    (out / "history.csv").write_text(history.to_csv())
    after = artifact_rate(policy, args.eval_samples, args.seed + 1, schedule)
    first, last = history.decile_means()
    print(f"reward first decile {first:.4f} -> last decile {last:.4f}; artifact rate {before:.3f} -> {after:.3f}")
    return {"first_decile_reward": first, "last_decile_reward": last, "artifact_rate_before": before,
            "artifact_rate_after": after}


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc.msg}", exc.lineno) from None


def _predicted_labels(answer, taxonomy, policy: str) -> LabelSet:
    if isinstance(answer, list):
        return LabelSet(frozenset(answer)).validate(taxonomy) if answer else NO_ARTIFACTS
    try:
        labels, _ = parse_answer(answer, taxonomy)
    except AnswerConflictError as exc:
        if policy == "error":
            raise
        labels = NO_ARTIFACTS if policy == "clean" else exc.labels
    return labels


def cmd_eval_cls(args) -> dict:
    out = _out_dir(args)
    taxonomy = _taxonomy(args)
    gold = load_dataset(args.gold, taxonomy)
    preds_doc = _read_json(args.pred)
    if isinstance(preds_doc, dict) and "schema_version" in preds_doc:
        pred_ds = load_dataset(args.pred, taxonomy)
        table = {it.image_ref: it.labels for it in pred_ds.items}
    else:
        raw = preds_doc.get("predictions") if isinstance(preds_doc, dict) else None
        if not isinstance(raw, dict):
            raise ParseError("predictions file needs a 'predictions' object mapping image_ref to answer")
        table = {ref: _predicted_labels(ans, taxonomy, args.conflict_policy) for ref, ans in raw.items()}
    missing = [it.image_ref for it in gold.items if it.image_ref not in table]
    if missing:
        raise ValidationError(f"no prediction for {len(missing)} items, e.g. {missing[0]!r}")
    golds = [it.labels for it in gold.items]
    preds = [table[it.image_ref] for it in gold.items]
    report = classification_report(preds, golds, taxonomy, args.averaging)
    csv_text = report.to_csv(taxonomy)
    (out / "report.csv").write_text(csv_text)
    print(csv_text, end="")
    return {"exact_match_accuracy": report.exact_match_accuracy, "precision": report.precision,
            "recall": report.recall, "f1": report.f1, "n_examples": report.n_examples}


def cmd_eval_det(args) -> dict:
    out = _out_dir(args)
    taxonomy = _taxonomy(args)
    gold = load_dataset(args.gold, taxonomy)
    raw = _read_json(args.pred)
    raw = raw.get("predictions") if isinstance(raw, dict) else None
    if not isinstance(raw, dict):
        raise ParseError("predictions file needs a 'predictions' object mapping image_ref to a box list")
    rows, ious = [], []
    for it in gold.items:
        gt = [(a.category_id, a.box) for a in it.annotations if a.box is not None]
        pred = []
        for j, p in enumerate(raw.get(it.image_ref, [])):
            try:
                pred.append((int(p["category_id"]), BoundingBox(*map(float, p["box"]), normalized=True)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{it.image_ref}: prediction {j} malformed ({exc})") from None
        if not gt:
            continue
        res = detection_score(pred, gt)
        for gi, pi, cid, v in res.pairs:
            rows.append(f"{it.image_ref},{gi},{'' if pi is None else pi},{cid},{v:.6f}\n")
            ious.append(v)
    mean = float(np.mean(ious)) if ious else 0.0
    (out / "pairs.csv").write_text("image_ref,gt_index,pred_index,category,iou\n" + "".join(rows))
    print(f"mean best IOU over {len(ious)} ground-truth boxes: {mean:.4f}")
    return {"mean_iou": mean, "n_gt_boxes": len(ious)}


def cmd_reward(args) -> dict:
    out = _out_dir(args)
    taxonomy = _taxonomy(args)
    cfg = _reward_config(args, taxonomy)
    model = _embedding(args)
    value = artifact_reward(args.answer, cfg, model)
    print(f"{value:.6f}")
    return {"answer": args.answer, "reward": value}


def cmd_render(args) -> dict:
    out = _out_dir(args)
    cfg = SceneConfig()
    if args.params:
        try:
            x = np.array([float(v) for v in args.params.split(",")])
        except ValueError:
            raise UsageError("--params must be comma separated numbers") from None
        if x.shape != (15,):
            raise UsageError(f"--params needs 15 values, got {x.size}")
        scenes_ = [x]
    elif args.checkpoint:
        from .experiment import sample_scenes

        denoiser, schedule = load_checkpoint(args.checkpoint)
        scenes_ = list(sample_scenes(denoiser, args.n, args.seed, schedule))
    else:
        rng = np.random.default_rng(args.seed)
        scenes_ = [sample_scene(rng, args.spec, cfg) for _ in range(args.n)]
    taxonomy = _taxonomy(args)
    labels = []
    for i, x in enumerate(scenes_):
        (out / f"scene_{i:04d}.pgm").write_bytes(encode_pgm(render(x, args.resolution)))
        labels.append(canonical_answer(classify_scene(x, cfg, taxonomy), taxonomy))
    (out / "labels.txt").write_text("".join(f"scene_{i:04d}.pgm\t{a}\n" for i, a in enumerate(labels)))
    print(f"rendered {len(scenes_)} scene(s) to {out}")
    return {"n": len(scenes_)}


def cmd_report(args) -> dict:
    out = _out_dir(args)
    history = TrainingHistory.from_csv(Path(args.history).read_text())
    if not len(history):
        raise ValidationError("history is empty")
    (out / "reward_curve.csv").write_text(curve_csv(history, args.window, args.batch_size))
    (out / "reward_curve.svg").write_text(reward_curve_svg(history, args.window))
    first, last = history.decile_means()
    print(f"{len(history)} batches; first-decile reward {first:.4f}, last-decile reward {last:.4f}")
    return {"first_decile_reward": first, "last_decile_reward": last}


def cmd_prompts(args) -> dict:
    out = _out_dir(args)
    taxonomy = _taxonomy(args)
    (out / "classification_prompt.txt").write_text(build_classification_prompt(taxonomy))
    (out / "detection_prompt.txt").write_text(build_detection_prompt(taxonomy))
    print(build_classification_prompt(taxonomy), end="")
    return {}


def _add_reward_flags(p):
    p.add_argument("--alpha", type=float, default=0.1, help="weight of the artifact-phrase penalty")
    p.add_argument("--beta", type=float, default=1.0, help="reward offset")
    p.add_argument("--score", choices=("f", "precision", "recall"), default="f", help="BertScore component")
    p.add_argument("--embedding-dim", type=int, default=64)
    p.add_argument("--embedding-seed", type=int, default=0)
    p.add_argument("--embedding-table", help="token embedding table file (table-file mode)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="artifactlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", default=None, help="output directory (default runs/<command>)")
    common.add_argument("--config", help="JSON file of flag defaults; explicit flags win")
    common.add_argument("--taxonomy", help="taxonomy document (default: built-in 13 categories)")
    common.add_argument("--deterministic", action="store_true", help="force sequential code paths")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a labelled toy-scene dataset")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--mix", default="clean=0.6,omission=0.1,duplication=0.1,distortion=0.1,out_of_frame=0.1")
    p.add_argument("--render", action="store_true", help="also write PGM images")
    p.add_argument("--resolution", type=int, default=64)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", parents=[common], help="pretrain the toy diffusion model")
    p.add_argument("--mix", default="clean=0.6,omission=0.1,duplication=0.1,distortion=0.1,out_of_frame=0.1")
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--pool-size", type=int, default=20000)
    p.add_argument("--diffusion-steps", type=int, default=50)
    p.add_argument("--eval-samples", type=int, default=512)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("rlaif", parents=[common], help="fine-tune with DDPO against the classifier reward")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batches", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=24)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--inner-epochs", type=int, default=1)
    p.add_argument("--clip-range", type=float, default=0.2)
    p.add_argument("--no-clip", action="store_true")
    p.add_argument("--no-normalize", action="store_true", help="use raw rewards as advantages")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--eval-samples", type=int, default=512)
    p.add_argument("--classifier", choices=("oracle", "remote"), default="oracle")
    p.add_argument("--endpoint", help=f"remote classifier URL (or ${ENDPOINT_ENV})")
    p.add_argument("--timeout", type=float, default=None)
    _add_reward_flags(p)
    p.set_defaults(func=cmd_rlaif)

    p = sub.add_parser("eval-cls", parents=[common], help="multi-label classification report")
    p.add_argument("--gold", required=True, help="dataset JSON with gold labels")
    p.add_argument("--pred", required=True, help="predictions JSON or dataset JSON")
    p.add_argument("--averaging", choices=("example", "micro"), default="example")
    p.add_argument("--conflict-policy", choices=("error", "artifacts", "clean"), default="artifacts",
                   help="how to read answers mixing 'No artifacts' with categories")
    p.set_defaults(func=cmd_eval_cls)

    p = sub.add_parser("eval-det", parents=[common], help="IOU-based detection scoring")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.set_defaults(func=cmd_eval_det)

    p = sub.add_parser("reward", parents=[common], help="score one classifier answer")
    p.add_argument("--answer", required=True)
    _add_reward_flags(p)
    p.set_defaults(func=cmd_reward)

    p = sub.add_parser("render", parents=[common], help="render scenes to PGM")
    p.add_argument("--spec", default="clean", choices=("clean", "omission", "duplication", "distortion", "out_of_frame"))
    p.add_argument("--params", help="15 comma separated scene parameters")
    p.add_argument("--checkpoint", help="render samples from a denoiser checkpoint instead")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--resolution", type=int, default=64)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("report", parents=[common], help="reward curve CSV and SVG from a history CSV")
    p.add_argument("--history", required=True)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=24)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("prompts", parents=[common], help="write the classification and detection prompts")
    p.set_defaults(func=cmd_prompts)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            parser.exit(EXIT_MISSING, f"artifactlab: config file not found: {args.config}\n")
        except json.JSONDecodeError as exc:
            parser.exit(EXIT_INVALID, f"artifactlab: config file is not valid JSON: {exc}\n")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(overrides) - known)
        if unknown:
            parser.exit(EXIT_USAGE, f"artifactlab: unknown config keys {unknown}\n")
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)
    if args.out_dir is None:
        args.out_dir = str(Path("runs") / args.command)
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        results = args.func(args)
        _write_manifest(Path(args.out_dir), args.command, args, results)
        return 0
    except UsageError as exc:
        print(f"artifactlab {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"artifactlab {args.command}: missing file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except VersionMismatchError as exc:
        print(f"artifactlab {args.command}: version mismatch: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except (TransportError, ProtocolError) as exc:
        print(f"artifactlab {args.command}: classifier error: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    except NumericalError as exc:
        print(f"artifactlab {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, ValidationError, DomainError, ArtifactLabError) as exc:
        print(f"artifactlab {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
