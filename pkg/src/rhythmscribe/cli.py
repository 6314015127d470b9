"""Command-line interface: reproducible corpus-to-report batch runs.

Subcommands form a pipeline: `prepare` normalizes raw onset lists into a
corpus, `train` estimates a generic model, `synth` renders noisy
performances, `transcribe` recovers scores, and `eval`, `study-sparseness`,
and `bench` report metrics.  Every setting resolves as CLI flag, then
RHYTHMSCRIBE_<KEY> environment variable, then `--config` JSON file, then the
built-in default.  Commands that consume randomness take an explicit
`--seed`; when omitted, a seed is generated and recorded in the output
header, so any output can be reproduced.  With a fixed seed, primary outputs
are byte-identical across runs (`bench` reports measured wall-clock times
and is the documented exception).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .core import Corpus, normalize_corpus, to_note_values
from .evaluation import benchmark, cross_entropy, error_rate, sparseness_study
from .inference import (
    DEFAULT_CONCENTRATION,
    DEFAULT_GIBBS_ITERATIONS,
    GibbsConfig,
    default_beam_width,
    transcribe,
)
from .models import ModelConfig, load_params, save_params
from .timing import PerformedCorpus, TimingParams, synthesize
from .training import (
    DEFAULT_EPSILON,
    DEFAULT_NO_MODIFICATION_MASS,
    DEFAULT_PATTERN_INTERPOLATION,
    SmoothingConfig,
    assemble_hyperparams,
    attach_modification_presets,
    estimate_params,
)

ENV_PREFIX = "RHYTHMSCRIBE_"
DEFAULT_TEMPO_BPM = 144.0
DEFAULT_SIGMA_T = 0.04

__all__ = ["main"]


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


class _Settings:
    """Flag > environment > config file > default, per key."""

    def __init__(self, args):
        self.args = args
        cfg_path = getattr(args, "config", None)
        self.file_cfg = _read_json(cfg_path) if cfg_path else {}

    def get(self, key: str, default, cast):
        flag = getattr(self.args, key, None)
        if flag is not None:
            return flag
        env = os.environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            return cast(env)
        if key in self.file_cfg:
            return cast(self.file_cfg[key])
        return default


def _derived_rng(seed: int, *keys: str) -> np.random.Generator:
    parts = [int(seed)] + [zlib.crc32(str(k).encode()) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(parts))


def _derived_int(seed: int, *keys: str) -> int:
    parts = [int(seed)] + [zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


def _fresh_seed() -> int:
    return int.from_bytes(os.urandom(4), "big") & 0x7FFFFFFF


def _model_config(parser: argparse.ArgumentParser, name: str) -> ModelConfig:
    try:
        return ModelConfig.from_name(name)
    except ValueError as exc:
        parser.error(str(exc))


def _beam_width(value: int | None, config: ModelConfig) -> int | None:
    # flag semantics: unset -> per-model default, 0 -> exact, n -> beam of n
    if value is None:
        return default_beam_width(config)
    return None if value == 0 else value


def _timing(settings: _Settings, parser, pc: PerformedCorpus | None = None) -> TimingParams:
    file_tempo = pc.tempo_bpm if pc is not None else None
    file_sigma = pc.sigma_t if pc is not None else None
    tempo = settings.get("tempo_bpm", file_tempo, float)
    sigma = settings.get("sigma_t", file_sigma, float)
    if tempo is None or sigma is None:
        parser.error("tempo_bpm and sigma_t must be given (flag, env, config, or recorded in the performance file)")
    return TimingParams.from_bpm(float(tempo), float(sigma))


def cmd_prepare(args, parser) -> int:
    try:
        data = _read_json(args.input)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read {args.input}: {exc}", file=sys.stderr)
        return 1
    entries = data["pieces"] if isinstance(data, dict) else data
    corpus, report = normalize_corpus(entries, bar_length=args.bar_length)
    print(report.summary())
    if len(corpus.pieces) == 0:
        print("no pieces survived normalization", file=sys.stderr)
        return 1
    corpus.save(args.out)
    return 0


def cmd_train(args, parser) -> int:
    settings = _Settings(args)
    config = _model_config(parser, args.model)
    corpus = Corpus.load(args.corpus)
    smoothing = SmoothingConfig(
        epsilon=float(settings.get("epsilon", DEFAULT_EPSILON, float)),
        pattern_interpolation=float(
            settings.get("pattern_interpolation", DEFAULT_PATTERN_INTERPOLATION, float)
        ),
    )
    xi0 = float(settings.get("xi0", DEFAULT_NO_MODIFICATION_MASS, float))
    zeta0 = float(settings.get("zeta0", DEFAULT_NO_MODIFICATION_MASS, float))
    params = estimate_params(corpus, config, smoothing, xi0, zeta0)
    save_params(params, args.out)
    return 0


def cmd_synth(args, parser) -> int:
    settings = _Settings(args)
    corpus = Corpus.load(args.corpus)
    tempo = float(settings.get("tempo_bpm", DEFAULT_TEMPO_BPM, float))
    sigma = float(settings.get("sigma_t", DEFAULT_SIGMA_T, float))
    tp = TimingParams.from_bpm(tempo, sigma)
    seed = settings.get("seed", None, int)
    seed = _fresh_seed() if seed is None else int(seed)
    perfs = tuple(
        synthesize(score, tp, _derived_rng(seed, pid, "synth"))
        for pid, score in zip(corpus.ids, corpus.pieces)
    )
    pc = PerformedCorpus(
        performances=perfs,
        ids=corpus.ids,
        sources=corpus.pieces,
        tempo_bpm=tempo,
        sigma_t=sigma,
        bar_length=corpus.bar_length,
    )
    data = pc.to_dict()
    data["seed"] = seed
    _write_json(args.out, data)
    return 0


def _transcribe_one(task):
    config, param_obj, perf, tp, run_cfg, pid = task
    try:
        result = transcribe(config, param_obj, perf, tp, run_cfg)
    except Exception as exc:  # noqa: BLE001 - worker boundary
        return pid, None, f"{type(exc).__name__}: {exc}"
    return pid, result.to_dict(), None


def cmd_transcribe(args, parser) -> int:
    settings = _Settings(args)
    config = _model_config(parser, args.model)
    params = load_params(args.params)
    if params.family != config.family or params.order != config.order:
        parser.error(
            f"params file is a {params.family} order-{params.order} model; "
            f"{config.name} needs {config.family} order {config.order}"
        )
    pc = PerformedCorpus.load(args.performances)
    tp = _timing(settings, parser, pc)
    xi0 = float(settings.get("xi0", DEFAULT_NO_MODIFICATION_MASS, float))
    zeta0 = float(settings.get("zeta0", DEFAULT_NO_MODIFICATION_MASS, float))
    alpha = float(settings.get("alpha", DEFAULT_CONCENTRATION, float))
    iterations = int(settings.get("iterations", DEFAULT_GIBBS_ITERATIONS, int))
    width = _beam_width(settings.get("beam_width", None, int), config)
    jobs = int(settings.get("jobs", 1, int))

    seed = settings.get("seed", None, int)
    if config.bayesian:
        seed = _fresh_seed() if seed is None else int(seed)
        param_obj = assemble_hyperparams(params, config, alpha=alpha,
                                         no_shift_mass=xi0, identity_division_mass=zeta0)
    else:
        if config.shift or config.division:
            param_obj = attach_modification_presets(params, config, xi0, zeta0)
        else:
            param_obj = params

    tasks = []
    for pid, perf in zip(pc.ids, pc.performances):
        run_cfg = GibbsConfig(iterations=1, beam_width=width)
        if config.bayesian:
            run_cfg = GibbsConfig(
                iterations=iterations,
                beam_width=width,
                seed=_derived_int(seed, pid, "gibbs"),
            )
        tasks.append((config, param_obj, perf, tp, run_cfg, pid))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_transcribe_one, tasks))
    else:
        outcomes = [_transcribe_one(t) for t in tasks]

    items, failures = [], []
    for pid, result, err in outcomes:
        if err is not None:
            failures.append({"id": pid, "error": err})
            print(f"{pid}: {err}", file=sys.stderr)
        else:
            items.append({"id": pid, **result})
    out = {
        "model": config.name,
        "tempo_bpm": tp.tempo_bpm,
        "sigma_t": tp.sigma_t,
        "items": items,
        "failures": failures,
    }
    if config.bayesian:
        out["seed"] = seed
        out["alpha"] = alpha
        out["iterations"] = iterations
    _write_json(args.out, out)
    return 1 if failures else 0


def cmd_eval(args, parser) -> int:
    if args.transcriptions is not None:
        if args.truth is None:
            parser.error("--transcriptions requires --truth (ground-truth corpus)")
        data = _read_json(args.transcriptions)
        truth = Corpus.load(args.truth)
        truth_values = {pid: to_note_values(p) for pid, p in zip(truth.ids, truth.pieces)}
        per_piece, weights = {}, {}
        for item in data["items"]:
            pid = item["id"]
            if pid not in truth_values:
                print(f"no ground truth for piece {pid}", file=sys.stderr)
                return 1
            per_piece[pid] = error_rate(item["note_values"], truth_values[pid])
            weights[pid] = len(truth_values[pid])
        if not per_piece:
            print("no transcriptions to evaluate", file=sys.stderr)
            return 1
        total = sum(weights.values())
        aggregate = sum(per_piece[p] * weights[p] for p in per_piece) / total
        report = {
            "model": data.get("model"),
            "per_piece_error": per_piece,
            "error_rate": aggregate,
            "n_notes": total,
        }
        _write_json(args.out, report)
        print(f"error rate {aggregate:.4f} over {total} notes")
        return 0
    if args.params is None or args.corpus is None:
        parser.error("eval needs either --transcriptions with --truth, or --params with --corpus")
    config = _model_config(parser, args.model)
    params = load_params(args.params)
    corpus = Corpus.load(args.corpus)
    plain = config.plain()
    report = {
        "model": config.name,
        "cross_entropy": cross_entropy(plain, params, corpus),
        "cross_entropy_with_initial": cross_entropy(
            plain, params, corpus, count_initial_symbol=True
        ),
        "n_pieces": len(corpus.pieces),
    }
    _write_json(args.out, report)
    print(f"cross entropy {report['cross_entropy']:.4f} bits/symbol")
    return 0


def cmd_study(args, parser) -> int:
    settings = _Settings(args)
    config = _model_config(parser, args.model)
    if config.shift or config.division or config.bayesian:
        parser.error("study-sparseness works on plain model variants")
    params = load_params(args.params)
    corpus = Corpus.load(args.corpus)
    alpha = float(settings.get("alpha", DEFAULT_CONCENTRATION, float))
    seed = settings.get("seed", None, int)
    seed = _fresh_seed() if seed is None else int(seed)
    rng = _derived_rng(seed, "sparseness")
    study = sparseness_study(config, params, corpus, alpha, args.n_samples, rng)
    out = {"model": config.name, "seed": seed, **study.to_dict()}
    _write_json(args.out, out)
    return 0


def _bench_one_seed(task):
    models, corpus, tp, seed, gibbs = task
    return benchmark(models, corpus, tp, [seed], gibbs)


def cmd_bench(args, parser) -> int:
    settings = _Settings(args)
    corpus = Corpus.load(args.corpus)
    train_corpus = Corpus.load(args.train_corpus) if args.train_corpus else corpus
    tempo = float(settings.get("tempo_bpm", DEFAULT_TEMPO_BPM, float))
    sigma = float(settings.get("sigma_t", DEFAULT_SIGMA_T, float))
    tp = TimingParams.from_bpm(tempo, sigma)
    alpha = float(settings.get("alpha", DEFAULT_CONCENTRATION, float))
    xi0 = float(settings.get("xi0", DEFAULT_NO_MODIFICATION_MASS, float))
    zeta0 = float(settings.get("zeta0", DEFAULT_NO_MODIFICATION_MASS, float))
    iterations = int(settings.get("iterations", DEFAULT_GIBBS_ITERATIONS, int))
    beam_flag = settings.get("beam_width", None, int)
    jobs = int(settings.get("jobs", 1, int))
    seeds = [int(s) for s in str(settings.get("seeds", "0", str)).split(",") if s != ""]
    epsilon = float(settings.get("epsilon", DEFAULT_EPSILON, float))
    smoothing = SmoothingConfig(epsilon=epsilon)

    models = {}
    for name in args.models.split(","):
        config = _model_config(parser, name.strip())
        params = estimate_params(train_corpus, config, smoothing, xi0, zeta0)
        if config.bayesian:
            models[config.name] = (
                config,
                assemble_hyperparams(params, config, alpha=alpha,
                                     no_shift_mass=xi0, identity_division_mass=zeta0),
            )
        else:
            models[config.name] = (config, params)

    gibbs = GibbsConfig(
        iterations=iterations,
        beam_width=None if beam_flag in (None, 0) else int(beam_flag),
    )
    if jobs > 1 and len(seeds) > 1:
        tasks = [(models, corpus, tp, s, gibbs) for s in seeds]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_seed = list(pool.map(_bench_one_seed, tasks))
        reports = _merge_seed_reports(per_seed, seeds)
    else:
        reports = benchmark(models, corpus, tp, seeds, gibbs)

    out = {
        "tempo_bpm": tempo,
        "sigma_t": sigma,
        "seeds": seeds,
        "models": [r.to_dict() for r in reports],
    }
    _write_json(args.out, out)
    failed = 0
    for r in reports:
        line = f"{r.model}: error {r.error_mean:.4f} +/- {r.error_sd:.4f} ({r.runtime_seconds:.1f} s)"
        if r.failures:
            line += f" [{len(r.failures)} failures]"
            failed += len(r.failures)
        print(line)
    return 1 if failed else 0


def _merge_seed_reports(per_seed, seeds):
    """Combine single-seed benchmark runs into the multi-seed aggregates."""
    from .evaluation import EvalReport

    merged = []
    for idx in range(len(per_seed[0])):
        rows = [chunk[idx] for chunk in per_seed]
        means = [r.error_mean for r in rows if np.isfinite(r.error_mean)]
        per_piece = {}
        for pid in rows[0].piece_ids:
            vals = [r.per_piece_error[pid] for r in rows if pid in r.per_piece_error]
            if vals:
                per_piece[pid] = float(np.mean(vals))
        merged.append(
            EvalReport(
                model=rows[0].model,
                seeds=tuple(seeds),
                piece_ids=rows[0].piece_ids,
                per_piece_error=per_piece,
                error_mean=float(np.mean(means)) if means else float("nan"),
                error_sd=float(np.std(means, ddof=1)) if len(means) > 1 else 0.0,
                runtime_seconds=float(sum(r.runtime_seconds for r in rows)),
                n_transcriptions=sum(r.n_transcriptions for r in rows),
                failures=tuple(f for r in rows for f in r.failures),
            )
        )
    return merged


def _add_common(sp, *names):
    if "config" in names:
        sp.add_argument("--config", help="JSON file of default settings")
    if "seed" in names:
        sp.add_argument("--seed", type=int, help="RNG seed (recorded in output when omitted)")
    if "jobs" in names:
        sp.add_argument("--jobs", type=int, help="parallel workers (default 1)")
    if "timing" in names:
        sp.add_argument("--tempo-bpm", type=float, dest="tempo_bpm")
        sp.add_argument("--sigma-t", type=float, dest="sigma_t", help="onset noise SD in seconds")
    if "gibbs" in names:
        sp.add_argument("--alpha", type=float, help="Dirichlet concentration")
        sp.add_argument("--iterations", type=int, help="Gibbs iterations")
        sp.add_argument("--beam-width", type=int, dest="beam_width",
                        help="beam width; 0 forces exact inference")
        sp.add_argument("--xi0", type=float, help="preset mass on the zero shift")
        sp.add_argument("--zeta0", type=float, help="preset mass on the identity division")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rhythmscribe",
        description="Rhythm transcription: Markov score models over noisy onset times.",
        epilog=f"Settings resolve as: flag > {ENV_PREFIX}<KEY> env var > --config file > default.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", help="normalize raw onset lists into a corpus")
    sp.add_argument("input", help="raw JSON: list of {id, onsets[, meter]} or {pieces: [...]}")
    sp.add_argument("--out", required=True)
    sp.add_argument("--bar-length", type=int, default=8, dest="bar_length")
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", help="estimate a generic model from a corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--model", required=True, help="model name, e.g. notemm1, metmm2b, patmm1")
    sp.add_argument("--epsilon", type=float, help="additive smoothing")
    sp.add_argument("--pattern-interpolation", type=float, dest="pattern_interpolation")
    sp.add_argument("--xi0", type=float)
    sp.add_argument("--zeta0", type=float)
    sp.add_argument("--out", required=True)
    _add_common(sp, "config")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("synth", help="render a corpus as noisy performances")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    _add_common(sp, "config", "seed", "timing")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("transcribe", help="decode performances into scores")
    sp.add_argument("--performances", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--params", required=True, help="trained params JSON")
    sp.add_argument("--out", required=True)
    _add_common(sp, "config", "seed", "jobs", "timing", "gibbs")
    sp.set_defaults(func=cmd_transcribe)

    sp = sub.add_parser("eval", help="error rate of transcriptions, or corpus cross entropy")
    sp.add_argument("--transcriptions")
    sp.add_argument("--truth", help="ground-truth corpus JSON")
    sp.add_argument("--model", default="notemm1")
    sp.add_argument("--params")
    sp.add_argument("--corpus")
    sp.add_argument("--out", required=True)
    _add_common(sp, "config")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("study-sparseness", help="entropy populations: pieces vs model samples")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--params", required=True)
    sp.add_argument("--n-samples", type=int, default=200, dest="n_samples")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--out", required=True)
    _add_common(sp, "config", "seed")
    sp.set_defaults(func=cmd_study)

    sp = sub.add_parser("bench", help="error rates and runtimes across model variants")
    sp.add_argument("--corpus", required=True, help="ground-truth corpus to synthesize from")
    sp.add_argument("--train-corpus", dest="train_corpus",
                    help="corpus for generic-model training (default: --corpus)")
    sp.add_argument("--models", required=True, help="comma-separated model names")
    sp.add_argument("--seeds", help="comma-separated synthesis/Gibbs seeds (default 0)")
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--out", required=True)
    _add_common(sp, "config", "jobs", "timing", "gibbs")
    sp.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except ValueError as exc:
        # invalid settings or data (bad masses, non-positive sigma, ...)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
