"""Command line interface.

Subcommands: ``synth`` (bundled synthetic corpus), ``embed`` (precompute an
embedding cache), ``score`` (candidate vs reference), ``validate`` (the
transform grid), and ``fad`` (distance between two caches).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .embed import read_cache, write_cache
from .errors import ApaError, NumericalError
from .perturb import TRANSFORM_LABELS
from .pipeline import (
    RunConfig,
    SongStore,
    _embed_pairs_streaming,
    _open_embedder,
    _sample_refs,
    _set_fingerprint,
    _stage_rng,
    _STAGE_SAMPLE_REFERENCE,
    compute_apa,
    load_manifest,
    run_validation,
)
from .stats import fit_gaussian, frechet_distance
from .synth import generate_corpus

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems instead of exiting with code 2."""

    def error(self, message):
        raise _UsageError(message)


def _add_run_options(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--regime", default="L0", help="PP P0 P1 P2 L0 L1 L2")
    p.add_argument("--projection", default="NP", help="NP, PCA100, or PCA10")
    p.add_argument("--windows", type=int, default=10_000, help="windows per set")
    p.add_argument("--duration", type=float, default=5.0, help="window length in seconds")
    p.add_argument("--embedder", default="builtin", help="'builtin' or 'bridge'")
    p.add_argument("--bridge-cmd", default=None,
                   help="external embedder command (with --embedder bridge)")


def _config_from(args) -> RunConfig:
    return RunConfig(
        regime=args.regime,
        embedder=args.embedder,
        bridge_cmd=args.bridge_cmd,
        projection=args.projection,
        window_duration_s=args.duration,
        n_windows=args.windows,
        seed=args.seed,
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="apa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the bundled synthetic corpus")
    p.add_argument("out_dir")
    p.add_argument("--songs", type=int, default=10)
    p.add_argument("--song-duration", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("embed", help="embed a manifest's matched pairs into a cache")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="cache file to write")
    _add_run_options(p)

    p = sub.add_parser("score", help="compute adherence of candidate vs reference")
    p.add_argument("reference")
    p.add_argument("candidate")
    p.add_argument("--out", default=None, help="write the JSON report here")
    _add_run_options(p)

    p = sub.add_parser("validate", help="run the transform grid on a manifest")
    p.add_argument("manifest")
    p.add_argument("--transforms", default="TRUE,NOISE,TS,PS,TPS,SUBS",
                   help=f"comma-separated subset of {','.join(TRANSFORM_LABELS)}")
    p.add_argument("--ext-cmd", default=None, help="command for the EXT transform")
    p.add_argument("--out", default=None,
                   help="base path; writes <out>.csv and <out>.json")
    _add_run_options(p)

    p = sub.add_parser("fad", help="distance between two embedding caches")
    p.add_argument("cache_a")
    p.add_argument("cache_b")
    p.add_argument("--out", default=None)
    return parser


def _cmd_synth(args) -> int:
    manifest = generate_corpus(
        args.out_dir, n_songs=args.songs, duration_s=args.song_duration, seed=args.seed
    )
    print(manifest)
    return EXIT_OK


def _cmd_embed(args) -> int:
    cfg = _config_from(args)
    manifest = load_manifest(args.manifest)
    embedder = _open_embedder(cfg)
    try:
        store = SongStore(manifest)
        refs = _sample_refs(
            manifest, store, cfg.n_windows, cfg.window_duration_s,
            _stage_rng(cfg.seed, _STAGE_SAMPLE_REFERENCE),
        )
        fingerprint = _set_fingerprint(cfg, manifest.digest, "reference", embedder.spec.id)
        embeddings = _embed_pairs_streaming(
            lambda i: store.window_pair(refs[i]), len(refs), cfg, embedder, fingerprint
        )
    finally:
        embedder.close()
    write_cache(embeddings, args.out)
    print(json.dumps({
        "cache": args.out,
        "windows": embeddings.n,
        "dim": embeddings.dim,
        "embedder": embeddings.embedder.id,
        "fingerprint": embeddings.source_fingerprint,
    }, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_score(args) -> int:
    report = compute_apa(args.reference, args.candidate, _config_from(args))
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _cmd_validate(args) -> int:
    transforms = [t.strip().upper() for t in args.transforms.split(",") if t.strip()]
    report = run_validation(
        args.manifest, transforms, [_config_from(args)], ext_command=args.ext_cmd
    )
    csv_text = report.to_csv()
    if args.out:
        Path(str(args.out) + ".csv").write_text(csv_text)
        Path(str(args.out) + ".json").write_text(report.to_json() + "\n")
    else:
        sys.stdout.write(csv_text)
    if report.errors:
        for err in report.errors:
            print(f"warning: {err['transform']} failed: {err['message']}", file=sys.stderr)
    return EXIT_OK


def _cmd_fad(args) -> int:
    a = read_cache(args.cache_a)
    b = read_cache(args.cache_b)
    value = frechet_distance(fit_gaussian(a), fit_gaussian(b))
    text = json.dumps({
        "fad": value,
        "cache_a": args.cache_a,
        "cache_b": args.cache_b,
        "n_a": a.n,
        "n_b": b.n,
        "dim": a.dim,
    }, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "embed": _cmd_embed,
    "score": _cmd_score,
    "validate": _cmd_validate,
    "fad": _cmd_fad,
}


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ApaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
