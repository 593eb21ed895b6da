"""End-to-end scoring: manifests, window sampling, embedding, reports.

A pair manifest is UTF-8 JSON:

    {
      "version": 1,
      "sample_rate": 48000,
      "songs": [
        {"id": "song-00",
         "context": ["songs/song-00/pad.wav", "songs/song-00/bass.wav"],
         "stem": "songs/song-00/stem.wav"},
        ...
      ]
    }

Relative paths resolve against the manifest's directory. Context files are
summed at unity gain before windowing. One global seed feeds independent
per-stage random streams (reference sampling, candidate sampling,
mismatching, transform parameters), so no stage's consumption can perturb
another stage's draws.

Environment: APA_CACHE_DIR overrides the embedding-cache location,
APA_BRIDGE_TIMEOUT_S the bridge timeout, APA_WORKERS the worker count.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, Window, WindowPair, load_audio, resample
from .dynamics import MIX_REGIMES, mix
from .embed import (
    BridgeClient,
    BuiltinEmbedder,
    EmbeddingSet,
    read_cache,
    write_cache,
)
from .errors import (
    ApaError,
    EmptyInput,
    GateFallbackWarning,
    ManifestError,
    SongExcludedWarning,
    SongTooShort,
)
from .perturb import Transform, add_noise, external_transform, mismatch_permutation, \
    pitch_shift, time_pitch_shift, time_shift
from .stats import ApaResult, apa_score, fit_gaussian, fit_pca, project

# per-stage random stream tags (fed to SeedSequence together with the run seed)
_STAGE_SAMPLE_REFERENCE = 1
_STAGE_SAMPLE_CANDIDATE = 2
_STAGE_MISMATCH = 3
_STAGE_TRANSFORM = 4

SCHEMA_VERSION = 1


def _stage_rng(seed: int, stage: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), stage)))


def _workers() -> int:
    # results are gathered by index, so the count never changes the output;
    # serial wins on small machines where the GIL dominates
    env = os.environ.get("APA_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


# --- manifest -------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestSong:
    id: str
    context: tuple[Path, ...]
    stem: Path


@dataclass(frozen=True)
class PairManifest:
    version: int
    sample_rate: int
    songs: tuple[ManifestSong, ...]
    base_dir: Path
    digest: str

    def song(self, song_id: str) -> ManifestSong:
        for s in self.songs:
            if s.id == song_id:
                return s
        raise KeyError(song_id)


def load_manifest(path: str | Path) -> PairManifest:
    """Parse and validate a pair manifest; all referenced files must exist."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text("utf-8"))
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc

    if not isinstance(raw, dict) or "version" not in raw:
        raise ManifestError(f"manifest {path} lacks the required version field")
    if raw["version"] != 1:
        raise ManifestError(f"manifest version {raw['version']!r} not supported (expected 1)")
    sample_rate = int(raw.get("sample_rate", 48000))
    if sample_rate <= 0:
        raise ManifestError("manifest sample_rate must be positive")

    base = path.parent
    songs = []
    seen = set()
    digest_parts = [json.dumps(raw, sort_keys=True)]
    for entry in raw.get("songs", []):
        try:
            song_id = str(entry["id"])
            context = [base / p for p in entry["context"]]
            stem = base / entry["stem"]
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"malformed song entry {entry!r}") from exc
        if song_id in seen:
            raise ManifestError(f"duplicate song id {song_id!r}")
        seen.add(song_id)
        if not context:
            raise ManifestError(f"song {song_id!r} has no context files")
        for p in [*context, stem]:
            if not Path(p).is_file():
                raise ManifestError(f"song {song_id!r} references missing file {p}")
            digest_parts.append(_file_digest(Path(p)))
        songs.append(ManifestSong(id=song_id, context=tuple(context), stem=Path(stem)))
    if not songs:
        raise ManifestError(f"manifest {path} lists no songs")

    digest = hashlib.sha256("\n".join(digest_parts).encode()).hexdigest()[:16]
    return PairManifest(
        version=1,
        sample_rate=sample_rate,
        songs=tuple(songs),
        base_dir=base,
        digest=digest,
    )


_digest_memo: dict[tuple[str, int, int], str] = {}


def _file_digest(path: Path) -> str:
    st = path.stat()
    key = (str(path), st.st_size, st.st_mtime_ns)
    if key not in _digest_memo:
        _digest_memo[key] = hashlib.sha256(path.read_bytes()).hexdigest()
    return _digest_memo[key]


class SongStore:
    """Bounded cache of decoded songs, canonicalized to the manifest rate.

    Context files are summed at unity gain; context and stem are truncated
    to their common length.
    """

    def __init__(self, manifest: PairManifest, max_songs: int = 64):
        self.manifest = manifest
        self.max_songs = max_songs
        self._cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def _load(self, song_id: str) -> tuple[np.ndarray, np.ndarray]:
        if song_id in self._cache:
            return self._cache[song_id]
        song = self.manifest.song(song_id)
        rate = self.manifest.sample_rate
        parts = [resample(load_audio(p), rate).samples for p in song.context]
        n_ctx = min(p.size for p in parts)
        context = np.zeros(n_ctx, dtype=np.float64)
        for p in parts:
            context += p[:n_ctx]
        stem = resample(load_audio(song.stem), rate).samples
        n = min(n_ctx, stem.size)
        value = (context[:n].astype(np.float32), stem[:n].copy())
        if len(self._cache) >= self.max_songs:
            self._cache.pop(next(iter(self._cache)))
        self._cache[song_id] = value
        return value

    def length(self, song_id: str) -> int:
        return self._load(song_id)[0].size

    def window_pair(self, ref: "_WindowRef", stem_ref: "_WindowRef | None" = None) -> WindowPair:
        rate = self.manifest.sample_rate
        ctx_samples, _ = self._load(ref.song_id)
        context = Window(
            buffer=AudioBuffer(ctx_samples[ref.start:ref.start + ref.count].copy(), rate),
            source_song_id=ref.song_id,
            source_offset_s=ref.start / rate,
            duration_s=ref.count / rate,
        )
        sref = stem_ref or ref
        _, stem_samples = self._load(sref.song_id)
        stem = Window(
            buffer=AudioBuffer(stem_samples[sref.start:sref.start + sref.count].copy(), rate),
            source_song_id=sref.song_id,
            source_offset_s=sref.start / rate,
            duration_s=sref.count / rate,
        )
        return WindowPair(context=context, stem=stem, matched=stem_ref is None)


@dataclass(frozen=True)
class _WindowRef:
    song_id: str
    start: int  # samples
    count: int  # samples


def _sample_refs(
    manifest: PairManifest,
    store: SongStore,
    n: int,
    duration_s: float,
    rng: np.random.Generator,
) -> list[_WindowRef]:
    rate = manifest.sample_rate
    count = int(round(duration_s * rate))
    eligible = []
    for song in manifest.songs:
        length = store.length(song.id)
        if length >= count:
            eligible.append((song.id, length))
        else:
            warnings.warn(
                f"song {song.id!r} is shorter than {duration_s}s and was excluded",
                SongExcludedWarning,
                stacklevel=3,
            )
    if not eligible:
        raise SongTooShort(f"no song is at least {duration_s}s long")

    refs = []
    for _ in range(n):
        song_id, length = eligible[int(rng.integers(len(eligible)))]
        start = int(rng.integers(0, length - count + 1))
        refs.append(_WindowRef(song_id=song_id, start=start, count=count))
    return refs


def sample_window_pairs(
    manifest: PairManifest | str | Path,
    n: int,
    duration_s: float,
    seed: int,
) -> list[WindowPair]:
    """Sample n matched window pairs, song uniform, offset uniform; seeded."""
    if not isinstance(manifest, PairManifest):
        manifest = load_manifest(manifest)
    store = SongStore(manifest)
    rng = _stage_rng(seed, _STAGE_SAMPLE_REFERENCE)
    refs = _sample_refs(manifest, store, n, duration_s, rng)
    return [store.window_pair(r) for r in refs]


# --- run configuration -----------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a pipeline run besides the data itself."""

    regime: str = "L0"
    embedder: str = "builtin"
    bridge_cmd: str | None = None
    projection: str = "NP"
    window_duration_s: float = 5.0
    n_windows: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.regime not in MIX_REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.projection.upper() not in ("NP", "PCA100", "PCA10"):
            raise ValueError(f"unknown projection {self.projection!r}")
        if self.n_windows < 2:
            raise ValueError("n_windows must be at least 2")
        if self.window_duration_s <= 0:
            raise ValueError("window_duration_s must be positive")
        if self.embedder == "bridge" and not self.bridge_cmd:
            raise ValueError("bridge embedder needs bridge_cmd")
        object.__setattr__(self, "projection", self.projection.upper())

    def as_dict(self) -> dict:
        return {
            "regime": self.regime,
            "embedder": self.embedder,
            "bridge_cmd": self.bridge_cmd,
            "projection": self.projection,
            "window_duration_s": self.window_duration_s,
            "n_windows": self.n_windows,
            "seed": self.seed,
        }

    def slug(self) -> str:
        emb = "builtin" if self.embedder == "builtin" else "bridge"
        return f"{self.regime}-{self.projection}-{emb}-w{self.n_windows}-s{self.seed}"


def _open_embedder(cfg: RunConfig):
    if cfg.embedder == "builtin":
        return BuiltinEmbedder()
    if cfg.embedder == "bridge":
        return BridgeClient(cfg.bridge_cmd)
    raise ValueError(f"unknown embedder {cfg.embedder!r} (use 'builtin' or 'bridge')")


# --- per-window processing ----------------------------------------------------------


def _transform_plan(transform: Transform | None, n: int, rng: np.random.Generator):
    """Pre-draw per-window transform parameters so workers stay deterministic."""
    if transform is None or transform.label in ("TRUE", "SUBS"):
        return [None] * n
    plan = []
    for _ in range(n):
        if transform.label == "NOISE":
            plan.append({"seed": int(rng.integers(0, 2**63 - 1))})
        elif transform.label == "TS":
            lo, hi = transform.shift_range_s
            shift = float(rng.uniform(lo, hi)) * (1.0 if rng.integers(2) else -1.0)
            plan.append({"shift_s": shift})
        elif transform.label == "PS":
            plan.append({"semitones": _draw_semitones(transform, rng)})
        elif transform.label == "TPS":
            lo, hi = transform.shift_range_s
            shift = float(rng.uniform(lo, hi)) * (1.0 if rng.integers(2) else -1.0)
            plan.append({"shift_s": shift, "semitones": _draw_semitones(transform, rng)})
        elif transform.label == "EXT":
            plan.append({})
        else:
            raise ValueError(f"unknown transform {transform.label!r}")
    return plan


def _draw_semitones(transform: Transform, rng: np.random.Generator) -> int:
    lo, hi = transform.semitone_range
    magnitude = int(rng.integers(lo, hi + 1))
    return magnitude if rng.integers(2) else -magnitude


def _apply_transform(pair: WindowPair, transform: Transform | None, params) -> WindowPair:
    if transform is None or transform.label in ("TRUE", "SUBS"):
        return pair
    stem = pair.stem
    if transform.label == "NOISE":
        stem = add_noise(stem, params["seed"], offset_db=transform.noise_offset_db)
    elif transform.label == "TS":
        stem = time_shift(stem, params["shift_s"], range_s=transform.shift_range_s)
    elif transform.label == "PS":
        stem = pitch_shift(stem, params["semitones"])
    elif transform.label == "TPS":
        stem = time_pitch_shift(
            stem, params["shift_s"], params["semitones"],
            shift_range_s=transform.shift_range_s,
        )
    elif transform.label == "EXT":
        stem = external_transform(stem, transform.command)
    return WindowPair(context=pair.context, stem=stem, matched=pair.matched)


def _cache_dir() -> Path | None:
    env = os.environ.get("APA_CACHE_DIR")
    if env:
        base = Path(env)
    else:
        xdg = os.environ.get("XDG_CACHE_HOME")
        base = (Path(xdg) if xdg else Path.home() / ".cache") / "apa-metrics"
    try:
        base.mkdir(parents=True, exist_ok=True)
    except OSError:
        return None  # caching is an optimization, never a requirement
    return base


def _embed_pairs_streaming(
    make_pair,
    n: int,
    cfg: RunConfig,
    embedder,
    fingerprint: str,
    transform: Transform | None = None,
    plan=None,
) -> EmbeddingSet:
    """Mix, embed, and collect rows by index; optionally cached on disk."""
    cache_dir = _cache_dir()
    cache_path = None
    if cache_dir is not None:
        cache_path = cache_dir / f"{fingerprint}.apae"
        if cache_path.is_file():
            try:
                cached = read_cache(cache_path)
                if cached.source_fingerprint == fingerprint:
                    return cached
            except (ApaError, OSError):
                pass  # unreadable cache entries are recomputed, not fatal

    plan = plan or [None] * n
    input_rate = embedder.spec.input_rate

    def process(i: int) -> AudioBuffer:
        pair = _apply_transform(make_pair(i), transform, plan[i])
        mixed = mix(pair, cfg.regime)
        if mixed.sample_rate != input_rate:
            mixed = resample(mixed, input_rate)
        return mixed

    rows = np.empty((n, embedder.spec.dim), dtype=np.float32)
    workers = _workers()
    if isinstance(embedder, BuiltinEmbedder) and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for i, row in enumerate(pool.map(
                lambda i: embedder.embed_batch([process(i)])[0], range(n), chunksize=8
            )):
                rows[i] = row
    else:
        batch = 32
        for start in range(0, n, batch):
            idx = range(start, min(start + batch, n))
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    mixes = list(pool.map(process, idx))
            else:
                mixes = [process(i) for i in idx]
            rows[start:start + len(mixes)] = embedder.embed_batch(mixes)

    out = EmbeddingSet(
        vectors=rows,
        embedder=embedder.spec,
        regime_label=cfg.regime,
        window_duration_s=cfg.window_duration_s,
        source_fingerprint=fingerprint,
    )
    if cache_path is not None:
        tmp = cache_path.with_suffix(f".tmp{os.getpid()}")
        try:
            write_cache(out, tmp)
            os.replace(tmp, cache_path)  # atomic against concurrent readers
        except OSError:
            tmp.unlink(missing_ok=True)
    return out


def _set_fingerprint(cfg: RunConfig, manifest_digest: str, role: str,
                     embedder_id: str, transform_label: str | None = None) -> str:
    from . import __version__

    blob = json.dumps({
        "config": cfg.as_dict(),
        "manifest": manifest_digest,
        "role": role,
        "embedder_id": embedder_id,
        "transform": transform_label,
        "schema": SCHEMA_VERSION,
        "version": __version__,  # code changes must not serve stale embeddings
    }, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


# --- reports -------------------------------------------------------------------------


@dataclass
class ApaReport:
    """Scoring outcome plus enough provenance to reproduce it."""

    fingerprint: str
    config: dict
    result: ApaResult
    counts: dict
    wall_clock_s: float
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": SCHEMA_VERSION,
            "fingerprint": self.fingerprint,
            "config": self.config,
            "result": self.result.as_dict(),
            "counts": self.counts,
            "wall_clock_s": self.wall_clock_s,
            "warnings": self.warnings,
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ApaReport":
        raw = json.loads(text)
        return cls(
            fingerprint=raw["fingerprint"],
            config=raw["config"],
            result=ApaResult.from_dict(raw["result"]),
            counts=raw["counts"],
            wall_clock_s=raw["wall_clock_s"],
            warnings=list(raw["warnings"]),
        )


def _summarize_warnings(caught: list[warnings.WarningMessage]) -> list[str]:
    counts: dict[str, int] = {}
    for w in caught:
        key = f"{w.category.__name__}: {w.message}"
        counts[key] = counts.get(key, 0) + 1
    out = []
    for key in sorted(counts):
        n = counts[key]
        out.append(key if n == 1 else f"{key} (x{n})")
    return out


# --- end-to-end scoring ------------------------------------------------------------


def _reference_sets(
    reference: PairManifest, cfg: RunConfig, embedder
) -> tuple[EmbeddingSet, EmbeddingSet]:
    """Embeddings of the matched reference R and its re-paired copy R'."""
    store = SongStore(reference)
    refs = _sample_refs(
        reference, store, cfg.n_windows, cfg.window_duration_s,
        _stage_rng(cfg.seed, _STAGE_SAMPLE_REFERENCE),
    )
    song_ids = [r.song_id for r in refs]
    perm = mismatch_permutation(song_ids, song_ids, _stage_rng(cfg.seed, _STAGE_MISMATCH))

    emb_id = embedder.spec.id
    set_r = _embed_pairs_streaming(
        lambda i: store.window_pair(refs[i]), len(refs), cfg, embedder,
        _set_fingerprint(cfg, reference.digest, "reference", emb_id),
    )
    set_rp = _embed_pairs_streaming(
        lambda i: store.window_pair(refs[i], stem_ref=refs[int(perm[i])]),
        len(refs), cfg, embedder,
        _set_fingerprint(cfg, reference.digest, "mismatched-reference", emb_id),
    )
    return set_r, set_rp


def _candidate_set(
    manifest: PairManifest, cfg: RunConfig, embedder, transform: Transform | None
) -> EmbeddingSet:
    """Candidate embeddings sampled on their own stream, stems optionally transformed."""
    store = SongStore(manifest)
    refs = _sample_refs(
        manifest, store, cfg.n_windows, cfg.window_duration_s,
        _stage_rng(cfg.seed, _STAGE_SAMPLE_CANDIDATE),
    )
    stem_refs = list(refs)
    if transform is not None and transform.label == "SUBS":
        ids = [r.song_id for r in refs]
        perm = mismatch_permutation(ids, ids, _stage_rng(cfg.seed, _STAGE_TRANSFORM))
        stem_refs = [refs[int(j)] for j in perm]
    plan = _transform_plan(transform, len(refs), _stage_rng(cfg.seed, _STAGE_TRANSFORM))
    fp = _set_fingerprint(cfg, manifest.digest, "candidate", embedder.spec.id,
                          transform.label if transform else None)

    def make_pair(i: int) -> WindowPair:
        if stem_refs[i] is refs[i]:
            return store.window_pair(refs[i])
        return store.window_pair(refs[i], stem_ref=stem_refs[i])

    return _embed_pairs_streaming(
        make_pair, len(refs), cfg, embedder, fp, transform=transform, plan=plan
    )


def _embed_three_sets(
    reference: PairManifest,
    candidate,
    cfg: RunConfig,
    embedder,
    candidate_transform: Transform | None,
) -> tuple[EmbeddingSet, EmbeddingSet, EmbeddingSet, dict]:
    """Embeddings for R, R', and C under one config and one embedder."""
    set_r, set_rp = _reference_sets(reference, cfg, embedder)

    if isinstance(candidate, list):
        pairs = candidate
        fp_c = _set_fingerprint(
            cfg, "prebuilt-pairs", "candidate", embedder.spec.id,
            candidate_transform.label if candidate_transform else None,
        )
        set_c = _embed_pairs_streaming(
            lambda i: pairs[i], len(pairs), cfg, embedder, fp_c,
            transform=candidate_transform,
            plan=_transform_plan(candidate_transform, len(pairs),
                                 _stage_rng(cfg.seed, _STAGE_TRANSFORM)),
        )
        n_candidate = len(pairs)
    else:
        set_c = _candidate_set(candidate, cfg, embedder, candidate_transform)
        n_candidate = set_c.n

    counts = {
        "reference_windows": set_r.n,
        "mismatched_windows": set_rp.n,
        "candidate_windows": n_candidate,
    }
    return set_r, set_rp, set_c, counts


def _score_sets(
    set_r: EmbeddingSet, set_rp: EmbeddingSet, set_c: EmbeddingSet, cfg: RunConfig
) -> ApaResult:
    if cfg.projection != "NP":
        projection = fit_pca(set_r, cfg.projection)
        set_r = project(projection, set_r)
        set_rp = project(projection, set_rp)
        set_c = project(projection, set_c)
    return apa_score(
        fit_gaussian(set_c), fit_gaussian(set_r), fit_gaussian(set_rp)
    )


def compute_apa(
    reference: PairManifest | str | Path,
    candidate: PairManifest | str | Path | list[WindowPair],
    cfg: RunConfig,
    candidate_transform: Transform | None = None,
) -> ApaReport:
    """Score a candidate against a reference manifest.

    The reference is sampled into matched pairs R and re-paired into R'.
    The candidate is either a manifest (sampled on an independent stream,
    optionally with a stem transform applied) or a pre-built list of window
    pairs (for generated stems aligned to known contexts). PCA projections
    are fitted on R's embeddings only and applied unchanged to R' and C.
    """
    t0 = time.perf_counter()
    if not isinstance(reference, PairManifest):
        reference = load_manifest(reference)
    if not isinstance(candidate, (PairManifest, list)):
        candidate = load_manifest(candidate)

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        embedder = _open_embedder(cfg)
        try:
            set_r, set_rp, set_c, counts = _embed_three_sets(
                reference, candidate, cfg, embedder, candidate_transform
            )
        finally:
            embedder.close()
        result = _score_sets(set_r, set_rp, set_c, cfg)

    warning_lines = _summarize_warnings(caught)
    if result.clipped:
        warning_lines.append(
            f"score clipped from {result.apa_raw:.6g} to {result.apa:.6g}"
        )

    cand_digest = "prebuilt-pairs" if isinstance(candidate, list) else candidate.digest
    fingerprint = hashlib.sha256(json.dumps({
        "config": cfg.as_dict(),
        "reference": reference.digest,
        "candidate": cand_digest,
        "transform": candidate_transform.label if candidate_transform else None,
        "embedder_id": set_r.embedder.id,
        "schema": SCHEMA_VERSION,
    }, sort_keys=True).encode()).hexdigest()[:24]

    return ApaReport(
        fingerprint=fingerprint,
        config={
            **cfg.as_dict(),
            "embedder_id": set_r.embedder.id,
            "transform": candidate_transform.label if candidate_transform else None,
        },
        result=result,
        counts=counts,
        wall_clock_s=time.perf_counter() - t0,
        warnings=warning_lines,
    )


# --- validation grid ---------------------------------------------------------------


@dataclass
class ValidationRow:
    config_id: str
    regime: str
    projection: str
    embedder: str
    transform: str
    invariant_class: bool
    result: ApaResult

    def as_dict(self) -> dict:
        return {
            "config_id": self.config_id,
            "regime": self.regime,
            "projection": self.projection,
            "embedder": self.embedder,
            "transform": self.transform,
            "invariant_class": self.invariant_class,
            **self.result.as_dict(),
        }


@dataclass
class ValidationReport:
    """APA per (config, transform) plus per-config CLES over the two groups."""

    rows: list[ValidationRow]
    cles: list[dict]
    errors: list[dict]
    wall_clock_s: float

    CSV_COLUMNS = (
        "config_id", "regime", "projection", "embedder", "transform",
        "invariant_class", "apa", "fad_cr", "fad_crp", "fad_rrp", "clipped",
    )

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(self.CSV_COLUMNS)
        for row in self.rows:
            d = row.as_dict()
            writer.writerow([
                d["config_id"], d["regime"], d["projection"], d["embedder"],
                d["transform"],
                "true" if d["invariant_class"] else "false",
                repr(d["apa"]), repr(d["fad_cr"]), repr(d["fad_crp"]),
                repr(d["fad_rrp"]),
                "true" if d["clipped"] else "false",
            ])
        return out.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": SCHEMA_VERSION,
            "rows": [r.as_dict() for r in self.rows],
            "cles": self.cles,
            "errors": self.errors,
            "wall_clock_s": self.wall_clock_s,
        }, indent=2, sort_keys=True)

    def apa_by_transform(self, config_id: str | None = None) -> dict[str, float]:
        return {
            r.transform: r.result.apa
            for r in self.rows
            if config_id is None or r.config_id == config_id
        }


def run_validation(
    manifest: PairManifest | str | Path,
    transforms: list[str | Transform],
    grid: list[RunConfig],
    ext_command: str | None = None,
) -> ValidationReport:
    """Transform sampled candidate stems and score each against the untouched R.

    Per config: R and R' are embedded once; each transform builds its own
    candidate set from an independently sampled candidate draw. Individual
    transform failures are recorded, not fatal.
    """
    from .stats import cles as cles_fn

    t0 = time.perf_counter()
    if not transforms:
        raise EmptyInput("transform list is empty")
    if not grid:
        raise EmptyInput("config grid is empty")
    if not isinstance(manifest, PairManifest):
        manifest = load_manifest(manifest)

    resolved = [
        t if isinstance(t, Transform) else Transform.from_label(t, command=ext_command)
        for t in transforms
    ]

    rows: list[ValidationRow] = []
    cles_rows: list[dict] = []
    errors: list[dict] = []
    for cfg in grid:
        config_id = cfg.slug()
        embedder = _open_embedder(cfg)
        try:
            with warnings.catch_warnings():
                # one report per category is plenty over thousands of windows
                warnings.simplefilter("once", GateFallbackWarning)
                warnings.simplefilter("once", SongExcludedWarning)
                # R and R' are shared across transforms; C is built per transform
                set_r, set_rp = _reference_sets(manifest, cfg, embedder)
                for transform in resolved:
                    try:
                        set_c = _candidate_set(manifest, cfg, embedder, transform)
                        result = _score_sets(set_r, set_rp, set_c, cfg)
                        rows.append(ValidationRow(
                            config_id=config_id,
                            regime=cfg.regime,
                            projection=cfg.projection,
                            embedder=embedder.spec.id,
                            transform=transform.label,
                            invariant_class=transform.invariant,
                            result=result,
                        ))
                    except ApaError as exc:
                        errors.append({
                            "config_id": config_id,
                            "transform": transform.label,
                            "error": type(exc).__name__,
                            "message": str(exc),
                        })
        finally:
            embedder.close()

        invariant = [r.result.apa for r in rows
                     if r.config_id == config_id and r.invariant_class]
        noninvariant = [r.result.apa for r in rows
                        if r.config_id == config_id and not r.invariant_class]
        entry = {
            "config_id": config_id,
            "n_invariant": len(invariant),
            "n_noninvariant": len(noninvariant),
            "cles": None,
        }
        if invariant and noninvariant:
            entry["cles"] = cles_fn(invariant, noninvariant)
        cles_rows.append(entry)

    return ValidationReport(
        rows=rows,
        cles=cles_rows,
        errors=errors,
        wall_clock_s=time.perf_counter() - t0,
    )
