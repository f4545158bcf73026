"""Batch evaluation: run configuration, scene sweep and report files.

Run configurations are INI-style key/value files (``configparser``)::

    [run]
    output_dir = results
    seed = 1
    estimators = CW, SC
    thresholds = -inf, 0        # CDR thresholds in dB
    spp_mode = oracle           # or: estimated
    num_speakers = 2
    exclude_seconds = 0.5
    workers = 1

    [stft]
    sample_rate = 16000
    window_ms = 32

    [coherence]
    alpha = 0.5
    beta = 2.2
    r = 0.18
    c = 343

    [geometry]
    r = 0.18
    mic_spacing = 0.012
    external = 0, 1, 0
    # file = mics.txt           (one "x, y, z" row per microphone, external last)
    # database = protodb.csv    (prototype database written by ``protodb``)
    grid_resolution = 5

    [sweep]                     # all ordered azimuth pairs x SNRs
    azimuths = -160, -120, -80, -40, 0, 40, 80, 120, 160
    snr_db = -5, 0, 5
    duration = 5
    noise = diffuse

    [scene office]              # explicit scenes, any number
    speakers = -40: speech-like, 80: talker.wav
    snr_db = 0
    duration = 5
    seed = 7

    [wav recording1]            # recorded mixtures, evaluated with estimated SPP
    files = rec_ch1.wav, rec_ch2.wav, rec_ch3.wav, rec_ch4.wav, rec_ext.wav
    azimuths = -40, 80
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import permutations
from pathlib import Path

import numpy as np
import scipy

from .doa import PrototypeDatabase, build_prototype_db
from .geometry import binaural_geometry, load_geometry
from .pipeline import PipelineSettings, estimated_labels, localize
from .scene import SceneSpec, render_scene
from .spatial_stats import CoherenceModel, default_pairs
from .stft import StftConfig, analyze, read_wav

__all__ = [
    "ConfigError",
    "WavScene",
    "RunConfig",
    "ResultRow",
    "EvalReport",
    "load_config",
    "parse_config",
    "sweep_scenes",
    "run",
    "emit_report",
]

logger = logging.getLogger(__name__)

DEFAULT_AZIMUTHS = tuple(range(-160, 161, 40))
DEFAULT_SNRS = (-5.0, 0.0, 5.0)


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class WavScene:
    name: str
    files: tuple
    azimuths: tuple


@dataclass
class RunConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    coherence: CoherenceModel = field(default_factory=CoherenceModel)
    settings: PipelineSettings = field(default_factory=PipelineSettings)
    scenes: list = field(default_factory=list)  # SceneSpec or WavScene
    output_dir: Path = Path("results")
    spp_mode: str = "oracle"
    seed: int = 0
    num_speakers: int | None = None
    exclude_seconds: float = 0.5
    grid_resolution: float = 5.0
    geometry: np.ndarray = field(default_factory=binaural_geometry)
    database: str | None = None
    workers: int = 1

    def __post_init__(self):
        if not self.settings.estimators:
            raise ConfigError("at least one estimator is required")
        for name in self.settings.estimators:
            if name not in ("CW", "SC"):
                raise ConfigError(f"unknown estimator {name!r}")
        if not self.settings.thresholds:
            raise ConfigError("threshold list must not be empty")
        if not self.scenes:
            raise ConfigError("at least one scene is required")
        if self.spp_mode not in ("oracle", "estimated"):
            raise ConfigError(f"spp_mode must be 'oracle' or 'estimated', got {self.spp_mode!r}")
        if self.spp_mode == "oracle" and any(isinstance(s, WavScene) for s in self.scenes):
            raise ConfigError("WAV scenes have no oracle labels; use spp_mode = estimated")
        if self.exclude_seconds < 0:
            raise ConfigError("exclude_seconds must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")


@dataclass
class ResultRow:
    scene: str
    estimator: str
    cdr_threshold_db: float
    snr_db: float
    mean_acc: float  # frames after the exclusion window
    frames: int
    mean_acc_all_frames: float
    frames_total: int
    mean_bins: float
    frame_file: str
    status: str = "ok"


@dataclass
class EvalReport:
    rows: list
    config: RunConfig
    frame_series: dict = field(default_factory=dict)  # scene -> list of per-frame dicts

    def summary(self, by_snr=True):
        """Frame-weighted mean ACC per (estimator, threshold[, snr])."""
        groups = {}
        for row in self.rows:
            if row.status != "ok":
                continue
            keys = [(row.estimator, row.cdr_threshold_db, "all")]
            if by_snr:
                keys.append((row.estimator, row.cdr_threshold_db, row.snr_db))
            for key in keys:
                g = groups.setdefault(key, [0, 0, 0.0, 0, 0.0])
                g[0] += 1
                g[1] += row.frames
                g[2] += row.mean_acc * row.frames
                g[3] += row.frames_total
                g[4] += row.mean_acc_all_frames * row.frames_total
        out = []
        for (est, thr, snr), (n, frames, acc, frames_all, acc_all) in groups.items():
            out.append(dict(
                estimator=est, cdr_threshold_db=thr, snr_db=snr, scenes=n, frames=frames,
                mean_acc=acc / frames if frames else float("nan"),
                mean_acc_all_frames=acc_all / frames_all if frames_all else float("nan"),
            ))
        order = {v: i for i, v in enumerate(self.config.settings.estimators)}
        out.sort(key=lambda d: (order[d["estimator"]], d["cdr_threshold_db"],
                                d["snr_db"] != "all",
                                0.0 if d["snr_db"] == "all" else float(d["snr_db"])))
        return out

    def mean_acc(self, estimator, threshold):
        for d in self.summary(by_snr=False):
            if d["estimator"] == estimator and d["cdr_threshold_db"] == threshold:
                return d["mean_acc"]
        raise KeyError((estimator, threshold))


def _floats(text):
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _names(text):
    return tuple(v.strip().upper() for v in text.split(",") if v.strip())


def _scene_seed(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def sweep_scenes(geometry, azimuths=DEFAULT_AZIMUTHS, snrs=DEFAULT_SNRS, duration=5.0,
                 seed=0, noise="diffuse", num_speakers=2):
    """All ordered tuples of distinct azimuths at every SNR, one seed each."""
    scenes = []
    for combo in permutations(azimuths, num_speakers):
        for snr in snrs:
            index = len(scenes)
            name = "az" + "_".join(f"{a:g}" for a in combo) + f"_snr{snr:g}"
            scenes.append(SceneSpec(geometry, [(float(a), "speech-like") for a in combo],
                                    noise=noise, snr_db=float(snr), duration=float(duration),
                                    seed=_scene_seed(seed, index), name=name))
    return scenes


def _parse_speakers(text, base_dir):
    speakers = []
    for item in text.split(","):
        if not item.strip():
            continue
        az, sep, source = item.partition(":")
        if not sep:
            raise ConfigError(f"speaker entry {item.strip()!r} must be 'azimuth: source'")
        source = source.strip() or "speech-like"
        if source != "speech-like":
            source = str((base_dir / source).resolve())
        speakers.append((float(az), source))
    return speakers


def parse_config(text: str, base_dir=".") -> RunConfig:
    """Build a :class:`RunConfig` from INI text; raises :class:`ConfigError`."""
    base_dir = Path(base_dir)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    try:
        return _build_config(parser, base_dir)
    except ConfigError:
        raise
    except (ValueError, KeyError, OSError) as exc:
        raise ConfigError(str(exc)) from exc


def _build_config(parser, base_dir):
    run_sec = parser["run"] if parser.has_section("run") else {}
    get = lambda sec, key, default: (parser.get(sec, key, fallback=default)
                                     if parser.has_section(sec) else default)

    stft = StftConfig.from_duration(float(get("stft", "sample_rate", 16000)),
                                    float(get("stft", "window_ms", 32)))
    model = CoherenceModel(float(get("coherence", "alpha", 0.5)), float(get("coherence", "beta", 2.2)),
                           float(get("coherence", "r", 0.18)), float(get("coherence", "c", 343.0)))
    geo_file = get("geometry", "file", None)
    if geo_file:
        geometry = load_geometry(base_dir / geo_file)
    else:
        external = _floats(get("geometry", "external", "0, 1, 0"))
        geometry = binaural_geometry(float(get("geometry", "r", model.r)),
                                     float(get("geometry", "mic_spacing", 0.012)), external)
    n_ch = len(geometry)
    num_head = n_ch - 1
    if num_head < 2 or num_head % 2:
        raise ConfigError(f"geometry needs an even number (>= 2) of head microphones plus one "
                          f"external microphone, got {n_ch} rows")
    database = get("geometry", "database", None)

    thresholds = _floats(run_sec.get("thresholds", "-inf, 0"))
    estimators = _names(run_sec.get("estimators", "CW, SC"))
    settings = PipelineSettings(
        tau_y=float(run_sec.get("tau_y", 0.25)),
        tau_u=float(run_sec.get("tau_u", 0.5)),
        spp_threshold=float(run_sec.get("spp_threshold", 0.5)),
        fmin=float(run_sec.get("fmin", 100.0)),
        fmax=float(run_sec.get("fmax", 8000.0)),
        thresholds=thresholds,
        estimators=estimators,
        mic_pairs=default_pairs(num_head),
        num_head=num_head,
        tolerance=float(run_sec.get("tolerance", 5.0)),
    )
    seed = int(run_sec.get("seed", 0))
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    num_speakers = run_sec.get("num_speakers")
    num_speakers = int(num_speakers) if num_speakers is not None else None

    scenes = []
    if parser.has_section("sweep"):
        sec = parser["sweep"]
        scenes += sweep_scenes(
            geometry,
            _floats(sec.get("azimuths", ", ".join(map(str, DEFAULT_AZIMUTHS)))),
            _floats(sec.get("snr_db", "-5, 0, 5")),
            float(sec.get("duration", 5.0)), seed, sec.get("noise", "diffuse"),
            int(sec.get("speakers", num_speakers or 2)))
    for name in parser.sections():
        kind, _, label = name.partition(" ")
        if kind == "scene":
            sec = parser[name]
            noise = sec.get("noise", "diffuse")
            scenes.append(SceneSpec(
                geometry, _parse_speakers(sec.get("speakers", ""), base_dir), noise=noise,
                snr_db=float(sec.get("snr_db", "0" if noise == "diffuse" else "inf")),
                duration=float(sec.get("duration", 5.0)),
                seed=int(sec.get("seed", _scene_seed(seed, 10**6 + len(scenes)))),
                name=label.strip() or f"scene{len(scenes)}"))
        elif kind == "wav":
            sec = parser[name]
            files = tuple(str((base_dir / f.strip()).resolve())
                          for f in sec.get("files", "").split(",") if f.strip())
            if not files:
                raise ConfigError(f"[{name}] lists no files")
            scenes.append(WavScene(label.strip() or f"wav{len(scenes)}", files,
                                   _floats(sec.get("azimuths", ""))))
        elif name not in ("run", "stft", "coherence", "geometry", "sweep"):
            raise ConfigError(f"unknown section [{name}]")
    for s in scenes:
        if isinstance(s, SceneSpec) and not s.speakers:
            raise ConfigError(f"scene {s.name!r} has no speakers")

    out = run_sec.get("output_dir", "results")
    return RunConfig(
        stft=stft, coherence=model, settings=settings, scenes=scenes,
        output_dir=(base_dir / out), spp_mode=run_sec.get("spp_mode", "oracle").strip(),
        seed=seed, num_speakers=num_speakers,
        exclude_seconds=float(run_sec.get("exclude_seconds", 0.5)),
        grid_resolution=float(get("geometry", "grid_resolution", 5.0)),
        geometry=geometry,
        database=str(base_dir / database) if database else None,
        workers=int(run_sec.get("workers", 1)),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path.parent)


def _prototype_db(config: RunConfig) -> PrototypeDatabase:
    if config.database:
        db = PrototypeDatabase.load(config.database)
        if db.num_bins != config.stft.num_bins:
            raise ConfigError("prototype database bin count does not match the STFT")
        return db
    num_head = config.settings.num_head
    return build_prototype_db(config.geometry[:num_head], config.grid_resolution, config.stft,
                              config.coherence.c)


def _scene_name(scene, index):
    return scene.name or f"scene{index:04d}"


def _evaluate_scene(args):
    """Localize one scene; returns (rows, frame series). Failures become error rows."""
    index, scene, config, db = args
    name = _scene_name(scene, index)
    settings = config.settings
    try:
        if isinstance(scene, WavScene):
            _, mixture = read_wav(list(scene.files), expected_rate=config.stft.sample_rate)
            truth = np.asarray(scene.azimuths, dtype=float)
            snr = float("nan")
        else:
            render = render_scene(scene, config.coherence, config.stft, settings.num_head)
            mixture, truth, snr = render.mixture, render.azimuths, scene.snr_db
        if mixture.shape[0] != len(config.geometry):
            raise ValueError(f"{mixture.shape[0]} channels, geometry has {len(config.geometry)}")
        spec = analyze(mixture, config.stft)
        if config.spp_mode == "oracle":
            labels = render.oracle_presence
        else:
            labels = estimated_labels(spec, settings.spp_threshold, settings.num_head)
        J = config.num_speakers or len(truth)
        if J < 1:
            raise ValueError("number of speakers unknown (no azimuths and no num_speakers)")
        result = localize(spec, labels, db, J, settings, config.coherence,
                          truth=truth if len(truth) else None)
    except Exception as exc:  # a failing scene must not abort the sweep
        logger.warning("scene %s failed: %s", name, exc)
        return [ResultRow(name, est, thr, float("nan"), float("nan"), 0, float("nan"), 0,
                          float("nan"), "", f"error: {exc}")
                for est in settings.estimators for thr in settings.thresholds], []

    rows, series = [], []
    start = int(np.ceil(config.exclude_seconds / result.hop_seconds - 1e-9))
    frame_file = f"frames/{name}.csv"
    for key, acc in result.acc.items():
        est, thr = key
        n_total = len(acc)
        rows.append(ResultRow(
            name, est, thr, snr, result.mean_acc(key, config.exclude_seconds),
            max(n_total - start, 0), result.mean_acc(key), n_total,
            float(np.mean(result.contributing[key])), frame_file))
        for l in range(n_total):
            series.append(dict(estimator=est, cdr_threshold_db=thr, frame=l, acc=acc[l],
                               bins=int(result.contributing[key][l]),
                               doas=result.doas[key][l]))
    return rows, series


def run(config: RunConfig, write=True, figures=False) -> EvalReport:
    """Evaluate every scene for every estimator and threshold."""
    db = _prototype_db(config)
    jobs = [(i, s, config, db) for i, s in enumerate(config.scenes)]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outputs = list(pool.map(_evaluate_scene, jobs))
    else:
        outputs = [_evaluate_scene(job) for job in jobs]
    rows, series = [], {}
    for (i, scene, _, _), (scene_rows, scene_series) in zip(jobs, outputs):
        rows += scene_rows
        series[_scene_name(scene, i)] = scene_series
    report = EvalReport(rows, config, series)
    if write:
        emit_report(report, config.output_dir, figures=figures)
    return report


def _fmt(value):
    if isinstance(value, float):
        return repr(value) if np.isfinite(value) else ("nan" if np.isnan(value) else
                                                        ("inf" if value > 0 else "-inf"))
    return str(value)


def _config_echo(config: RunConfig):
    scenes = []
    for s in config.scenes:
        if isinstance(s, WavScene):
            scenes.append(dict(kind="wav", name=s.name, files=list(s.files), azimuths=list(s.azimuths)))
        else:
            scenes.append(dict(kind="scene", name=s.name, speakers=[[a, src] for a, src in s.speakers],
                               noise=s.noise, snr_db=_fmt(float(s.snr_db)), duration=s.duration,
                               seed=s.seed))
    settings = asdict(config.settings)
    settings["thresholds"] = [_fmt(float(t)) for t in config.settings.thresholds]
    return dict(
        stft=asdict(config.stft), coherence=asdict(config.coherence), settings=settings,
        spp_mode=config.spp_mode, seed=config.seed, num_speakers=config.num_speakers,
        exclude_seconds=config.exclude_seconds, grid_resolution=config.grid_resolution,
        geometry=config.geometry.tolist(), database=config.database, scenes=scenes,
    )


def emit_report(report: EvalReport, out_dir, figures=False):
    """Write results.csv, summary.csv, run_meta.json and per-scene frame series.

    Returns the list of written paths. ``figures`` adds summary.png.
    """
    from . import __version__

    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    written = []

    path = out_dir / "results.csv"
    fields = list(ResultRow.__dataclass_fields__)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in report.rows:
            writer.writerow([_fmt(getattr(row, f)) for f in fields])
    written.append(path)

    path = out_dir / "summary.csv"
    summary = report.summary()
    cols = ["estimator", "cdr_threshold_db", "snr_db", "scenes", "frames", "mean_acc",
            "mean_acc_all_frames"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for d in summary:
            writer.writerow([_fmt(d[c]) for c in cols])
    written.append(path)

    for name, series in report.frame_series.items():
        if not series:
            continue
        path = out_dir / "frames" / f"{name}.csv"
        J = len(series[0]["doas"])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["estimator", "cdr_threshold_db", "frame", "acc", "bins"]
                            + [f"doa_{j + 1}" for j in range(J)])
            for d in series:
                writer.writerow([d["estimator"], _fmt(d["cdr_threshold_db"]), d["frame"],
                                 _fmt(float(d["acc"])), d["bins"]]
                                + [_fmt(float(a)) for a in d["doas"]])
        written.append(path)

    path = out_dir / "run_meta.json"
    meta = dict(
        package_version=__version__, python=platform.python_version(), numpy=np.__version__,
        scipy=scipy.__version__, config=_config_echo(report.config),
        failed_scenes=sorted({r.scene for r in report.rows if r.status != "ok"}),
    )
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    written.append(path)

    if figures:
        written.append(_summary_figure(summary, out_dir / "summary.png"))
    return written


def _summary_figure(summary, path):
    """Bar chart of mean ACC per estimator and threshold (all SNRs pooled)."""
    os.environ.setdefault("MPLBACKEND", "Agg")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pooled = [d for d in summary if d["snr_db"] == "all"]
    estimators = list(dict.fromkeys(d["estimator"] for d in pooled))
    thresholds = list(dict.fromkeys(d["cdr_threshold_db"] for d in pooled))
    width = 0.8 / max(len(thresholds), 1)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for t, thr in enumerate(thresholds):
        vals = [next((100 * d["mean_acc"] for d in pooled
                      if d["estimator"] == e and d["cdr_threshold_db"] == thr), np.nan)
                for e in estimators]
        x = np.arange(len(estimators)) + (t - (len(thresholds) - 1) / 2) * width
        ax.bar(x, vals, width, label=f"CDR threshold {_fmt(float(thr))} dB")
    ax.set_xticks(np.arange(len(estimators)))
    ax.set_xticklabels(estimators)
    ax.set_ylabel("mean ACC [%]")
    ax.set_ylim(0, 100)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
