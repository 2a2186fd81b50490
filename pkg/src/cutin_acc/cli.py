"""
Command-line driver: ``cutin-acc <stage> [options]``.

Stages read the files written by their predecessor under ``--out`` and
write their own, so each can be rerun in isolation::

    synth          recordings/recording_NN.csv (+ .meta), ground_truth_events.csv
    ingest         ingest/recording_NN.csv (direction-normalized), ingest/summary.json
    detect         events.csv
    build-dataset  dataset/{train,test}.csv, dataset/manifest.json
    train          checkpoints/<model>.ckpt, checkpoints/<model>.trace.json, report/trace.csv
    evaluate       report/metrics.csv, report/residuals.csv
    simulate       report/sim.csv
    report         report/summary.csv
    pipeline       all of the above in order

Every invocation also writes manifests/<stage>.json with the effective
configuration and SHA-256 digests of the files it read.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import detector as det
from . import evaluation as ev
from . import ingest, predictors, synth
from .errors import ConfigInvalid, PipelineError, UpstreamArtifactMissing

logger = logging.getLogger("cutin_acc")

STAGES = ("synth", "ingest", "detect", "build-dataset", "train", "evaluate", "simulate", "report")


@dataclass(frozen=True)
class SynthParams:
    n_events: int = 40
    n_benign: int = 4
    events_per_recording: int = 10
    duration_frames: int = 240
    noise_sigma: float = 0.05
    reaction_lag: int = 10


@dataclass(frozen=True)
class DatasetParams:
    window_length: int = ds.DEFAULT_WINDOW
    ratio: float = 0.8
    d_mode: str = ds.D_AT_CUT_IN


@dataclass(frozen=True)
class SimParams:
    controller: str = "mpc"
    event_index: int = 0


@dataclass(frozen=True)
class RunConfig:
    out: Path
    seed: int = 0
    recordings: Path | None = None
    models: tuple[str, ...] = ("lstm", "ann")
    synth: SynthParams = SynthParams()
    detector: det.DetectorConfig = det.DetectorConfig()
    dataset: DatasetParams = DatasetParams()
    train: predictors.TrainConfig = predictors.TrainConfig()
    lstm_hidden: int = 200
    ann_width: int = 200
    mpc: predictors.MpcConfig = predictors.MpcConfig()
    sim: SimParams = SimParams()

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("out")
        d["recordings"] = str(self.recordings) if self.recordings else None
        d["models"] = list(self.models)
        return d


# section -> (dataclass, RunConfig attribute)
SECTIONS = {
    "synth": (SynthParams, "synth"),
    "detector": (det.DetectorConfig, "detector"),
    "dataset": (DatasetParams, "dataset"),
    "train": (predictors.TrainConfig, "train"),
    "mpc": (predictors.MpcConfig, "mpc"),
    "simulate": (SimParams, "sim"),
}

# flag dest -> (section, key)
FLAG_KEYS = {
    "window_length": ("dataset", "window_length"),
    "ratio": ("dataset", "ratio"),
    "lr": ("train", "lr"),
    "patience": ("train", "patience"),
    "max_epochs": ("train", "max_epochs"),
    "batch_size": ("train", "batch_size"),
    "headway": ("detector", "max_headway_s"),
    "min_decel": ("detector", "min_sv_decel"),
    "n_events": ("synth", "n_events"),
    "controller": ("simulate", "controller"),
}


def _coerce(cls, key: str, raw):
    ftypes = {f.name: f for f in dataclasses.fields(cls)}
    if key not in ftypes:
        raise ConfigInvalid(f"unknown option {key!r} for [{cls.__name__}]")
    default = ftypes[key].default
    try:
        if isinstance(default, bool):
            return str(raw).lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return str(raw)
    except ValueError as exc:
        raise ConfigInvalid(f"bad value for {key}: {raw!r}") from exc


def build_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then command-line flags."""
    values: dict[str, dict] = {s: {} for s in SECTIONS}
    top: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigInvalid(f"config file {path} does not exist")
        cp = configparser.ConfigParser()
        cp.read(path)
        for section in cp.sections():
            if section == "run":
                top.update(cp[section])
            elif section in SECTIONS:
                values[section].update(cp[section])
            else:
                raise ConfigInvalid(f"unknown config section [{section}]")
    for dest, (section, key) in FLAG_KEYS.items():
        val = getattr(args, dest, None)
        if val is not None:
            values[section][key] = val

    seed = int(args.seed if args.seed is not None else top.get("seed", 0))
    if seed < 0:
        raise ConfigInvalid("seed must be nonnegative")
    values["train"].setdefault("seed", seed)
    parts = {}
    for section, (cls, attr) in SECTIONS.items():
        kw = {k: _coerce(cls, k, v) for k, v in values[section].items()}
        try:
            parts[attr] = cls(**kw)
        except PipelineError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"[{section}] {exc}") from exc
    if parts["sim"].controller not in ("mpc", "lstm", "ann"):
        raise ConfigInvalid(f"unknown controller {parts['sim'].controller!r}")
    if parts["dataset"].d_mode not in (ds.D_AT_CUT_IN, ds.D_CURRENT):
        raise ConfigInvalid(f"unknown d_mode {parts['dataset'].d_mode!r}")
    if not 0 < parts["dataset"].ratio < 1:
        raise ConfigInvalid("ratio must lie in (0, 1)")
    models = tuple(m.strip() for m in str(top.get("models", "lstm,ann")).split(",") if m.strip())
    if set(models) - {"lstm", "ann"}:
        raise ConfigInvalid(f"unknown models {models}")
    recordings = args.recordings or top.get("recordings")
    return RunConfig(
        out=Path(args.out if args.out else top.get("out", "out")),
        seed=seed,
        recordings=Path(recordings) if recordings else None,
        models=models,
        lstm_hidden=int(args.hidden if args.hidden is not None else top.get("lstm_hidden", 200)),
        ann_width=int(args.ann_width if args.ann_width is not None else top.get("ann_width", 200)),
        **parts,
    )


# --- helpers -----------------------------------------------------------------


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise UpstreamArtifactMissing(f"{path} not found; run `{stage}` first")
    return path


def _write_manifest(cfg: RunConfig, stage: str, inputs: list[Path]) -> None:
    mdir = cfg.out / "manifests"
    mdir.mkdir(parents=True, exist_ok=True)

    def rel(p: Path) -> str:
        try:
            return str(p.resolve().relative_to(cfg.out.resolve()))
        except ValueError:
            return str(p)

    manifest = {
        "stage": stage,
        "config": cfg.echo(),
        "inputs": {rel(p): _digest(p) for p in sorted(inputs)},
    }
    (mdir / f"{stage}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _recording_files(directory: Path) -> list[Path]:
    return sorted(directory.glob("*.csv"))


def _load_ingested(cfg: RunConfig) -> tuple[dict[int, ingest.Recording], list[Path]]:
    files = _recording_files(_require(cfg.out / "ingest", "ingest"))
    if not files:
        raise UpstreamArtifactMissing(f"no recordings under {cfg.out / 'ingest'}; run `ingest` first")
    recs = {}
    for f in files:
        rec = ingest.load_recording(f)
        recs[rec.recording_id] = rec
    return recs, files + [ingest.meta_path_for(f) for f in files if ingest.meta_path_for(f).exists()]


def _lstm(cfg: RunConfig, seed) -> predictors.LstmPredictor:
    return predictors.LstmPredictor(
        predictors.LstmNetConfig(hidden=cfg.lstm_hidden, window_length=cfg.dataset.window_length), seed=seed
    )


def _ann(cfg: RunConfig, seed) -> predictors.AnnPredictor:
    return predictors.AnnPredictor(
        predictors.AnnConfig(width=cfg.ann_width, window_length=cfg.dataset.window_length), seed=seed
    )


def _mpc(cfg: RunConfig, dt: float | None = None):
    mpc_cfg = cfg.mpc if dt is None else dataclasses.replace(cfg.mpc, dt=dt)
    return predictors.MpcPredictor(mpc_cfg, window_length=cfg.dataset.window_length)


# --- stages ------------------------------------------------------------------


def stage_synth(cfg: RunConfig) -> None:
    p = cfg.synth
    rdir = cfg.out / "recordings"
    rdir.mkdir(parents=True, exist_ok=True)
    events = []
    rid, remaining = 1, p.n_events
    n_benign = p.n_benign
    while remaining > 0 or n_benign > 0:
        k = min(p.events_per_recording, remaining)
        b = min(n_benign, max(1, p.events_per_recording // 5)) if n_benign else 0
        script = synth.cut_in_script(
            seed=cfg.seed * 1000 + rid,
            n_events=k,
            n_benign=b,
            duration_frames=p.duration_frames,
            noise_sigma=p.noise_sigma,
            reaction_lag=p.reaction_lag,
            recording_id=rid,
            direction=ingest.DECREASING if rid % 2 == 0 else ingest.INCREASING,
        )
        gen = synth.generate(script)
        ingest.save_recording(gen.recording, rdir / f"recording_{rid:02d}.csv")
        events += gen.events
        remaining -= k
        n_benign -= b
        rid += 1
    det.save_events(events, cfg.out / "ground_truth_events.csv")
    _write_manifest(cfg, "synth", [])


def stage_ingest(cfg: RunConfig) -> None:
    src = cfg.recordings or cfg.out / "recordings"
    files = _recording_files(_require(src, "synth"))
    if not files:
        raise UpstreamArtifactMissing(f"no recording files in {src}")
    idir = cfg.out / "ingest"
    idir.mkdir(parents=True, exist_ok=True)
    summary = []
    inputs = []
    for i, f in enumerate(files, start=1):
        rec = ingest.load_recording(f)
        if rec.recording_id == 0:
            rec = dataclasses.replace(rec, recording_id=i)
        norm = ingest.normalize_direction(rec)
        ingest.save_recording(norm, idir / f"recording_{norm.recording_id:02d}.csv")
        inputs.append(f)
        if ingest.meta_path_for(f).exists():
            inputs.append(ingest.meta_path_for(f))
        summary.append(
            {
                "recording_id": norm.recording_id,
                "source": f.name,
                "tracks": len(norm.tracks),
                "samples": norm.n_samples,
                "lane_changes": det.count_lane_changes(norm),
                "mirrored_tracks": sum(t.is_mirrored for t in norm.tracks.values()),
            }
        )
    (idir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_manifest(cfg, "ingest", inputs)


def stage_detect(cfg: RunConfig) -> None:
    recs, inputs = _load_ingested(cfg)
    events = []
    for rid in sorted(recs):
        events += det.detect_cut_ins(recs[rid], cfg.detector)
    det.save_events(events, cfg.out / "events.csv")
    logger.info("detected %d cut-in events", len(events))
    _write_manifest(cfg, "detect", inputs)


def stage_build_dataset(cfg: RunConfig) -> None:
    events_path = _require(cfg.out / "events.csv", "detect")
    events = det.load_events(events_path)
    recs, inputs = _load_ingested(cfg)
    samples = ds.build_samples(events, recs, cfg.dataset.window_length, cfg.dataset.d_mode)
    split = ds.split_dataset(samples, cfg.dataset.ratio, cfg.seed)
    ds.save_split(split, cfg.out / "dataset")
    logger.info("dataset: %d train / %d test windows", len(split.train), len(split.test))
    _write_manifest(cfg, "build-dataset", inputs + [events_path])


def _dataset_inputs(cfg: RunConfig) -> list[Path]:
    d = _require(cfg.out / "dataset", "build-dataset")
    return [_require(d / name, "build-dataset") for name in ("manifest.json", "train.csv", "test.csv")]


def stage_train(cfg: RunConfig) -> None:
    inputs = _dataset_inputs(cfg)
    split = ds.load_split(cfg.out / "dataset")
    cdir = cfg.out / "checkpoints"
    cdir.mkdir(parents=True, exist_ok=True)
    rdir = cfg.out / "report"
    rdir.mkdir(parents=True, exist_ok=True)
    traces = []
    for name in cfg.models:
        model = _lstm(cfg, cfg.seed) if name == "lstm" else _ann(cfg, cfg.seed)

        def progress(epoch, tr, va, name=name):
            print(f"[{name}] epoch {epoch}: train_rmse={tr:.5f} val_rmse={va:.5f}", file=sys.stderr)

        model, trace = predictors.train(model, split, cfg.train, on_epoch=progress)
        model.save(cdir / f"{name}.ckpt")
        meta = {"stop_reason": trace.stop_reason, "best_epoch": trace.best_epoch, "epochs": len(trace.epochs)}
        (cdir / f"{name}.trace.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        traces.append(trace.to_csv(name))
    body = "".join(t if i == 0 else t.split("\n", 1)[1] for i, t in enumerate(traces))
    (rdir / "trace.csv").write_text(body)
    _write_manifest(cfg, "train", inputs)


def _load_models(cfg: RunConfig) -> tuple[dict, list[Path]]:
    models, inputs = {}, []
    for name in cfg.models:
        path = _require(cfg.out / "checkpoints" / f"{name}.ckpt", "train")
        models[name] = predictors.load_model(path)
        inputs.append(path)
    return models, inputs


def _frame_dt(cfg: RunConfig) -> float:
    files = _recording_files(cfg.out / "ingest") if (cfg.out / "ingest").exists() else []
    if files:
        return ingest.load_recording(files[0]).dt
    return cfg.mpc.dt


def stage_evaluate(cfg: RunConfig) -> None:
    inputs = _dataset_inputs(cfg)
    split = ds.load_split(cfg.out / "dataset")
    models, model_inputs = _load_models(cfg)
    models["mpc"] = _mpc(cfg, _frame_dt(cfg))
    report = ev.evaluate_models(models, split)
    rdir = cfg.out / "report"
    rdir.mkdir(parents=True, exist_ok=True)
    (rdir / "metrics.csv").write_text(report.metrics_csv())
    (rdir / "residuals.csv").write_text(report.residuals_csv())
    _write_manifest(cfg, "evaluate", inputs + model_inputs)


def stage_simulate(cfg: RunConfig) -> None:
    events_path = _require(cfg.out / "events.csv", "detect")
    events = det.load_events(events_path)
    if not events:
        raise UpstreamArtifactMissing("events.csv holds no events to simulate")
    if not 0 <= cfg.sim.event_index < len(events):
        raise ConfigInvalid(f"event_index {cfg.sim.event_index} out of range (0..{len(events) - 1})")
    recs, inputs = _load_ingested(cfg)
    event = events[cfg.sim.event_index]
    rec = recs[event.recording_id]
    T = cfg.dataset.window_length
    if cfg.sim.controller == "mpc":
        controller = _mpc(cfg, rec.dt)
    else:
        path = _require(cfg.out / "checkpoints" / f"{cfg.sim.controller}.ckpt", "train")
        controller = predictors.load_model(path)
        inputs.append(path)
    playback = ev.playback_from_event(event, rec, T)
    result = ev.simulate_cut_in(playback, controller, rec.dt, T, (cfg.mpc.a_min, cfg.mpc.a_max), cfg.dataset.d_mode)
    rdir = cfg.out / "report"
    rdir.mkdir(parents=True, exist_ok=True)
    (rdir / "sim.csv").write_text(result.to_csv())
    logger.info("simulation: min gap %.3f m, collision=%s", result.min_gap, result.collision)
    _write_manifest(cfg, "simulate", inputs + [events_path])


def stage_report(cfg: RunConfig) -> None:
    import csv

    rdir = cfg.out / "report"
    metrics_path = _require(rdir / "metrics.csv", "evaluate")
    trace_path = _require(rdir / "trace.csv", "train")
    with metrics_path.open() as fh:
        metrics = list(csv.DictReader(fh))
    with trace_path.open() as fh:
        trace = list(csv.DictReader(fh))
    rows = []
    for m in metrics:
        name = m["model"]
        tr = [t for t in trace if t["model"] == name]
        meta_path = cfg.out / "checkpoints" / f"{name}.trace.json"
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        best_val = min((float(t["val_rmse"]) for t in tr), default=float("nan"))
        rows.append(
            [
                name,
                m["rmse"],
                m["accuracy"],
                m["n"],
                len(tr),
                meta.get("best_epoch", ""),
                repr(best_val) if tr else "",
                meta.get("stop_reason", ""),
            ]
        )
    out = ["model,rmse,accuracy,n,epochs,best_epoch,best_val_rmse_normalized,stop_reason"]
    out += [",".join(str(v) for v in r) for r in rows]
    (rdir / "summary.csv").write_text("\n".join(out) + "\n")
    _write_manifest(cfg, "report", [metrics_path, trace_path])


HANDLERS = {
    "synth": stage_synth,
    "ingest": stage_ingest,
    "detect": stage_detect,
    "build-dataset": stage_build_dataset,
    "train": stage_train,
    "evaluate": stage_evaluate,
    "simulate": stage_simulate,
    "report": stage_report,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cutin-acc",
        description="Cut-in screening, dataset building, LSTM/ANN/MPC acceleration prediction and evaluation.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("stage", choices=STAGES + ("pipeline",))
    parser.add_argument("--config", help="INI file with [run], [synth], [detector], [dataset], [train], [mpc], [simulate]")
    parser.add_argument("--seed", type=int, help="global seed (synthesis, split, init, shuffling); default 0")
    parser.add_argument("--out", help="output directory; default ./out")
    parser.add_argument("--recordings", help="directory of tracks CSV files for `ingest`; default <out>/recordings")
    parser.add_argument("--window-length", type=int, help=f"input window T in frames; default {ds.DEFAULT_WINDOW}")
    parser.add_argument("--ratio", type=float, help="train share of the event-level split; default 0.8")
    parser.add_argument("--lr", type=float, help="Adam learning rate; default 1e-4")
    parser.add_argument("--patience", type=int, help="early-stopping patience in epochs; default 5")
    parser.add_argument("--max-epochs", type=int, help="epoch cap; default 100")
    parser.add_argument("--batch-size", type=int, help="mini-batch size; default 32")
    parser.add_argument("--headway", type=float, help="detector max time headway in s; default 2.0")
    parser.add_argument("--min-decel", type=float, help="detector SV deceleration threshold in m/s^2; default -0.5")
    parser.add_argument("--hidden", type=int, help="LSTM network layer width; default 200")
    parser.add_argument("--ann-width", type=int, help="ANN hidden layer width; default 200")
    parser.add_argument("--n-events", type=int, help="cut-ins to synthesize; default 40")
    parser.add_argument("--controller", help="simulation controller: mpc, lstm or ann; default mpc")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        cfg = build_config(args)
        cfg.out.mkdir(parents=True, exist_ok=True)
        stages = STAGES if args.stage == "pipeline" else (args.stage,)
        for stage in stages:
            print(f"== {stage}", file=sys.stderr)
            HANDLERS[stage](cfg)
    except ConfigInvalid as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 2
    except UpstreamArtifactMissing as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 3
    except PipelineError as exc:
        print(f"error[{exc.category}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
