"""Command-line entry point wiring all subsystems together."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .audio import AudioClip, read_wav, write_wav, load_session
from .checkpoint import load_checkpoint, load_into
from .counting import CountModel, CountModelConfig, DecisionRule, decide_multi_speaker
from .distortion import DistortionParams, DistortionPolicy, apply_distortion
from .metrics import best_assignment_si_snr, duplication_leakage
from .pipeline import CssConfig, run_css
from .sepmodel import SepModel, SepModelConfig
from .simulate import SimConfig, load_catalog, synthesize_catalog, write_corpus
from .sync import align_session
from .training import (TrainConfig, load_manifest_samples, train_counting,
                       train_separation)

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _build_dataclass(cls, data: dict, path: str):
    import dataclasses
    names = {f.name for f in dataclasses.fields(cls)}
    bad = set(data) - names
    if bad:
        raise ConfigError(f"{path}: unknown field(s) {sorted(bad)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _write_run_manifest(out_dir, seed, config: dict, extra=None):
    os.makedirs(out_dir, exist_ok=True)
    blob = json.dumps(config, sort_keys=True, default=str)
    record = {"seed": seed, "version": __version__,
              "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
              "config": config}
    if extra:
        record.update(extra)
    with open(os.path.join(out_dir, "run_manifest.json"), "w") as f:
        json.dump(record, f, indent=2, default=str)


def _load_model(ckpt_path):
    config, tensors = load_checkpoint(ckpt_path)
    kind = config.pop("kind", None)
    config = {k: v for k, v in config.items()
              if k not in ("epoch", "best_epoch")}
    if kind == "separation":
        model = SepModel(SepModelConfig(**config))
    elif kind == "counting":
        model = CountModel(CountModelConfig(**config))
    else:
        raise ConfigError(f"{ckpt_path}: unknown checkpoint kind {kind!r}")
    load_into(model, tensors)
    return model


def cmd_simulate(args) -> int:
    cfg_data = _load_config(args.config)
    dist = None
    if cfg_data.pop("distortion", False):
        probs = cfg_data.pop("distortion_probs", {})
        dist = DistortionPolicy(**probs)
    corpus_dir = cfg_data.pop("corpus_dir", None)
    synth = cfg_data.pop("synthetic_corpus", {})
    sim_cfg = _build_dataclass(SimConfig, {**cfg_data, "distortion": dist},
                               args.config or "<defaults>")
    if args.num_samples is not None:
        n = args.num_samples
    elif args.hours is not None:
        n = max(1, int(round(args.hours * 3600.0 / sim_cfg.duration_s)))
    else:
        raise ConfigError("one of --num-samples or --hours is required")
    rng = np.random.default_rng(args.seed)
    if corpus_dir:
        catalog = load_catalog(corpus_dir)
    else:
        catalog = synthesize_catalog(synth.get("num_speakers", 4),
                                     synth.get("utts_per_speaker", 6),
                                     synth.get("duration_s", 5.0), rng)
    manifest = write_corpus(args.out, catalog, sim_cfg, n, args.seed)
    _write_run_manifest(args.out, args.seed, {**cfg_data, "num_samples": n},
                        {"manifest": manifest})
    print(f"wrote {n} samples to {manifest}")
    return 0


def cmd_distort(args) -> int:
    params_data = _load_config(args.params)
    bp = params_data.get("bandpass")
    params = DistortionParams(
        bandpass=tuple(bp) if bp else None,
        clip_ratio=params_data.get("clip_ratio"),
        delay_ms=params_data.get("delay_ms"))
    clip = read_wav(args.input)
    write_wav(args.output, apply_distortion(clip, params))
    return 0


def cmd_sync(args) -> int:
    clips = load_session(args.session)
    aligned, result = align_session(clips, max_lag=args.max_lag)
    os.makedirs(args.out, exist_ok=True)
    for i, clip in enumerate(aligned):
        write_wav(os.path.join(args.out, f"aligned_ch{i}.wav"), clip)
    with open(os.path.join(args.out, "sync_report.txt"), "w") as f:
        for i, (lag, score) in enumerate(zip(result.lags, result.peak_scores)):
            f.write(f"channel {i}: lag {lag} samples, score {score:.4f}\n")
    print(f"aligned {len(aligned)} channels; lags {result.lags}")
    return 0


def _train_common(args, kind: str) -> int:
    cfg_data = _load_config(args.config)
    model_data = cfg_data.pop("model", {})
    train_cfg = _build_dataclass(TrainConfig, {**cfg_data, "seed": args.seed},
                                 args.config or "<defaults>")
    samples = load_manifest_samples(args.manifest, ref_channel=train_cfg.ref_channel)
    val = (load_manifest_samples(args.val_manifest, ref_channel=train_cfg.ref_channel)
           if args.val_manifest else None)
    if kind == "separation":
        model = SepModel(_build_dataclass(SepModelConfig, model_data,
                                          args.config or "<defaults>"),
                         seed=args.seed)
        history = train_separation(model, samples, train_cfg, val, args.out)
    else:
        model = CountModel(_build_dataclass(
            CountModelConfig, {**model_data, "head": args.head},
            args.config or "<defaults>"), seed=args.seed)
        history = train_counting(model, samples, train_cfg, val, args.out)
    _write_run_manifest(args.out, args.seed,
                        {"train": cfg_data, "model": model_data, "kind": kind})
    print(f"trained {len(history)} epochs; final loss {history[-1]['train_loss']:.6g}")
    return 0


def cmd_separate(args) -> int:
    sep_model = _load_model(args.sep_ckpt)
    count_model = _load_model(args.count_ckpt) if args.count_ckpt else None
    clips = load_session(args.session)
    if len(clips) > 1:
        clips, _ = align_session(clips)
    rate = clips[0].sample_rate
    s1, s2, reports = run_css(
        [c.samples for c in clips], sep_model, count_model,
        CssConfig(), seed=args.seed,
        head=args.count_head, count_merge=not args.no_count_merge)
    os.makedirs(args.out, exist_ok=True)
    write_wav(os.path.join(args.out, "stream1.wav"), AudioClip(s1, rate))
    write_wav(os.path.join(args.out, "stream2.wav"), AudioClip(s2, rate))
    with open(os.path.join(args.out, "windows.jsonl"), "w") as f:
        for r in reports:
            f.write(json.dumps({
                "index": r.index, "selected_channel": r.selected_channel,
                "permutation": list(r.permutation),
                "multi_speaker": r.multi_speaker,
                "posterior_snrs": r.posterior_snrs,
                "truncated": r.truncated}) + "\n")
    _write_run_manifest(args.out, args.seed,
                        {"session": args.session, "sep_ckpt": args.sep_ckpt,
                         "count_ckpt": args.count_ckpt,
                         "count_merge": not args.no_count_merge})
    print(f"wrote streams and {len(reports)} window records to {args.out}")
    return 0


def cmd_count(args) -> int:
    from .audio import StftConfig, stft
    model = _load_model(args.count_ckpt)
    clips = load_session(args.session)
    cfg = CssConfig()
    rule = DecisionRule()
    rng = np.random.default_rng(args.seed)
    rate = clips[0].sample_rate
    spec = [stft(c, cfg.stft) for c in clips]
    wf, hf = cfg.window_frames(rate), cfg.hop_frames(rate)
    t_total = spec[0].shape[0]
    out = sys.stdout if args.out is None else open(args.out, "w")
    s, w = 0, 0
    while True:
        end = min(s + wf, t_total)
        rc = int(rng.integers(0, len(spec)))
        count_out, _ = model.forward(np.abs(spec[rc][s:end]))
        multi = decide_multi_speaker(count_out, rule, args.head)
        out.write(json.dumps({"index": w, "channel": rc, "multi_speaker": multi}) + "\n")
        if s + wf >= t_total:
            break
        s += hf
        w += 1
    if args.out is not None:
        out.close()
    return 0


def cmd_evaluate(args) -> int:
    base = os.path.dirname(os.path.abspath(args.ref_manifest))

    def resolve(p, root=base):
        return p if os.path.isabs(p) else os.path.join(root, p)

    records = []
    with open(args.ref_manifest) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    if not records:
        raise ConfigError(f"{args.ref_manifest}: no sessions")
    out_lines = []
    for rec in records:
        hyp_dir = os.path.join(args.hyp_dir, rec["id"])
        streams = [read_wav(os.path.join(hyp_dir, "stream1.wav")).samples,
                   read_wav(os.path.join(hyp_dir, "stream2.wav")).samples]
        refs = [read_wav(resolve(p)).samples for p in rec["refs"]]
        n = min(len(streams[0]), len(refs[0]))
        result = {"id": rec["id"]}
        if len(refs) == 2:
            mean_db, perm, per_ref = best_assignment_si_snr(
                [s[:n] for s in streams], [r[:n] for r in refs])
            result.update({"si_snr_db": mean_db, "assignment": list(perm),
                           "per_ref_db": per_ref})
        intervals = rec.get("single_intervals")
        if intervals:
            result["leakage_db"] = duplication_leakage(
                streams, [tuple(iv) for iv in intervals])
        out_lines.append(result)
    out = sys.stdout if args.out is None else open(args.out, "w")
    for r in out_lines:
        out.write(json.dumps(r) + "\n")
    si = [r["si_snr_db"] for r in out_lines if "si_snr_db" in r]
    lk = [r["leakage_db"] for r in out_lines if "leakage_db" in r]
    summary = {"sessions": len(out_lines)}
    if si:
        summary["mean_si_snr_db"] = float(np.mean(si))
    if lk:
        summary["mean_leakage_db"] = float(np.mean(lk))
    out.write(json.dumps({"summary": summary}) + "\n")
    if args.out is not None:
        out.close()
        print(json.dumps(summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adhoc-css",
                                description="Continuous speech separation for "
                                            "ad hoc microphone arrays")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="generate synthetic training mixtures")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--num-samples", type=int)
    sp.add_argument("--hours", type=float)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("distort", help="apply fixed distortion params to a WAV")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", dest="output", required=True)
    sp.add_argument("--params", required=True)
    sp.set_defaults(func=cmd_distort)

    sp = sub.add_parser("sync", help="align a multi-device session")
    sp.add_argument("--session", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--max-lag", type=int, default=None)
    sp.set_defaults(func=cmd_sync)

    sp = sub.add_parser("train-sep", help="train the separation model")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--val-manifest")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=lambda a: _train_common(a, "separation"))

    sp = sub.add_parser("train-count", help="train a speaker-counting model")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--val-manifest")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--head", choices=("s1", "s2"), default="s2")
    sp.set_defaults(func=lambda a: _train_common(a, "counting"))

    sp = sub.add_parser("separate", help="run the CSS pipeline on a session")
    sp.add_argument("--session", required=True)
    sp.add_argument("--sep-ckpt", required=True)
    sp.add_argument("--count-ckpt")
    sp.add_argument("--count-head", choices=("s1", "s2"), default="s2")
    sp.add_argument("--no-count-merge", action="store_true")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_separate)

    sp = sub.add_parser("count", help="dump per-window speaker-count decisions")
    sp.add_argument("--session", required=True)
    sp.add_argument("--count-ckpt", required=True)
    sp.add_argument("--head", choices=("s1", "s2"), default="s2")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_count)

    sp = sub.add_parser("evaluate", help="score separated sessions")
    sp.add_argument("--hyp-dir", required=True)
    sp.add_argument("--ref-manifest", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_evaluate)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
